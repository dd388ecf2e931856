"""Coarse intrinsic remeshing and spectral correspondence for triangle
meshes.

The package splits into a remeshing half (geodesic farthest point sampling,
Voronoi cell repair, dual mesh extraction) and a matching half (Laplacian
eigenbases, descriptors, functional maps, prolongation back to the dense
meshes), glued together by a small pipeline and CLI.
"""

__version__ = "0.1.0"

from .mesh import MeshIOError, TopologyError, TriMesh
from .io import load_mesh, save_mesh

__all__ = [
    "MeshIOError",
    "TopologyError",
    "TriMesh",
    "load_mesh",
    "save_mesh",
    "__version__",
]
