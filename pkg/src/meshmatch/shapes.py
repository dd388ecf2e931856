"""Procedural meshes used by the tests, benchmarks and examples.

Everything here is deterministic: same arguments, same mesh, bit for bit.
"""

import numpy as np

from .mesh import TriMesh

_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0

_ICO_VERTS = np.array([
    [-1.0, _ICO_T, 0.0], [1.0, _ICO_T, 0.0],
    [-1.0, -_ICO_T, 0.0], [1.0, -_ICO_T, 0.0],
    [0.0, -1.0, _ICO_T], [0.0, 1.0, _ICO_T],
    [0.0, -1.0, -_ICO_T], [0.0, 1.0, -_ICO_T],
    [_ICO_T, 0.0, -1.0], [_ICO_T, 0.0, 1.0],
    [-_ICO_T, 0.0, -1.0], [-_ICO_T, 0.0, 1.0],
])

_ICO_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


def octahedron():
    """Unit octahedron, 6 vertices, 8 triangles, outward orientation."""
    verts = np.array([
        [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
    ])
    tris = np.array([
        [0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
        [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5],
    ], dtype=np.int64)
    return TriMesh(verts, tris)


def icosphere(freq=8, radius=1.0):
    """Geodesic sphere by frequency ``freq`` subdivision of the icosahedron.

    Each icosahedron face is split into freq**2 triangles and the points are
    projected onto the sphere, giving 10 * freq**2 + 2 vertices. Shared edge
    points are deduplicated through their exact integer barycentric key, so
    the construction involves no positional tolerance.
    """
    if freq < 1:
        raise ValueError("freq must be >= 1")
    f = int(freq)
    key_to_id = {}
    verts = []

    def point_id(corners, weights):
        pairs = tuple(sorted(
            (int(c), int(w)) for c, w in zip(corners, weights) if w > 0))
        idx = key_to_id.get(pairs)
        if idx is None:
            idx = len(verts)
            key_to_id[pairs] = idx
            p = (_ICO_VERTS[corners[0]] * weights[0]
                 + _ICO_VERTS[corners[1]] * weights[1]
                 + _ICO_VERTS[corners[2]] * weights[2]) / f
            verts.append(p / np.linalg.norm(p))
        return idx

    tris = []
    for face in _ICO_FACES:
        # grid[i][j] holds the point with weights (f-i-j, i, j) on (a, b, c)
        grid = [[point_id(face, (f - i - j, i, j))
                 for j in range(f - i + 1)] for i in range(f + 1)]
        for i in range(f):
            for j in range(f - i):
                tris.append((grid[i][j], grid[i + 1][j], grid[i][j + 1]))
                if j < f - i - 1:
                    tris.append((grid[i + 1][j], grid[i + 1][j + 1],
                                 grid[i][j + 1]))
    verts = np.asarray(verts) * radius
    return TriMesh(verts, np.asarray(tris, dtype=np.int64))


def uv_torus(ring_radius=1.0, tube_radius=0.4, n_ring=48, n_tube=24):
    """Torus sampled on a regular angle grid, outward orientation."""
    i = np.arange(n_ring)
    j = np.arange(n_tube)
    theta = 2.0 * np.pi * i / n_ring
    phi = 2.0 * np.pi * j / n_tube
    theta, phi = np.meshgrid(theta, phi, indexing="ij")
    w = ring_radius + tube_radius * np.cos(phi)
    verts = np.column_stack([
        (w * np.cos(theta)).ravel(),
        (w * np.sin(theta)).ravel(),
        (tube_radius * np.sin(phi)).ravel(),
    ])
    ii, jj = np.meshgrid(i, j, indexing="ij")
    v00 = (ii * n_tube + jj).ravel()
    v10 = (((ii + 1) % n_ring) * n_tube + jj).ravel()
    v01 = (ii * n_tube + (jj + 1) % n_tube).ravel()
    v11 = (((ii + 1) % n_ring) * n_tube + (jj + 1) % n_tube).ravel()
    tris = np.concatenate([
        np.column_stack([v00, v10, v11]),
        np.column_stack([v00, v11, v01]),
    ])
    return TriMesh(verts, tris.astype(np.int64))


def grid_patch(nx=4, ny=4, spacing=1.0):
    """Planar rectangle of nx by ny cells in the z = 0 plane (with boundary).

    Vertex (i, j) has index j * (nx + 1) + i and position (i, j, 0) times
    ``spacing``; every cell is split along the same diagonal.
    """
    i = np.arange(nx + 1)
    j = np.arange(ny + 1)
    ii, jj = np.meshgrid(i, j, indexing="xy")
    verts = np.column_stack([
        (ii * spacing).ravel(), (jj * spacing).ravel(),
        np.zeros((ny + 1) * (nx + 1)),
    ])
    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    v00 = (cj * (nx + 1) + ci).ravel()
    v10 = v00 + 1
    v01 = v00 + (nx + 1)
    v11 = v01 + 1
    tris = np.concatenate([
        np.column_stack([v00, v10, v11]),
        np.column_stack([v00, v11, v01]),
    ])
    return TriMesh(verts, tris.astype(np.int64))


def two_spheres(freq=4, gap=3.0, small_radius=0.2):
    """Disconnected pair: unit sphere plus a small offset sphere."""
    big = icosphere(freq)
    small = icosphere(freq, radius=small_radius)
    verts = np.concatenate([
        big.vertices,
        small.vertices + np.array([gap, 0.0, 0.0]),
    ])
    tris = np.concatenate([big.triangles,
                           small.triangles + big.n_vertices])
    return TriMesh(verts, tris)


def sliver_sphere(freq=8, stretch=40.0):
    """Unit sphere stretched along z, producing highly anisotropic triangles.

    Stress shape for conditioning of the stiffness matrix and for sampling
    on badly shaped elements.
    """
    base = icosphere(freq)
    verts = base.vertices * np.array([1.0, 1.0, stretch])
    return TriMesh(verts, base.triangles)


def _torus_sdf(pts, center, ring_radius, tube_radius):
    q = pts - center
    ring = np.sqrt(q[..., 0] ** 2 + q[..., 1] ** 2) - ring_radius
    return np.sqrt(ring ** 2 + q[..., 2] ** 2) - tube_radius


def genus2(spacing=0.03):
    """Closed genus 2 surface: union of two overlapping tori, contoured
    with marching cubes. Euler characteristic -2."""
    from skimage.measure import marching_cubes

    lo = np.array([-2.4, -1.5, -0.45])
    hi = np.array([2.4, 1.5, 0.45])
    shape = np.ceil((hi - lo) / spacing).astype(int) + 1
    axes = [lo[k] + spacing * np.arange(shape[k]) for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    sdf = np.minimum(
        _torus_sdf(grid, np.array([-0.9, 0.0, 0.0]), 1.0, 0.3),
        _torus_sdf(grid, np.array([0.9, 0.0, 0.0]), 1.0, 0.3),
    )
    verts, faces, _normals, _values = marching_cubes(
        sdf, level=0.0, spacing=(spacing, spacing, spacing))
    mesh = TriMesh(verts + lo, faces.astype(np.int64))
    if signed_volume(mesh) < 0:
        mesh = TriMesh(mesh.vertices, mesh.triangles[:, [0, 2, 1]])
    return mesh


def signed_volume(mesh):
    """Volume enclosed by a closed oriented surface (positive if outward)."""
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    return float(np.einsum("ij,ij->", a, np.cross(b, c)) / 6.0)


def _tube(n_around, n_along, bend_angle, length=2.0):
    t = np.linspace(0.0, 1.0, n_along)
    phi = 2.0 * np.pi * np.arange(n_around) / n_around
    tt, pp = np.meshgrid(t, phi, indexing="ij")

    # tapered profile with two asymmetric bumps; the taper kills the
    # end-to-end flip and the bumps kill rotations and reflections
    def ang(x, x0):
        d = np.abs(np.mod(x - x0, 2.0 * np.pi))
        return np.minimum(d, 2.0 * np.pi - d)

    base = 0.16 + 0.06 * tt
    bump1 = 0.35 * np.exp(-((tt - 0.30) / 0.10) ** 2
                          - (ang(pp, 0.7) / 0.5) ** 2)
    bump2 = 0.25 * np.exp(-((tt - 0.72) / 0.08) ** 2
                          - (ang(pp, 2.9) / 0.4) ** 2)
    r = base * (1.0 + bump1 + bump2)

    if bend_angle > 1e-12:
        arc_r = length / bend_angle
        a = bend_angle * tt
        cx = arc_r * (1.0 - np.cos(a))
        cz = arc_r * np.sin(a)
        e1x, e1z = -np.cos(a), np.sin(a)
    else:
        cx = np.zeros_like(tt)
        cz = length * tt
        e1x, e1z = -np.ones_like(tt), np.zeros_like(tt)
    x = cx + r * np.cos(pp) * e1x
    y = r * np.sin(pp)
    z = cz + r * np.cos(pp) * e1z
    verts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])

    idx = np.arange(n_along * n_around).reshape(n_along, n_around)
    v00 = idx[:-1, :].ravel()
    v10 = idx[:-1, :][:, list(range(1, n_around)) + [0]].ravel()
    v01 = idx[1:, :].ravel()
    v11 = idx[1:, :][:, list(range(1, n_around)) + [0]].ravel()
    tris = np.concatenate([
        np.column_stack([v00, v10, v11]),
        np.column_stack([v00, v11, v01]),
    ])

    # close both ends with a fan around the ring barycenter
    c0 = len(verts)
    c1 = c0 + 1
    verts = np.concatenate([verts,
                            verts[idx[0]].mean(axis=0)[None],
                            verts[idx[-1]].mean(axis=0)[None]])
    ring0 = idx[0]
    ring1 = idx[-1]
    nxt = list(range(1, n_around)) + [0]
    cap0 = np.column_stack([np.full(n_around, c0), ring0[nxt], ring0])
    cap1 = np.column_stack([np.full(n_around, c1), ring1, ring1[nxt]])
    tris = np.concatenate([tris, cap0, cap1])

    mesh = TriMesh(verts, tris.astype(np.int64))
    if signed_volume(mesh) < 0:
        mesh = TriMesh(mesh.vertices, mesh.triangles[:, [0, 2, 1]])
    return mesh


def tube_pair(n_around=48, n_along=96, bend_angle=0.7):
    """Near isometric closed pair: a lumpy tapered tube and a bent copy.

    The identity on vertex indices is the ground truth correspondence. The
    shape has no intrinsic symmetries, which makes it a clean target for
    descriptor based matching.
    """
    return (_tube(n_around, n_along, 0.0),
            _tube(n_around, n_along, bend_angle))
