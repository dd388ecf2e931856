"""Triangle mesh container and surface topology utilities.

The :class:`TriMesh` class stores vertices and triangles as numpy arrays and
derives edge and incidence tables on construction. All connectivity tables are
plain arrays (CSR style index pairs) so they can be handed to compiled kernels
without conversion.
"""

import logging

import numpy as np
from numba import njit
from scipy import sparse
from scipy.sparse.csgraph import connected_components as _graph_components

logger = logging.getLogger(__name__)


class MeshIOError(ValueError):
    """Raised when a mesh file cannot be parsed or written."""


class TopologyError(ValueError):
    """Raised when a mesh violates a topological precondition."""


@njit(cache=True)
def _fan_flags(n_vertices, vt_ptr, vt_idx, tri_edges, edges, et_ptr, et_idx,
               edge_deg):
    """Classify the triangle fan around every vertex.

    Returns an int8 array with 0 for a clean disk or half disk fan, 1 for a
    fan that is not edge-connected, 2 for a fan whose boundary edge count is
    not 0 or 2, and 3 for an isolated vertex.
    """
    flags = np.zeros(n_vertices, dtype=np.int8)
    for v in range(n_vertices):
        lo = vt_ptr[v]
        hi = vt_ptr[v + 1]
        cnt = hi - lo
        if cnt == 0:
            flags[v] = 3
            continue
        # Collect the distinct edges incident to v among the fan triangles.
        local_edges = np.empty(2 * cnt, dtype=np.int64)
        n_local = 0
        for p in range(lo, hi):
            t = vt_idx[p]
            for k in range(3):
                e = tri_edges[t, k]
                if edges[e, 0] == v or edges[e, 1] == v:
                    seen = False
                    for q in range(n_local):
                        if local_edges[q] == e:
                            seen = True
                            break
                    if not seen:
                        local_edges[n_local] = e
                        n_local += 1
        n_boundary = 0
        bad_edge = False
        for q in range(n_local):
            d = edge_deg[local_edges[q]]
            if d == 1:
                n_boundary += 1
            elif d > 2:
                bad_edge = True
        # Walk the fan through shared interior edges at v.
        visited = np.zeros(cnt, dtype=np.uint8)
        stack = np.empty(cnt, dtype=np.int64)
        stack[0] = 0
        visited[0] = 1
        n_stack = 1
        n_seen = 1
        while n_stack > 0:
            n_stack -= 1
            t = vt_idx[lo + stack[n_stack]]
            for k in range(3):
                e = tri_edges[t, k]
                if edges[e, 0] != v and edges[e, 1] != v:
                    continue
                if edge_deg[e] != 2:
                    continue
                for r in range(et_ptr[e], et_ptr[e + 1]):
                    t2 = et_idx[r]
                    if t2 == t:
                        continue
                    for q in range(cnt):
                        if vt_idx[lo + q] == t2 and visited[q] == 0:
                            visited[q] = 1
                            stack[n_stack] = q
                            n_stack += 1
                            n_seen += 1
        if n_seen < cnt:
            flags[v] = 1
        elif not bad_edge and n_boundary != 0 and n_boundary != 2:
            flags[v] = 2
    return flags


def _csr_from_values(values, n_bins):
    """Group positions of ``values`` by value, returning (ptr, order)."""
    order = np.argsort(values, kind="stable").astype(np.int64)
    counts = np.bincount(values, minlength=n_bins)
    ptr = np.zeros(n_bins + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, order


class TriMesh:
    """Triangle mesh with derived connectivity tables.

    Parameters
    ----------
    vertices : array_like
        Vertex coordinates of shape (n, 3).
    triangles : array_like
        Triangle corner indices of shape (m, 3), zero based. Every triangle
        must reference three distinct vertices.

    Attributes
    ----------
    vertices : np.ndarray
        Float64 copy of the input coordinates.
    triangles : np.ndarray
        Int64 copy of the input corner table.
    edges : np.ndarray
        Unique undirected edges of shape (e, 2) with edges[:, 0] < edges[:, 1],
        sorted lexicographically.
    tri_edges : np.ndarray
        Edge index per triangle side, shape (m, 3). Side k of triangle t is
        the edge opposite corner k, that is (t[(k+1)%3], t[(k+2)%3]).
    """

    def __init__(self, vertices, triangles):
        v = np.ascontiguousarray(vertices, dtype=np.float64)
        t = np.ascontiguousarray(triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must have shape (n, 3)")
        if t.ndim != 2 or t.shape[1] != 3:
            if t.size == 0:
                t = t.reshape(0, 3)
            else:
                raise ValueError("triangles must have shape (m, 3)")
        if t.size:
            if t.min() < 0 or t.max() >= len(v):
                raise ValueError("triangle corner index out of range")
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2])
                      | (t[:, 0] == t[:, 2])):
                raise ValueError("triangle with repeated corner index")
        self.vertices = v
        self.triangles = t
        self._build_edges()
        self._vt = None
        self._et = None
        self._adj = None
        self._areas = None

    def _build_edges(self):
        t = self.triangles
        n = len(self.vertices)
        if len(t) == 0:
            self.edges = np.zeros((0, 2), dtype=np.int64)
            self.tri_edges = np.zeros((0, 3), dtype=np.int64)
            return
        # Side k is opposite corner k. Encode each undirected pair as one
        # integer so the unique pass runs on a flat array.
        a = t[:, [1, 2, 0]].reshape(-1)
        b = t[:, [2, 0, 1]].reshape(-1)
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        keys = lo * np.int64(n) + hi
        uniq, inv = np.unique(keys, return_inverse=True)
        self.edges = np.column_stack((uniq // n, uniq % n)).astype(np.int64)
        self.tri_edges = inv.reshape(len(t), 3).astype(np.int64)

    # ------------------------------------------------------------------
    # cached incidence tables

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    def vertex_triangles(self):
        """CSR table (ptr, idx) of triangle indices incident to each vertex."""
        if self._vt is None:
            ptr, order = _csr_from_values(self.triangles.reshape(-1),
                                          self.n_vertices)
            self._vt = (ptr, (order // 3).astype(np.int64))
        return self._vt

    def edge_triangles(self):
        """CSR table (ptr, idx) of triangle indices incident to each edge."""
        if self._et is None:
            ptr, order = _csr_from_values(self.tri_edges.reshape(-1),
                                          self.n_edges)
            self._et = (ptr, (order // 3).astype(np.int64))
        return self._et

    def edge_degrees(self):
        ptr, _ = self.edge_triangles()
        return np.diff(ptr).astype(np.int64)

    def adjacency(self):
        """Vertex adjacency as CSR arrays (ptr, idx, length).

        Every undirected edge contributes two directed entries weighted by
        its Euclidean length.
        """
        if self._adj is None:
            e = self.edges
            src = np.concatenate((e[:, 0], e[:, 1]))
            dst = np.concatenate((e[:, 1], e[:, 0]))
            w = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]],
                               axis=1)
            w = np.concatenate((w, w))
            ptr, order = _csr_from_values(src, self.n_vertices)
            self._adj = (ptr, dst[order].astype(np.int64),
                         np.ascontiguousarray(w[order]))
        return self._adj

    def triangle_areas(self):
        if self._areas is None:
            p = self.vertices[self.triangles]
            cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
            self._areas = 0.5 * np.linalg.norm(cr, axis=1)
        return self._areas

    def total_area(self):
        return float(self.triangle_areas().sum())

    def edge_lengths(self):
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]],
                              axis=1)

    def boundary_edge_mask(self):
        return self.edge_degrees() == 1

    def boundary_vertex_mask(self):
        mask = np.zeros(self.n_vertices, dtype=bool)
        be = self.edges[self.boundary_edge_mask()]
        mask[be.reshape(-1)] = True
        return mask

    def is_closed(self):
        return not bool(self.boundary_edge_mask().any())

    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_triangles

    # ------------------------------------------------------------------
    # topology checks

    def validate_manifold(self):
        """Check edge and vertex manifoldness.

        Every edge must have one or two incident triangles and the triangle
        fan around every vertex must be a single disk or half disk.

        Returns
        -------
        list of (str, int)
            Defect descriptors, one of ``("nonmanifold_edge", edge_index)``,
            ``("nonmanifold_vertex", vertex_index)`` or
            ``("isolated_vertex", vertex_index)``. Empty for a clean mesh.
        """
        defects = []
        deg = self.edge_degrees()
        for e in np.flatnonzero(deg > 2):
            defects.append(("nonmanifold_edge", int(e)))
        vt_ptr, vt_idx = self.vertex_triangles()
        et_ptr, et_idx = self.edge_triangles()
        flags = _fan_flags(self.n_vertices, vt_ptr, vt_idx, self.tri_edges,
                           self.edges, et_ptr, et_idx, deg)
        for v in np.flatnonzero(flags == 3):
            defects.append(("isolated_vertex", int(v)))
        for v in np.flatnonzero((flags == 1) | (flags == 2)):
            defects.append(("nonmanifold_vertex", int(v)))
        return defects

    def require_manifold(self):
        defects = self.validate_manifold()
        if defects:
            raise TopologyError(
                "mesh is not manifold: %d defect(s), first is %r"
                % (len(defects), defects[0]))

    def lint(self):
        """Report degenerate geometry that is tolerated but worth logging.

        Returns a dict with counts of zero length edges and zero area
        triangles.
        """
        report = {
            "zero_length_edges": int((self.edge_lengths() == 0.0).sum()),
            "zero_area_triangles": int((self.triangle_areas() == 0.0).sum()),
        }
        if report["zero_length_edges"] or report["zero_area_triangles"]:
            logger.warning("degenerate geometry: %s", report)
        return report

    # ------------------------------------------------------------------
    # components

    def connected_components(self):
        """Vertex component labels via edge connectivity.

        Returns
        -------
        labels : np.ndarray
            Int array of shape (n,) with component ids in [0, count).
        count : int
        """
        n = self.n_vertices
        e = self.edges
        g = sparse.coo_matrix(
            (np.ones(len(e), dtype=np.int8), (e[:, 0], e[:, 1])),
            shape=(n, n))
        count, labels = _graph_components(g, directed=False)
        return labels.astype(np.int64), int(count)

    def component_areas(self, labels=None, count=None):
        if labels is None:
            labels, count = self.connected_components()
        areas = np.zeros(count)
        if self.n_triangles:
            np.add.at(areas, labels[self.triangles[:, 0]],
                      self.triangle_areas())
        return areas


def remove_small_components(mesh, area_threshold):
    """Drop connected components whose area falls below a fraction of total.

    Parameters
    ----------
    mesh : TriMesh
    area_threshold : float
        Components with area < area_threshold * total_area are removed.

    Returns
    -------
    kept : TriMesh
        Mesh with surviving components, vertex order preserved.
    removed : np.ndarray
        Original indices of the removed vertices.
    """
    if area_threshold < 0:
        raise ValueError("area_threshold must be nonnegative")
    labels, count = mesh.connected_components()
    if count == 1 or area_threshold == 0:
        return mesh, np.zeros(0, dtype=np.int64)
    areas = mesh.component_areas(labels, count)
    total = areas.sum()
    keep = areas >= area_threshold * total
    if not keep.any():
        raise TopologyError("component filter would remove the whole mesh")
    if keep.all():
        return mesh, np.zeros(0, dtype=np.int64)
    vkeep = keep[labels]
    removed = np.flatnonzero(~vkeep).astype(np.int64)
    new_id = np.cumsum(vkeep) - 1
    tkeep = vkeep[mesh.triangles[:, 0]]
    tri = new_id[mesh.triangles[tkeep]]
    out = TriMesh(mesh.vertices[vkeep], tri)
    logger.info("removed %d of %d components (%d vertices)",
                int((~keep).sum()), count, len(removed))
    return out, removed


def region_euler_characteristic(mesh, region_vertices):
    """Euler characteristic of the closed dual region of a vertex set.

    The dual surface places one face per primal vertex, one edge per primal
    edge and one vertex per primal triangle. A primal boundary edge carries a
    dual half edge; it is counted as an ordinary dual edge split at a dual
    vertex on the surface boundary, and the corner of a boundary vertex's
    cell on the surface boundary is a dual vertex as well, so regions that
    touch the mesh boundary still count as closed cells.

    Parameters
    ----------
    mesh : TriMesh
    region_vertices : array_like
        Nonempty set of vertex indices. The region is the union of their
        closed dual cells.

    Returns
    -------
    int
        n_dual_vertices - n_dual_edges + n_dual_faces for the region.
    """
    region = np.asarray(region_vertices, dtype=np.int64)
    if region.size == 0:
        raise ValueError("region must be nonempty")
    if region.min() < 0 or region.max() >= mesh.n_vertices:
        raise ValueError("region vertex index out of range")
    mask = np.zeros(mesh.n_vertices, dtype=bool)
    mask[region] = True

    e = mesh.edges
    t = mesh.triangles
    e_in = mask[e[:, 0]] | mask[e[:, 1]]
    t_in = mask[t].any(axis=1) if len(t) else np.zeros(0, dtype=bool)

    n_faces = int(mask.sum())
    n_edges = int(e_in.sum())
    n_verts = int(t_in.sum())

    bnd = mesh.boundary_edge_mask()
    if bnd.any():
        be = e[bnd]
        # Half edges: each boundary primal edge splits at a dual vertex on
        # the surface boundary, one half per endpoint cell.
        n_edges += int(mask[be[:, 0]].sum()) + int(mask[be[:, 1]].sum())
        n_verts += int((mask[be[:, 0]] | mask[be[:, 1]]).sum())
        # Cell corners of boundary vertices sit on the surface boundary.
        n_verts += int((mask & mesh.boundary_vertex_mask()).sum())
    return n_verts - n_edges + n_faces
