"""Prolongation of coarse functions back to the dense mesh.

Every dense vertex is projected onto the closest point of the coarse
surface and expressed in barycentric coordinates of the triangle it
lands in, which yields a sparse interpolation matrix with at most
three entries per row.  Coarse vertices coincide with dense vertices
by construction, so their rows are exact unit vectors.  Closest point
queries run through a small axis aligned bounding box tree over the
coarse triangles, ordered along a Morton curve.
"""

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import sparse

from .fmap import pointmap_from_fmap
from .mesh import MeshIOError

logger = logging.getLogger(__name__)

_LEAF_SIZE = 4


@dataclass
class SurfacePoint:
    """A point on a mesh, as a triangle index plus barycentric weights.

    The weights are nonnegative, sum to one, and refer to the corners
    of ``triangle`` in storage order.
    """

    triangle: int
    bary: np.ndarray


@njit(cache=True, inline="always")
def _box_dist2(bmin, bmax, nd, px, py, pz):
    d = 0.0
    t = bmin[nd, 0] - px
    if t > 0.0:
        d += t * t
    t = px - bmax[nd, 0]
    if t > 0.0:
        d += t * t
    t = bmin[nd, 1] - py
    if t > 0.0:
        d += t * t
    t = py - bmax[nd, 1]
    if t > 0.0:
        d += t * t
    t = bmin[nd, 2] - pz
    if t > 0.0:
        d += t * t
    t = pz - bmax[nd, 2]
    if t > 0.0:
        d += t * t
    return d


@njit(cache=True, inline="always")
def _seg_closest(ax, ay, az, bx, by, bz, px, py, pz):
    ex = bx - ax
    ey = by - ay
    ez = bz - az
    ee = ex * ex + ey * ey + ez * ez
    t = 0.0
    if ee > 0.0:
        t = ((px - ax) * ex + (py - ay) * ey + (pz - az) * ez) / ee
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    dx = px - (ax + t * ex)
    dy = py - (ay + t * ey)
    dz = pz - (az + t * ez)
    return dx * dx + dy * dy + dz * dz, t


@njit(cache=True)
def _tri_closest(verts, tris, tr, px, py, pz):
    """Squared distance and barycentric weights of the closest point."""
    ia = tris[tr, 0]
    ib = tris[tr, 1]
    ic = tris[tr, 2]
    ax = verts[ia, 0]
    ay = verts[ia, 1]
    az = verts[ia, 2]
    bx = verts[ib, 0]
    by = verts[ib, 1]
    bz = verts[ib, 2]
    cx = verts[ic, 0]
    cy = verts[ic, 1]
    cz = verts[ic, 2]
    abx = bx - ax
    aby = by - ay
    abz = bz - az
    acx = cx - ax
    acy = cy - ay
    acz = cz - az

    apx = px - ax
    apy = py - ay
    apz = pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return apx * apx + apy * apy + apz * apz, 1.0, 0.0, 0.0

    bpx = px - bx
    bpy = py - by
    bpz = pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bpx * bpx + bpy * bpy + bpz * bpz, 0.0, 1.0, 0.0

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        den = d1 - d3
        v = d1 / den if den > 0.0 else 0.0
        dx = apx - v * abx
        dy = apy - v * aby
        dz = apz - v * abz
        return dx * dx + dy * dy + dz * dz, 1.0 - v, v, 0.0

    cpx = px - cx
    cpy = py - cy
    cpz = pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cpx * cpx + cpy * cpy + cpz * cpz, 0.0, 0.0, 1.0

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        den = d2 - d6
        w = d2 / den if den > 0.0 else 0.0
        dx = apx - w * acx
        dy = apy - w * acy
        dz = apz - w * acz
        return dx * dx + dy * dy + dz * dz, 1.0 - w, 0.0, w

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and d4 - d3 >= 0.0 and d5 - d6 >= 0.0:
        den = (d4 - d3) + (d5 - d6)
        w = (d4 - d3) / den if den > 0.0 else 0.0
        dx = bpx - w * (cx - bx)
        dy = bpy - w * (cy - by)
        dz = bpz - w * (cz - bz)
        return dx * dx + dy * dy + dz * dz, 0.0, 1.0 - w, w

    den = va + vb + vc
    if den > 0.0:
        v = vb / den
        w = vc / den
        u = 1.0 - v - w
        if u < 0.0:
            # rounding pushed the point a hair outside, renormalize
            t = v + w
            v /= t
            w /= t
            u = 0.0
        dx = px - (u * ax + v * bx + w * cx)
        dy = py - (u * ay + v * by + w * cy)
        dz = pz - (u * az + v * bz + w * cz)
        return dx * dx + dy * dy + dz * dz, u, v, w

    # degenerate triangle, fall back to its edges
    best, t = _seg_closest(ax, ay, az, bx, by, bz, px, py, pz)
    u = 1.0 - t
    v = t
    w = 0.0
    d, t = _seg_closest(ax, ay, az, cx, cy, cz, px, py, pz)
    if d < best:
        best = d
        u = 1.0 - t
        v = 0.0
        w = t
    d, t = _seg_closest(bx, by, bz, cx, cy, cz, px, py, pz)
    if d < best:
        best = d
        u = 0.0
        v = 1.0 - t
        w = t
    return best, u, v, w


@njit(cache=True)
def _query_many(verts, tris, order, left, right, lo, hi, bmin, bmax,
                queries, out_tri, out_bary, out_d2):
    root = left.shape[0] - 1
    stack = np.empty(64, np.int64)
    for qi in range(queries.shape[0]):
        px = queries[qi, 0]
        py = queries[qi, 1]
        pz = queries[qi, 2]
        best = np.inf
        bt = -1
        bu = 0.0
        bv = 0.0
        bw = 0.0
        stack[0] = root
        top = 1
        while top > 0:
            top -= 1
            nd = stack[top]
            # non strict so equidistant triangles keep competing on index
            if _box_dist2(bmin, bmax, nd, px, py, pz) > best:
                continue
            l = left[nd]
            if l < 0:
                for ii in range(lo[nd], hi[nd]):
                    tr = order[ii]
                    d2, u, v, w = _tri_closest(verts, tris, tr, px, py, pz)
                    if d2 < best or (d2 == best and tr < bt):
                        best = d2
                        bt = tr
                        bu = u
                        bv = v
                        bw = w
            else:
                r = right[nd]
                dl = _box_dist2(bmin, bmax, l, px, py, pz)
                dr = _box_dist2(bmin, bmax, r, px, py, pz)
                if dl <= dr:
                    stack[top] = r
                    stack[top + 1] = l
                else:
                    stack[top] = l
                    stack[top + 1] = r
                top += 2
        out_tri[qi] = bt
        out_bary[qi, 0] = bu
        out_bary[qi, 1] = bv
        out_bary[qi, 2] = bw
        out_d2[qi] = best


def _spread_bits(x):
    # interleave 10 bits with two zero gaps each
    x = (x | (x << 16)) & 0x030000FF
    x = (x | (x << 8)) & 0x0300F00F
    x = (x | (x << 4)) & 0x030C30C3
    x = (x | (x << 2)) & 0x09249249
    return x


def _morton_codes(points):
    lo = points.min(axis=0)
    ext = np.maximum(points.max(axis=0) - lo, 1e-300)
    q = ((points - lo) / ext * 1023.0).astype(np.int64)
    q = np.clip(q, 0, 1023)
    return (_spread_bits(q[:, 0])
            | (_spread_bits(q[:, 1]) << 1)
            | (_spread_bits(q[:, 2]) << 2))


class AabbTree:
    """Bounding box tree over the triangles of a mesh.

    Triangles are sorted by the Morton code of their centroid and the
    tree is a balanced median split of that order, so construction is
    deterministic and queries return the lowest triangle index among
    exact ties.
    """

    def __init__(self, mesh):
        if mesh.triangles.shape[0] == 0:
            raise ValueError("mesh has no triangles")
        self._verts = np.ascontiguousarray(mesh.vertices, dtype=np.float64)
        self._tris = np.ascontiguousarray(mesh.triangles, dtype=np.int64)
        corners = self._verts[self._tris]
        self._order = np.argsort(
            _morton_codes(corners.mean(axis=1)), kind="stable")
        tmin = corners.min(axis=1)
        tmax = corners.max(axis=1)

        left, right, lo, hi, bmin, bmax = [], [], [], [], [], []

        def build(a, b):
            if b - a <= _LEAF_SIZE:
                sel = self._order[a:b]
                left.append(-1)
                right.append(-1)
                lo.append(a)
                hi.append(b)
                bmin.append(tmin[sel].min(axis=0))
                bmax.append(tmax[sel].max(axis=0))
            else:
                mid = (a + b) // 2
                build(a, mid)
                l = len(left) - 1
                build(mid, b)
                r = len(left) - 1
                left.append(l)
                right.append(r)
                lo.append(a)
                hi.append(b)
                bmin.append(np.minimum(bmin[l], bmin[r]))
                bmax.append(np.maximum(bmax[l], bmax[r]))

        build(0, len(self._order))
        self._left = np.asarray(left, dtype=np.int64)
        self._right = np.asarray(right, dtype=np.int64)
        self._lo = np.asarray(lo, dtype=np.int64)
        self._hi = np.asarray(hi, dtype=np.int64)
        self._bmin = np.ascontiguousarray(bmin, dtype=np.float64)
        self._bmax = np.ascontiguousarray(bmax, dtype=np.float64)

    def closest_points(self, queries):
        """Exact closest surface points for a batch of query points.

        Returns ``(triangle, bary, sqdist)`` arrays; ties go to the
        lowest triangle index.
        """
        q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != 3:
            raise ValueError("queries must have three coordinates")
        n = q.shape[0]
        out_tri = np.empty(n, dtype=np.int64)
        out_bary = np.empty((n, 3), dtype=np.float64)
        out_d2 = np.empty(n, dtype=np.float64)
        _query_many(self._verts, self._tris, self._order, self._left,
                    self._right, self._lo, self._hi, self._bmin, self._bmax,
                    q, out_tri, out_bary, out_d2)
        return out_tri, out_bary, out_d2


def closest_surface_point(mesh, query, accel=None):
    """Project a single point onto a mesh.

    ``accel`` may hold an AabbTree built over the same mesh to amortize
    repeated calls.
    """
    tree = accel if accel is not None else AabbTree(mesh)
    point = np.asarray(query, dtype=np.float64).reshape(1, 3)
    tri, bary, _ = tree.closest_points(point)
    return SurfacePoint(int(tri[0]), bary[0])


def build_prolongation(dense, remesh_result):
    """Sparse matrix carrying coarse vertex functions to a dense mesh.

    Row i holds the barycentric weights of dense vertex i projected
    onto the coarse surface, confined to one coarse triangle.  Rows of
    the coarse generators are exact unit vectors.  Dense vertices whose
    cell was dropped by the component filter are still projected, onto
    whatever coarse triangle is nearest.
    """
    lowres = remesh_result.lowres
    gen = np.asarray(remesh_result.generator_of)
    m = dense.n_vertices
    s = lowres.n_vertices
    if gen.size != s or gen.min() < 0 or gen.max() >= m or not \
            np.array_equal(lowres.vertices, dense.vertices[gen]):
        raise ValueError("remesh generators do not lie on this mesh")

    tri, bary, _ = AabbTree(lowres).closest_points(dense.vertices)
    keep = np.ones(m, dtype=bool)
    keep[gen] = False
    free = np.flatnonzero(keep)
    rows = np.concatenate([np.repeat(free, 3), gen])
    cols = np.concatenate([lowres.triangles[tri[free]].ravel(),
                           np.arange(s)])
    data = np.concatenate([bary[free].ravel(), np.ones(s)])
    u = sparse.coo_matrix((data, (rows, cols)), shape=(m, s)).tocsr()
    u.eliminate_zeros()
    u.sort_indices()
    return u


def extend_basis(u, lowbasis):
    """Carry a coarse eigenbasis to the dense mesh, column by column.

    The result is plain interpolation; columns are not reorthonormalized.
    """
    if u.shape[1] != lowbasis.phi.shape[0]:
        raise ValueError(
            "prolongation has %d columns for a basis on %d vertices"
            % (u.shape[1], lowbasis.phi.shape[0]))
    return np.asarray(u @ lowbasis.phi)


def recover_dense_pointmap(c, u_src, u_tgt, lowbasis_src, lowbasis_tgt):
    """Dense point map from a coarse functional map.

    The coarse spectral embeddings are prolonged to both dense meshes
    and matched by exact nearest neighbor, so the result is the same as
    recovering the map on materialized dense embeddings.
    """
    c = np.ascontiguousarray(c, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError("functional map must be a matrix")
    kt, ks = c.shape
    if ks > lowbasis_src.k or kt > lowbasis_tgt.k:
        raise ValueError("functional map is larger than the coarse bases")
    emb_src = extend_basis(u_src, lowbasis_src)[:, :ks]
    emb_tgt = extend_basis(u_tgt, lowbasis_tgt)[:, :kt]
    return pointmap_from_fmap(c, emb_src, emb_tgt)


def save_prolongation(path, u):
    """Write a prolongation matrix as header plus coordinate triplets."""
    u = sparse.csr_matrix(u)
    u.sort_indices()
    coo = u.tocoo()
    lines = ["%d %d %d" % (u.shape[0], u.shape[1], u.nnz)]
    for r, c, w in zip(coo.row, coo.col, coo.data):
        lines.append("%d %d %s" % (r, c, repr(float(w))))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_prolongation(path):
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 3:
        raise MeshIOError("%s: missing prolongation header" % path)
    try:
        m, s, nnz = (int(t) for t in tokens[:3])
    except ValueError:
        raise MeshIOError("%s: malformed prolongation header" % path)
    if m < 0 or s < 0 or nnz < 0 or len(tokens) != 3 + 3 * nnz:
        raise MeshIOError("%s: expected %d entries" % (path, nnz))
    try:
        rows = np.array([int(t) for t in tokens[3::3]], dtype=np.int64)
        cols = np.array([int(t) for t in tokens[4::3]], dtype=np.int64)
        data = np.array([float(t) for t in tokens[5::3]], dtype=np.float64)
    except ValueError:
        raise MeshIOError("%s: malformed prolongation entry" % path)
    if nnz and (rows.min() < 0 or rows.max() >= m
                or cols.min() < 0 or cols.max() >= s):
        raise MeshIOError("%s: entry out of range" % path)
    u = sparse.coo_matrix((data, (rows, cols)), shape=(m, s)).tocsr()
    u.sort_indices()
    return u
