"""Coarse remeshing through geodesic cell complexes.

A farthest point sampling partitions the vertices of a mesh into geodesic
cells, one per sample. Whenever every cell, every union of two adjacent
cells and every union of three mutually adjacent cells is a topological
disk, the nerve of the partition triangulates the surface: one coarse
vertex per cell and one coarse triangle per cell triple that meets in a
primal triangle. This module checks the disk property, repairs samplings
that violate it by inserting extra samples, and extracts the coarse mesh.

Euler characteristics of cell unions are computed in two layers. Per-cell
counters (triangles, edges and boundary entities touching each cell) give
chi for single cells directly; unions of two or three cells need only small
inclusion-exclusion corrections counted per adjacent pair and per triple.
The whole check is a handful of bincount and unique passes over the edge
and triangle tables, so rechecking after a repair round is cheap even for
large meshes.
"""

import logging
from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np

from .mesh import TopologyError, TriMesh, remove_small_components
from .sampling import add_sample, farthest_point_sampling

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """An iterative stage exhausted its round budget without settling."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class DiskPropertyReport:
    """Euler characteristics of cells and cell unions, with the violators.

    Keys of ``cell_chi`` are generator vertex ids; ``pair_chi`` and
    ``triple_chi`` are keyed by sorted id tuples. The ``bad_*`` lists hold
    the entries whose characteristic differs from 1 (a disk), in ascending
    order.
    """

    cell_chi: dict
    pair_chi: dict
    triple_chi: dict
    bad_cells: list
    bad_pairs: list
    bad_triples: list

    def ok(self):
        return not (self.bad_cells or self.bad_pairs or self.bad_triples)

    def counts(self):
        return (len(self.bad_cells), len(self.bad_pairs),
                len(self.bad_triples))


def _lookup(sorted_keys, values, queries):
    """values[sorted_keys.index(q)] per query, 0 where q is absent."""
    if len(sorted_keys) == 0 or len(queries) == 0:
        return np.zeros(len(queries), dtype=np.int64)
    pos = np.searchsorted(sorted_keys, queries)
    pos = np.minimum(pos, len(sorted_keys) - 1)
    hit = sorted_keys[pos] == queries
    return np.where(hit, values[pos], 0)


def check_disk_property(state):
    """Verify that all cells and their small unions are disks.

    Parameters
    ----------
    state : VoronoiState
        Sampling state whose distance field labels every vertex.

    Returns
    -------
    DiskPropertyReport
    """
    mesh = state.mesh
    labels = state.field.source
    if labels.min() < 0:
        raise TopologyError(
            "sampling leaves vertices unlabeled; every connected component "
            "needs at least one sample")
    n = mesh.n_vertices
    nn = np.int64(n)
    e = mesh.edges
    la = labels[e[:, 0]]
    lb = labels[e[:, 1]]
    same = la == lb

    # Per-cell counters: entities with at least one incident cell member.
    e_cnt = (np.bincount(la, minlength=n) + np.bincount(lb, minlength=n)
             - np.bincount(la[same], minlength=n))
    ts = np.sort(labels[mesh.triangles], axis=1)
    x, y, z = ts[:, 0], ts[:, 1], ts[:, 2]
    d1 = y != x
    d2 = z != y
    t_cnt = (np.bincount(x, minlength=n) + np.bincount(y[d1], minlength=n)
             + np.bincount(z[d2], minlength=n))
    chi = t_cnt - e_cnt + np.bincount(labels, minlength=n)

    bnd = mesh.boundary_edge_mask()
    has_bnd = bool(bnd.any())
    if has_bnd:
        be = e[bnd]
        bu = labels[be[:, 0]]
        bw = labels[be[:, 1]]
        bsame = bu == bw
        # boundary edges with >= 1 endpoint in the cell count as dual
        # vertices, each of their endpoints as a dual half edge, and
        # boundary cell corners as dual vertices again
        be_cnt = (np.bincount(bu, minlength=n) + np.bincount(bw, minlength=n)
                  - np.bincount(bu[bsame], minlength=n))
        bends_cnt = np.bincount(bu, minlength=n) + np.bincount(bw,
                                                               minlength=n)
        bv_cnt = np.bincount(labels[mesh.boundary_vertex_mask()],
                             minlength=n)
        chi = chi + be_cnt + bv_cnt - bends_cnt

    # Pair corrections. Adjacent pairs are exactly the label pairs that
    # appear inside some triangle, since any two labels of a triangle are
    # joined by one of its edges.
    pa = np.minimum(la[~same], lb[~same])
    pb = np.maximum(la[~same], lb[~same])
    pkeys, e_ab = np.unique(pa * nn + pb, return_counts=True)

    k_xy = (x * nn + y)[d1]
    k_yz = (y * nn + z)[d2]
    k_xz = (x * nn + z)[d1 & d2]
    tkeys, t_ab = np.unique(np.concatenate((k_xy, k_yz, k_xz)),
                            return_counts=True)
    assert np.array_equal(pkeys, tkeys)

    if has_bnd:
        bpa = np.minimum(bu[~bsame], bw[~bsame])
        bpb = np.maximum(bu[~bsame], bw[~bsame])
        bkeys, be_ab = np.unique(bpa * nn + bpb, return_counts=True)
    else:
        bkeys = np.zeros(0, dtype=np.int64)
        be_ab = bkeys

    pair_a = (pkeys // nn).astype(np.int64)
    pair_b = (pkeys % nn).astype(np.int64)
    pair_corr = t_ab + _lookup(bkeys, be_ab, pkeys) - e_ab
    chi_pair = chi[pair_a] + chi[pair_b] - pair_corr

    # Triple corrections: only triangle counts have a three-way term.
    full = d1 & d2
    trkeys, t_abc = np.unique((x[full] * nn + y[full]) * nn + z[full],
                              return_counts=True)
    tz = trkeys % nn
    tr = trkeys // nn
    ty = tr % nn
    tx = tr // nn
    chi_triple = (chi[tx] + chi[ty] + chi[tz]
                  - _lookup(pkeys, pair_corr, tx * nn + ty)
                  - _lookup(pkeys, pair_corr, ty * nn + tz)
                  - _lookup(pkeys, pair_corr, tx * nn + tz)
                  + t_abc)

    gens = sorted(int(g) for g in state.samples)
    cell_chi = {g: int(chi[g]) for g in gens}
    pair_chi = {(int(a), int(b)): int(c)
                for a, b, c in zip(pair_a, pair_b, chi_pair)}
    triple_chi = {(int(a), int(b), int(c)): int(v)
                  for a, b, c, v in zip(tx, ty, tz, chi_triple)}
    return DiskPropertyReport(
        cell_chi, pair_chi, triple_chi,
        [g for g in gens if cell_chi[g] != 1],
        [p for p, v in pair_chi.items() if v != 1],
        [t for t, v in triple_chi.items() if v != 1],
    )


def _pick_farthest(pool, dist):
    # pool is ascending, so argmax ties resolve to the lowest vertex id
    return int(pool[np.argmax(dist[pool])])


def repair_sampling(state, max_rounds=50):
    """Insert samples until every cell union passes the disk check.

    Violations are handled worst first: non-disk cells get a sample at
    their farthest boundary vertex (farthest cell vertex when the cell has
    no neighbors), non-disk pair unions at the vertex along the shared
    boundary farthest from both generators, and non-disk triple unions at
    the farthest corner of a triangle where the three cells meet. All
    violations found in a round are treated before rechecking.

    Returns the number of rounds performed. Raises ConvergenceError with
    the last report attached when the budget is exhausted or no insertable
    vertex remains.
    """
    mesh = state.mesh
    e = mesh.edges
    rounds = 0
    while True:
        report = check_disk_property(state)
        if report.ok():
            if rounds:
                logger.info("repair converged after %d round(s), %d samples",
                            rounds, len(state.samples))
            return rounds
        if rounds >= max_rounds:
            raise ConvergenceError(
                "repair did not converge within %d rounds "
                "(%d cells, %d pairs, %d triples still bad)"
                % ((max_rounds,) + report.counts()), report)
        labels = state.field.source
        dist = state.field.dist
        la = labels[e[:, 0]]
        lb = labels[e[:, 1]]
        cross = la != lb
        ts = np.sort(labels[mesh.triangles], axis=1)

        candidates = []
        for c in report.bad_cells:
            ends = np.concatenate((e[cross & (la == c), 0],
                                   e[cross & (lb == c), 1]))
            pool = np.unique(ends) if ends.size else np.flatnonzero(
                labels == c)
            candidates.append(_pick_farthest(pool, dist))
        for a, b in report.bad_pairs:
            m_ab = cross & (((la == a) & (lb == b))
                            | ((la == b) & (lb == a)))
            pool = np.unique(e[m_ab].reshape(-1))
            candidates.append(_pick_farthest(pool, dist))
        for a, b, c in report.bad_triples:
            hit = (ts[:, 0] == a) & (ts[:, 1] == b) & (ts[:, 2] == c)
            corners = mesh.triangles[np.argmax(hit)]
            candidates.append(int(corners[np.argmax(dist[corners])]))

        inserted = 0
        seen = set()
        for p in candidates:
            if p in seen or labels[p] == p:
                continue
            seen.add(p)
            add_sample(state, p)
            inserted += 1
        if inserted == 0:
            raise ConvergenceError(
                "repair stalled: every candidate vertex is already a sample",
                report)
        rounds += 1


@dataclass
class RemeshResult:
    """Coarse mesh with the correspondence back to the input.

    Attributes
    ----------
    dense : TriMesh
        The mesh the cells live on (after optional edge splitting).
    lowres : TriMesh
        Extracted coarse mesh. Vertex i sits bitwise at the position of
        dense vertex ``generator_of[i]``.
    generator_of : np.ndarray
        Dense vertex id per coarse vertex, in sampling order.
    cell_of : np.ndarray
        Coarse vertex id per dense vertex, -1 where the cell was removed
        by the component filter. ``cell_of[generator_of[i]] == i``.
    repair_count : int
        Samples inserted on top of the requested count.
    """

    dense: TriMesh
    lowres: TriMesh
    generator_of: np.ndarray
    cell_of: np.ndarray
    repair_count: int


def extract_dual_mesh(state, repair_count=0):
    """Build the coarse mesh dual to a valid cell partition.

    Requires a state that passes :func:`check_disk_property`; raises
    TopologyError otherwise. Coarse triangles are the cell triples realized
    by primal triangles, each oriented like the first realizing triangle in
    index order, so orientation is inherited from the input mesh.
    """
    report = check_disk_property(state)
    if not report.ok():
        raise TopologyError(
            "cell complex has non-disk unions (%d cells, %d pairs, "
            "%d triples); run repair_sampling first" % report.counts())
    mesh = state.mesh
    labels = state.field.source
    gens = np.asarray(state.samples, dtype=np.int64)
    lut = np.full(mesh.n_vertices, -1, dtype=np.int64)
    lut[gens] = np.arange(len(gens), dtype=np.int64)

    tl = labels[mesh.triangles]
    ts = np.sort(tl, axis=1)
    distinct = np.flatnonzero((ts[:, 0] != ts[:, 1]) & (ts[:, 1] != ts[:, 2]))
    if distinct.size:
        _, first = np.unique(ts[distinct], axis=0, return_index=True)
        low_tris = lut[tl[distinct[first]]]
    else:
        low_tris = np.zeros((0, 3), dtype=np.int64)
    lowres = TriMesh(mesh.vertices[gens], low_tris)

    # every adjacent cell pair should surface as a coarse edge
    nn = np.int64(mesh.n_vertices)
    la = labels[mesh.edges[:, 0]]
    lb = labels[mesh.edges[:, 1]]
    cross = la != lb
    adj = np.unique(np.minimum(la[cross], lb[cross]) * nn
                    + np.maximum(la[cross], lb[cross]))
    ge = np.sort(gens[lowres.edges], axis=1)
    covered = ge[:, 0] * nn + ge[:, 1]
    missing = np.setdiff1d(adj, covered, assume_unique=False)
    if missing.size:
        if mesh.is_closed():
            raise TopologyError(
                "%d adjacent cell pairs have no dual triangle on a closed "
                "mesh" % missing.size)
        logger.warning(
            "%d adjacent cell pairs meet only along the open boundary; "
            "their dual edges are dropped", missing.size)

    defects = lowres.validate_manifold()
    if defects:
        raise TopologyError(
            "extracted mesh is not manifold: %d defect(s), first is %r; "
            "increase the sample count" % (len(defects), defects[0]))
    return RemeshResult(mesh, lowres, gens, lut[labels], repair_count)


def _stage(timer, name):
    return nullcontext() if timer is None else timer.stage(name)


def remesh(mesh, s, rng=None, vertex=None, resample=False,
           component_area_threshold=0.0, max_rounds=50, timer=None):
    """Full remeshing pipeline.

    Optionally splits oversized triangles, then samples ``s`` points
    farthest-first (seeded by ``vertex`` or drawn with ``rng``), repairs
    the sampling until all cell unions are disks and extracts the coarse
    mesh. A positive ``component_area_threshold`` drops coarse connected
    components below that fraction of total area; dense vertices of
    dropped cells get ``cell_of`` -1. ``timer`` may supply a
    ``stage(name)`` context manager to clock the phases.
    """
    mesh.require_manifold()
    if resample:
        with _stage(timer, "resample"):
            mesh = resample_large_triangles(mesh, s)
    if s > mesh.n_vertices:
        logger.warning("requested %d samples on %d vertices; clamping",
                       s, mesh.n_vertices)
        s = mesh.n_vertices
    with _stage(timer, "fps"):
        state = farthest_point_sampling(mesh, s, vertex=vertex, rng=rng)
    with _stage(timer, "repair"):
        repair_sampling(state, max_rounds=max_rounds)
    with _stage(timer, "extract"):
        out = extract_dual_mesh(state, repair_count=len(state.samples) - s)
    if component_area_threshold > 0:
        lowres, removed = remove_small_components(out.lowres,
                                                  component_area_threshold)
        if removed.size:
            keep = np.ones(out.lowres.n_vertices, dtype=bool)
            keep[removed] = False
            new_id = np.full(out.lowres.n_vertices, -1, dtype=np.int64)
            new_id[keep] = np.arange(lowres.n_vertices, dtype=np.int64)
            out = RemeshResult(out.dense, lowres, out.generator_of[keep],
                               new_id[out.cell_of], out.repair_count)
    return out


# ----------------------------------------------------------------------
# uniform edge splitting


def split_threshold(mesh, s):
    """Edge length above which triangles are considered oversized.

    The threshold is the side of an equilateral triangle whose area is the
    average triangle area a remesh to ``s`` samples aims for, taking two
    triangles per sample.
    """
    if s <= 0:
        raise ValueError("sample count must be positive")
    target_area = mesh.total_area() / (2.0 * float(s))
    return float(np.sqrt(2.0 * target_area / np.sqrt(3.0)))


def _corner_angles(p, a, b):
    u = a - p
    w = b - p
    cr = np.cross(u, w)
    return np.arctan2(np.linalg.norm(cr, axis=1), np.einsum("ij,ij->i", u, w))


def _split_oversized(mesh, rho):
    over = mesh.edge_lengths() > rho
    n = mesh.n_vertices
    split = np.flatnonzero(over)
    mid_of = np.full(mesh.n_edges, -1, dtype=np.int64)
    mid_of[split] = n + np.arange(len(split), dtype=np.int64)
    mids = 0.5 * (mesh.vertices[mesh.edges[split, 0]]
                  + mesh.vertices[mesh.edges[split, 1]])
    verts = np.vstack((mesh.vertices, mids))

    flags = over[mesh.tri_edges]
    pattern = (flags[:, 0].astype(np.int64) + 2 * flags[:, 1]
               + 4 * flags[:, 2])
    # rotate corners so the split pattern is canonical: a single split
    # lands on side 0, a double split spares side 0
    rot_table = np.array([0, 0, 1, 2, 2, 1, 0, 0], dtype=np.int64)
    r = rot_table[pattern]
    idx = (r[:, None] + np.arange(3, dtype=np.int64)) % 3
    c = np.take_along_axis(mesh.triangles, idx, axis=1)
    m = mid_of[np.take_along_axis(mesh.tri_edges, idx, axis=1)]
    nover = flags.sum(axis=1)

    parts = [mesh.triangles[nover == 0]]

    one = nover == 1
    if one.any():
        c0, c1, c2 = c[one].T
        m0 = m[one, 0]
        parts.append(np.column_stack((c0, c1, m0)))
        parts.append(np.column_stack((c0, m0, c2)))

    two = nover == 2
    if two.any():
        c0, c1, c2 = c[two].T
        m1, m2 = m[two, 1], m[two, 2]
        parts.append(np.column_stack((c0, m2, m1)))
        # quad (m2, c1, c2, m1): cut along the diagonal whose endpoints
        # carry the larger angle sum; ties go to the lower original corner
        q0, q1 = verts[m2], verts[c1]
        q2, q3 = verts[c2], verts[m1]
        sum_a = _corner_angles(q0, q1, q3) + _corner_angles(q2, q3, q1)
        sum_b = _corner_angles(q1, q2, q0) + _corner_angles(q3, q0, q2)
        use_a = (sum_a > sum_b) | ((sum_a == sum_b) & (c2 < c1))
        a_rows = np.flatnonzero(use_a)
        b_rows = np.flatnonzero(~use_a)
        parts.append(np.column_stack((m2[a_rows], c1[a_rows], c2[a_rows])))
        parts.append(np.column_stack((m2[a_rows], c2[a_rows], m1[a_rows])))
        parts.append(np.column_stack((m2[b_rows], c1[b_rows], m1[b_rows])))
        parts.append(np.column_stack((c1[b_rows], c2[b_rows], m1[b_rows])))

    three = nover == 3
    if three.any():
        c0, c1, c2 = c[three].T
        m0, m1, m2 = m[three].T
        parts.append(np.column_stack((c0, m2, m1)))
        parts.append(np.column_stack((c1, m0, m2)))
        parts.append(np.column_stack((c2, m1, m0)))
        parts.append(np.column_stack((m0, m1, m2)))

    return TriMesh(verts, np.vstack(parts))


def resample_large_triangles(mesh, s, max_rounds=100):
    """Split edges at midpoints until none exceeds :func:`split_threshold`.

    Splitting is driven per triangle by which of its sides are oversized;
    the threshold is computed once from the input mesh, whose total area
    the refinement preserves. Returns the input object untouched when no
    edge is oversized.
    """
    rho = split_threshold(mesh, s)
    out = mesh
    for _ in range(max_rounds):
        if not bool((out.edge_lengths() > rho).any()):
            return out
        out = _split_oversized(out, rho)
    raise ConvergenceError(
        "edge splitting did not settle below the length threshold "
        "within %d rounds" % max_rounds)
