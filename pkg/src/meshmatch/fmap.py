"""Functional maps between truncated spectral bases.

Orientation conventions, used consistently across the package:

- A point map goes from a source mesh to a target mesh and is stored as
  ``target_of``, one target vertex index per source vertex.
- The matching functional map is the pullback along that point map: it
  carries coefficients of functions on the target to coefficients on the
  source. It is stored as a (k_target, k_source) array ``c`` whose row j
  holds the source-basis coefficients of the pulled back target
  eigenfunction, so row vectors of coefficients transform as
  ``coeff_src = coeff_tgt @ c``.
- Point map recovery matches every source row of phi against the rows of
  ``psi @ c`` by exact nearest neighbor, ties to the lowest index.

The nearest neighbor search is exact: either a direct scan, or a kd-tree
candidate prefilter on a prefix of the coordinates followed by a full
re-ranking of everything whose prefix distance can still win. Both paths
accumulate distances in the same order, so results are identical.
"""

import logging

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .mesh import MeshIOError

logger = logging.getLogger(__name__)

# direct scan below this many query*reference pairs; the tree pays off
# only once the quadratic term dominates its build and query overhead
_SCAN_LIMIT = 4_000_000
_PREFIX_DIMS = 8
_UB_CANDIDATES = 64
# candidate pairs materialized per re-rank slab, and the ball size past
# which a seeded full scan is cheaper than building the list at all
_PAIR_BUDGET = 1 << 25


@njit(cache=True)
def _scan_all(refs, queries, out, out_d):
    n_q, k = queries.shape
    n_r = refs.shape[0]
    for i in range(n_q):
        best = np.inf
        best_j = -1
        for j in range(n_r):
            s = 0.0
            for t in range(k):
                d = queries[i, t] - refs[j, t]
                s += d * d
                if s >= best:
                    break
            if s < best:
                best = s
                best_j = j
        out[i] = best_j
        out_d[i] = best


@njit(cache=True)
def _scan_lists(refs, queries, indptr, cand, out, out_d):
    n_q, k = queries.shape
    for i in range(n_q):
        best = np.inf
        best_j = -1
        for p in range(indptr[i], indptr[i + 1]):
            j = cand[p]
            s = 0.0
            for t in range(k):
                d = queries[i, t] - refs[j, t]
                s += d * d
                if s >= best:
                    break
            if s < best:
                best = s
                best_j = j
        out[i] = best_j
        out_d[i] = best


@njit(cache=True)
def _scan_all_seeded(refs, queries, rows, out, out_d):
    # full rescan of the listed query rows, started from the upper bound
    # already in out/out_d so the abort prunes almost every reference.
    # Equal distances displace the seed only toward a lower index, which
    # reproduces the lowest-index tie rule of a cold scan exactly.
    n_r, k = refs.shape
    for ii in range(rows.shape[0]):
        i = rows[ii]
        best = out_d[i]
        best_j = out[i]
        for j in range(n_r):
            s = 0.0
            for t in range(k):
                d = queries[i, t] - refs[j, t]
                s += d * d
                if s > best:
                    break
            if s < best or (s == best and j < best_j):
                best = s
                best_j = j
        out[i] = best_j
        out_d[i] = best


def nearest_rows(refs, queries):
    """Index of the nearest row of refs for every row of queries.

    Exact Euclidean nearest neighbor with ties broken to the lowest
    reference index. Large instances go through a kd-tree built on the
    first few coordinates: the best of 64 prefix candidates gives an
    upper bound, and every reference whose prefix distance is below that
    bound is re-ranked with full precision. Any true nearest neighbor
    has prefix distance at most its full distance, so nothing is missed.
    Candidate lists are materialized in bounded slabs, and queries whose
    ball would cover a large share of the references are finished by a
    rescan seeded with the upper bound instead, so memory stays linear
    even when the embeddings barely correspond.
    """
    refs = np.ascontiguousarray(refs, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if refs.ndim != 2 or queries.ndim != 2:
        raise ValueError("expected 2d arrays of row vectors")
    if refs.shape[0] == 0 or queries.shape[0] == 0:
        raise ValueError("empty reference or query set")
    if refs.shape[1] != queries.shape[1] or refs.shape[1] == 0:
        raise ValueError("reference and query dimensions differ: %d vs %d"
                         % (refs.shape[1], queries.shape[1]))

    n_r, k = refs.shape
    n_q = queries.shape[0]
    out = np.empty(n_q, dtype=np.int64)
    dist = np.empty(n_q)
    if n_q * n_r <= _SCAN_LIMIT or n_r <= 2 * _UB_CANDIDATES:
        _scan_all(refs, queries, out, dist)
        return out

    p = min(_PREFIX_DIMS, k)
    tree = cKDTree(refs[:, :p])
    _, pre = tree.query(queries[:, :p], k=_UB_CANDIDATES)
    pre = np.sort(pre.astype(np.int64), axis=1)
    head = np.arange(n_q + 1, dtype=np.int64) * _UB_CANDIDATES
    _scan_lists(refs, queries, head, pre.ravel(), out, dist)

    # inflate the radius a hair so kd-tree rounding cannot exclude a
    # reference whose exact prefix distance equals the bound
    radius = np.sqrt(dist) * (1.0 + 1e-9) + 1e-30
    lens = tree.query_ball_point(queries[:, :p], radius,
                                 return_length=True).astype(np.int64)

    # when the map is poor the balls cover most of the reference set and
    # materializing every list at once is quadratic in memory; finish
    # those queries with the seeded rescan and slab the rest
    dense = lens > max(4 * _UB_CANDIDATES, n_r // 8)
    if np.any(dense):
        _scan_all_seeded(refs, queries, np.nonzero(dense)[0], out, dist)
    todo = np.nonzero(~dense)[0]
    start = 0
    while start < todo.shape[0]:
        stop = start
        pairs = 0
        while stop < todo.shape[0] and pairs <= _PAIR_BUDGET:
            pairs += lens[todo[stop]]
            stop += 1
        rows = todo[start:stop]
        balls = tree.query_ball_point(queries[rows][:, :p], radius[rows],
                                      return_sorted=True)
        indptr = np.zeros(rows.shape[0] + 1, dtype=np.int64)
        np.cumsum(lens[rows], out=indptr[1:])
        cand = np.fromiter((j for b in balls for j in b), dtype=np.int64,
                           count=int(indptr[-1]))
        sub_out = np.empty(rows.shape[0], dtype=np.int64)
        sub_d = np.empty(rows.shape[0])
        _scan_lists(refs, np.ascontiguousarray(queries[rows]), indptr, cand,
                    sub_out, sub_d)
        out[rows] = sub_out
        dist[rows] = sub_d
        start = stop
    return out


def _check_size(name, value, limit):
    value = int(value)
    if not 1 <= value <= limit:
        raise ValueError("%s must be in [1, %d], got %d" % (name, limit, value))
    return value


def fmap_from_pointmap(target_of, basis_src, basis_tgt, k_source=None,
                       k_target=None):
    """Pullback functional map of a point map, row-gathered exactly.

    Row j of the result holds the source-basis coefficients of the j-th
    target eigenfunction composed with the point map, i.e. the inner
    products against the source basis under the source mass matrix.
    """
    target_of = np.asarray(target_of)
    if target_of.ndim != 1 or target_of.size == 0:
        raise ValueError("point map must be a nonempty index vector")
    if not np.issubdtype(target_of.dtype, np.integer):
        raise ValueError("point map must hold integer indices")
    if basis_src.mass is None:
        raise ValueError("source basis has no mass attached; rebuild it or "
                         "load it through cached_eigenbasis")
    n_src = basis_src.phi.shape[0]
    n_tgt = basis_tgt.phi.shape[0]
    if target_of.size != n_src:
        raise ValueError("point map covers %d vertices, source has %d"
                         % (target_of.size, n_src))
    if target_of.min() < 0 or target_of.max() >= n_tgt:
        raise ValueError("point map indices out of target range")
    ks = basis_src.k if k_source is None else _check_size(
        "k_source", k_source, basis_src.k)
    kt = basis_tgt.k if k_target is None else _check_size(
        "k_target", k_target, basis_tgt.k)
    pulled = basis_tgt.phi[target_of, :kt]
    return pulled.T @ (basis_src.mass[:, None] * basis_src.phi[:, :ks])


def pointmap_from_fmap(c, emb_src, emb_tgt):
    """Recover a point map from a functional map by spectral NN search.

    emb_src holds one embedding row per source vertex (the source basis,
    possibly prolonged to a dense mesh) and emb_tgt the raw target side;
    the map c is applied to the target rows here.
    """
    c = np.asarray(c, dtype=np.float64)
    emb_src = np.asarray(emb_src, dtype=np.float64)
    emb_tgt = np.asarray(emb_tgt, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError("functional map must be a 2d array")
    if emb_src.ndim != 2 or emb_src.shape[1] != c.shape[1]:
        raise ValueError("source embedding width %s does not match map "
                         "k_source %d" % (emb_src.shape[1:], c.shape[1]))
    if emb_tgt.ndim != 2 or emb_tgt.shape[1] != c.shape[0]:
        raise ValueError("target embedding width %s does not match map "
                         "k_target %d" % (emb_tgt.shape[1:], c.shape[0]))
    return nearest_rows(emb_tgt @ c, emb_src)


def _spectral_coeffs(basis, values, k):
    return basis.phi[:, :k].T @ (basis.mass[:, None] * values)


def fmap_init(desc_src, desc_tgt, basis_src, basis_tgt, k0=20, mu_prod=1e-1,
              mu_lap=1e-3):
    """Descriptor-preserving initialization of a k0 x k0 functional map.

    Solves one stacked linear least squares problem for the map X that
    carries target coefficients to source coefficients: descriptor
    preservation ``X G_tgt = G_src``, commutativity with the descriptor
    multiplication operators (weight mu_prod), and commutativity with
    the Laplacians (weight mu_lap, eigenvalues rescaled to unit range so
    the weight is dimensionless). Returns the stored orientation, X
    transposed. Rank deficiency is logged and settled with a small ridge.
    """
    if desc_src.kind != desc_tgt.kind:
        raise ValueError("descriptor kinds differ between sides")
    if desc_src.params.keys() != desc_tgt.params.keys():
        raise ValueError("descriptor parameters differ between sides")
    if desc_src.values.shape[1] != desc_tgt.values.shape[1]:
        raise ValueError("descriptor counts differ between sides")
    if basis_src.mass is None or basis_tgt.mass is None:
        raise ValueError("both bases need their mass attached")
    k0 = _check_size("k0", k0, min(basis_src.k, basis_tgt.k))
    n_d = desc_src.values.shape[1]

    g_src = _spectral_coeffs(basis_src, desc_src.values, k0)
    g_tgt = _spectral_coeffs(basis_tgt, desc_tgt.values, k0)

    eye = np.eye(k0)
    blocks = [np.kron(eye, g_tgt.T)]
    rhs = [g_src.ravel()]

    phi_s = basis_src.phi[:, :k0]
    phi_t = basis_tgt.phi[:, :k0]
    w_prod = np.sqrt(mu_prod)
    for q in range(n_d):
        y_src = phi_s.T @ ((basis_src.mass * desc_src.values[:, q])[:, None]
                           * phi_s)
        y_tgt = phi_t.T @ ((basis_tgt.mass * desc_tgt.values[:, q])[:, None]
                           * phi_t)
        blocks.append(w_prod * (np.kron(eye, y_tgt.T) - np.kron(y_src, eye)))
        rhs.append(np.zeros(k0 * k0))

    scale = max(basis_src.evals[:k0].max(), basis_tgt.evals[:k0].max())
    if scale <= 0.0:
        scale = 1.0
    lam_s = basis_src.evals[:k0] / scale
    lam_t = basis_tgt.evals[:k0] / scale
    blocks.append(np.sqrt(mu_lap) * np.diag(
        (lam_t[None, :] - lam_s[:, None]).ravel()))
    rhs.append(np.zeros(k0 * k0))

    system = np.vstack(blocks)
    b = np.concatenate(rhs)
    x, _, rank, _ = np.linalg.lstsq(system, b, rcond=None)
    if rank < k0 * k0:
        logger.warning("descriptor system has rank %d for %d unknowns; "
                       "solving with a ridge", rank, k0 * k0)
        ridge = 1e-6 * (np.abs(system).max() + 1.0)
        system = np.vstack([system, ridge * np.eye(k0 * k0)])
        b = np.concatenate([b, np.zeros(k0 * k0)])
        x = np.linalg.lstsq(system, b, rcond=None)[0]
    return x.reshape(k0, k0).T.copy()


def upsample_fmap(c0, basis_src, basis_tgt, step=5, k_final=100):
    """Refine a functional map by alternating projections at growing size.

    Each round converts the current map to a point map and re-projects
    that point map at the next truncation size, until k_final. When
    k_final equals the initial size one projection round still runs.
    """
    c = np.asarray(c0, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("initial functional map must be square")
    if step < 1:
        raise ValueError("step must be positive")
    k_max = min(basis_src.k, basis_tgt.k)
    k0 = _check_size("initial size", c.shape[0], k_max)
    k_final = _check_size("k_final", k_final, k_max)
    if k_final < k0:
        raise ValueError("k_final %d below initial size %d" % (k_final, k0))

    sizes = []
    k = k0
    while k < k_final:
        k = min(k + step, k_final)
        sizes.append(k)
    if not sizes:
        sizes = [k0]
    for k_next in sizes:
        kt, ks = c.shape
        pi = pointmap_from_fmap(c, basis_src.phi[:, :ks],
                                basis_tgt.phi[:, :kt])
        c = fmap_from_pointmap(pi, basis_src, basis_tgt, k_source=k_next,
                               k_target=k_next)
    return c


def save_fmap(path, c):
    """Write a functional map as text: "k_target k_source" then rows."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError("functional map must be a 2d array")
    with open(path, "w") as handle:
        handle.write("%d %d\n" % c.shape)
        for row in c:
            handle.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_fmap(path):
    with open(path, "r") as handle:
        tokens = handle.read().split()
    if len(tokens) < 2:
        raise MeshIOError("%s: missing functional map header" % path)
    try:
        kt, ks = int(tokens[0]), int(tokens[1])
        values = np.array([float(t) for t in tokens[2:]])
    except ValueError as exc:
        raise MeshIOError("%s: malformed functional map: %s" % (path, exc))
    if kt <= 0 or ks <= 0 or values.size != kt * ks:
        raise MeshIOError("%s: expected %dx%d values, found %d"
                          % (path, kt, ks, values.size))
    return values.reshape(kt, ks)
