"""Evaluation harness: accuracy curves, perturbed pairs, transfer study.

Map quality is scored by graph geodesic error on the target mesh,
normalized by its double-sweep diameter estimate, and summarized as an
accuracy curve over [0, 0.25] with the mean error (age) and the area
under the curve (auc).  The harness also synthesizes perturbed copies
of a mesh with recoverable ground truth, measures how well prolonged
coarse geodesics approximate dense ones, and collects per-stage
timings into CSV form.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from . import geodesic, io
from .fmap import nearest_rows
from .mesh import MeshIOError, TriMesh
from .sampling import farthest_point_sampling

TIMING_STAGES = ("resample", "fps", "repair", "extract", "laplacian",
                 "eigens", "fmap_init", "zoomout", "prolongation",
                 "nn_recovery")


@dataclass
class AccuracyCurve:
    """Cumulative accuracy of a point map.

    fractions[i] is the share of evaluated vertices with normalized
    geodesic error at most thresholds[i].
    """

    thresholds: np.ndarray
    fractions: np.ndarray
    age: float
    auc: float


def accuracy_curve(errors, cap=0.25, count=256):
    """Summarize per-vertex normalized errors.

    Unreachable targets may carry infinite error; they lower the curve
    and push the mean but are not rejected.
    """
    errors = np.asarray(errors, dtype=np.float64).ravel()
    if errors.size == 0:
        raise ValueError("no errors to summarize")
    if np.isnan(errors).any() or (errors < 0).any():
        raise ValueError("errors must be nonnegative numbers")
    if not cap > 0 or count < 2:
        raise ValueError("bad curve sampling")
    thresholds = np.linspace(0.0, cap, count)
    ranks = np.searchsorted(np.sort(errors), thresholds, side="right")
    fractions = ranks / errors.size
    auc = float(np.trapezoid(fractions, thresholds) / cap)
    return AccuracyCurve(thresholds, fractions, float(errors.mean()), auc)


def geodesic_error(pred, gt, target, diameter=None):
    """Per-vertex normalized geodesic error of a predicted point map.

    gt entries of -1 mark vertices without ground truth; their error is
    nan and they do not enter the curve.  One Dijkstra runs per unique
    vertex on the smaller side of the comparison, so grouped maps are
    cheap and scattered ones cost at most one sweep per source.
    """
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth differ in length")
    n = target.n_vertices
    valid = gt >= 0
    if not valid.any():
        raise ValueError("ground truth has no valid entries")
    if pred.min() < 0 or pred.max() >= n or gt.max() >= n:
        raise ValueError("vertex index out of range for the target mesh")
    if diameter is None:
        diameter = geodesic.diameter_lower_bound(target)

    idx = np.flatnonzero(valid)
    a = pred[idx]
    b = gt[idx]
    # sweep from whichever side has fewer distinct vertices
    if np.unique(b).size <= np.unique(a).size:
        key, other = b, a
    else:
        key, other = a, b
    errors = np.full(pred.size, np.nan)
    order = np.argsort(key, kind="stable")
    ks = key[order]
    starts = np.flatnonzero(np.r_[True, ks[1:] != ks[:-1]])
    bounds = np.r_[starts, ks.size]
    for g in range(starts.size):
        members = order[bounds[g]:bounds[g + 1]]
        field = geodesic.single_source(target, int(ks[starts[g]]))
        errors[idx[members]] = field.dist[other[members]]
    errors[idx] /= diameter
    return errors, accuracy_curve(errors[idx])


def perturb_vertices(mesh, rng=None):
    """Move every vertex to a random point of a random incident triangle.

    Connectivity is unchanged.  Returns the perturbed mesh and the
    sparse barycentric matrix u with new positions u @ mesh.vertices.
    Three uniform draws per vertex (triangle pick, then two barycentric
    variates through the square-root warp) make the construction
    reproducible from the seed alone.
    """
    mesh.require_manifold()
    rng = np.random.default_rng(rng)
    m = mesh.n_vertices
    tris = mesh.triangles
    corner_vert = tris.ravel()
    corner_tri = np.repeat(np.arange(tris.shape[0]), 3)
    order = np.argsort(corner_vert, kind="stable")
    sorted_tri = corner_tri[order]
    counts = np.bincount(corner_vert, minlength=m)
    indptr = np.r_[0, np.cumsum(counts)]

    pick = (rng.random(m) * counts).astype(np.int64)
    r1 = np.sqrt(rng.random(m))
    r2 = rng.random(m)
    bary = np.column_stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2])

    rows = np.repeat(np.arange(m), 3)
    cols = np.empty((m, 3), dtype=np.int64)
    data = bary.copy()
    present = counts > 0
    chosen = sorted_tri[indptr[:-1][present] + pick[present]]
    cols[present] = tris[chosen]
    # vertices without triangles stay put
    cols[~present] = np.flatnonzero(~present)[:, None]
    data[~present] = np.array([1.0, 0.0, 0.0])
    u = sparse.coo_matrix((data.ravel(), (rows, cols.ravel())),
                          shape=(m, m)).tocsr()
    u.eliminate_zeros()
    u.sort_indices()
    return TriMesh(u @ mesh.vertices, tris.copy()), u


def perturbation_groundtruth(mesh, u_a, u_b):
    """Ground truth between two perturbations of the same mesh.

    Both perturbation matrices are applied to the shared vertex set and
    the maps are matched by exact nearest neighbor, so the result maps
    perturbation a onto perturbation b.
    """
    m = mesh.n_vertices
    if u_a.shape != (m, m) or u_b.shape != (m, m):
        raise ValueError("perturbations do not share the mesh connectivity")
    a = np.ascontiguousarray(u_a @ mesh.vertices)
    b = np.ascontiguousarray(u_b @ mesh.vertices)
    return nearest_rows(b, a)


@dataclass
class TransferReport:
    """Per-source geodesic transfer errors, plus the min-field variant."""

    sources: np.ndarray
    norms: np.ndarray
    min_dist_norm: float


def _vertex_areas(mesh):
    thirds = np.repeat(mesh.triangle_areas() / 3.0, 3)
    return np.bincount(mesh.triangles.ravel(), weights=thirds,
                       minlength=mesh.n_vertices)


def transfer_error_study(dense, remesh_result, u, n_sources, rng=None):
    """How well prolonged coarse geodesics approximate dense ones.

    For each FPS source on the dense mesh, the dense distance field is
    compared against the coarse field from the geodesically nearest
    coarse vertex (the source's own cell generator), prolonged through
    u.  Differences are scaled by the dense field's maximum and
    aggregated in the area-weighted RMS norm, so values are
    dimensionless and comparable across meshes.  The min variant runs
    the same comparison on the pointwise minimum over all sources.
    """
    lowres = remesh_result.lowres
    state = farthest_point_sampling(dense, n_sources, rng=rng)
    sources = np.asarray(state.samples[:n_sources])
    areas = _vertex_areas(dense)
    total = areas.sum()

    norms = np.empty(sources.size)
    gt_min = np.full(dense.n_vertices, np.inf)
    ext_min = np.full(dense.n_vertices, np.inf)
    for i, p in enumerate(sources):
        d_gt = geodesic.single_source(dense, int(p)).dist
        q = int(remesh_result.cell_of[p])
        if q < 0:
            # cell removed by the component filter: nearest by position
            gap = lowres.vertices - dense.vertices[p]
            q = int(np.argmin(np.einsum("ij,ij->i", gap, gap)))
        d_low = geodesic.single_source(lowres, q).dist
        ext = u @ d_low
        e = (ext - d_gt) / d_gt.max()
        norms[i] = np.sqrt((e * e) @ areas / total)
        np.minimum(gt_min, d_gt, out=gt_min)
        np.minimum(ext_min, ext, out=ext_min)
    e = (ext_min - gt_min) / gt_min.max()
    min_norm = float(np.sqrt((e * e) @ areas / total))
    return TransferReport(sources, norms, min_norm)


def timing_report(records):
    """Validate timing records and derive the cumulative curve.

    Records are (pair, stage, seconds) with stages drawn from
    TIMING_STAGES; the curve gives per-pair totals in ascending order
    against the fraction of pairs finished within that time.
    """
    rows = []
    for pair, stage, seconds in records:
        seconds = float(seconds)
        if stage not in TIMING_STAGES:
            raise ValueError("unknown pipeline stage %r" % (stage,))
        if not np.isfinite(seconds) or seconds < 0:
            raise ValueError("bad duration for stage %s" % stage)
        rows.append((str(pair), stage, seconds))
    return rows, cumulative_times(rows)


def cumulative_times(records):
    totals = {}
    for pair, _, seconds in records:
        totals[pair] = totals.get(pair, 0.0) + float(seconds)
    values = np.sort(np.array(list(totals.values()), dtype=np.float64))
    return values, np.arange(1, values.size + 1) / max(values.size, 1)


def write_timing_csv(path, records):
    rows, _ = timing_report(records)
    with open(path, "w") as fh:
        fh.write("pair,stage,seconds\n")
        for pair, stage, seconds in rows:
            fh.write("%s,%s,%s\n" % (pair, stage, repr(seconds)))


def parse_manifest(path):
    """Read evaluation pairs: "source target gt-file [prediction-file]".

    Lines are whitespace separated; blank lines and # comments are
    skipped.  The optional fourth column points at a precomputed map.
    """
    entries = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (3, 4):
                raise MeshIOError("%s:%d: expected 3 or 4 paths, got %d"
                                  % (path, ln, len(parts)))
            entries.append((parts[0], parts[1], parts[2],
                            parts[3] if len(parts) == 4 else None))
    return entries


def evaluate_manifest(entries, matcher=None):
    """Score every manifest pair, producing (pair, age, auc) rows.

    Predictions come from the manifest's fourth column when present,
    otherwise from the matcher callback (source path, target path) ->
    point map.
    """
    rows = []
    for src, tgt, gt_path, pred_path in entries:
        target = io.load_mesh(tgt)
        gt = io.read_int_column(gt_path)
        if pred_path is not None:
            pred = io.read_int_column(pred_path)
        elif matcher is not None:
            pred = np.asarray(matcher(src, tgt))
        else:
            raise ValueError(
                "pair %s %s has no prediction and no matcher was given"
                % (src, tgt))
        _, curve = geodesic_error(pred, gt, target)
        pair = "%s:%s" % (Path(src).stem, Path(tgt).stem)
        rows.append((pair, curve.age, curve.auc))
    return rows


def write_eval_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("pair,age,auc\n")
        for pair, age, auc in rows:
            fh.write("%s,%s,%s\n" % (pair, repr(float(age)),
                                     repr(float(auc))))
