"""Cotangent Laplace-Beltrami operator, eigenbasis, and descriptors.

The stiffness matrix uses the classic cotangent scheme with a lumped
(barycentric) mass matrix, so the generalized eigenproblem S phi = lambda
A phi has a diagonal right-hand side. Degenerate triangles contribute no
stiffness and a tiny epsilon mass so heavily abused inputs still produce a
positive definite pencil instead of a singular solve.
"""

import hashlib
import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

logger = logging.getLogger(__name__)

COT_CLAMP = 1e6
DEGENERATE_MASS = 1e-12


class EigensolverError(RuntimeError):
    """The sparse eigensolver failed to converge or returned a bad basis."""


@dataclass
class LaplacianPair:
    """Stiffness matrix S (csr) and diagonal mass matrix A (dia)."""

    stiffness: sparse.csr_matrix
    mass: sparse.dia_matrix


@dataclass
class SpectralBasis:
    """Truncated generalized eigenbasis.

    phi is |V| x k and A-orthonormal, evals ascending. The mass diagonal is
    carried along for descriptor normalization; bases loaded from a cache
    file have ``mass`` set to None until reattached.
    """

    phi: np.ndarray
    evals: np.ndarray
    k: int
    mass: np.ndarray = None


@dataclass
class DescriptorSet:
    values: np.ndarray
    kind: str
    params: dict


def build_laplacian(mesh):
    """Assemble cotangent stiffness and lumped mass matrices.

    Cotangent values are clamped to +-1e6. Zero-area triangles add no
    stiffness; their corners receive an epsilon mass share so the mass
    stays strictly positive.
    """
    n = mesh.n_vertices
    t = mesh.triangles
    p = mesh.vertices[t]
    areas = mesh.triangle_areas()
    total = float(areas.sum())
    if total <= 0:
        raise ValueError("mesh has no positive-area triangles")
    good = areas > 0
    if not good.all():
        logger.warning("%d zero-area triangles contribute no stiffness",
                       int((~good).sum()))

    # cot at corner k weights the opposite edge, which is side k
    cots = np.zeros((len(t), 3))
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        w = p[:, (k + 2) % 3] - p[:, k]
        cr = np.linalg.norm(np.cross(u, w), axis=1)
        dot = np.einsum("ij,ij->i", u, w)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = dot / cr
        c[~good] = 0.0
        cots[:, k] = np.clip(c, -COT_CLAMP, COT_CLAMP)

    w = np.zeros(mesh.n_edges)
    np.add.at(w, mesh.tri_edges.reshape(-1), (-0.5 * cots).reshape(-1))
    e = mesh.edges
    diag = np.zeros(n)
    np.add.at(diag, e[:, 0], w)
    np.add.at(diag, e[:, 1], w)
    rows = np.concatenate((e[:, 0], e[:, 1], np.arange(n)))
    cols = np.concatenate((e[:, 1], e[:, 0], np.arange(n)))
    vals = np.concatenate((w, w, -diag))
    stiffness = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

    lumped = np.where(good, areas, DEGENERATE_MASS * total)
    a = np.zeros(n)
    np.add.at(a, t.reshape(-1), np.repeat(lumped / 3.0, 3))
    if a.min() <= 0:
        raise ValueError("vertex without incident triangle; mass singular")
    return LaplacianPair(stiffness, sparse.diags(a).todia())


def _fix_signs(phi):
    for j in range(phi.shape[1]):
        col = phi[:, j]
        top = np.abs(col).max()
        if top == 0:
            continue
        nz = np.flatnonzero(np.abs(col) > 1e-12 * top)
        if col[nz[0]] < 0:
            phi[:, j] = -col
    return phi


def eigenbasis(lap, k):
    """Smallest k eigenpairs of S phi = lambda A phi, A-orthonormal.

    Shift-invert Lanczos at a small negative shift; deterministic start
    vector. The returned basis has ascending eigenvalues and each column's
    first nonzero entry positive.
    """
    s = lap.stiffness
    n = s.shape[0]
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < n_vertices, got k=%d, n=%d" % (k, n))
    sigma = -1e-8 * float(s.diagonal().mean())
    v0 = np.random.default_rng(0).standard_normal(n)
    # Lanczos can drop copies of symmetry-exact multiplets right at the
    # truncation boundary; solving past it and at machine tolerance fills
    # them in (the level-4 icosphere l=3 multiplet is the canary)
    k_solve = min(n - 1, k + max(8, k // 5))
    try:
        evals, phi = eigsh(s, k=k_solve, M=lap.mass.tocsc(), sigma=sigma,
                           which="LM", v0=v0, tol=0, maxiter=30 * k_solve)
    except (ArpackNoConvergence, ArpackError) as exc:
        raise EigensolverError("eigensolver failed: %s" % exc) from exc
    order = np.argsort(evals, kind="stable")[:k]
    evals = np.ascontiguousarray(evals[order])
    phi = np.ascontiguousarray(phi[:, order])
    phi = _fix_signs(phi)

    a = lap.mass.diagonal()
    gram = phi.T @ (a[:, None] * phi)
    if np.abs(gram - np.eye(k)).max() > 1e-6:
        raise EigensolverError("basis lost A-orthonormality")
    resid = s @ phi - (a[:, None] * phi) * evals
    if np.abs(resid).max() > 1e-6 * np.abs(s.data).max():
        raise EigensolverError("eigenpair residual too large")
    return SpectralBasis(phi, evals, k, a)


def descriptors(basis, kind="wks", d=100):
    """Per-vertex spectral descriptors, unit A-norm per column.

    WKS samples d energies log-spaced over [log lambda_1, log lambda_k]
    with Gaussian bands of width 7x the energy step; HKS samples d
    diffusion times log-spaced over the standard heat kernel range.
    """
    if basis.k < 2:
        raise ValueError("descriptors need a basis with k >= 2")
    if d < 2:
        raise ValueError("need at least two descriptor samples")
    if basis.mass is None:
        raise ValueError("basis has no mass attached; load via "
                         "cached_eigenbasis or rebuild")
    lam = basis.evals
    lamk = float(lam[-1])
    if lamk <= 0:
        raise ValueError("basis has no positive eigenvalues")
    # anchor the sample range at the first eigenvalue clearly above the
    # kernel, so near-zero kernel values (either float sign) cannot leak in
    above = lam > 1e-8 * lamk
    lam1 = float(lam[np.argmax(above)])
    phi2 = basis.phi ** 2

    if kind == "wks":
        energies = np.linspace(np.log(lam1), np.log(lamk), d)
        sigma = 7.0 * (energies[1] - energies[0])
        if sigma == 0:
            sigma = 1.0
        pos = lam > 0
        loglam = np.where(pos, np.log(np.where(pos, lam, 1.0)), np.inf)
        with np.errstate(invalid="ignore"):
            g = np.exp(-((energies[None, :] - loglam[:, None]) ** 2)
                       / (2.0 * sigma * sigma))
        g[~pos] = 0.0
        values = phi2 @ g
        params = {"energies": energies, "sigma": sigma}
    elif kind == "hks":
        # kernel modes keep their (unit) heat weight; their eigenvalues are
        # zero up to solver noise so both float signs give the same result
        times = np.exp(np.linspace(np.log(4 * np.log(10.0) / lamk),
                                   np.log(4 * np.log(10.0) / lam1), d))
        values = phi2 @ np.exp(-lam[:, None] * times[None, :])
        params = {"times": times}
    else:
        raise ValueError("unknown descriptor kind %r" % kind)

    norms = np.sqrt(np.einsum("vd,v,vd->d", values, basis.mass, values))
    if norms.min() <= 0:
        raise ValueError("degenerate descriptor column")
    return DescriptorSet(values / norms, kind, params)


# ----------------------------------------------------------------------
# basis cache

_MAGIC = b"MMBASIS1"


def basis_cache_key(mesh, k):
    """Content hash of the mesh geometry, connectivity, and basis size."""
    h = hashlib.sha256()
    h.update(np.int64([mesh.n_vertices, mesh.n_triangles, k]).tobytes())
    h.update(np.ascontiguousarray(mesh.vertices).tobytes())
    h.update(np.ascontiguousarray(mesh.triangles).tobytes())
    return h.hexdigest()


def save_basis(path, basis):
    """Binary dump: magic, (|V|, k) int64 header, row-major phi, evals."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        np.int64([basis.phi.shape[0], basis.k]).tofile(f)
        np.ascontiguousarray(basis.phi, dtype=np.float64).tofile(f)
        np.ascontiguousarray(basis.evals, dtype=np.float64).tofile(f)


def load_basis(path):
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a basis cache file: %s" % path)
        n, k = np.fromfile(f, dtype=np.int64, count=2)
        phi = np.fromfile(f, dtype=np.float64, count=n * k).reshape(n, k)
        evals = np.fromfile(f, dtype=np.float64, count=k)
    if len(evals) != k or phi.shape != (n, k):
        raise ValueError("truncated basis cache file: %s" % path)
    return SpectralBasis(phi, evals, int(k), None)


def cached_eigenbasis(mesh, k, cache_dir=None):
    """Eigenbasis with an optional on-disk cache keyed by mesh content.

    The mass diagonal is always reattached from a fresh (cheap) matrix
    assembly so descriptor computation works on cache hits too.
    """
    lap = build_laplacian(mesh)
    if cache_dir is None:
        return eigenbasis(lap, k)
    path = os.path.join(str(cache_dir), basis_cache_key(mesh, k) + ".basis")
    if os.path.exists(path):
        basis = load_basis(path)
        basis.mass = lap.mass.diagonal()
        logger.info("basis cache hit: %s", path)
        return basis
    basis = eigenbasis(lap, k)
    os.makedirs(str(cache_dir), exist_ok=True)
    save_basis(path, basis)
    return basis
