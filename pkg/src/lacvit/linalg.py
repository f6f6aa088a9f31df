"""Symmetric eigendecomposition (cyclic Jacobi) and PCA projection.

The eigensolver is deliberately hand-rolled rather than delegated: the
downstream isotropy diagnostic needs a fixed sweep order, a fixed sign
convention, and input-axis ordering on degenerate eigenvalues so that
symmetric test sets produce bit-reproducible candidate directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .tensor import Tensor

_MAX_DIM = 512
_TIE_TOL = 1e-12
_SIGN_TOL = 1e-12


@dataclass
class SymEigResult:
    """Eigenvalues sorted descending; unit-norm eigenvectors as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _as_matrix(a) -> np.ndarray:
    if isinstance(a, Tensor):
        a = a.data
    return np.asarray(a, dtype=np.float64)


def sym_eig(a, max_sweeps: int = 100) -> SymEigResult:
    """Eigendecomposition of a symmetric matrix via cyclic Jacobi rotations.

    Sweeps visit (p, q) pairs in fixed row-major order; each rotation
    annihilates one off-diagonal entry.  Determinism conventions: the first
    component of each eigenvector exceeding 1e-12 in magnitude is made
    positive, and eigenvalues tied within 1e-12 keep the order of the
    working columns they came from (input axes for diagonal inputs).
    """
    mat = _as_matrix(a)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ContractError(f"sym_eig requires a square matrix, got {mat.shape}")
    d = mat.shape[0]
    if d > _MAX_DIM:
        raise ContractError(f"sym_eig supports d <= {_MAX_DIM}, got {d}")
    scale = max(1.0, float(np.abs(mat).max()))
    if float(np.abs(mat - mat.T).max()) > 1e-10 * scale:
        raise ContractError("sym_eig requires a symmetric matrix (within 1e-10)")

    m = 0.5 * (mat + mat.T)  # exact symmetry before iterating
    vecs = np.eye(d)
    off_mask = ~np.eye(d, dtype=bool)
    frob = max(float(np.linalg.norm(m)), 1e-300)
    # Tight convergence: downstream isotropy sums exponentiate projections,
    # so eigenvector error must sit near machine precision.  The off-diagonal
    # norm is summed directly (never by subtracting near-equal totals).
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(m[off_mask]))
        if off <= 1e-15 * frob:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = m[p, q]
                if apq == 0.0:
                    continue
                diff = m[q, q] - m[p, p]
                if abs(apq) < 1e-300 * abs(diff):
                    m[p, q] = m[q, p] = 0.0
                    continue
                tau = diff / (2.0 * apq)
                if abs(tau) > 1e150:  # rotation angle ~1/(2 tau); avoid tau**2 overflow
                    t = 1.0 / (2.0 * tau)
                elif tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = 1.0 / (tau - math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rp, rq = m[p, :].copy(), m[q, :].copy()
                m[p, :] = c * rp - s * rq
                m[q, :] = s * rp + c * rq
                cp, cq = m[:, p].copy(), m[:, q].copy()
                m[:, p] = c * cp - s * cq
                m[:, q] = s * cp + c * cq
                vp, vq = vecs[:, p].copy(), vecs[:, q].copy()
                vecs[:, p] = c * vp - s * vq
                vecs[:, q] = s * vp + c * vq

    lam = np.diag(m).copy()
    order = _descending_with_axis_ties(lam)
    lam = lam[order]
    vecs = vecs[:, order]
    for k in range(d):
        col = vecs[:, k]
        nz = np.nonzero(np.abs(col) > _SIGN_TOL)[0]
        if nz.size and col[nz[0]] < 0.0:
            vecs[:, k] = -col
    return SymEigResult(eigenvalues=lam, eigenvectors=vecs)


def _descending_with_axis_ties(lam: np.ndarray) -> np.ndarray:
    """Sort indices by eigenvalue descending; near-ties keep column order."""
    order = list(np.argsort(-lam, kind="stable"))
    start = 0
    while start < len(order):
        stop = start + 1
        while stop < len(order) and lam[order[stop - 1]] - lam[order[stop]] <= _TIE_TOL:
            stop += 1
        order[start:stop] = sorted(order[start:stop])
        start = stop
    return np.asarray(order)


def pca_project(v, k: int) -> np.ndarray:
    """Center rows of an N x d matrix and project onto the top-k principal axes.

    Uses the sample covariance (divisor N - 1) and this module's eigensolver,
    so the output inherits its sign and tie conventions.
    """
    x = _as_matrix(v)
    if x.ndim != 2:
        raise ContractError(f"pca_project requires an N x d matrix, got {x.shape}")
    n, d = x.shape
    if n < 2:
        raise ContractError("pca_project requires at least 2 rows")
    if k > d:
        raise ContractError(f"pca_project: k={k} exceeds dimensionality d={d}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    eig = sym_eig(cov)
    return centered @ eig.eigenvectors[:, :k]
