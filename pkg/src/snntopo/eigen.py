"""Extremal eigenvalues of sparse symmetric matrices by Lanczos iteration.

The Krylov basis is fully reorthogonalized, so converged eigenvalues are not
repeated as spurious copies and each distinct eigenvalue in the span of the
start vector shows up once.  That is what the spectral gap needs: the largest
eigenvalue and the largest one *different* from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal

DISTINCT_RTOL = 1e-7


@dataclass
class LanczosResult:
    ritz: np.ndarray  # ascending Ritz values
    residuals: np.ndarray
    iterations: int
    converged: bool
    exhausted: bool  # Krylov space became invariant (values are exact up to rounding)
    notes: list[str] = field(default_factory=list)

    def wanted_residual(self, k_top: int, k_bottom: int) -> float:
        if self.ritz.size == 0:
            return 0.0
        idx = _distinct_indices(self.ritz, float(np.abs(self.ritz).max()))
        wanted = list(idx[::-1][:k_top]) + list(idx[:k_bottom])
        return float(self.residuals[wanted].max())


def distinct(values: np.ndarray, scale: float) -> np.ndarray:
    """Merge values closer than ``DISTINCT_RTOL * max(1, scale)`` (input ascending)."""
    if values.size == 0:
        return values
    thresh = DISTINCT_RTOL * max(1.0, scale)
    keep = np.concatenate([[True], np.diff(values) > thresh])
    return values[keep]


def lanczos(A, k_top: int = 2, k_bottom: int = 0, tol: float = 1e-8,
            max_iter: int | None = None, seed: int = 0) -> LanczosResult:
    """Lanczos with full reorthogonalization on symmetric ``A`` (sparse or dense).

    Stops when the ``k_top`` largest and ``k_bottom`` smallest distinct Ritz
    values have residual ``|beta_m s_mi| <= tol * max(1, |theta|_max)``, when
    the Krylov space is exhausted, or after ``max_iter`` steps.
    """
    n = A.shape[0]
    if n == 0:
        return LanczosResult(np.zeros(0), np.zeros(0), 0, True, True)
    if max_iter is None:
        max_iter = n if n <= 600 else 400
    max_iter = max(1, min(max_iter, n))

    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    V = np.empty((max_iter + 1, n))
    V[0] = q
    alpha = np.empty(max_iter)
    beta = np.empty(max_iter)
    matvec = A.dot if sp.issparse(A) else (lambda x: A @ x)

    scale_hint = float(abs(A).sum(axis=1).max()) if n else 0.0
    breakdown_tol = 1e-12 * max(1.0, scale_hint)
    ritz = np.zeros(0)
    res = np.zeros(0)
    exhausted = converged = False
    m = 0
    check_every = 1 if max_iter <= 60 else 5
    for j in range(max_iter):
        w = matvec(V[j])
        alpha[j] = V[j] @ w
        w = w - alpha[j] * V[j]
        if j:
            w -= beta[j - 1] * V[j - 1]
        for _ in range(2):
            w -= V[:j + 1].T @ (V[:j + 1] @ w)
        beta[j] = np.linalg.norm(w)
        m = j + 1
        exhausted = beta[j] <= breakdown_tol or m == n
        last = exhausted or m == max_iter
        if not last:
            V[j + 1] = w / beta[j]
        if not last and (m < k_top + k_bottom or m % check_every):
            continue
        ritz, S = eigh_tridiagonal(alpha[:m], beta[:m - 1]) if m > 1 else (alpha[:1].copy(), np.ones((1, 1)))
        res = np.abs(beta[j] * S[-1, :])
        if exhausted:
            converged = True
            break
        if _wanted_converged(ritz, res, k_top, k_bottom, tol):
            converged = True
            break
        if last:
            break
    notes = [] if converged else [f"lanczos: not converged after {m} steps, max residual {res.max():.3e}"]
    return LanczosResult(ritz, res, m, converged, exhausted, notes)


def _wanted_converged(ritz: np.ndarray, res: np.ndarray, k_top: int, k_bottom: int, tol: float) -> bool:
    scale = max(1.0, float(np.abs(ritz).max()))
    idx = _distinct_indices(ritz, scale)
    wanted = list(idx[::-1][:k_top]) + list(idx[:k_bottom])
    if len(set(wanted)) < min(len(idx), k_top + k_bottom):
        return False
    return bool(np.all(res[wanted] <= tol * scale))


def _distinct_indices(values: np.ndarray, scale: float) -> np.ndarray:
    thresh = DISTINCT_RTOL * max(1.0, scale)
    keep = np.concatenate([[True], np.diff(values) > thresh])
    return np.flatnonzero(keep)


@dataclass
class Extremes:
    """Distinct extremal eigenvalues plus solver diagnostics."""

    top: np.ndarray  # descending
    bottom: np.ndarray  # ascending
    converged: bool
    residual: float
    iterations: int
    notes: list[str]


def extremes(A, k_top: int = 2, k_bottom: int = 0, tol: float = 1e-8,
             max_iter: int | None = None, seed: int = 0) -> Extremes:
    r = lanczos(A, k_top, k_bottom, tol, max_iter, seed)
    scale = float(np.abs(r.ritz).max()) if r.ritz.size else 0.0
    vals = distinct(r.ritz, scale)
    return Extremes(vals[::-1][:k_top], vals[:k_bottom], r.converged, r.wanted_residual(k_top, k_bottom),
                    r.iterations, r.notes)


def adjacency_gap(A, **kw) -> tuple[float, Extremes]:
    """``mu_0 - mu_hat``; zero when only one distinct eigenvalue exists."""
    ex = extremes(A, k_top=2, **kw)
    if ex.top.size < 2:
        return 0.0, ex
    return float(ex.top[0] - ex.top[1]), ex


def largest(A, **kw) -> tuple[float, Extremes]:
    ex = extremes(A, k_top=1, **kw)
    return (float(ex.top[0]) if ex.top.size else 0.0), ex


def laplacian(A) -> sp.csr_matrix:
    """``D - A`` for a symmetric nonnegative adjacency matrix."""
    A = sp.csr_matrix(A)
    d = np.asarray(A.sum(axis=1)).ravel()
    return (sp.diags(d) - A).tocsr()
