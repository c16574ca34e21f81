"""Cubic-smoothing-spline design: basis, roughness penalty, GP covariance.

The spline basis is the natural cubic interpolation basis with a knot at
every data point, so the basis matrix evaluated at the knots is the
identity and the roughness Gram matrix reduces to the classical
second-difference construction Q R_h^{-1} Q'.  Its eigendecomposition is
computed once per design; smoother matrices, whitening matrices, and
degrees of freedom for any penalty value then follow from the spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular, svd


@dataclass(frozen=True)
class SplineDesign:
    """Design matrices for one vector of standardized times.

    Attributes:
        times: standardized time vector in [0, 1], strictly increasing.
        basis: n x n spline basis evaluated at the knots (identity here).
        roughness: n x n Gram matrix of the curvature penalty; PSD with
            rank n - 2 (linear functions are unpenalized).
        linear: n x 2 matrix with rows [1, t_i] for the linear trend.
        cov: n x n covariance matrix of the equivalent Gaussian process.
        rough_vecs / rough_vals: eigendecomposition of ``roughness`` with
            near-zero eigenvalues snapped to exactly 0.
    """

    times: np.ndarray
    basis: np.ndarray
    roughness: np.ndarray
    linear: np.ndarray
    cov: np.ndarray
    rough_vecs: np.ndarray = field(repr=False, default=None)  # type: ignore
    rough_vals: np.ndarray = field(repr=False, default=None)  # type: ignore

    @property
    def n(self) -> int:
        return len(self.times)


def gp_kernel(s, t):
    """Covariance k(s, t) of the process whose prediction is a cubic spline.

    Equals the exact integral of (s-u)_+ (t-u)_+ over [0, 1]:
    m^2 (3M - m) / 6 with m = min(s, t), M = max(s, t).
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(s > 1) or np.any(t < 0) or np.any(t > 1):
        raise ValueError("kernel arguments must lie in [0, 1]")
    m = np.minimum(s, t)
    big = np.maximum(s, t)
    return m * m * (3.0 * big - m) / 6.0


def _roughness_spectrum(times: np.ndarray):
    """Eigendecomposition of the curvature Gram matrix Q R_h^{-1} Q'.

    Q holds scaled second differences and R_h is the tridiagonal overlap
    matrix of the knot gaps.  The Gram matrix is factored as C'C with
    C = L^{-1} Q' (L the Cholesky factor of R_h) and eigenpairs are taken
    from the SVD of C: small eigenvalues keep near-relative accuracy even
    for clustered knots, and the two-dimensional linear null space is
    exact by construction.
    """
    n = len(times)
    h = np.diff(times)
    q = np.zeros((n, n - 2))
    for j in range(1, n - 1):
        q[j - 1, j - 1] = 1.0 / h[j - 1]
        q[j, j - 1] = -(1.0 / h[j - 1] + 1.0 / h[j])
        q[j + 1, j - 1] = 1.0 / h[j]
    overlap = np.diag((h[:-1] + h[1:]) / 3.0)
    off = h[1:-1] / 6.0
    overlap[np.arange(n - 3), np.arange(1, n - 2)] = off
    overlap[np.arange(1, n - 2), np.arange(n - 3)] = off
    lower = cholesky(overlap, lower=True)
    c = solve_triangular(lower, q.T, lower=True)
    _, sing, vt = svd(c, full_matrices=True)
    vals = np.concatenate([sing**2, np.zeros(2)])[::-1]  # ascending
    vecs = vt[::-1].T
    return vals, vecs


def build_design(times: np.ndarray) -> SplineDesign:
    """Assemble the spline/GP design for a standardized time vector."""
    times = np.asarray(times, dtype=float)
    n = len(times)
    if n < 4:
        raise ValueError(f"need at least 4 points, got {n}")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    if times[0] < 0 or times[-1] > 1:
        raise ValueError("times must be standardized to [0, 1]")

    vals, vecs = _roughness_spectrum(times)
    rough = (vecs * vals) @ vecs.T
    rough = 0.5 * (rough + rough.T)

    linear = np.column_stack([np.ones(n), times])
    cov = gp_kernel(times[:, None], times[None, :])
    return SplineDesign(
        times=times,
        basis=np.eye(n),
        roughness=rough,
        linear=linear,
        cov=cov,
        rough_vecs=vecs,
        rough_vals=vals,
    )


def smoother(design: SplineDesign, omega: float):
    """Penalized-regression matrices for penalty ``omega``.

    Returns (S, A): S = (Phi'Phi + omega R)^{-1} and the hat matrix
    A = Phi S Phi'.  A is symmetric with eigenvalues in (0, 1]; exactly two
    equal 1 (the unpenalized linear functions).
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    u = design.rough_vecs
    shrink = 1.0 / (1.0 + omega * design.rough_vals)
    smooth = (u * shrink) @ u.T
    return smooth, smooth.copy()


def edf_smooth(design: SplineDesign, omega: float) -> float:
    """Effective degrees of freedom tr(A) of the smoother at ``omega``."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    return float(np.sum(1.0 / (1.0 + omega * design.rough_vals)))


def omega_for_edf(design: SplineDesign, target: float, tol: float = 1e-10) -> float:
    """Penalty whose smoother has the requested degrees of freedom.

    tr(A) decreases monotonically from n (omega -> 0) to 2 (omega -> inf),
    so the target must lie strictly inside (2, n).
    """
    n = design.n
    if not 2.0 < target < n:
        raise ValueError(f"edf target must be in (2, {n})")
    lo, hi = 1e-12, 1e12
    while edf_smooth(design, lo) < target:
        lo /= 100.0
    while edf_smooth(design, hi) > target:
        hi *= 100.0
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if edf_smooth(design, mid) > target:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1.0 + tol:
            break
    return float(np.sqrt(lo * hi))


def spline_fit(y: np.ndarray, design: SplineDesign, omega: float) -> np.ndarray:
    """Smoothing-spline fitted values Phi (Phi'Phi + omega R)^{-1} Phi' y."""
    y = np.asarray(y, dtype=float)
    if y.shape != (design.n,):
        raise ValueError(f"y has shape {y.shape}, expected ({design.n},)")
    if omega <= 0:
        raise ValueError("omega must be positive")
    u = design.rough_vecs
    shrink = 1.0 / (1.0 + omega * design.rough_vals)
    return u @ (shrink * (u.T @ y))


def spline_coefficients(y: np.ndarray, design: SplineDesign, omega: float) -> np.ndarray:
    """Basis coefficients of the spline fit (equal to the fitted values for
    the interpolation basis)."""
    return spline_fit(y, design, omega)
