"""Joint smooth-plus-steps estimator.

The combined objective

    || y - (Phi c + Psi gamma) ||^2 + lam ||gamma||_1 + omega c' R c

is solved by profiling out the spline coefficients, which leaves a plain
L1 problem in the whitened variables W(omega) y and W(omega) Psi, where
W(omega) is the symmetric square root of I - Phi S(omega) Phi'.  That
problem is solved with an accelerated proximal-gradient loop and the
spline coefficients are recovered by back-substitution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import SplineDesign, edf_smooth, spline_fit
from .stepbasis import StepBasis


@dataclass(frozen=True)
class Whitener:
    """Symmetric PSD square root of I - Phi S(omega) Phi'."""

    matrix: np.ndarray
    omega: float


@dataclass(frozen=True)
class HybridFit:
    """Result of one joint fit at fixed penalties."""

    gamma: np.ndarray
    coef: np.ndarray
    trend: np.ndarray
    anomaly: np.ndarray
    residual: np.ndarray
    lam: float
    omega: float
    rmse: float
    edf: float
    n_active: int
    iterations: int
    converged: bool


ACTIVE_TOL = 1e-10  # |gamma_j| above this counts as an active coefficient


def whitener(design: SplineDesign, omega: float) -> Whitener:
    """Whitening matrix at penalty ``omega``.

    Built from the roughness spectrum: I - A(omega) shares eigenvectors
    with the roughness matrix and has eigenvalues omega*d/(1 + omega*d).
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    vals = omega * design.rough_vals / (1.0 + omega * design.rough_vals)
    if np.any(vals < -1e-10):
        raise FloatingPointError("whitener eigenvalues below tolerance")
    vals = np.clip(vals, 0.0, None)
    u = design.rough_vecs
    w = (u * np.sqrt(vals)) @ u.T
    return Whitener(matrix=0.5 * (w + w.T), omega=omega)


def soft_threshold(z: np.ndarray, alpha: float) -> np.ndarray:
    """Shrink each entry toward zero by ``alpha``."""
    if alpha < 0:
        raise ValueError("threshold must be nonnegative")
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - alpha, 0.0)


def largest_eigenvalue(gram: np.ndarray, tol: float = 1e-8, max_iter: int = 10000) -> float:
    """Top eigenvalue of a symmetric PSD matrix by power iteration.

    Starts from a fixed random vector (deterministic) and stops on the
    Rayleigh-quotient residual.  A structured start such as the all-ones
    vector can be nearly orthogonal to the top eigenvector here, which
    stalls the iteration at a severe underestimate.
    """
    n = gram.shape[0]
    v = np.random.default_rng(0xC0FFEE).standard_normal(n)
    v /= np.linalg.norm(v)
    rho = 0.0
    for _ in range(max_iter):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        rho = float(v @ w)
        if np.linalg.norm(w - rho * v) <= tol * max(rho, 1e-300):
            break
        v = w / norm
    return rho


def kkt_zero_threshold(xw: np.ndarray, y_w: np.ndarray) -> float:
    """Smallest penalty for which the L1 solution is identically zero."""
    return 2.0 * float(np.max(np.abs(xw.T @ y_w)))


def lasso_objective(xw: np.ndarray, y_w: np.ndarray, gamma: np.ndarray, lam: float) -> float:
    r = y_w - xw @ gamma
    return float(r @ r + lam * np.sum(np.abs(gamma)))


def fista(
    xw: np.ndarray,
    y_w: np.ndarray,
    lam: float,
    gamma0: np.ndarray | None = None,
    tol: float = 1e-4,
    max_iter: int = 20000,
):
    """Accelerated proximal-gradient solve of
    min ||y_w - xw g||^2 + lam ||g||_1.

    Gradient steps of length 1/eigmax(xw'xw) alternate with
    soft-thresholding at lam/(2 eigmax) and momentum extrapolation.
    Stops when the maximum absolute change of the thresholded iterate
    falls below ``tol``; non-convergence is reported, not raised.

    Returns (gamma, iterations, converged).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if tol <= 0:
        raise ValueError("tol must be positive")
    p = xw.shape[1]
    gram = xw.T @ xw
    lin = xw.T @ y_w
    # small inflation keeps the step strictly stable against estimation error
    eigmax = largest_eigenvalue(gram) * (1.0 + 1e-6)
    if eigmax == 0.0:
        raise ValueError("design matrix is zero after whitening")

    for attempt in range(2):
        tau = 1.0 / eigmax
        alpha = lam * tau / 2.0
        gamma = np.zeros(p) if gamma0 is None else np.asarray(gamma0, dtype=float).copy()
        q_prev = gamma.copy()
        s = 1.0
        diverged = False
        for k in range(1, max_iter + 1):
            z = gamma - tau * (gram @ gamma - lin)
            q = soft_threshold(z, alpha)
            s_next = (1.0 + np.sqrt(1.0 + 4.0 * s * s)) / 2.0
            gamma = q + ((s - 1.0) / s_next) * (q - q_prev)
            delta = float(np.max(np.abs(q - q_prev))) if p else 0.0
            q_prev = q
            s = s_next
            if not np.isfinite(delta):
                diverged = True
                break
            if delta <= tol:
                return q, k, True
        if not diverged:
            return q_prev, max_iter, False
        # step was unstable: fall back to the exact top eigenvalue once
        eigmax = float(np.linalg.eigvalsh(gram)[-1]) * (1.0 + 1e-12)
    return q_prev, max_iter, False


def hybrid_fit(
    y: np.ndarray,
    design: SplineDesign,
    basis: StepBasis,
    lam: float,
    omega: float,
    tol: float = 1e-4,
    max_iter: int = 20000,
    gamma0: np.ndarray | None = None,
    white: Whitener | None = None,
) -> HybridFit:
    """Fit trend and step-anomaly components at fixed penalties.

    ``white`` may carry a precomputed whitener for this ``omega`` (used by
    the grid search to share work across the lam path).
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (design.n,):
        raise ValueError(f"y has shape {y.shape}, expected ({design.n},)")
    if basis.n != design.n:
        raise ValueError("design and basis sizes differ")
    if white is None:
        white = whitener(design, omega)
    elif white.omega != omega:
        raise ValueError("whitener was built for a different omega")

    xw = white.matrix @ basis.matrix
    y_w = white.matrix @ y
    gamma, iterations, converged = fista(
        xw, y_w, lam, gamma0=gamma0, tol=tol, max_iter=max_iter
    )

    anomaly = basis.matrix @ gamma
    trend = spline_fit(y - anomaly, design, omega)
    residual = y - trend - anomaly
    n_active = int(np.sum(np.abs(gamma) > ACTIVE_TOL))
    return HybridFit(
        gamma=gamma,
        coef=trend.copy(),  # interpolation basis: coefficients = fitted values
        trend=trend,
        anomaly=anomaly,
        residual=residual,
        lam=float(lam),
        omega=float(omega),
        rmse=float(np.sqrt(np.mean(residual**2))),
        edf=edf_smooth(design, omega) + n_active,
        n_active=n_active,
        iterations=iterations,
        converged=converged,
    )


def hybrid_objective(
    y: np.ndarray,
    design: SplineDesign,
    basis: StepBasis,
    coef: np.ndarray,
    gamma: np.ndarray,
    lam: float,
    omega: float,
) -> float:
    """Value of the joint objective at (coef, gamma)."""
    fit = design.basis @ coef + basis.matrix @ gamma
    r = y - fit
    return float(
        r @ r + lam * np.sum(np.abs(gamma)) + omega * coef @ design.roughness @ coef
    )
