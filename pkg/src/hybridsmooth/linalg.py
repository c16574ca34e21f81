"""Shared dense linear-algebra helpers."""

from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import cholesky, LinAlgError

log = logging.getLogger(__name__)


def chol_psd(mat: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor of a (near-)PSD matrix.

    On factorization failure a diagonal jitter of 1e-10 * trace/n is added
    once and the event logged; a second failure propagates.
    """
    try:
        return cholesky(mat, lower=True)
    except LinAlgError:
        n = mat.shape[0]
        jitter = 1e-10 * float(np.trace(mat)) / n
        if jitter <= 0:
            jitter = 1e-12
        log.info("cholesky of %s failed; retrying with jitter %.3e", name, jitter)
        return cholesky(mat + jitter * np.eye(n), lower=True)


def solve_chol(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L L') x = b given the lower factor."""
    from scipy.linalg import solve_triangular

    w = solve_triangular(lower, b, lower=True)
    return solve_triangular(lower.T, w, lower=False)
