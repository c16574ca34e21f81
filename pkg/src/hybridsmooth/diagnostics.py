"""Chain-quality summaries: split-chain shrink factor and effective sample
size, computed from multi-chain draws of a scalar parameter."""

from __future__ import annotations

import numpy as np


def _split(chains: np.ndarray) -> np.ndarray:
    """Split each chain in half, doubling the chain count."""
    m, n = chains.shape
    half = n // 2
    return np.vstack([chains[:, :half], chains[:, n - half:]])


def split_rhat(chains: np.ndarray) -> float:
    """Potential scale reduction over split chains; near 1 when mixed."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    parts = _split(chains)
    m, n = parts.shape
    if n < 4:
        return float("nan")
    within = np.mean(np.var(parts, axis=1, ddof=1))
    between = n * np.var(np.mean(parts, axis=1), ddof=1)
    if within <= 0:
        return 1.0 if between <= 0 else float("inf")
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Autocovariance by FFT, biased normalization (divide by n)."""
    n = len(x)
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real
    return acov / n


def ess(chains: np.ndarray) -> float:
    """Effective sample size from split chains.

    Combines per-chain autocovariances with the between-chain variance and
    truncates the correlation sum at the first nonpositive paired term.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    parts = _split(chains)
    m, n = parts.shape
    if n < 4:
        return float("nan")
    acov = np.vstack([_autocov(parts[i]) for i in range(m)])
    within = np.mean(acov[:, 0]) * n / (n - 1)
    between = n * np.var(np.mean(parts, axis=1), ddof=1) if m > 1 else 0.0
    var_plus = (n - 1) / n * within + between / n
    if var_plus <= 0:
        return float(m * n)
    rho = 1.0 - (within - np.mean(acov, axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer initial positive sequence on paired sums
    total = 0.0
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        total += pair
        t += 2
    denom = 1.0 + 2.0 * total
    return float(m * n / max(denom, 1e-12))
