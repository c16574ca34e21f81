"""Step-function bases for the sparse anomaly component."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

Variant = Literal["forward", "centered"]


@dataclass(frozen=True)
class StepBasis:
    """n x (n-1) matrix of unit step columns.

    Column j corresponds to a level shift between samples j and j+1;
    ``step_indices[j] = j + 1`` is the first sample at the new level.  The
    all-ones column is omitted in both variants because the overall level
    is carried by the linear-trend matrix.

    forward: column j is 0 up to sample j, then 1 (signal anchored at the
    left edge).  centered: columns left of the middle are 1 then 0, columns
    right of it are 0 then 1, and the middle column is dropped, so the
    signal is anchored at the center sample.  Both span the same
    (n-1)-dimensional space of step signals vanishing at the anchor.
    """

    matrix: np.ndarray
    variant: Variant
    step_indices: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def step_basis(n: int, variant: Variant = "forward") -> StepBasis:
    """Build the step basis for ``n`` samples."""
    if n < 4:
        raise ValueError(f"need at least 4 samples, got {n}")
    if variant not in ("forward", "centered"):
        raise ValueError(f"unknown variant {variant!r}")

    boundaries = np.arange(1, n)
    psi = np.zeros((n, n - 1))
    if variant == "forward":
        for j, b in enumerate(boundaries):
            psi[b:, j] = 1.0
    else:
        mid = (n + 1) // 2 - 1  # anchor sample, middle column removed
        for j, b in enumerate(boundaries):
            if b <= mid:
                psi[:b, j] = 1.0
            else:
                psi[b:, j] = 1.0
    return StepBasis(matrix=psi, variant=variant, step_indices=boundaries)


def anomaly_signal(basis: StepBasis, gamma: np.ndarray) -> np.ndarray:
    """Evaluate the step signal with coefficients ``gamma``."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (basis.n - 1,):
        raise ValueError(
            f"gamma has shape {gamma.shape}, expected ({basis.n - 1},)"
        )
    return basis.matrix @ gamma
