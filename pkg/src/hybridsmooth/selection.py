"""Penalty-pair search and the two selection rules.

Every (lam, omega) cell records the fit error E, the model degrees of
freedom N (smoother trace plus active step count), and the active count S.
The simplex rule normalizes (N/n, S/n, E/E0) and picks the admissible cell
farthest under the plane x + y + z = 1; the corrected-information rule
scores log(SSE/n) + (n+p)/(n-p) and picks the minimum.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .design import SplineDesign, edf_smooth, omega_for_edf
from .hybrid import HybridFit, hybrid_fit, kkt_zero_threshold, whitener
from .stepbasis import StepBasis


@dataclass(frozen=True)
class GridCell:
    lam: float
    omega: float
    rmse: float
    edf: float
    n_active: int
    admissible: bool
    converged: bool
    gamma: np.ndarray
    iterations: int


@dataclass(frozen=True)
class PenaltyGrid:
    """Fits over the cartesian grid of penalties, row-major in omega."""

    lambdas: np.ndarray
    omegas: np.ndarray
    cells: list  # list of GridCell, len = len(lambdas) * len(omegas)
    baseline_rmse: float
    n: int

    def cell(self, i_lam: int, i_omega: int) -> GridCell:
        return self.cells[i_omega * len(self.lambdas) + i_lam]


def baseline_rmse(y: np.ndarray, design: SplineDesign) -> float:
    """Fit error of the straight-line least-squares baseline."""
    beta, *_ = np.linalg.lstsq(design.linear, y, rcond=None)
    r = y - design.linear @ beta
    return float(np.sqrt(np.mean(r**2)))


def default_grids(
    y: np.ndarray,
    design: SplineDesign,
    basis: StepBasis,
    n_lambda: int = 25,
    n_omega: int = 25,
):
    """Instance-adaptive logarithmic grids.

    omega spans smoother degrees of freedom from n/2 down to 3; lam runs
    from the all-zero threshold (at the smallest omega) down four decades.
    """
    n = design.n
    hi_edf = max(min(n / 2.0, n - 1.0), 3.5)
    omega_lo = omega_for_edf(design, hi_edf)
    omega_hi = omega_for_edf(design, 3.0)
    omegas = np.geomspace(omega_lo, omega_hi, n_omega)

    w = whitener(design, omega_lo)
    lam_top = kkt_zero_threshold(w.matrix @ basis.matrix, w.matrix @ y)
    if lam_top <= 0:
        lam_top = 1.0
    lambdas = np.geomspace(lam_top, lam_top * 1e-4, n_lambda)
    return lambdas, omegas


def grid_search(
    y: np.ndarray,
    design: SplineDesign,
    basis: StepBasis,
    lambdas: np.ndarray,
    omegas: np.ndarray,
    tol: float = 1e-4,
    max_iter: int = 20000,
) -> PenaltyGrid:
    """Fit every penalty pair, warm-starting along lam within each omega.

    Non-convergence of a single cell is recorded in the cell, not raised.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    omegas = np.asarray(omegas, dtype=float)
    if len(lambdas) == 0 or len(omegas) == 0:
        raise ValueError("penalty grids must be nonempty")
    if np.any(lambdas <= 0) or np.any(omegas <= 0):
        raise ValueError("penalties must be positive")

    n = design.n
    e0 = baseline_rmse(y, design)
    order = np.argsort(lambdas)[::-1]  # coldest (sparsest) first
    cells: list[GridCell | None] = [None] * (len(lambdas) * len(omegas))
    for i_omega, omega in enumerate(omegas):
        white = whitener(design, omega)
        gamma0 = None
        for i_lam in order:
            fit = hybrid_fit(
                y,
                design,
                basis,
                float(lambdas[i_lam]),
                float(omega),
                tol=tol,
                max_iter=max_iter,
                gamma0=gamma0,
                white=white,
            )
            gamma0 = fit.gamma
            cells[i_omega * len(lambdas) + i_lam] = GridCell(
                lam=fit.lam,
                omega=fit.omega,
                rmse=fit.rmse,
                edf=fit.edf,
                n_active=fit.n_active,
                admissible=fit.edf <= n,
                converged=fit.converged,
                gamma=fit.gamma,
                iterations=fit.iterations,
            )
    return PenaltyGrid(
        lambdas=lambdas, omegas=omegas, cells=cells, baseline_rmse=e0, n=n
    )


def edf_total(design: SplineDesign, omega: float, gamma: np.ndarray) -> float:
    """Model degrees of freedom: smoother trace plus active step count."""
    return edf_smooth(design, omega) + int(np.sum(np.abs(gamma) > 1e-10))


def simplex_distance(cell: GridCell, n: int, e0: float) -> float:
    """Scaled distance of the normalized (edf, active, error) triple under
    the plane x + y + z = 1."""
    v = (cell.edf / n, cell.n_active / n, cell.rmse / e0 if e0 > 0 else 0.0)
    return 1.0 - sum(v)


def elbow_select(grid: PenaltyGrid):
    """Penalty pair of the admissible cell farthest under the simplex plane.

    Ties break toward larger lam then larger omega (sparser, smoother).
    Returns (lam, omega, distance surface over the full grid).
    """
    surface = np.full((len(grid.omegas), len(grid.lambdas)), np.nan)
    best = None
    best_key = None
    for i_omega in range(len(grid.omegas)):
        for i_lam in range(len(grid.lambdas)):
            cell = grid.cell(i_lam, i_omega)
            dist = simplex_distance(cell, grid.n, grid.baseline_rmse)
            surface[i_omega, i_lam] = dist
            if not cell.admissible:
                continue
            key = (dist, cell.lam, cell.omega)
            if best_key is None or key > best_key:
                best_key = key
                best = cell
    if best is None:
        raise ValueError("no admissible cells in the penalty grid")
    return best.lam, best.omega, surface


def aicc_score(rmse: float, edf: float, n: int) -> float:
    sse = n * rmse**2
    return float(np.log(sse / n) + (n + edf) / (n - edf))


def aicc_select(grid: PenaltyGrid):
    """Penalty pair minimizing the corrected information score.

    Cells with degrees of freedom at or above n are excluded (the
    correction term diverges).  Returns (lam, omega, score surface).
    """
    surface = np.full((len(grid.omegas), len(grid.lambdas)), np.nan)
    best = None
    best_key = None
    for i_omega in range(len(grid.omegas)):
        for i_lam in range(len(grid.lambdas)):
            cell = grid.cell(i_lam, i_omega)
            if cell.edf >= grid.n or cell.rmse <= 0:
                continue
            score = aicc_score(cell.rmse, cell.edf, grid.n)
            surface[i_omega, i_lam] = score
            key = (-score, cell.lam, cell.omega)
            if best_key is None or key > best_key:
                best_key = key
                best = cell
    if best is None:
        raise ValueError("all cells excluded from information scoring")
    return best.lam, best.omega, surface


def grid_to_rows(grid: PenaltyGrid) -> list[dict]:
    """Long-format export of the grid with both selection surfaces."""
    rows = []
    for i_omega, omega in enumerate(grid.omegas):
        for i_lam, lam in enumerate(grid.lambdas):
            cell = grid.cell(i_lam, i_omega)
            dist = simplex_distance(cell, grid.n, grid.baseline_rmse)
            score = (
                aicc_score(cell.rmse, cell.edf, grid.n)
                if cell.edf < grid.n and cell.rmse > 0
                else float("nan")
            )
            rows.append(
                {
                    "lambda": lam,
                    "omega": omega,
                    "rmse": cell.rmse,
                    "edf": cell.edf,
                    "n_active": cell.n_active,
                    "distance": dist,
                    "aicc": score,
                    "admissible": int(cell.admissible),
                    "converged": int(cell.converged),
                }
            )
    return rows


def write_grid_csv(grid: PenaltyGrid, path) -> None:
    rows = grid_to_rows(grid)
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return v
