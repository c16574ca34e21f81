"""Hierarchical sampler for the trend/step decomposition.

The observation model is y = X beta + Psi gamma + g + noise with a
process prior on the smooth component g, a scale-mixture (Laplace) prior
on the step coefficients, and flat priors on beta and the noise variance.
Sampling runs in a reparametrized space where the step columns are
projected off the linear trend and the smooth component off both, which
removes the confounding that otherwise stalls the chains.  All updates
are conjugate draws; gamma parameters use the shape/rate convention.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .design import SplineDesign
from .diagnostics import ess, split_rhat
from .hybrid import HybridFit
from .linalg import chol_psd, solve_chol
from .stepbasis import StepBasis

log = logging.getLogger(__name__)

TAU2_FLOOR = 1e-12  # smallest allowed mixture variance


@dataclass(frozen=True)
class OrthoOperators:
    """Projection operators of the reparametrized sampling space.

    proj_trend projects onto the span of the linear-trend columns;
    psi_perp holds the step columns with that span removed; proj_step
    projects onto the (regularized) span of psi_perp; hmat filters the
    smooth component to the part orthogonal to both; cross maps a smooth
    vector to the step coefficients it would masquerade as.
    """

    proj_trend: np.ndarray
    psi_perp: np.ndarray
    proj_step: np.ndarray
    cross: np.ndarray
    hmat: np.ndarray
    delta: float
    orthogonalized: bool = True


@dataclass(frozen=True)
class Priors:
    """Gamma hyperpriors (shape/rate) for the two penalty parameters.

    The trend coefficients and the noise variance carry flat priors.
    """

    lambda2_shape: float = 2.0
    lambda2_rate: float = 2.0
    omega_shape: float = 2.0
    omega_rate: float = 2.0

    def __post_init__(self):
        for v in (self.lambda2_shape, self.lambda2_rate, self.omega_shape, self.omega_rate):
            if v <= 0:
                raise ValueError("prior shapes and rates must be positive")

    @classmethod
    def from_hybrid(cls, fit: HybridFit) -> "Priors":
        """Anchor the prior means at the penalized-fit estimates.

        The posterior kernel matches the penalized objective when the L1
        weight equals 2 sqrt(sigma2 lambda2) and the roughness weight
        equals sigma2 * omega, so the fit's penalties are converted with
        its residual variance before anchoring.
        """
        sigma2 = max(fit.rmse**2, 1e-12)
        lambda2_mean = max(fit.lam**2 / (4.0 * sigma2), 1e-12)
        omega_mean = max(fit.omega / sigma2, 1e-12)
        return cls(
            lambda2_shape=2.0,
            lambda2_rate=2.0 / lambda2_mean,
            omega_shape=2.0,
            omega_rate=2.0 / omega_mean,
        )


@dataclass
class MCMCState:
    """One configuration of the sampler in the reparametrized space."""

    beta_ortho: np.ndarray
    gamma_ortho: np.ndarray
    smooth: np.ndarray
    sigma2: float
    lambda2: float
    omega: float
    tau2: np.ndarray


@dataclass(frozen=True)
class ChainConfig:
    chains: int = 4
    iters: int = 1000
    burnin: int = 200
    thin: int = 1
    seed: int = 0
    threads: int = 1
    orthogonalized: bool = True
    delta: float = 1e-8

    def __post_init__(self):
        if self.iters <= self.burnin:
            raise ValueError("iters must exceed burnin")
        if self.chains < 1 or self.thin < 1:
            raise ValueError("chains and thin must be >= 1")


@dataclass
class PosteriorSamples:
    """Back-transformed draws, shaped (chains, kept, ...)."""

    beta: np.ndarray
    gamma: np.ndarray
    smooth: np.ndarray
    sigma2: np.ndarray
    lambda2: np.ndarray
    omega: np.ndarray
    step_indices: np.ndarray
    burnin: int
    thin: int
    seed: int
    diagnostics: dict = field(default_factory=dict)
    failed_chains: list = field(default_factory=list)

    @property
    def gamma_flat(self) -> np.ndarray:
        return self.gamma.reshape(-1, self.gamma.shape[-1])

    @property
    def smooth_flat(self) -> np.ndarray:
        return self.smooth.reshape(-1, self.smooth.shape[-1])

    @property
    def beta_flat(self) -> np.ndarray:
        return self.beta.reshape(-1, self.beta.shape[-1])


def orthogonalize(
    design: SplineDesign,
    basis: StepBasis,
    delta: float = 1e-8,
    enabled: bool = True,
) -> OrthoOperators:
    """Build the reparametrization operators.

    ``delta`` regularizes the step-space projection because the detrended
    step columns are computationally singular.  With ``enabled=False`` the
    operators degenerate to the identity parametrization (kept only to
    demonstrate the confounded sampler's poor mixing).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    n = design.n
    x = design.linear
    psi = basis.matrix
    if not enabled:
        return OrthoOperators(
            proj_trend=np.zeros((n, n)),
            psi_perp=psi.copy(),
            proj_step=np.zeros((n, n)),
            cross=np.zeros((n - 1, n)),
            hmat=np.eye(n),
            delta=delta,
            orthogonalized=False,
        )
    xtx = x.T @ x
    if np.linalg.matrix_rank(xtx) < 2:
        raise ValueError("trend matrix is rank deficient")
    proj_trend = x @ np.linalg.solve(xtx, x.T)
    resid_trend = np.eye(n) - proj_trend
    psi_perp = resid_trend @ psi
    gram = psi_perp.T @ psi_perp + delta * np.eye(n - 1)
    gram_inv_psit = np.linalg.solve(gram, psi_perp.T)
    proj_step = psi_perp @ gram_inv_psit
    cross = gram_inv_psit @ resid_trend
    hmat = (np.eye(n) - proj_step) @ resid_trend
    return OrthoOperators(
        proj_trend=proj_trend,
        psi_perp=psi_perp,
        proj_step=proj_step,
        cross=cross,
        hmat=hmat,
        delta=delta,
        orthogonalized=True,
    )


def sample_inverse_gaussian(mu, shape, rng):
    """Inverse-Gaussian draws with mean ``mu`` and shape ``shape``.

    Transformation-with-roots method: a chi-square variate is mapped to
    the smaller root (written in conjugate form, stable for large mu)
    and a uniform ratio test picks between the two roots.
    """
    mu = np.asarray(mu, dtype=float)
    shape_arr = np.broadcast_to(np.asarray(shape, dtype=float), mu.shape)
    if np.any(mu <= 0) or np.any(shape_arr <= 0):
        raise ValueError("mu and shape must be positive")
    y = rng.standard_normal(mu.shape) ** 2
    muy = mu * y
    denom = muy + np.sqrt(muy * muy + 4.0 * shape_arr * muy)
    with np.errstate(invalid="ignore", divide="ignore"):
        root = np.where(denom > 0, mu * (1.0 - 2.0 * muy / denom), mu)
        other = np.where(root > 0, mu * mu / root, np.inf)
    accept = rng.uniform(size=mu.shape) <= mu / (mu + root)
    return np.where(accept, root, other)


class GibbsSampler:
    """Precomputed operators plus the seven conditional updates."""

    def __init__(
        self,
        y: np.ndarray,
        design: SplineDesign,
        basis: StepBasis,
        ops: OrthoOperators,
        priors: Priors,
    ):
        self.y = np.asarray(y, dtype=float)
        self.design = design
        self.basis = basis
        self.ops = ops
        self.priors = priors
        n = design.n
        if self.y.shape != (n,):
            raise ValueError("y has wrong length")

        self.x = design.linear
        self.xtx = self.x.T @ self.x
        self.psi_perp = ops.psi_perp
        self.hmat = ops.hmat
        self.cross = ops.cross
        self.pp_gram = self.psi_perp.T @ self.psi_perp
        self.hth = self.hmat.T @ self.hmat
        cov_factor = chol_psd(design.cov, "process covariance")
        k_inv = solve_chol(cov_factor, np.eye(n))
        self.k_inv = 0.5 * (k_inv + k_inv.T)
        self.n = n
        self._clamp_events = 0

    # --- individual conditional updates (mutate state in place) ---

    def update_sigma2(self, state: MCMCState, rng) -> None:
        resid = (
            self.y
            - self.x @ state.beta_ortho
            - self.psi_perp @ state.gamma_ortho
            - self.hmat @ state.smooth
        )
        centered = state.gamma_ortho - self.cross @ state.smooth
        rate = 0.5 * (resid @ resid) + 0.5 * np.sum(centered**2 / state.tau2)
        shape = (2.0 * self.n - 1.0) / 2.0
        state.sigma2 = 1.0 / rng.gamma(shape, 1.0 / rate)

    def update_beta(self, state: MCMCState, rng) -> None:
        resid = self.y - self.psi_perp @ state.gamma_ortho - self.hmat @ state.smooth
        prec = self.xtx / state.sigma2
        lin = self.x.T @ resid / state.sigma2
        state.beta_ortho = _draw_gaussian_precision(prec, lin, rng)

    def update_gamma(self, state: MCMCState, rng) -> None:
        resid = self.y - self.x @ state.beta_ortho - self.hmat @ state.smooth
        inv_tau2 = 1.0 / state.tau2
        prec = (self.pp_gram + np.diag(inv_tau2)) / state.sigma2
        lin = (
            self.psi_perp.T @ resid + inv_tau2 * (self.cross @ state.smooth)
        ) / state.sigma2
        state.gamma_ortho = _draw_gaussian_precision(prec, lin, rng)

    def update_tau2(self, state: MCMCState, rng) -> None:
        centered = state.gamma_ortho - self.cross @ state.smooth
        denom = np.maximum(np.abs(centered), 1e-150)
        mu = np.sqrt(state.sigma2 * state.lambda2) / denom
        mu = np.minimum(mu, 1e150)
        inv_draws = sample_inverse_gaussian(mu, state.lambda2, rng)
        bad = ~np.isfinite(inv_draws) | (inv_draws > 1.0 / TAU2_FLOOR)
        if np.any(bad):
            self._clamp_events += int(np.sum(bad))
            log.debug("clamped %d mixture draws at the floor", int(np.sum(bad)))
            inv_draws = np.where(bad, 1.0 / TAU2_FLOOR, inv_draws)
        state.tau2 = 1.0 / inv_draws

    def update_lambda2(self, state: MCMCState, rng) -> None:
        shape = self.priors.lambda2_shape + (self.n - 1)
        rate = self.priors.lambda2_rate + 0.5 * np.sum(state.tau2)
        state.lambda2 = rng.gamma(shape, 1.0 / rate)

    def update_smooth(self, state: MCMCState, rng) -> None:
        resid = self.y - self.x @ state.beta_ortho - self.psi_perp @ state.gamma_ortho
        inv_tau2 = 1.0 / state.tau2
        cross_w = self.cross.T * inv_tau2
        prec = state.omega * self.k_inv + (self.hth + cross_w @ self.cross) / state.sigma2
        lin = (self.hmat.T @ resid + cross_w @ state.gamma_ortho) / state.sigma2
        state.smooth = _draw_gaussian_precision(prec, lin, rng)

    def update_omega(self, state: MCMCState, rng) -> None:
        quad = state.smooth @ self.k_inv @ state.smooth
        shape = self.n / 2.0 + self.priors.omega_shape
        rate = 0.5 * quad + self.priors.omega_rate
        state.omega = rng.gamma(shape, 1.0 / rate)

    def step(self, state: MCMCState, rng) -> MCMCState:
        """One full sweep; the noise variance is refreshed first."""
        state = replace(
            state,
            beta_ortho=state.beta_ortho.copy(),
            gamma_ortho=state.gamma_ortho.copy(),
            smooth=state.smooth.copy(),
            tau2=state.tau2.copy(),
        )
        self.update_sigma2(state, rng)
        self.update_beta(state, rng)
        self.update_gamma(state, rng)
        self.update_tau2(state, rng)
        self.update_lambda2(state, rng)
        self.update_smooth(state, rng)
        self.update_omega(state, rng)
        return state

    def back_transform(self, state: MCMCState):
        """Map a draw to the observation-space parameters (beta, gamma, g)."""
        gamma = state.gamma_ortho - self.cross @ state.smooth
        shift = self.ops.proj_trend @ (self.basis.matrix @ gamma + state.smooth)
        beta = state.beta_ortho - np.linalg.solve(self.xtx, self.x.T @ shift)
        return beta, gamma, state.smooth


def _draw_gaussian_precision(prec: np.ndarray, lin: np.ndarray, rng) -> np.ndarray:
    """Draw from N(prec^{-1} lin, prec^{-1}) via the precision Cholesky."""
    from scipy.linalg import solve_triangular

    lower = chol_psd(prec, "conditional precision")
    mean = solve_triangular(
        lower.T, solve_triangular(lower, lin, lower=True), lower=False
    )
    noise = solve_triangular(lower.T, rng.standard_normal(len(lin)), lower=False)
    return mean + noise


def gibbs_step(
    state: MCMCState,
    y: np.ndarray,
    ops: OrthoOperators,
    design: SplineDesign,
    basis: StepBasis,
    priors: Priors,
    rng,
) -> MCMCState:
    """One-off full sweep (builds the sampler; prefer GibbsSampler in loops)."""
    return GibbsSampler(y, design, basis, ops, priors).step(state, rng)


def init_state(
    y: np.ndarray,
    basis: StepBasis,
    design: SplineDesign,
    priors: Priors,
    ops: OrthoOperators,
) -> MCMCState:
    """Starting state: step coefficients seeded from the largest first
    differences, trend from least squares on the remainder, penalties and
    mixture variances at their prior means, noise variance left for the
    first sweep."""
    y = np.asarray(y, dtype=float)
    n = design.n
    z = np.abs(np.diff(y))
    q95 = np.quantile(z, 0.95)
    gamma0 = np.where(z >= q95, z, 0.0)
    x = design.linear
    beta0, *_ = np.linalg.lstsq(x, y - basis.matrix @ gamma0, rcond=None)
    lambda2_0 = priors.lambda2_shape / priors.lambda2_rate
    omega0 = priors.omega_shape / priors.omega_rate
    tau2_0 = np.full(n - 1, 2.0 / lambda2_0)
    smooth0 = np.zeros(n)
    shift = ops.proj_trend @ (basis.matrix @ gamma0 + smooth0)
    beta_ortho0 = beta0 + np.linalg.solve(x.T @ x, x.T @ shift)
    gamma_ortho0 = gamma0 + ops.cross @ smooth0
    return MCMCState(
        beta_ortho=beta_ortho0,
        gamma_ortho=gamma_ortho0,
        smooth=smooth0,
        sigma2=float("nan"),  # drawn first in the initial sweep
        lambda2=float(lambda2_0),
        omega=float(omega0),
        tau2=tau2_0,
    )


def _chain_worker(y, design, basis, ops, priors, config, seed_seq):
    """Run one chain start to finish; returns the retained draw arrays."""
    rng = np.random.default_rng(seed_seq)
    sampler = GibbsSampler(np.asarray(y, dtype=float), design, basis, ops, priors)
    state = init_state(y, basis, design, priors, ops)
    kept = (config.iters - config.burnin + config.thin - 1) // config.thin
    n = design.n
    out = {
        "beta": np.empty((kept, 2)),
        "gamma": np.empty((kept, n - 1)),
        "smooth": np.empty((kept, n)),
        "sigma2": np.empty(kept),
        "lambda2": np.empty(kept),
        "omega": np.empty(kept),
    }
    k = 0
    for it in range(config.iters):
        state = sampler.step(state, rng)
        if it >= config.burnin and (it - config.burnin) % config.thin == 0:
            beta, gamma, smooth = sampler.back_transform(state)
            out["beta"][k] = beta
            out["gamma"][k] = gamma
            out["smooth"][k] = smooth
            out["sigma2"][k] = state.sigma2
            out["lambda2"][k] = state.lambda2
            out["omega"][k] = state.omega
            k += 1
    return out


def run_chains(
    y: np.ndarray,
    design: SplineDesign,
    basis: StepBasis,
    config: ChainConfig = ChainConfig(),
    priors: Optional[Priors] = None,
    ops: Optional[OrthoOperators] = None,
) -> PosteriorSamples:
    """Run seeded independent chains and back-transform every retained draw.

    A chain that fails numerically is dropped with a log record; the run
    raises only if every chain fails.  Shrink factors and effective sample
    sizes for the scalar parameters are attached as advisory diagnostics.
    Output is identical for any thread count: chains derive their streams
    from spawned seed sequences, not from scheduling order.
    """
    if priors is None:
        priors = Priors()
    if ops is None:
        ops = orthogonalize(
            design, basis, delta=config.delta, enabled=config.orthogonalized
        )
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    results = [None] * config.chains
    failures = []

    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            futures = {
                c: pool.submit(
                    _chain_worker, y, design, basis, ops, priors, config, seeds[c]
                )
                for c in range(config.chains)
            }
            for c, fut in futures.items():
                try:
                    results[c] = fut.result()
                except Exception as exc:  # noqa: BLE001 - chain errors recorded
                    failures.append((c, repr(exc)))
                    log.warning("chain %d failed: %r", c, exc)
    else:
        for c in range(config.chains):
            try:
                results[c] = _chain_worker(y, design, basis, ops, priors, config, seeds[c])
            except Exception as exc:  # noqa: BLE001 - chain errors recorded
                failures.append((c, repr(exc)))
                log.warning("chain %d failed: %r", c, exc)

    good = [r for r in results if r is not None]
    if not good:
        raise RuntimeError(f"all {config.chains} chains failed: {failures}")

    stacked = {key: np.stack([r[key] for r in good]) for key in good[0]}
    diagnostics = {}
    for key in ("sigma2", "lambda2", "omega"):
        diagnostics[key] = {
            "ess": ess(stacked[key]),
            "rhat": split_rhat(stacked[key]),
        }
    gamma_ess = [ess(stacked["gamma"][:, :, j]) for j in range(stacked["gamma"].shape[2])]
    diagnostics["gamma_min_ess"] = float(np.nanmin(gamma_ess))
    return PosteriorSamples(
        beta=stacked["beta"],
        gamma=stacked["gamma"],
        smooth=stacked["smooth"],
        sigma2=stacked["sigma2"],
        lambda2=stacked["lambda2"],
        omega=stacked["omega"],
        step_indices=basis.step_indices.copy(),
        burnin=config.burnin,
        thin=config.thin,
        seed=config.seed,
        diagnostics=diagnostics,
        failed_chains=failures,
    )


def _chain_worker(y, design, basis, ops, priors, config, seed_seq):
    rng = np.random.default_rng(seed_seq)
    sampler = GibbsSampler(np.asarray(y, dtype=float), design, basis, ops, priors)
    state = init_state(y, basis, design, priors, ops)
    kept = (config.iters - config.burnin + config.thin - 1) // config.thin
    n = design.n
    out = {
        "beta": np.empty((kept, 2)),
        "gamma": np.empty((kept, n - 1)),
        "smooth": np.empty((kept, n)),
        "sigma2": np.empty(kept),
        "lambda2": np.empty(kept),
        "omega": np.empty(kept),
    }
    k = 0
    for it in range(config.iters):
        state = sampler.step(state, rng)
        if it >= config.burnin and (it - config.burnin) % config.thin == 0:
            beta, gamma, smooth = sampler.back_transform(state)
            out["beta"][k] = beta
            out["gamma"][k] = gamma
            out["smooth"][k] = smooth
            out["sigma2"][k] = state.sigma2
            out["lambda2"][k] = state.lambda2
            out["omega"][k] = state.omega
            k += 1
    return out


@dataclass(frozen=True)
class BayesDetection:
    """Per-coefficient posterior summary with the flagging decision."""

    step_indices: np.ndarray
    means: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    flagged: np.ndarray  # boolean per coefficient
    threshold: float
    level: float

    @property
    def flagged_indices(self) -> np.ndarray:
        return self.step_indices[self.flagged]


def detect_bayes(
    samples: PosteriorSamples, threshold: float = 0.15, level: float = 0.95
) -> BayesDetection:
    """Flag coefficients whose central interval excludes zero and whose
    posterior mean magnitude clears the operational threshold."""
    draws = samples.gamma_flat
    if draws.size == 0:
        raise ValueError("no retained draws")
    alpha = (1.0 - level) / 2.0
    lower = np.quantile(draws, alpha, axis=0)
    upper = np.quantile(draws, 1.0 - alpha, axis=0)
    means = draws.mean(axis=0)
    excludes_zero = (lower > 0.0) | (upper < 0.0)
    flagged = excludes_zero & (np.abs(means) > threshold)
    return BayesDetection(
        step_indices=samples.step_indices.copy(),
        means=means,
        lower=lower,
        upper=upper,
        flagged=flagged,
        threshold=threshold,
        level=level,
    )
