"""Extended Arimoto-Blahut iteration for the misspecified min-max regret.

Every iterate pi certifies R_L(pi) <= R* <= R_U(pi), where R_L is the
prior-average and R_U the maximum over sources of
d(phi) = D(P_phi || Q_pi) - D(P_phi || Theta). The loop multiplies the prior
by exp(lam * d) and stops once R_U - R_L <= eps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .divergence import SATURATED, DivergenceProfile, divergence_profile, expected_kl, penalty_vector
from .family import (
    HypothesisSet,
    Interval,
    ParamGrid,
    SubGrid,
    check_hypothesis_within,
    default_grid_size,
    epsilon_n,
    make_uniform_grid,
    theta_epsilon,
)
from .predictor import CountKernel, Prior

log = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-300
DEFAULT_MAX_ITERS = 200_000
LOG_EVERY = 100


def default_lambda(N: int) -> float:
    """Step exponent scaled to the O(1/N) size of the conditional divergences."""
    return 2.0 * N


def default_epsilon(N: int) -> float:
    """Gap threshold giving ~1e-5 accuracy in 2N-normalized units."""
    return 1e-5 / (2.0 * N)


class NonConvergenceError(RuntimeError):
    """A run required to be certified stopped at max_iters."""


@dataclass
class SolverConfig:
    N: int
    grid: ParamGrid
    theta: HypothesisSet
    lam: float | None = None
    eps: float | None = None
    max_iters: int = DEFAULT_MAX_ITERS
    initial_prior: Prior | None = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.lam is None:
            self.lam = default_lambda(self.N)
        if self.eps is None:
            self.eps = default_epsilon(self.N)
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.eps > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.initial_prior is not None and len(self.initial_prior) != len(self.grid):
            raise ValueError("initial prior not aligned with grid")
        check_hypothesis_within(self.theta, self.grid)


@dataclass
class SolverState:
    iteration: int
    prior: Prior
    r_lower: float
    r_upper: float
    gap_history: list[tuple[int, float]] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class RegretReport:
    """Certified bounds on the min-max regret, in nats (per symbol when L > 1).

    ``iterations`` counts evaluations of the bound pair, so a run that is
    certified by its initial prior reports 1.
    """

    r_lower: float
    r_upper: float
    iterations: int
    converged: bool
    prior: Prior
    grid: ParamGrid
    N: int
    eps: float
    lam: float
    L: int = 1
    gap_history: tuple[tuple[int, float], ...] = ()

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.r_lower + self.r_upper)

    @property
    def normalized(self) -> float:
        """2N times the midpoint, the unit used by the reference table."""
        return 2.0 * self.N * self.midpoint

    @property
    def gap(self) -> float:
        return self.r_upper - self.r_lower


def _desaturate(x: float) -> float:
    if x >= SATURATED / 2:
        return float("inf")
    if x <= -SATURATED / 2:
        return float("-inf")
    return float(x)


def certificate(weights: np.ndarray, d: np.ndarray) -> tuple[float, float]:
    """(R_L, R_U) for saturated objective values ``d``.

    R_L is capped at R_U so the ordering also holds in floating point.
    """
    r_upper = float(d.max())
    support = weights > 0
    r_lower = float(np.dot(weights[support], d[support]))
    return min(r_lower, r_upper), r_upper


def ab_step(prior: Prior, profile: DivergenceProfile | np.ndarray, lam: float) -> Prior:
    """One multiplicative update pi_j <- pi_j exp(lam * d_j), renormalized."""
    d = profile.saturated() if isinstance(profile, DivergenceProfile) else np.asarray(profile, dtype=float)
    w = prior.weights
    support = w > 0
    if not support.any():
        raise ValueError("prior has no support")
    x = np.zeros_like(w)
    x[support] = w[support] * np.exp(lam * (d[support] - d[support].max()))
    total = x.sum()
    if not total > 0 or not np.isfinite(total):
        raise FloatingPointError("AB update produced an all-zero weight vector")
    x /= total
    x[x < WEIGHT_FLOOR] = 0.0
    return Prior(x / x.sum())


def iterate(
    d_of: Callable[[np.ndarray], np.ndarray],
    prior: Prior,
    lam: float,
    eps: float,
    max_iters: int,
    callback: Callable[[SolverState], None] | None = None,
) -> tuple[Prior, float, float, int, bool, list[tuple[int, float]]]:
    """Run the AB loop on a saturated objective function of the weights."""
    d = d_of(prior.weights)
    r_lower, r_upper = certificate(prior.weights, d)
    history = [(0, r_upper - r_lower)]
    i = 0
    if callback is not None:
        callback(SolverState(i, prior, r_lower, r_upper, history))
    while r_upper - r_lower > eps and i < max_iters:
        i += 1
        prior = ab_step(prior, d, lam)
        d = d_of(prior.weights)
        r_lower, r_upper = certificate(prior.weights, d)
        if i % LOG_EVERY == 0:
            history.append((i, r_upper - r_lower))
            log.debug("iter %d  R_L=%.12g  R_U=%.12g  gap=%.3g", i, r_lower, r_upper, r_upper - r_lower)
        if callback is not None:
            callback(SolverState(i, prior, r_lower, r_upper, history))
    converged = r_upper - r_lower <= eps
    if history[-1][0] != i:
        history.append((i, r_upper - r_lower))
    if not converged:
        log.warning("no convergence after %d updates: gap %.3g > eps %.3g", i, r_upper - r_lower, eps)
    return prior, r_lower, r_upper, i + 1, converged, history


class BatchObjective:
    """d(pi) for the batch problem with cached binomial kernel and penalty."""

    def __init__(self, grid: ParamGrid, theta: HypothesisSet, N: int):
        self.grid = grid
        self.N = N
        self.kernel = CountKernel(grid.points, N - 1)
        self.penalty = penalty_vector(grid.points, theta)
        self.theta = theta

    def profile(self, weights: np.ndarray) -> DivergenceProfile:
        return divergence_profile(self.grid, Prior(weights), self.theta, self.N, self.kernel, self.penalty)

    def __call__(self, weights: np.ndarray) -> np.ndarray:
        probs, flagged = self.kernel.predictive(weights)
        k = self.kernel
        D = expected_kl(k.w, k.emit, k.neg_entropy, probs[:, None, :], flagged, k.w_rowsum)
        return DivergenceProfile(D, self.penalty).saturated()


def bounds(grid: ParamGrid, prior: Prior, theta: HypothesisSet, N: int) -> tuple[float, float]:
    """(R_L, R_U) certified by ``prior``."""
    profile = divergence_profile(grid, prior, theta, N)
    r_lower, r_upper = certificate(prior.weights, profile.saturated())
    return _desaturate(r_lower), _desaturate(r_upper)


def solve(config: SolverConfig, callback: Callable[[SolverState], None] | None = None) -> RegretReport:
    """Run the extended Arimoto-Blahut iteration until R_U - R_L <= eps."""
    objective = BatchObjective(config.grid, config.theta, config.N)
    prior0 = config.initial_prior or Prior.uniform(len(config.grid))
    prior, r_lower, r_upper, iters, converged, history = iterate(
        objective, prior0, config.lam, config.eps, config.max_iters, callback
    )
    return RegretReport(
        r_lower=_desaturate(r_lower),
        r_upper=_desaturate(r_upper),
        iterations=iters,
        converged=converged,
        prior=prior,
        grid=config.grid,
        N=config.N,
        eps=config.eps,
        lam=config.lam,
        gap_history=tuple(history),
    )


def _theta_as_family(grid: ParamGrid) -> HypothesisSet:
    if grid.is_bernoulli:
        return Interval(float(grid.success[0]), float(grid.success[-1]))
    return SubGrid(grid)


def capacity(grid: ParamGrid, N: int, **params) -> RegretReport:
    """Conditional capacity of the grid: the regret with Theta equal to Phi."""
    return solve(SolverConfig(N=N, grid=grid, theta=_theta_as_family(grid), **params))


@dataclass(frozen=True)
class SandwichResult:
    lower: RegretReport
    middle: RegretReport
    upper: RegretReport
    theta_eps: Interval
    eps_n: float
    tolerance: float

    @property
    def values(self) -> tuple[float, float, float]:
        return (self.lower.midpoint, self.middle.midpoint, self.upper.midpoint)

    @property
    def normalized(self) -> tuple[float, float, float]:
        return (self.lower.normalized, self.middle.normalized, self.upper.normalized)

    @property
    def passed(self) -> bool:
        lo, mid, hi = self.values
        return lo <= mid + self.tolerance and mid <= hi + self.tolerance

    @property
    def strict(self) -> bool:
        lo, mid, hi = self.values
        return lo < mid < hi


def verify_sandwich(
    theta: Interval,
    phi_range: tuple[float, float],
    N: int,
    alpha: float,
    M: int | None = None,
    **params,
) -> SandwichResult:
    """Compute C(Theta) <= R*(Theta, Phi) <= C(Theta_eps) with eps = N^(alpha-1).

    Each quantity is solved on its own uniform grid of M points; the check
    allows slack of twice the largest solver tolerance.
    """
    lo, hi = phi_range
    if not (lo <= theta.a and theta.b <= hi):
        raise ValueError("Theta must be contained in Phi")
    M = M or default_grid_size(N)
    eps_n = epsilon_n(N, alpha)
    theta_e = theta_epsilon(theta, eps_n, phi_range)
    lower = capacity(make_uniform_grid(theta.a, theta.b, 1 if theta.a == theta.b else M), N, **params)
    middle = solve(SolverConfig(N=N, grid=make_uniform_grid(lo, hi, 1 if lo == hi else M), theta=theta, **params))
    upper = capacity(make_uniform_grid(theta_e.a, theta_e.b, 1 if theta_e.a == theta_e.b else M), N, **params)
    for rep in (lower, middle, upper):
        if not rep.converged:
            raise NonConvergenceError(f"solver did not converge (gap {rep.gap:.3g} > eps {rep.eps:.3g})")
    tol = 2.0 * max(lower.eps, middle.eps, upper.eps)
    return SandwichResult(lower, middle, upper, theta_e, eps_n, tol)
