"""Randomized comparison of the fast paths against exhaustive enumeration."""

from __future__ import annotations

import math

import numpy as np

from .combined import combined_bounds, combined_div_to_predictor
from .divergence import cond_div_to_predictor, div_to_set
from .family import Interval, ParamGrid
from .oracle import LIMIT, OracleLimitError, enum_cond_div, enum_div_to_set, enum_regret_terms, enum_supervised
from .predictor import Prior, predictive_from_prior
from .solver import bounds
from .supervised import ChannelGrid, FeatureDist, ProductHypothesis, sup_regret_terms

QUANTITIES = ("cond_div", "div_to_set", "bounds", "combined_div", "combined_bounds", "supervised")


def discrepancy(a: float, b: float) -> float:
    """|a - b|, with matching infinities counted as agreement."""
    if math.isinf(a) or math.isinf(b):
        return 0.0 if a == b else math.inf
    return abs(a - b)


def random_bernoulli_grid(rng: np.random.Generator, max_points: int = 5) -> ParamGrid:
    M = int(rng.integers(1, max_points + 1))
    phis = set(np.round(rng.uniform(0.02, 0.98, size=M), 6))
    if rng.random() < 0.15:
        phis.add(float(rng.choice([0.0, 1.0])))
    return ParamGrid.from_bernoulli(sorted(phis))


def random_prior(rng: np.random.Generator, M: int) -> Prior:
    w = rng.random(M)
    if M > 1 and rng.random() < 0.3:
        w[rng.integers(M)] = 0.0
    if w.sum() == 0:
        w[0] = 1.0
    return Prior.normalized(w)


def random_interval(rng: np.random.Generator) -> Interval:
    a, b = sorted(rng.uniform(0.0, 1.0, size=2))
    return Interval(float(a), float(b))


def random_channel_grid(rng: np.random.Generator, max_points: int = 4) -> ChannelGrid:
    M = int(rng.integers(1, max_points + 1))
    p = rng.uniform(0.05, 0.95, size=(M, 2))
    ch = np.stack([np.column_stack([1 - p[:, 0], p[:, 0]]), np.column_stack([1 - p[:, 1], p[:, 1]])], axis=1)
    return ChannelGrid(ch)


def oracle_discrepancies(N: int | None, cases: int, seed: int = 0, L: int = 1) -> dict[str, float]:
    """Largest |fast - enumerated| per quantity over ``cases`` random instances.

    ``N`` fixes the batch size of the unsupervised cases (None draws it per
    case). Combined cases use N + L <= 12 and supervised cases N <= 6.
    """
    if N is not None and N > LIMIT.unsupervised:
        raise OracleLimitError(f"N = {N} exceeds the enumeration limit {LIMIT.unsupervised}")
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(QUANTITIES, 0.0)

    def note(key: str, a: float, b: float) -> None:
        worst[key] = max(worst[key], discrepancy(a, b))

    for _ in range(cases):
        grid = random_bernoulli_grid(rng)
        prior = random_prior(rng, len(grid))
        theta = random_interval(rng)
        n = N if N is not None else int(rng.integers(1, LIMIT.unsupervised + 1))
        phi = float(rng.choice(grid.success)) if rng.random() < 0.5 else float(rng.uniform(0.01, 0.99))
        table = predictive_from_prior(grid, prior, n)
        note("cond_div", cond_div_to_predictor(phi, table, n), enum_cond_div(phi, grid, prior, n))
        note("div_to_set", div_to_set(phi, theta), enum_div_to_set(phi, theta))
        small = min(n, 10)
        for fast, ref in zip(bounds(grid, prior, theta, small), enum_regret_terms(grid, prior, theta, small)):
            note("bounds", fast, ref)

        steps = int(rng.integers(1, 4)) if L == 1 else L
        nc = int(rng.integers(1, 12 - steps + 1)) if steps < 12 else 1
        note("combined_div", combined_div_to_predictor(phi, grid, prior, nc, steps), enum_cond_div(phi, grid, prior, nc, steps))
        for fast, ref in zip(combined_bounds(grid, prior, theta, nc, steps), enum_regret_terms(grid, prior, theta, nc, steps)):
            note("combined_bounds", fast, ref)

        cg = random_channel_grid(rng)
        cprior = random_prior(rng, len(cg))
        px = FeatureDist(rng.dirichlet([1.0, 1.0]))
        ctheta = ProductHypothesis((random_interval(rng), random_interval(rng)))
        ns = int(rng.integers(1, LIMIT.supervised + 1))
        fast = sup_regret_terms(cg, cprior, ctheta, px, ns, method="exact", threads=1)
        ref = enum_supervised(cg, cprior, ctheta, px, ns)
        for a, b in ((fast.info, ref.info), (fast.penalty, ref.penalty), (fast.r_lower, ref.r_lower), (fast.r_upper, ref.r_upper)):
            note("supervised", a, b)
    return worst
