from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from batchregret.combined import (
    CombinedConfig,
    combined_bounds,
    combined_div_to_predictor,
    combined_div_to_set,
    combined_solve,
)
from batchregret.divergence import cond_div_to_predictor, div_to_set
from batchregret.family import Interval, ParamGrid, make_uniform_grid
from batchregret.oracle import enum_cond_div, enum_regret_terms
from batchregret.predictor import Prior, predictive_from_prior
from batchregret.solver import SolverConfig, bounds, capacity, solve

THREE_KL = 0.21738098378143097121658050438678618819792084639663


def test_single_step_equals_batch_divergence():
    g = make_uniform_grid(0.0, 1.0, 21)
    prior = Prior.normalized(np.arange(1, 22))
    table = predictive_from_prior(g, prior, 15)
    assert combined_div_to_predictor(0.35, g, prior, 15, 1) == cond_div_to_predictor(0.35, table, 15)


def test_point_mass_prior_gives_zero():
    g = make_uniform_grid(0.0, 1.0, 11)
    for L in (1, 3, 6):
        assert combined_div_to_predictor(0.7, g, Prior.point_mass(11, 7), 5, L) == 0.0


def test_against_enumeration_small():
    g = ParamGrid.from_bernoulli([0.2, 0.5, 0.9])
    prior = Prior(np.array([0.5, 0.2, 0.3]))
    assert combined_div_to_predictor(0.4, g, prior, 3, 2) == pytest.approx(enum_cond_div(0.4, g, prior, 3, 2), abs=1e-12)


@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 10_000))
def test_chain_rule_decomposition_matches_enumeration(N, L, seed):
    rng = np.random.default_rng(seed)
    g = ParamGrid.from_bernoulli(np.sort(rng.choice(np.linspace(0.05, 0.95, 19), 4, replace=False)))
    prior = Prior.normalized(rng.random(4))
    phi = float(rng.uniform(0.01, 0.99))
    fast = combined_div_to_predictor(phi, g, prior, N, L)
    assert fast >= 0
    assert fast == pytest.approx(enum_cond_div(phi, g, prior, N, L), abs=1e-10)


def test_div_to_set_scaling():
    theta = Interval(0.25, 0.75)
    assert combined_div_to_set(0.5, theta, 4) == 0.0
    assert combined_div_to_set(0.1, theta, 1) == div_to_set(0.1, theta)
    assert combined_div_to_set(0.1, theta, 3) == pytest.approx(THREE_KL, abs=1e-14)
    with pytest.raises(ValueError):
        combined_div_to_set(0.1, theta, 0)


def test_bounds_match_batch_and_enumeration():
    g = ParamGrid.from_bernoulli([0.1, 0.5, 0.8])
    prior = Prior(np.array([0.25, 0.5, 0.25]))
    theta = Interval(0.3, 0.6)
    assert combined_bounds(g, prior, theta, 6, 1) == pytest.approx(bounds(g, prior, theta, 6), abs=1e-15)
    assert combined_bounds(g, prior, theta, 3, 2) == pytest.approx(enum_regret_terms(g, prior, theta, 3, 2), abs=1e-12)


def test_single_step_solve_matches_batch():
    cfg = SolverConfig(N=20, grid=make_uniform_grid(0.0, 1.0, 101), theta=Interval(0.25, 0.75), eps=1e-8)
    a = solve(cfg)
    b = combined_solve(CombinedConfig(cfg, 1))
    assert abs(a.r_lower - b.r_lower) <= 1e-12 and abs(a.r_upper - b.r_upper) <= 1e-12
    assert a.iterations == b.iterations


def test_single_point_family_any_horizon():
    cfg = SolverConfig(N=10, grid=make_uniform_grid(0.4, 0.4, 1), theta=Interval(0.4, 0.4))
    rep = combined_solve(CombinedConfig(cfg, 5))
    assert rep.r_lower == 0.0 and rep.r_upper == 0.0


def test_short_horizon_tracks_batch_value():
    g = make_uniform_grid(0.0, 1.0, 201)
    batch = capacity(g, 200, eps=1e-7)
    cfg = SolverConfig(N=200, grid=g, theta=Interval(0.0, 1.0), eps=1e-7)
    rep = combined_solve(CombinedConfig(cfg, 2))
    assert rep.converged and rep.L == 2
    assert rep.midpoint == pytest.approx(batch.midpoint, rel=0.10)
    # per-symbol regret with more data cannot exceed the certified batch capacity
    assert rep.r_lower <= batch.r_upper


def test_certificate_and_invalid_horizon():
    cfg = SolverConfig(N=15, grid=make_uniform_grid(0.0, 1.0, 41), theta=Interval(0.2, 0.7), eps=1e-7)
    seen = []
    rep = combined_solve(CombinedConfig(cfg, 3), callback=lambda s: seen.append(s.r_upper - s.r_lower))
    assert min(seen) >= 0 and rep.converged
    assert (rep.r_upper - rep.r_lower) * 3 <= cfg.eps * (1 + 1e-12)
    with pytest.raises(ValueError):
        CombinedConfig(cfg, 0)
