from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from batchregret.divergence import mutual_info
from batchregret.family import Interval, ParamGrid, SubGrid, make_uniform_grid
from batchregret.oracle import enum_regret_terms
from batchregret.predictor import Prior, predictive_from_prior
from batchregret.solver import (
    SolverConfig,
    ab_step,
    bounds,
    capacity,
    default_epsilon,
    default_lambda,
    solve,
    verify_sandwich,
)


class Recorder:
    """Collects every solver state and checks the certificate invariants."""

    def __init__(self):
        self.count = 0

    def __call__(self, state):
        self.count += 1
        assert state.r_lower <= state.r_upper
        w = state.prior.weights
        assert np.all(w >= 0) and abs(w.sum() - 1.0) <= 1e-12


def test_ab_step_examples():
    p = Prior(np.array([0.2, 0.3, 0.5]))
    assert np.allclose(ab_step(p, np.full(3, 0.7), 5.0).weights, p.weights, atol=1e-15)
    assert np.allclose(ab_step(p, np.array([1.0, -2.0, 3.0]), 0.0).weights, p.weights, atol=1e-15)
    out = ab_step(Prior.uniform(2), np.array([0.0, math.log(2)]), 1.0)
    assert out.weights == pytest.approx([1 / 3, 2 / 3], abs=1e-15)


def test_ab_step_zeroes_saturated_points():
    out = ab_step(Prior.uniform(3), np.array([0.1, -1e12, 0.2]), 100.0)
    assert out.weights[1] == 0.0
    assert out.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_defaults_and_validation():
    g = make_uniform_grid(0.0, 1.0, 5)
    cfg = SolverConfig(N=50, grid=g, theta=Interval(0.2, 0.8))
    assert cfg.lam == default_lambda(50) == 100.0
    assert cfg.eps == default_epsilon(50) == pytest.approx(1e-7, rel=1e-15)
    for bad in ({"N": 0}, {"lam": -1.0}, {"eps": 0.0}, {"max_iters": 0}):
        with pytest.raises(ValueError):
            SolverConfig(**{"N": 5, "grid": g, "theta": Interval(0.2, 0.8), **bad})
    with pytest.raises(ValueError):
        SolverConfig(N=5, grid=make_uniform_grid(0.3, 0.6, 4), theta=Interval(0.2, 0.8))


def test_single_point_family():
    g = make_uniform_grid(0.3, 0.3, 1)
    rep = solve(SolverConfig(N=100, grid=g, theta=Interval(0.3, 0.3)))
    assert (rep.r_lower, rep.r_upper) == (0.0, 0.0)
    assert rep.iterations == 1 and rep.converged


def test_bounds_examples():
    g = make_uniform_grid(0.4, 0.4, 1)
    assert bounds(g, Prior.uniform(1), Interval(0.4, 0.4), 9) == (0.0, 0.0)
    g = make_uniform_grid(0.0, 1.0, 11)
    rng = np.random.default_rng(3)
    prior = Prior.normalized(rng.random(11))
    r_lower, _ = bounds(g, prior, Interval(0.0, 1.0), 8)
    assert r_lower == pytest.approx(mutual_info(g, prior, predictive_from_prior(g, prior, 8), 8), abs=1e-14)


def test_bounds_against_enumeration():
    g = ParamGrid.from_bernoulli([0.1, 0.45, 0.8])
    prior = Prior(np.array([0.3, 0.3, 0.4]))
    theta = Interval(0.3, 0.6)
    fast = bounds(g, prior, theta, 5)
    ref = enum_regret_terms(g, prior, theta, 5)
    assert fast == pytest.approx(ref, abs=1e-12)


@given(st.integers(2, 60), st.integers(0, 10_000))
def test_certificate_invariants(N, seed):
    rng = np.random.default_rng(seed)
    M = int(rng.integers(2, 30))
    lo, hi = sorted(rng.uniform(0, 1, 2))
    g = make_uniform_grid(lo, hi, M)
    a, b = sorted(rng.uniform(lo, hi, 2))
    cfg = SolverConfig(N=N, grid=g, theta=Interval(a, b), eps=1e-6 / N, max_iters=3000)
    rec = Recorder()
    rep = solve(cfg, callback=rec)
    assert rec.count == rep.iterations
    assert rep.r_lower <= rep.midpoint <= rep.r_upper
    if rep.converged:
        assert rep.gap <= cfg.eps
        # a point mass inside Theta has zero regret, so R* >= 0 whenever one exists
        if np.any((g.success >= a) & (g.success <= b)):
            assert rep.r_lower >= -cfg.eps


def test_stochastic_reduction_is_bit_identical():
    g = make_uniform_grid(0.1, 0.7, 41)
    a = solve(SolverConfig(N=30, grid=g, theta=Interval(0.1, 0.7), eps=1e-8))
    b = capacity(g, 30, eps=1e-8)
    assert a.r_lower == b.r_lower and a.r_upper == b.r_upper
    assert a.prior.weights.tobytes() == b.prior.weights.tobytes()


def test_runs_are_deterministic():
    g = make_uniform_grid(0.0, 1.0, 51)
    cfg = dict(N=40, grid=g, theta=Interval(0.2, 0.6), eps=1e-8)
    a, b = solve(SolverConfig(**cfg)), solve(SolverConfig(**cfg))
    assert (a.r_lower, a.r_upper, a.iterations) == (b.r_lower, b.r_upper, b.iterations)
    assert a.prior.weights.tobytes() == b.prior.weights.tobytes()


def test_nonconvergence_is_reported():
    g = make_uniform_grid(0.0, 1.0, 51)
    rep = solve(SolverConfig(N=40, grid=g, theta=Interval(0.2, 0.6), max_iters=3))
    assert not rep.converged and rep.iterations == 4
    assert rep.gap > rep.eps


def test_infinite_penalty_points_lose_their_weight():
    g = ParamGrid.from_bernoulli([0.0, 0.5])
    rep = solve(SolverConfig(N=10, grid=g, theta=SubGrid(ParamGrid.from_bernoulli([0.0])), eps=1e-9))
    assert rep.prior.weights[1] == 0.0
    assert rep.converged and rep.r_upper == 0.0


def test_misspecified_regret_reference_n100():
    # (reference value 0.8728 in 2N units)
    rep = solve(SolverConfig(N=100, grid=make_uniform_grid(0.0, 1.0, 1001), theta=Interval(0.25, 0.75)))
    assert rep.converged
    assert rep.normalized == pytest.approx(0.8728, abs=0.02)


def test_sandwich_collapses_when_theta_is_phi():
    res = verify_sandwich(Interval(0.2, 0.6), (0.2, 0.6), 20, 0.1, M=61, eps=1e-9)
    lo, mid, hi = res.values
    assert res.theta_eps == Interval(0.2, 0.6)
    assert mid == pytest.approx(lo, abs=res.tolerance) and hi == pytest.approx(mid, abs=res.tolerance)
    assert res.passed


def test_sandwich_ordering_small():
    res = verify_sandwich(Interval(0.25, 0.75), (0.0, 1.0), 20, 0.1, M=101)
    assert res.passed and res.strict
    with pytest.raises(ValueError):
        verify_sandwich(Interval(0.1, 0.9), (0.2, 0.8), 20, 0.1, M=11)
