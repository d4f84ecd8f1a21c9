"""Supervised batch learning with channel-like label models.

Features x are drawn i.i.d. from a known P(x); labels follow a memoryless
channel W_phi(y | x). A history (x^{N-1}, y^{N-1}) is summarized by its
(x, y) pair counts, whose probability under channel j is multinomial with
cell probabilities P(x) W_j(y | x). The predictor for y_N given x_N is the
prior mixture of the channels, reweighted by the history likelihood.

Two evaluation paths exist. The exact path sums over every count table,
grouped in blocks sharing the same feature composition (n_x). The sampled
path draws feature compositions from their multinomial law with a seeded
generator and sums exactly over labels given each drawn composition.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .divergence import SATURATED, expected_kl, penalty_vector
from .family import Interval, ParamGrid, SubGrid, count_classes, log_weight_matrix, make_uniform_grid
from .predictor import MixtureKernel, Prior
from .solver import (
    DEFAULT_MAX_ITERS,
    RegretReport,
    SolverState,
    _desaturate,
    certificate,
    default_epsilon,
    default_lambda,
    iterate,
)


_SUM_TOL = 1e-12
EXACT_MAX_N = 200
# Above this many cached (channel, class) weights, blocks are rebuilt per call.
CACHE_LIMIT = 20_000_000
# Fixed number of seed streams, so samples do not depend on the thread count.
SAMPLE_STREAMS = 16
DEFAULT_SAMPLES = 4096


class ZeroMarginalError(ValueError):
    """The conditioning history has zero probability under the prior."""


@dataclass(frozen=True, eq=False)
class ChannelGrid:
    """Finite family of channels, ``channels[j, x, y] = W_j(y | x)``."""

    channels: np.ndarray

    def __post_init__(self):
        ch = np.array(self.channels, dtype=float)
        if ch.ndim != 3 or ch.shape[0] < 1 or ch.shape[1] < 1 or ch.shape[2] < 2:
            raise ValueError("channels must have shape (M, X, Y) with Y >= 2")
        if np.any(ch < 0) or np.any(ch > 1):
            raise ValueError("channel probabilities outside [0, 1]")
        if np.any(np.abs(ch.sum(axis=2) - 1.0) > _SUM_TOL):
            raise ValueError("every channel row must sum to 1")
        flat = ch.reshape(ch.shape[0], -1)
        if len({tuple(r) for r in flat}) != len(flat):
            raise ValueError("channels must be pairwise distinct")
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)

    def __len__(self) -> int:
        return self.channels.shape[0]

    @property
    def inputs(self) -> int:
        return self.channels.shape[1]

    @property
    def outputs(self) -> int:
        return self.channels.shape[2]

    def row_points(self, x: int) -> np.ndarray:
        return self.channels[:, x, :]


@dataclass(frozen=True, eq=False)
class FeatureDist:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).ravel()
        if p.size < 1 or np.any(p < 0) or abs(p.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"invalid feature distribution {self.probs!r}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, X: int) -> FeatureDist:
        return cls(np.full(X, 1.0 / X))

    def __len__(self) -> int:
        return self.probs.size


@dataclass(frozen=True, eq=False)
class ProductHypothesis:
    """Hypotheses whose channel rows vary independently, one set per input."""

    rows: tuple

    def __post_init__(self):
        rows = tuple(self.rows)
        for r in rows:
            if not isinstance(r, (Interval, SubGrid)):
                raise TypeError("hypothesis sets must be given per input symbol (a product set)")
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class SupStat:
    """Pair counts ``counts[x][y]`` of a supervised history."""

    counts: tuple
    n: int = field(init=False)

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=int)
        if c.ndim != 2 or np.any(c < 0):
            raise ValueError(f"invalid pair counts {self.counts!r}")
        object.__setattr__(self, "counts", tuple(tuple(int(v) for v in row) for row in c))
        object.__setattr__(self, "n", int(c.sum()))

    @property
    def row_totals(self) -> tuple[int, ...]:
        return tuple(sum(r) for r in self.counts)

    @classmethod
    def from_pairs(cls, xs: Sequence[int], ys: Sequence[int], X: int, Y: int) -> SupStat:
        c = np.zeros((X, Y), dtype=int)
        for x, y in zip(xs, ys):
            c[x, y] += 1
        return cls(c)


def make_bsc_grid(lo: float, hi: float, M: int) -> ChannelGrid:
    """Binary symmetric channels with crossover on an equally spaced grid."""
    p = make_uniform_grid(lo, hi, M).success
    ch = np.empty((p.size, 2, 2))
    ch[:, 0, 0] = ch[:, 1, 1] = 1.0 - p
    ch[:, 0, 1] = ch[:, 1, 0] = p
    return ChannelGrid(ch)


def bsc_hypothesis(a: float, b: float) -> ProductHypothesis:
    """Product set whose BSC members have crossover in [a, b].

    The KL projection of a BSC onto this product is again a BSC, so for BSC
    sources the penalty equals that of the crossover interval itself.
    """
    return ProductHypothesis((Interval(a, b), Interval(1.0 - b, 1.0 - a)))


def make_product_grid(row_grids: Sequence[ParamGrid]) -> ChannelGrid:
    """All channels whose row x is drawn from ``row_grids[x]``.

    Ordered lexicographically with the last input varying fastest.
    """
    if not row_grids:
        raise ValueError("need at least one row grid")
    Y = row_grids[0].alphabet_size
    if any(g.alphabet_size != Y for g in row_grids):
        raise ValueError("row grids must share the output alphabet")
    idx = itertools.product(*(range(len(g)) for g in row_grids))
    ch = np.array([[g.points[i] for g, i in zip(row_grids, combo)] for combo in idx])
    return ChannelGrid(ch)


def product_prior(row_priors: Sequence[Prior]) -> Prior:
    """Product of per-row priors, ordered like make_product_grid."""
    w = np.ones(1)
    for p in row_priors:
        w = np.outer(w, p.weights).ravel()
    return Prior.normalized(w)


def _check_alignment(grid: ChannelGrid, px: FeatureDist, theta: ProductHypothesis | None = None) -> None:
    if len(px) != grid.inputs:
        raise ValueError("feature distribution does not match the channel input alphabet")
    if theta is not None:
        if len(theta) != grid.inputs:
            raise ValueError("need one hypothesis set per input symbol")
        for r in theta.rows:
            if isinstance(r, Interval) and grid.outputs != 2:
                raise ValueError("interval hypothesis sets need binary labels")
            if isinstance(r, SubGrid) and r.grid.alphabet_size != grid.outputs:
                raise ValueError("hypothesis subgrid has a different label alphabet")


def sup_predictive(grid: ChannelGrid, prior: Prior, stat: SupStat, x_N: int) -> np.ndarray:
    """Mixture prediction of y_N given the history counts and the new input."""
    if len(prior) != len(grid):
        raise ValueError("prior not aligned with grid")
    counts = np.asarray(stat.counts)
    if counts.shape != (grid.inputs, grid.outputs):
        raise ValueError("pair counts do not match the channel alphabets")
    if not 0 <= x_N < grid.inputs:
        raise ValueError(f"x_N must lie in [0, {grid.inputs})")
    # composition factors cancel; only the channel likelihood matters
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ch = np.log(grid.channels)
        ll = np.where(counts[None] > 0, counts[None] * log_ch, 0.0).sum(axis=(1, 2))
        lw = np.log(prior.weights) + ll
    log_den = logsumexp(lw)
    if not np.isfinite(log_den):
        raise ZeroMarginalError("history has zero marginal under the prior")
    post = np.exp(lw - log_den)
    q = post @ grid.channels[:, x_N, :]
    return q / q.sum()


def sup_div_to_set(phi: np.ndarray, theta: ProductHypothesis, px: FeatureDist) -> float:
    """sum_x P(x) inf_{theta_x} KL(W_phi(. | x) || theta_x)."""
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2 or phi.shape[0] != len(px) or len(theta) != len(px):
        raise ValueError("channel, hypothesis and feature alphabets disagree")
    return float(_penalty(phi[None], theta, px)[0])


def _penalty(channels: np.ndarray, theta: ProductHypothesis, px: FeatureDist) -> np.ndarray:
    out = np.zeros(channels.shape[0])
    for x, px_x in enumerate(px.probs):
        if px_x > 0:
            out += px_x * penalty_vector(channels[:, x, :], theta.rows[x])
    return out


def _compositions(X: int, n: int) -> np.ndarray:
    return count_classes(X, n) if X >= 2 else np.array([[n]])


def _block_classes(comp: np.ndarray, Y: int) -> np.ndarray:
    """All pair-count tables (flattened x-major) with row totals ``comp``."""
    per_row = [count_classes(Y, int(n)) for n in comp]
    tables = [np.concatenate(t) for t in itertools.product(*per_row)]
    return np.array(tables, dtype=int)


def _log_composition(comp: np.ndarray, px: np.ndarray) -> float:
    n = comp.sum()
    with np.errstate(divide="ignore"):
        lp = np.where(comp > 0, comp * np.log(px), 0.0).sum()
    return float(gammaln(n + 1) - gammaln(comp + 1).sum() + lp)


@dataclass(frozen=True)
class _Block:
    comp: np.ndarray
    weight: float


class SupObjective:
    """Supervised divergence profile as a function of the prior weights.

    Each block holds the count tables of one feature composition. On the
    exact path every composition appears with its multinomial probability;
    on the sampled path drawn compositions carry their empirical frequency.
    """

    def __init__(
        self,
        grid: ChannelGrid,
        theta: ProductHypothesis,
        px: FeatureDist,
        N: int,
        method: str = "auto",
        samples: int = DEFAULT_SAMPLES,
        seed: int = 0,
        threads: int | None = None,
    ):
        if N < 1:
            raise ValueError("N must be >= 1")
        _check_alignment(grid, px, theta)
        if method == "auto":
            method = "exact" if N <= EXACT_MAX_N else "sampled"
        if method not in ("exact", "sampled"):
            raise ValueError(f"unknown method {method!r}")
        if method == "exact" and N > EXACT_MAX_N:
            raise ValueError(f"exact supervised path supports N <= {EXACT_MAX_N}")
        self.grid = grid
        self.px = px
        self.N = N
        self.method = method
        self.threads = threads or os.cpu_count() or 1
        self.penalty = _penalty(grid.channels, theta, px)
        n = N - 1
        X = grid.inputs
        if method == "exact":
            comps = _compositions(X, n)
            comps = comps[np.all((px.probs[None, :] > 0) | (comps == 0), axis=1)]
            self.blocks = [_Block(c, float(np.exp(_log_composition(c, px.probs)))) for c in comps]
            self.samples = 0
        else:
            self.blocks = _sample_blocks(px.probs, n, samples, seed)
            self.samples = samples
        sizes = [self._block_size(b.comp) for b in self.blocks]
        self._cache: list[MixtureKernel] | None = None
        self._merged: MixtureKernel | None = None
        if len(grid) * sum(sizes) <= CACHE_LIMIT:
            self._cache = [self._kernel(b.comp) for b in self.blocks]
            # one kernel over all tables, each weighted by its block probability
            log_w = np.concatenate([k.log_w + np.log(b.weight) for k, b in zip(self._cache, self.blocks)], axis=1)
            self._merged = MixtureKernel(log_w, grid.channels)

    def _block_size(self, comp: np.ndarray) -> int:
        Y = self.grid.outputs
        return int(np.prod([len(count_classes(Y, int(c))) for c in comp]))

    def _kernel(self, comp: np.ndarray) -> MixtureKernel:
        """Label-count kernel for one composition, conditional on it."""
        X, Y = self.grid.inputs, self.grid.outputs
        classes = _block_classes(comp, Y)
        # the composition factor is shared by every class in the block and
        # is carried by the block weight instead
        log_w = np.zeros((len(self.grid), len(classes)))
        for x in range(X):
            cx = classes[:, x * Y : (x + 1) * Y]
            log_w += log_weight_matrix(self.grid.channels[:, x, :], cx)
        return MixtureKernel(log_w, self.grid.channels)

    def _block_divergence(self, i: int, weights: np.ndarray) -> np.ndarray:
        kern = self._cache[i] if self._cache is not None else self._kernel(self.blocks[i].comp)
        probs, flagged = kern.predictive(weights)
        return expected_kl(kern.w, kern.emit, kern.neg_entropy, probs, flagged, kern.w_rowsum, context=self.px.probs)

    def block_divergences(self, weights: np.ndarray) -> np.ndarray:
        """Per-block divergences, shape (blocks, M); summed in block order."""
        idx = range(len(self.blocks))
        if self.threads > 1 and len(self.blocks) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as ex:
                parts = list(ex.map(lambda i: self._block_divergence(i, weights), idx))
        else:
            parts = [self._block_divergence(i, weights) for i in idx]
        return np.array(parts)

    def to_predictor(self, weights: np.ndarray) -> np.ndarray:
        if self._merged is not None:
            k = self._merged
            probs, flagged = k.predictive(weights)
            return expected_kl(k.w, k.emit, k.neg_entropy, probs, flagged, k.w_rowsum, context=self.px.probs)
        parts = self.block_divergences(weights)
        D = np.zeros(len(self.grid))
        for b, part in zip(self.blocks, parts):
            D = D + b.weight * part
        return D

    def __call__(self, weights: np.ndarray) -> np.ndarray:
        D = self.to_predictor(weights)
        return np.minimum(D, SATURATED) - np.minimum(self.penalty, SATURATED)


def _sample_blocks(px: np.ndarray, n: int, samples: int, seed: int) -> list[_Block]:
    """Draw feature compositions; identical draws are merged into one block."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    streams = np.random.SeedSequence(seed).spawn(SAMPLE_STREAMS)
    per = np.full(SAMPLE_STREAMS, samples // SAMPLE_STREAMS)
    per[: samples % SAMPLE_STREAMS] += 1
    draws = [np.random.default_rng(s).multinomial(n, px, size=int(k)) for s, k in zip(streams, per) if k > 0]
    comps, counts = np.unique(np.concatenate(draws), axis=0, return_counts=True)
    return [_Block(c, k / samples) for c, k in zip(comps, counts)]


@dataclass(frozen=True)
class SupTerms:
    """Objective terms for one prior; ``stderr`` is zero on the exact path."""

    info: float
    penalty: float
    r_lower: float
    r_upper: float
    stderr: float = 0.0


def sup_regret_terms(
    grid: ChannelGrid,
    prior: Prior,
    theta: ProductHypothesis,
    px: FeatureDist,
    N: int,
    method: str = "auto",
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    threads: int | None = None,
) -> SupTerms:
    """(I(Y_N; Phi | X^N, Y^{N-1}), E penalty, R_L, R_U) under ``prior``."""
    if len(prior) != len(grid):
        raise ValueError("prior not aligned with grid")
    obj = SupObjective(grid, theta, px, N, method, samples, seed, threads)
    w = prior.weights
    support = w > 0
    D = obj.to_predictor(w)
    info = float(np.dot(w[support], D[support]))
    pen = float(np.dot(w[support], obj.penalty[support]))
    d = np.minimum(D, SATURATED) - np.minimum(obj.penalty, SATURATED)
    r_lower, r_upper = certificate(w, d)
    stderr = 0.0
    if obj.method == "sampled":
        # spread of the prior-averaged divergence across drawn compositions
        parts = obj.block_divergences(w)
        per_block = np.where(support[None, :], parts, 0.0) @ w
        freq = np.array([b.weight for b in obj.blocks])
        var = float(np.dot(freq, (per_block - info) ** 2))
        stderr = float(np.sqrt(var / obj.samples))
    return SupTerms(info, pen, _desaturate(r_lower), _desaturate(r_upper), stderr)


@dataclass
class SupervisedConfig:
    N: int
    grid: ChannelGrid
    theta: ProductHypothesis
    px: FeatureDist
    lam: float | None = None
    eps: float | None = None
    max_iters: int = DEFAULT_MAX_ITERS
    initial_prior: Prior | None = None
    method: str = "auto"
    samples: int = DEFAULT_SAMPLES
    seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.lam is None:
            self.lam = default_lambda(self.N)
        if self.eps is None:
            self.eps = default_epsilon(self.N)
        if not self.lam > 0 or not self.eps > 0:
            raise ValueError("lambda and epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.initial_prior is not None and len(self.initial_prior) != len(self.grid):
            raise ValueError("initial prior not aligned with grid")
        _check_alignment(self.grid, self.px, self.theta)


def sup_solve(config: SupervisedConfig, callback: Callable[[SolverState], None] | None = None) -> RegretReport:
    """The batch AB iteration applied to the supervised objective."""
    obj = SupObjective(config.grid, config.theta, config.px, config.N, config.method, config.samples, config.seed, config.threads)
    prior0 = config.initial_prior or Prior.uniform(len(config.grid))
    prior, r_lower, r_upper, iters, converged, history = iterate(
        obj, prior0, config.lam, config.eps, config.max_iters, callback
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
