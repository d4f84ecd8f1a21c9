"""Reference values by exhaustive enumeration of every sequence.

Nothing here uses count classes or log-domain arithmetic: sequence
probabilities are plain products and every expectation is a literal sum over
all outcomes. This keeps the oracle structurally independent of the fast
paths it checks, at the price of exponential cost.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .family import HypothesisSet, Interval, ParamGrid, PointLike, SubGrid, as_probs
from .predictor import Prior


@dataclass(frozen=True)
class OracleLimit:
    """Largest enumerated sequence length, in binary-equivalent symbols."""

    unsupervised: int = 14
    supervised: int = 6


LIMIT = OracleLimit()


class OracleLimitError(ValueError):
    """The requested enumeration exceeds the hard size limit."""


def _sequences(A: int, length: int, limit: int) -> np.ndarray:
    if length < 0:
        raise ValueError("sequence length must be nonnegative")
    if A**length > 2**limit:
        raise OracleLimitError(f"{A}^{length} sequences exceed the oracle limit of 2^{limit}")
    return np.array(list(itertools.product(range(A), repeat=length)), dtype=int).reshape(-1, length)


def _seq_probs(points: np.ndarray, seqs: np.ndarray) -> np.ndarray:
    """P_j(sequence) as a plain product, shape (M, #sequences)."""
    out = np.ones((points.shape[0], seqs.shape[0]))
    for t in range(seqs.shape[1]):
        out *= points[:, seqs[:, t]]
    return out


def _xlog_ratio(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """sum p log(a / b) over p > 0; inf if some b is 0 where p > 0."""
    total = 0.0
    for pi, ai, bi in zip(p.ravel(), a.ravel(), b.ravel()):
        if pi == 0:
            continue
        if bi == 0:
            return math.inf
        total += pi * math.log(ai / bi)
    return total


def _cond_divs(points: np.ndarray, grid: ParamGrid, prior: Prior, N: int, L: int) -> np.ndarray:
    """sum_{y} P(y) log(P(future | past) / Q(future | past)) for each source row."""
    if N < 1 or L < 1:
        raise ValueError("need N >= 1 and L >= 1")
    A = grid.alphabet_size
    n = N - 1
    seqs = _sequences(A, n + L, LIMIT.unsupervised)
    pi = prior.weights
    mix_full = pi @ _seq_probs(grid.points, seqs)
    mix_past = pi @ _seq_probs(grid.points, seqs[:, :n])
    out = np.empty(points.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(mix_past > 0, mix_full / mix_past, 0.0)
    for j, p in enumerate(points):
        full = _seq_probs(p[None, :], seqs)[0]
        future = _seq_probs(p[None, :], seqs[:, n:])[0]
        # histories the mixture cannot produce leave Q undefined; skip them
        out[j] = max(_xlog_ratio(np.where(mix_past > 0, full, 0.0), future, q), 0.0)
    return out


def enum_cond_div(phi: PointLike, grid: ParamGrid, prior: Prior, N: int, L: int = 1) -> float:
    """Conditional divergence of y_N..y_{N+L-1} given y^{N-1}, by enumeration."""
    return float(_cond_divs(as_probs(phi)[None, :], grid, prior, N, L)[0])


def _kl_literal(p: np.ndarray, q: np.ndarray) -> float:
    return _xlog_ratio(p, p, q)


def enum_div_to_set(phi: PointLike, theta: HypothesisSet) -> float:
    """inf over the set of the one-symbol KL, by direct minimization."""
    p = as_probs(phi)
    if isinstance(theta, SubGrid):
        return min(_kl_literal(p, t) for t in theta.grid.points)
    if not isinstance(theta, Interval):
        raise TypeError(f"unsupported hypothesis set {theta!r}")

    def f(t: float) -> float:
        return _kl_literal(p, np.array([1.0 - t, t]))

    cands = [f(theta.a), f(theta.b)]
    if theta.a < theta.b:
        res = minimize_scalar(f, bounds=(theta.a, theta.b), method="bounded", options={"xatol": 1e-13})
        cands.append(float(res.fun))
    return min(cands)


def enum_regret_terms(grid: ParamGrid, prior: Prior, theta: HypothesisSet, N: int, L: int = 1) -> tuple[float, float]:
    """(R_L, R_U) for ``prior`` with every divergence enumerated.

    For L > 1 the values are totals over the L predicted symbols.
    """
    D = _cond_divs(grid.points, grid, prior, N, L)
    pen = np.array([L * enum_div_to_set(p, theta) for p in grid.points])
    d = D - pen
    support = prior.weights > 0
    return float(np.dot(prior.weights[support], d[support])), float(d.max())


@dataclass(frozen=True)
class EnumSupervised:
    info: float
    penalty: float
    r_lower: float
    r_upper: float
    divergences: np.ndarray


def enum_supervised(grid, prior: Prior, theta, px, N: int) -> EnumSupervised:
    """Supervised objective terms by enumerating every (x^N, y^N)."""
    ch = grid.channels
    M, X, Y = ch.shape
    p_x = np.asarray(px.probs)
    if N < 1:
        raise ValueError("N must be >= 1")
    if (X * Y) ** N > 4**LIMIT.supervised:
        raise OracleLimitError(f"{X * Y}^{N} labelled sequences exceed the oracle limit")
    xs = _sequences(X, N, 2 * LIMIT.supervised)
    ys = _sequences(Y, N, 2 * LIMIT.supervised)
    # joint[j, a, b] = P_j(x^N = xs[a], y^N = ys[b]); past omits the last label
    joint = np.ones((M, len(xs), len(ys)))
    past = np.ones((M, len(xs), len(ys)))
    for t in range(N):
        f = p_x[xs[:, t]][None, :, None] * ch[:, xs[:, t][:, None], ys[:, t][None, :]]
        joint *= f
        past *= f if t < N - 1 else p_x[xs[:, t]][None, :, None]
    pi = prior.weights
    mix_joint = np.tensordot(pi, joint, axes=1)
    mix_past = np.tensordot(pi, past, axes=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(mix_past > 0, mix_joint / mix_past, 0.0)
    last = ch[:, xs[:, -1][:, None], ys[:, -1][None, :]]
    reach = mix_past > 0
    D = np.array([max(_xlog_ratio(np.where(reach, joint[j], 0.0), last[j], q), 0.0) for j in range(M)])
    pen = np.zeros(M)
    for j in range(M):
        for x in range(X):
            if p_x[x] > 0:
                pen[j] += p_x[x] * enum_div_to_set(ch[j, x], theta.rows[x])
    support = pi > 0
    d = D - pen
    info = float(np.dot(pi[support], D[support]))
    penalty = float(np.dot(pi[support], pen[support]))
    return EnumSupervised(info, penalty, float(np.dot(pi[support], d[support])), float(d.max()), D)
