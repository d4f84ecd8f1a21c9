"""Conditional KL divergences between i.i.d. sources, hypothesis sets and mixtures.

For i.i.d. sources the conditional divergence of the N-th symbol given the
history reduces to the single-symbol KL between sources, and the divergence to
a mixture predictor becomes a weighted sum over history count classes.
All values are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .family import HypothesisSet, Interval, ParamGrid, PointLike, SubGrid, as_probs, log_weight_matrix
from .predictor import CountKernel, PredictiveTable, Prior

# Stand-in for an infinite divergence inside solver arithmetic.
SATURATED = 1e12


def _kl_matrix(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """KL(P_i || Q_k) for all row pairs, shape (len(P), len(Q))."""
    P = np.atleast_2d(P)
    Q = np.atleast_2d(Q)
    with np.errstate(divide="ignore", invalid="ignore"):
        logP = np.log(P)
        logQ = np.log(Q)
        neg_h = np.where(P > 0, P * logP, 0.0).sum(axis=1)
        cross = np.zeros((P.shape[0], Q.shape[0]))
        for y in range(P.shape[1]):
            term = P[:, y, None] * logQ[None, :, y]
            cross += np.where(P[:, y, None] > 0, term, 0.0)
    out = neg_h[:, None] - cross
    return np.maximum(out, 0.0)


def _kl_rows(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """KL(P_j || Q_j) row by row."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * (np.log(P) - np.log(Q)), 0.0)
    return np.maximum(terms.sum(axis=1), 0.0)


def kl_single(phi: PointLike, theta: PointLike) -> float:
    """One-symbol KL(phi || theta); +inf if theta misses a symbol phi uses."""
    return float(_kl_matrix(as_probs(phi)[None, :], as_probs(theta)[None, :])[0, 0])


def project(phi: PointLike, theta: HypothesisSet) -> np.ndarray:
    """The member of ``theta`` closest to ``phi`` in KL.

    For an interval the Bernoulli KL is monotone in theta on either side of
    phi, so the minimizer is the clamp of phi onto [a, b].
    """
    p = as_probs(phi)
    if isinstance(theta, Interval):
        if p.size != 2:
            raise ValueError("interval hypothesis sets are Bernoulli only")
        t = min(max(p[1], theta.a), theta.b)
        return np.array([1.0 - t, t])
    kl = _kl_matrix(p[None, :], theta.grid.points)[0]
    return theta.grid.points[int(np.argmin(kl))]


def div_to_set(phi: PointLike, theta: HypothesisSet) -> float:
    """inf over theta in the set of KL(phi || theta)."""
    p = as_probs(phi)
    if isinstance(theta, Interval):
        return kl_single(p, project(p, theta))
    return float(_kl_matrix(p[None, :], theta.grid.points)[0].min())


def penalty_vector(points: np.ndarray, theta: HypothesisSet) -> np.ndarray:
    """div_to_set for every row of ``points``."""
    points = np.atleast_2d(points)
    if isinstance(theta, Interval):
        if points.shape[1] != 2:
            raise ValueError("interval hypothesis sets are Bernoulli only")
        t = np.clip(points[:, 1], theta.a, theta.b)
        return _kl_rows(points, np.column_stack([1.0 - t, t]))
    if isinstance(theta, SubGrid):
        return _kl_matrix(points, theta.grid.points).min(axis=1)
    raise TypeError(f"unsupported hypothesis set {theta!r}")


def expected_kl(
    w: np.ndarray,
    emit: np.ndarray,
    neg_entropy: np.ndarray,
    probs: np.ndarray,
    flagged: np.ndarray,
    row_sum: np.ndarray | None = None,
    context: np.ndarray | None = None,
) -> np.ndarray:
    """sum_c w[j, c] sum_x P(x) KL(emit[j, x] || probs[c, x]) over non-flagged c.

    ``emit`` is (M, X, Y) and ``probs`` (C, X, Y); two-dimensional inputs are
    read as a single context. ``context`` holds P(x) (default: one context).
    ``row_sum`` may carry the precomputed row sums of ``w``; it is ignored
    when some class is flagged.
    """
    if emit.ndim == 2:
        emit = emit[:, None, :]
        probs = probs[:, None, :]
        neg_entropy = neg_entropy.reshape(-1, 1)
    if context is None:
        context = np.ones(emit.shape[1])
    if flagged.any():
        wm = w * ~flagged
        row_sum = wm.sum(axis=1)
    else:
        wm = w
        if row_sum is None:
            row_sum = wm.sum(axis=1)
    zero = (probs == 0) & ~flagged[:, None, None]
    with np.errstate(divide="ignore"):
        logq = np.where(zero, -SATURATED, np.log(probs))
    cross = np.zeros(emit.shape[0])
    for x in range(emit.shape[1]):
        if context[x] == 0:
            continue
        for y in range(emit.shape[2]):
            # one matvec per symbol is faster than a thin matmul here
            t = wm @ np.ascontiguousarray(logq[:, x, y])
            with np.errstate(invalid="ignore"):
                cross += context[x] * np.where(emit[:, x, y] > 0, emit[:, x, y] * t, 0.0)
    D = (neg_entropy @ context) * row_sum - cross
    D = np.maximum(D, 0.0)
    if zero.any():
        hit = ((wm > 0).astype(float) @ zero.reshape(zero.shape[0], -1).astype(float)) > 0
        hit = hit.reshape(emit.shape) & (emit > 0) & (context[None, :, None] > 0)
        D[hit.any(axis=(1, 2))] = np.inf
    return D


def cond_div_to_predictor(phi: PointLike, table: PredictiveTable, N: int) -> float:
    """D_{c,N}(P_phi || Q): expected KL of the N-th symbol over phi's histories."""
    if table.n != N - 1:
        raise ValueError(f"table horizon {table.n} does not match N - 1 = {N - 1}")
    p = as_probs(phi)
    w = np.exp(log_weight_matrix(p[None, :], table.classes))
    with np.errstate(divide="ignore", invalid="ignore"):
        neg_h = np.where(p > 0, p * np.log(p), 0.0).sum(keepdims=True)
    return float(expected_kl(w, p[None, :], neg_h, table.probs, table.flagged)[0])


def _grid_divergences(grid: ParamGrid, table: PredictiveTable, kernel: CountKernel | None) -> np.ndarray:
    if kernel is None:
        kernel = CountKernel(grid.points, table.n)
    return expected_kl(kernel.w, kernel.emit, kernel.neg_entropy, table.probs[:, None, :], table.flagged, kernel.w_rowsum)


def mutual_info(grid: ParamGrid, prior: Prior, table: PredictiveTable, N: int, kernel: CountKernel | None = None) -> float:
    """I(Y_N; Phi | Y^{N-1}) = prior-average of the divergence to the mixture."""
    if table.n != N - 1:
        raise ValueError("table horizon does not match N")
    D = _grid_divergences(grid, table, kernel)
    w = prior.weights
    return float(np.dot(w[w > 0], D[w > 0]))


@dataclass(frozen=True, eq=False)
class DivergenceProfile:
    """Per-source objective d_j = D(P_j || Q_pi) - D(P_j || Theta), in nats."""

    to_predictor: np.ndarray
    to_set: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.to_predictor - self.to_set

    def saturated(self) -> np.ndarray:
        """d_j with infinities replaced by +-SATURATED."""
        return np.minimum(self.to_predictor, SATURATED) - np.minimum(self.to_set, SATURATED)


def divergence_profile(
    grid: ParamGrid,
    prior: Prior,
    theta: HypothesisSet,
    N: int,
    kernel: CountKernel | None = None,
    penalty: np.ndarray | None = None,
) -> DivergenceProfile:
    if len(prior) != len(grid):
        raise ValueError("prior not aligned with grid")
    if kernel is None:
        kernel = CountKernel(grid.points, N - 1)
    probs, flagged = kernel.predictive(prior.weights)
    table = PredictiveTable(N - 1, kernel.classes, probs, flagged)
    D = _grid_divergences(grid, table, kernel)
    if penalty is None:
        penalty = penalty_vector(grid.points, theta)
    return DivergenceProfile(D, penalty)
