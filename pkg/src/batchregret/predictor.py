"""Mixture universal predictor over sufficient statistics, and add-beta analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .family import ParamGrid, SuffStat, count_classes, log_weight_matrix

# Column sums below this are recomputed in the log domain.
_UNDERFLOW = 1e-250
SINGULAR_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Prior:
    """Probability weights aligned with a ParamGrid."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if w.size == 0 or np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("prior weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"prior weights sum to {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, M: int) -> Prior:
        return cls(np.full(M, 1.0 / M))

    @classmethod
    def point_mass(cls, M: int, j: int) -> Prior:
        w = np.zeros(M)
        w[j] = 1.0
        return cls(w)

    @classmethod
    def normalized(cls, raw) -> Prior:
        raw = np.asarray(raw, dtype=float)
        return cls(raw / raw.sum())

    def __len__(self) -> int:
        return self.weights.size


@dataclass(frozen=True, eq=False)
class PredictiveTable:
    """Q(y | count class) for every history class of size n = N - 1.

    Rows listed in ``flagged`` have zero marginal under the prior; they hold
    a uniform placeholder and must not be queried.
    """

    n: int
    classes: np.ndarray
    probs: np.ndarray
    flagged: np.ndarray

    @property
    def N(self) -> int:
        return self.n + 1

    def q1(self, k: int) -> float:
        """Q(1 | k ones in the history), binary alphabet only."""
        if self.probs.shape[1] != 2:
            raise ValueError("q1 is defined for binary alphabets")
        if self.flagged[k]:
            raise ValueError(f"count class k={k} has zero marginal under the prior")
        return float(self.probs[k, 1])


@dataclass(frozen=True, eq=False)
class BetaCurve:
    p_emp: np.ndarray
    beta: np.ndarray
    singular: np.ndarray


def _safe_log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(x)


class MixtureKernel:
    """Class weights and emission rows for a fixed source grid.

    ``log_w[j, c]`` is the log-probability of history class c under source j
    and ``emit[j, x, y]`` the probability that source j emits y in context x
    (a single context for unsupervised data). The mixture predictive of a
    prior is Q(y | c, x) = sum_j pi_j w[j, c] emit[j, x, y] / sum_j pi_j w[j, c].
    """

    def __init__(self, log_w: np.ndarray, emit: np.ndarray):
        self.log_w = log_w
        self.emit = emit
        shift = log_w.max(axis=0)
        self.reachable = np.isfinite(shift)
        shift = np.where(self.reachable, shift, 0.0)
        self.scaled = np.exp(log_w - shift)
        self.w = np.exp(log_w)
        self.w_rowsum = self.w.sum(axis=1)
        self.log_emit = _safe_log(emit)
        with np.errstate(invalid="ignore"):
            # per-context negative entropy, shape (M, X)
            self.neg_entropy = np.where(emit > 0, emit * self.log_emit, 0.0).sum(axis=2)

    def predictive(self, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mixture predictive of shape (C, X, Y) and the zero-marginal flags."""
        M, X, Y = self.emit.shape
        num = ((weights[:, None] * self.emit.reshape(M, X * Y)).T @ self.scaled).T.reshape(-1, X, Y)
        # emission rows sum to one, so any context's row sum is the mixture weight
        den = num.sum(axis=2)
        small = den.min(axis=1) < _UNDERFLOW
        flagged = np.zeros(den.shape[0], dtype=bool)
        with np.errstate(invalid="ignore", divide="ignore"):
            probs = num / den[:, :, None]
        if np.any(small):
            cols = np.flatnonzero(small)
            lw = _safe_log(weights)[:, None] + self.log_w[:, cols]
            log_den = logsumexp(lw, axis=0)
            bad = ~np.isfinite(log_den)
            flagged[cols[bad]] = True
            ok = cols[~bad]
            if ok.size:
                lw_ok = lw[:, ~bad]
                for x in range(X):
                    for y in range(Y):
                        probs[ok, x, y] = np.exp(logsumexp(lw_ok + self.log_emit[:, x, y, None], axis=0) - log_den[~bad])
                probs[ok] /= probs[ok].sum(axis=2, keepdims=True)
            probs[flagged] = 1.0 / Y
        return probs, flagged


class CountKernel(MixtureKernel):
    """Multinomial count-class weights of histories of length n."""

    def __init__(self, points: np.ndarray, n: int):
        if n < 0:
            raise ValueError("history length must be nonnegative")
        points = np.atleast_2d(np.asarray(points, dtype=float))
        self.points = points
        self.n = n
        self.classes = count_classes(points.shape[1], n)
        super().__init__(log_weight_matrix(points, self.classes), points[:, None, :])

    def predictive(self, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        probs, flagged = super().predictive(weights)
        return probs[:, 0, :], flagged


def predictive_from_prior(grid: ParamGrid, prior: Prior, N: int, kernel: CountKernel | None = None) -> PredictiveTable:
    """Mixture predictive for the N-th symbol given every history class of size N - 1."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if len(prior) != len(grid):
        raise ValueError("prior not aligned with grid")
    if kernel is None:
        kernel = CountKernel(grid.points, N - 1)
    probs, flagged = kernel.predictive(prior.weights)
    return PredictiveTable(N - 1, kernel.classes, probs, flagged)


def seq_log_marginal(grid: ParamGrid, prior: Prior, stat: SuffStat) -> float:
    """log sum_j pi_j P_{phi_j}(count class); the mixture weight of the class."""
    if len(prior) != len(grid):
        raise ValueError("prior not aligned with grid")
    lw = log_weight_matrix(grid.points, np.array([stat.counts]))[:, 0]
    return float(logsumexp(_safe_log(prior.weights) + lw))


def add_beta(table: PredictiveTable, k: int) -> tuple[float, bool]:
    """Invert Q(1|k) = (k + beta) / (n + 2 beta) for beta.

    Returns ``(nan, True)`` when Q(1|k) is within 1e-9 of one half, where the
    inversion is undefined.
    """
    if table.probs.shape[1] != 2:
        raise ValueError("add-beta requires a binary alphabet")
    n = table.n
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, {n}]")
    q = table.q1(k)
    den = 1.0 - 2.0 * q
    if abs(den) <= SINGULAR_TOL:
        return float("nan"), True
    p_emp = k / n if n > 0 else 0.0
    return n * (q - p_emp) / den, False


def beta_curve(table: PredictiveTable) -> BetaCurve:
    """add_beta for every k; zero-marginal classes are marked singular."""
    if table.n < 1:
        raise ValueError("beta curve needs at least one training sample")
    ks = np.arange(table.n + 1)
    pairs = [(float("nan"), True) if table.flagged[k] else add_beta(table, int(k)) for k in ks]
    return BetaCurve(
        p_emp=ks / table.n,
        beta=np.array([b for b, _ in pairs]),
        singular=np.array([s for _, s in pairs]),
    )
