"""Parametric i.i.d. families on finite alphabets and their discretizations.

A data-generating family is represented by a finite grid of probability
vectors. Bernoulli sources are stored as the two-symbol vector
``(1 - phi, phi)`` so symbol 1 is the "success" outcome and a binary count
vector reads ``(#zeros, #ones)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import gammaln

MAX_ALPHABET = 4
_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Alphabet:
    size: int

    def __post_init__(self):
        if not 2 <= self.size <= MAX_ALPHABET:
            raise ValueError(f"alphabet size must be in [2, {MAX_ALPHABET}], got {self.size}")


@dataclass(frozen=True)
class ParamPoint:
    """A single i.i.d. source: one probability per alphabet symbol."""

    probs: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or not 2 <= p.size <= MAX_ALPHABET:
            raise ValueError(f"bad probability vector {self.probs!r}")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError(f"probabilities outside [0, 1]: {self.probs!r}")
        if abs(p.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    @classmethod
    def bernoulli(cls, phi: float) -> ParamPoint:
        return cls((1.0 - phi, phi))

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(len(self.probs))

    def as_array(self) -> np.ndarray:
        return np.array(self.probs)


PointLike = Union[ParamPoint, float, "np.ndarray", tuple, list]


def as_probs(point: PointLike) -> np.ndarray:
    """Coerce a ParamPoint, a Bernoulli success probability or a vector."""
    if isinstance(point, ParamPoint):
        return point.as_array()
    if np.ndim(point) == 0:
        return np.array([1.0 - float(point), float(point)])
    return ParamPoint(tuple(point)).as_array()


@dataclass(frozen=True, eq=False)
class ParamGrid:
    """An ordered, finite set of sources standing in for the family Phi.

    ``points`` has shape (M, alphabet size). ``lo``/``hi`` describe the
    success-probability range for Bernoulli grids and are ``None`` otherwise.
    """

    points: np.ndarray
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1 or not 2 <= pts.shape[1] <= MAX_ALPHABET:
            raise ValueError(f"grid points must be (M, A) with 2 <= A <= {MAX_ALPHABET}")
        if np.any(pts < 0) or np.any(pts > 1):
            raise ValueError("grid probabilities outside [0, 1]")
        if np.any(np.abs(pts.sum(axis=1) - 1.0) > _SUM_TOL):
            raise ValueError("grid rows must sum to 1")
        if len({tuple(r) for r in pts}) != len(pts):
            raise ValueError("grid points must be pairwise distinct")
        if pts.shape[1] == 2:
            succ = pts[:, 1]
            if np.any(np.diff(succ) <= 0):
                raise ValueError("Bernoulli grid must be sorted ascending")
            if self.lo is not None and (succ[0] < self.lo - 1e-15 or succ[-1] > self.hi + 1e-15):
                raise ValueError("grid points outside the declared range")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_bernoulli(cls, phis, lo: float | None = None, hi: float | None = None) -> ParamGrid:
        phis = np.asarray(phis, dtype=float).ravel()
        if lo is None:
            lo, hi = float(phis.min()), float(phis.max())
        return cls(np.column_stack([1.0 - phis, phis]), lo, hi)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def alphabet_size(self) -> int:
        return self.points.shape[1]

    @property
    def is_bernoulli(self) -> bool:
        return self.points.shape[1] == 2

    @property
    def success(self) -> np.ndarray:
        """Success probabilities (Bernoulli grids only)."""
        if not self.is_bernoulli:
            raise ValueError("success probabilities are defined for Bernoulli grids only")
        return self.points[:, 1]

    def point(self, j: int) -> ParamPoint:
        return ParamPoint(tuple(self.points[j]))


@dataclass(frozen=True)
class Interval:
    """Bernoulli hypothesis set {Ber(theta) : a <= theta <= b}."""

    a: float
    b: float

    def __post_init__(self):
        if not 0.0 <= self.a <= self.b <= 1.0:
            raise ValueError(f"invalid interval [{self.a}, {self.b}]")

    def contains(self, theta: float) -> bool:
        return self.a <= theta <= self.b


@dataclass(frozen=True, eq=False)
class SubGrid:
    """Hypothesis set given by a finite list of sources."""

    grid: ParamGrid


HypothesisSet = Union[Interval, SubGrid]


def check_hypothesis_within(theta: HypothesisSet, grid: ParamGrid) -> None:
    """Raise unless the hypothesis set lies inside the family's range."""
    if isinstance(theta, Interval):
        if not grid.is_bernoulli:
            raise ValueError("interval hypothesis sets require a Bernoulli family")
        lo = grid.lo if grid.lo is not None else grid.success[0]
        hi = grid.hi if grid.hi is not None else grid.success[-1]
        if theta.a < lo - 1e-12 or theta.b > hi + 1e-12:
            raise ValueError(f"Theta [{theta.a}, {theta.b}] not contained in Phi [{lo}, {hi}]")
    elif isinstance(theta, SubGrid):
        if theta.grid.alphabet_size != grid.alphabet_size:
            raise ValueError("hypothesis subgrid has a different alphabet")
        if grid.is_bernoulli and grid.lo is not None:
            s = theta.grid.success
            if s[0] < grid.lo - 1e-12 or s[-1] > grid.hi + 1e-12:
                raise ValueError("hypothesis subgrid not contained in Phi range")
    else:
        raise TypeError(f"unsupported hypothesis set {theta!r}")


@dataclass(frozen=True)
class SuffStat:
    """Symbol counts of an i.i.d. sample."""

    counts: tuple[int, ...]
    n: int = field(init=False)

    def __post_init__(self):
        c = tuple(int(x) for x in self.counts)
        if any(x < 0 for x in c) or len(c) < 2:
            raise ValueError(f"invalid counts {self.counts!r}")
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "n", sum(c))

    @classmethod
    def bernoulli(cls, k: int, n: int) -> SuffStat:
        """Binary statistic with k ones out of n trials."""
        return cls((n - k, k))


def make_uniform_grid(lo: float, hi: float, M: int) -> ParamGrid:
    """Equally spaced Bernoulli grid on [lo, hi] including both endpoints."""
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"invalid range [{lo}, {hi}]")
    if M < 1 or (lo < hi and M < 2):
        raise ValueError(f"need M >= 1 (M >= 2 for a proper range), got {M}")
    if lo == hi:
        if M != 1:
            raise ValueError("a degenerate range takes exactly one point")
        return ParamGrid.from_bernoulli([lo], lo, hi)
    phis = lo + (hi - lo) * np.arange(M) / (M - 1)
    phis[-1] = hi
    return ParamGrid.from_bernoulli(phis, lo, hi)


def make_simplex_grid(alphabet_size: int, resolution: int) -> ParamGrid:
    """Lattice {c / resolution : c a count vector summing to resolution}."""
    Alphabet(alphabet_size)
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    pts = count_classes(alphabet_size, resolution) / resolution
    if alphabet_size == 2:
        return ParamGrid.from_bernoulli(pts[:, 1], 0.0, 1.0)
    return ParamGrid(pts)


def default_grid_size(N: int) -> int:
    return 1001 if N <= 200 else 2001


def count_classes(alphabet_size: int, n: int) -> np.ndarray:
    """All count vectors of length ``alphabet_size`` summing to ``n``.

    Binary classes are ordered by the count of ones, ``(n - k, k)`` for
    k = 0..n; larger alphabets use lexicographic order of the trailing counts.
    """
    if alphabet_size == 2:
        k = np.arange(n + 1)
        return np.column_stack([n - k, k])
    rows = []
    for tail in itertools.product(range(n + 1), repeat=alphabet_size - 1):
        s = sum(tail)
        if s <= n:
            rows.append((n - s, *tail))
    return np.array(rows, dtype=int)


def _xlogy(x: np.ndarray, logy: np.ndarray) -> np.ndarray:
    # 0 * log 0 = 0
    with np.errstate(invalid="ignore"):
        return np.where(x > 0, x * logy, 0.0)


def log_weight_matrix(points: np.ndarray, classes: np.ndarray) -> np.ndarray:
    """log P(count class) for every (source, class) pair, shape (M, C)."""
    points = np.atleast_2d(points)
    n = classes.sum(axis=1)
    log_coef = gammaln(n + 1) - gammaln(classes + 1).sum(axis=1)
    with np.errstate(divide="ignore"):
        logp = np.log(points)
    out = np.broadcast_to(log_coef, (points.shape[0], classes.shape[0])).copy()
    for y in range(points.shape[1]):
        out += _xlogy(classes[None, :, y].astype(float), logp[:, None, y])
    return out


def log_count_weight(phi: PointLike, stat: SuffStat) -> float:
    """Log-probability that an i.i.d. ``phi`` sample of size n has these counts."""
    p = as_probs(phi)
    if len(p) != len(stat.counts):
        raise ValueError("alphabet mismatch between source and statistic")
    return float(log_weight_matrix(p[None, :], np.array([stat.counts]))[0, 0])


def delta_epsilon(c: float, eps: float) -> float:
    """Half-width of the eps-shell around a Bernoulli interval endpoint c."""
    return math.sqrt(2.0 * c * (1.0 - c) * eps)


def epsilon_n(N: int, alpha: float) -> float:
    """Shell radius N^(alpha - 1) used for the upper capacity bound."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return float(N) ** (alpha - 1.0)


def theta_epsilon(theta: Interval, eps: float, phi_range: tuple[float, float] = (0.0, 1.0)) -> Interval:
    """Extend [a, b] by delta_eps at each end, clipped to the family's range."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    lo, hi = phi_range
    a = max(lo, theta.a - delta_epsilon(theta.a, eps))
    b = min(hi, theta.b + delta_epsilon(theta.b, eps))
    return Interval(a, b)
