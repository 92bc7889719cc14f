"""Split a service class into lower/upper sub-classes and size each one.

Flows are ranked by the standard score of their measured throughput.  Flows
whose score falls strictly below a threshold ``beta`` form the lower
sub-class; the rest form the upper one.  The lower sub-class receives, per
flow, a ``gamma``-blend of the mean throughput of the below-mean flows and
the class's equal share ``X_s / n_s``; the upper sub-class receives what is
left of ``X_s``.
"""
from dataclasses import dataclass
from fractions import Fraction
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_gamma, check_positive, check_throughputs
from .exceptions import DegenerateClassError, DomainError

__all__ = [
    "FlowThroughputSample",
    "ClassThroughputStats",
    "SubClassPartition",
    "IntraClassAllocation",
    "compute_stats",
    "z_scores",
    "partition",
    "below_mean_set",
    "allocate_subclasses",
    "ZScorePartitioner",
]


@dataclass(frozen=True)
class FlowThroughputSample:
    flow_id: object
    throughput: float

    def __post_init__(self):
        if not self.throughput >= 0:
            raise DomainError(
                f"flow {self.flow_id!r}: throughput must be >= 0, got {self.throughput}")


@dataclass(frozen=True)
class ClassThroughputStats:
    mean: float
    sigma: float
    count: int

    @property
    def degenerate(self):
        return self.count < 2 or self.sigma == 0.0


@dataclass(frozen=True)
class SubClassPartition:
    lower: frozenset
    upper: frozenset
    beta: float


@dataclass(frozen=True)
class IntraClassAllocation:
    capacity_lower: float
    capacity_upper: float
    per_flow_lower: float
    per_flow_upper: float
    split: bool = True

    @property
    def capacity(self):
        return self.capacity_lower + self.capacity_upper


def _as_samples(samples):
    out = []
    for s in samples:
        if isinstance(s, FlowThroughputSample):
            out.append(s)
        else:
            fid, x = s
            out.append(FlowThroughputSample(fid, float(x)))
    return out


def compute_stats(samples):
    """Mean and population standard deviation of the class throughputs."""
    samples = _as_samples(samples)
    if not samples:
        raise DomainError("cannot compute statistics of an empty class")
    xs = [s.throughput for s in samples]
    n = len(xs)
    if min(xs) == max(xs):
        return ClassThroughputStats(float(xs[0]), 0.0, n)
    mean = math.fsum(xs) / n
    sigma = math.sqrt(math.fsum((x - mean) ** 2 for x in xs) / n)
    return ClassThroughputStats(mean, sigma, n)


def z_scores(samples, stats):
    """Standard score of every flow; raises on a zero-spread class."""
    if stats.degenerate:
        raise DegenerateClassError("class throughputs have zero spread")
    return {s.flow_id: (s.throughput - stats.mean) / stats.sigma
            for s in _as_samples(samples)}


def _exact_below(samples, beta):
    """``z < beta`` decided in rational arithmetic, for scores near a tie."""
    xs = [Fraction(s.throughput) for s in samples]
    n = len(xs)
    mean = sum(xs) / n
    var = sum((x - mean) ** 2 for x in xs) / n
    b = Fraction(beta)

    def below(x):
        d = x - mean  # z < b  <=>  d < b * sigma
        if b <= 0:
            return d < 0 and d * d > b * b * var
        return d < 0 or d * d < b * b * var

    return below


def partition(samples, stats, beta):
    """Flows with ``z < beta`` go lower, all others (ties included) upper."""
    samples = _as_samples(samples)
    z = z_scores(samples, stats)
    beta = float(beta)
    lower = set()
    exact = None
    for s in samples:
        score = z[s.flow_id]
        if abs(score - beta) <= 1e-9 * max(1.0, abs(beta)):
            exact = exact or _exact_below(samples, beta)
            if exact(Fraction(s.throughput)):
                lower.add(s.flow_id)
        elif score < beta:
            lower.add(s.flow_id)
    lower = frozenset(lower)
    return SubClassPartition(lower, frozenset(z) - lower, beta)


def below_mean_set(samples, stats):
    return frozenset(s.flow_id for s in _as_samples(samples) if s.throughput < stats.mean)


def _exact_complement(total, part):
    # Pick floats a, b with a + b == total bit-for-bit.
    rest = total - part
    part = total - rest
    while part + rest != total:
        part = math.nextafter(part, -math.inf)
        rest = total - part
    return part, rest


def allocate_subclasses(part, samples, stats, class_capacity, gamma):
    """Sub-class capacities for one service class.

    Without a split (zero spread or an empty side) the whole class is one
    group carrying ``class_capacity``, reported as the upper side.
    """
    gamma = check_gamma(gamma)
    class_capacity = check_positive(class_capacity, "class_capacity")
    samples = _as_samples(samples)
    n = stats.count
    equal_share = class_capacity / n

    if stats.degenerate or not part.lower or not part.upper:
        return IntraClassAllocation(0.0, class_capacity, 0.0, equal_share, split=False)

    below = [s.throughput for s in samples if s.throughput < stats.mean]
    assert below, "positive spread implies at least one flow below the mean"
    below_mean = math.fsum(below) / len(below)

    n_low, n_up = len(part.lower), len(part.upper)
    per_low = gamma * below_mean + (1.0 - gamma) * equal_share
    cap_low = per_low * n_low
    clamped = not 0.0 <= cap_low <= class_capacity
    cap_low = min(max(cap_low, 0.0), class_capacity)
    cap_low, cap_up = _exact_complement(class_capacity, cap_low)

    if clamped:
        per_low, per_up = cap_low / n_low, cap_up / n_up
    else:
        # Same value as cap_up / n_up, written so that it moves monotonically
        # with the size of the lower set even under rounding.
        per_up = equal_share + gamma * (equal_share - below_mean) * (n_low / n_up)
    return IntraClassAllocation(cap_low, cap_up, per_low, per_up)


class ZScorePartitioner(TransformerMixin, BaseEstimator):
    """Estimator view of the lower/upper split for one service class.

    ``fit`` learns the class mean, spread and below-mean average from a
    vector of per-flow throughputs; ``transform`` returns z-scores and
    ``predict`` returns ``0`` for lower-sub-class flows and ``1`` for upper.

    Parameters
    ----------
    beta : float, default=-0.25
        z-score threshold separating the sub-classes.
    gamma : float, default=0.5
        Blend between achieved below-mean throughput (1) and the equal
        share (0) for the lower sub-class.
    """

    def __init__(self, beta=-0.25, gamma=0.5):
        self.beta = beta
        self.gamma = gamma

    def fit(self, X, y=None):
        check_gamma(self.gamma)
        x = check_throughputs(X)
        stats = compute_stats(list(enumerate(x)))
        self.mean_ = stats.mean
        self.sigma_ = stats.sigma
        self.n_flows_ = stats.count
        below = x[x < stats.mean]
        self.below_mean_ = float(below.mean()) if below.size else stats.mean
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "sigma_")
        if self.sigma_ == 0.0:
            raise DegenerateClassError("fitted class has zero spread")
        x = check_throughputs(X)
        return ((x - self.mean_) / self.sigma_).reshape(-1, 1)

    def predict(self, X):
        check_is_fitted(self, "sigma_")
        x = check_throughputs(X)
        if self.sigma_ == 0.0:
            return np.ones(x.shape[0], dtype=int)
        return np.where((x - self.mean_) / self.sigma_ < self.beta, 0, 1)

    def allocate(self, X, class_capacity):
        """Sub-class capacities for throughputs ``X`` under the fitted stats."""
        x = check_throughputs(X)
        samples = list(enumerate(x))
        stats = ClassThroughputStats(self.mean_, self.sigma_, self.n_flows_)
        if stats.degenerate:
            part = SubClassPartition(frozenset(), frozenset(range(len(x))), self.beta)
        else:
            part = partition(samples, stats, self.beta)
        return allocate_subclasses(part, samples, stats, class_capacity, self.gamma)
