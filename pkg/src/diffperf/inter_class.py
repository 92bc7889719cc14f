"""Weighted alpha-fair capacity allocation across service classes.

Each service class ``s`` holds ``n_s`` active flows and a weight ``w_s``.
The link capacity ``C`` is split so that the aggregate utility
``sum_s n_s * U(X_s / n_s)`` is maximal, where ``U`` is the weighted
alpha-fair utility.  The optimum has the closed form

    X_s = C * n_s * w_s**(1/alpha) / sum_t n_t * w_t**(1/alpha)

which :func:`allocate_closed_form` evaluates.  :func:`allocate_numeric_oracle`
reaches the same point by constrained Newton ascent on the objective and
exists only to cross-check the closed form; :func:`verify_kkt` checks the
optimality conditions of any candidate allocation.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import ALPHA_MIN, check_alpha, check_positive
from .exceptions import ConfigurationError, DomainError, NumericError, ParameterError

__all__ = [
    "ALPHA_MIN",
    "ServiceClassSpec",
    "InterClassInput",
    "InterClassAllocation",
    "utility",
    "marginal_utility",
    "allocate_closed_form",
    "allocate_numeric_oracle",
    "per_flow_ratio",
    "verify_kkt",
    "AlphaFairAllocator",
]

_LOG_BRANCH = 1e-12


@dataclass(frozen=True)
class ServiceClassSpec:
    class_id: str
    weight: float

    def __post_init__(self):
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise ParameterError(
                f"class {self.class_id!r}: weight must be positive, got {self.weight}")


@dataclass(frozen=True)
class InterClassInput:
    """Snapshot fed to the inter-class optimizer.

    ``classes`` is a tuple of ``(ServiceClassSpec, n_s)`` pairs; capacity is
    in bits/second.
    """

    classes: tuple
    capacity: float
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(
            (spec, int(n)) for spec, n in self.classes))
        ids = [spec.class_id for spec, _ in self.classes]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"duplicate class ids in {ids}")
        if any(n < 0 for _, n in self.classes):
            raise ConfigurationError("flow counts must be non-negative")
        check_positive(self.capacity, "capacity")
        check_alpha(self.alpha)
        if not any(n > 0 for _, n in self.classes):
            raise ConfigurationError("every service class is empty")

    @classmethod
    def from_weights(cls, weights, counts, capacity, alpha, class_ids=None):
        if len(weights) != len(counts):
            raise ConfigurationError("weights and counts differ in length")
        if class_ids is None:
            class_ids = [str(i) for i in range(len(weights))]
        specs = [ServiceClassSpec(cid, float(w)) for cid, w in zip(class_ids, weights)]
        return cls(tuple(zip(specs, counts)), float(capacity), float(alpha))

    @property
    def class_ids(self):
        return [spec.class_id for spec, _ in self.classes]

    def count(self, class_id):
        for spec, n in self.classes:
            if spec.class_id == class_id:
                return n
        raise KeyError(class_id)

    def weight(self, class_id):
        for spec, _ in self.classes:
            if spec.class_id == class_id:
                return spec.weight
        raise KeyError(class_id)


@dataclass(frozen=True)
class InterClassAllocation:
    shares: dict = field(default_factory=dict)

    def __getitem__(self, class_id):
        return self.shares[class_id]

    def total(self):
        return math.fsum(self.shares.values())


def utility(x, w, alpha):
    """Weighted alpha-fair utility of a per-flow rate ``x``."""
    alpha = check_alpha(alpha)
    if x <= 0:
        raise DomainError(f"utility is defined for x > 0, got {x}")
    if abs(alpha - 1.0) < _LOG_BRANCH:
        return w * math.log(x)
    return w * x ** (1.0 - alpha) / (1.0 - alpha)


def marginal_utility(x, w, alpha):
    """Derivative of :func:`utility` with respect to ``x``."""
    if x <= 0:
        raise DomainError(f"marginal utility is defined for x > 0, got {x}")
    return w * x ** (-alpha)


def _active(inp):
    ids, w, n = [], [], []
    for spec, count in inp.classes:
        if count > 0:
            ids.append(spec.class_id)
            w.append(spec.weight)
            n.append(count)
    return ids, np.asarray(w, dtype=float), np.asarray(n, dtype=float)


def _with_empty(inp, active_ids, values):
    shares = {cid: 0.0 for cid in inp.class_ids}
    shares.update(zip(active_ids, (float(v) for v in values)))
    return InterClassAllocation(shares)


def allocate_closed_form(inp):
    """Optimal class capacities, computed from the closed form.

    The alpha-roots are taken in log space so extreme weight/alpha
    combinations do not overflow.  Empty classes get exactly zero.
    """
    ids, w, n = _active(inp)
    log_terms = np.log(n) + np.log(w) / inp.alpha
    frac = np.exp(log_terms - logsumexp(log_terms))
    return _with_empty(inp, ids, inp.capacity * frac)


def _objective(x, w, n, alpha):
    per_flow = x / n
    if abs(alpha - 1.0) < _LOG_BRANCH:
        return math.fsum(n * w * np.log(per_flow))
    return math.fsum(n * w * per_flow ** (1.0 - alpha) / (1.0 - alpha))


def allocate_numeric_oracle(inp, tol=1e-12, max_iter=500):
    """Maximise the aggregate utility numerically.

    Equality-constrained Newton ascent on the unit simplex with a
    fraction-to-boundary rule and Armijo backtracking.  Only utility
    derivatives are used, never the closed-form root, so agreement with
    :func:`allocate_closed_form` is a genuine cross-check.  Iteration stops
    once the log marginal utilities of all classes agree to ``tol``.
    """
    tol = check_positive(tol, "tol")
    ids, w, n = _active(inp)
    alpha = inp.alpha
    if len(ids) == 1:
        return _with_empty(inp, ids, [inp.capacity])

    x = n / n.sum()
    for _ in range(max_iter):
        log_marg = np.log(w) - alpha * np.log(x / n)
        if log_marg.max() - log_marg.min() <= tol:
            return _with_empty(inp, ids, inp.capacity * x)
        # Newton direction restricted to sum(dx) = 0; the multiplier ratio
        # nu / g_s is evaluated in log space.
        ratio = np.exp(-log_marg - logsumexp(np.log(x) - log_marg))
        dx = x * (1.0 - ratio) / alpha
        dx -= dx.sum() * x
        step = 1.0
        shrinking = dx < 0
        if np.any(shrinking):
            step = min(1.0, 0.99 * float(np.min(x[shrinking] / -dx[shrinking])))
        if np.max(np.abs(dx) / x) > 1e-6:
            f0 = _objective(x, w, n, alpha)
            slope = float(np.dot(np.exp(log_marg), dx))
            while step > 1e-14:
                trial = x + step * dx
                if np.all(trial > 0) and _objective(trial, w, n, alpha) >= f0 + 1e-4 * step * slope:
                    break
                step *= 0.5
        x = x + step * dx
        x = np.clip(x, np.finfo(float).tiny, None)
        x /= x.sum()
    raise NumericError(f"Newton ascent did not converge in {max_iter} iterations")


def per_flow_ratio(alloc, inp, s, s2):
    """Ratio of the average per-flow capacities of classes ``s`` and ``s2``."""
    n1, n2 = inp.count(s), inp.count(s2)
    if n1 == 0 or n2 == 0:
        raise DomainError("per-flow ratio needs both classes to hold flows")
    return (alloc[s] / n1) / (alloc[s2] / n2)


def verify_kkt(inp, alloc, tol=1e-9):
    """Check capacity saturation and equal marginal utilities.

    Returns False for any violation, including a class that holds flows but
    received nothing (its marginal utility would be unbounded).
    """
    total = math.fsum(alloc.shares.get(cid, 0.0) for cid in inp.class_ids)
    if abs(total - inp.capacity) > tol * inp.capacity:
        return False
    log_marg = []
    for spec, count in inp.classes:
        x = alloc.shares.get(spec.class_id, 0.0)
        if count == 0:
            if x != 0:
                return False
            continue
        if x <= 0:
            return False
        log_marg.append(math.log(spec.weight) - inp.alpha * math.log(x / count))
    if len(log_marg) < 2:
        return True
    return math.expm1(max(log_marg) - min(log_marg)) <= tol


class AlphaFairAllocator(TransformerMixin, BaseEstimator):
    """Map per-class flow-count snapshots to class capacities.

    Stateless transformer: ``X`` has one row per snapshot and one column per
    service class (flow counts); ``transform`` returns the matching matrix
    of capacities in bits/second.

    Parameters
    ----------
    weights : sequence of float
        Class weights, one per column of ``X``.
    capacity : float
        Link capacity in bits/second.
    alpha : float, default=1.0
        Fairness parameter.
    """

    def __init__(self, weights=(1.0,), capacity=1.0, alpha=1.0):
        self.weights = weights
        self.capacity = capacity
        self.alpha = alpha

    def fit(self, X=None, y=None):
        self.weights_ = np.asarray(self.weights, dtype=float)
        if self.weights_.ndim != 1 or np.any(self.weights_ <= 0):
            raise ParameterError("weights must be a 1-D array of positive values")
        check_positive(self.capacity, "capacity")
        check_alpha(self.alpha)
        self.n_features_in_ = len(self.weights_)
        return self

    def transform(self, X):
        if not hasattr(self, "weights_"):
            self.fit()
        counts = np.atleast_2d(np.asarray(X, dtype=float))
        if counts.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} class columns, got {counts.shape[1]}")
        out = np.empty_like(counts)
        for i, row in enumerate(counts):
            inp = InterClassInput.from_weights(
                self.weights_, row.astype(int), self.capacity, self.alpha)
            alloc = allocate_closed_form(inp)
            out[i] = [alloc[cid] for cid in inp.class_ids]
        return out
