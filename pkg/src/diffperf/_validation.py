"""Small argument checks shared by the public functions and estimators."""
import math

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ParameterError

ALPHA_MIN = 1e-3


def check_alpha(alpha):
    alpha = float(alpha)
    if not math.isfinite(alpha) or alpha < ALPHA_MIN:
        raise ParameterError(f"alpha must be >= {ALPHA_MIN}, got {alpha}")
    return alpha


def check_gamma(gamma):
    gamma = float(gamma)
    if not 0.0 <= gamma <= 1.0:
        raise ParameterError(f"gamma must lie in [0, 1], got {gamma}")
    return gamma


def check_positive(value, name):
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise ParameterError(f"{name} must be a positive finite number, got {value}")
    return value


def check_throughputs(X):
    """Coerce per-flow throughputs to a 1-D float array.

    Accepts a flat sequence or an ``(n_flows, 1)`` column as sklearn
    transformers conventionally receive.
    """
    arr = check_array(X, ensure_2d=False, dtype=np.float64)
    if arr.ndim == 2:
        if arr.shape[1] != 1:
            raise ValueError(
                f"expected a single throughput column, got shape {arr.shape}")
        arr = arr[:, 0]
    if np.any(arr < 0):
        raise ValueError("throughputs must be non-negative")
    return arr
