"""Pure numpy implementations of the stencil and reduction kernels."""
import math

import numpy as np


def diff_axis(f, h, periodic):
    """Second-order first derivative along the middle axis of a (pre, m, post) array."""
    out = np.empty_like(f)
    c = 0.5 / h
    out[:, 1:-1] = (f[:, 2:] - f[:, :-2]) * c
    if periodic:
        out[:, 0] = (f[:, 1] - f[:, -1]) * c
        out[:, -1] = (f[:, 0] - f[:, -2]) * c
    else:
        out[:, 0] = (-3.0 * f[:, 0] + 4.0 * f[:, 1] - f[:, 2]) * c
        out[:, -1] = (3.0 * f[:, -1] - 4.0 * f[:, -2] + f[:, -3]) * c
    return out


def weighted_sum(values, weights):
    """Correctly rounded sum of ``values * weights`` (order independent)."""
    return math.fsum(np.multiply(values, weights).tolist())
