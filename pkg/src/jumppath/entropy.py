"""The entropy function ``ent(s) = s log s - s + 1`` and its pair sums."""

import numpy as np
from scipy.special import xlogy


def ent(s):
    """``s log s - s + 1`` with ``ent(0) = 1`` and ``ent(inf) = inf``."""
    s = np.asarray(s, dtype=float)
    with np.errstate(invalid="ignore"):
        out = xlogy(s, s) - s + 1.0
    return np.where(np.isinf(s), np.inf, out)
