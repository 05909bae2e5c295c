"""Standard-normal helpers shared across the package.

The inverse CDF is delegated to ``scipy.special.ndtri`` (Wichura's AS 241
algorithm), which is accurate to full double precision -- far inside the
1e-9 absolute accuracy every quantile computation here requires.
"""

import numpy as np
from scipy import special

__all__ = ["normal_quantile", "normal_cdf"]


def normal_quantile(a):
    """a-quantile of the standard normal distribution, q_a = Phi^{-1}(a).

    Accepts scalars or arrays; a must lie strictly inside (0, 1).
    """
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0.0) or np.any(a >= 1.0):
        raise ValueError("quantile level must lie strictly inside (0, 1)")
    q = special.ndtri(a)
    return float(q) if q.ndim == 0 else q


def normal_cdf(x):
    """Standard normal CDF Phi(x), vectorized."""
    x = np.asarray(x, dtype=float)
    p = special.ndtr(x)
    return float(p) if p.ndim == 0 else p
