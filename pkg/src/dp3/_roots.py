"""Branch conventions shared by every module."""
from __future__ import annotations

import numpy as np
from scipy.special import loggamma

__all__ = ["signed_root", "cbrt", "cbrt2", "log_gamma", "as_complex"]


def signed_root(z, num: int, den: int):
    """z**(num/den) with the real-signed convention on the left half plane.

    For Re z >= 0 the principal branch is used. For Re z < 0 we take
    (-1)**num * (-z)**(num/den), which is analytic across the negative real
    axis and gives z**(1/3) = -|z|**(1/3) for negative real z.
    """
    z = np.asarray(z, dtype=complex)
    p = num / den
    left = z.real < 0
    out = np.where(left, (-1.0) ** num * (-z) ** p, z ** p)
    return out[()] if out.ndim == 0 else out


def cbrt(z):
    return signed_root(z, 1, 3)


def cbrt2(z):
    """z**(2/3) taken as the square of the signed cube root."""
    c = cbrt(z)
    return c * c


def log_gamma(z):
    """Principal log-Gamma, continuous in z (no 2*pi*i wraparound)."""
    return loggamma(np.asarray(z, dtype=complex))[()]


def as_complex(v) -> complex:
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ValueError(f"expected [re, im] pair, got {v!r}")
        return complex(float(v[0]), float(v[1]))
    return complex(v)
