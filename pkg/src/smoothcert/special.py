"""Special functions used by the estimators.

The error function, the standard normal CDF/quantile and the inverse
regularized incomplete Beta function are thin, validated wrappers around
``scipy.special``.  The truncated inverse-erf series (``erf_inv_coeffs`` and
``gaussian_quantile_taylor``) is computed here directly, because its
truncation is what makes the second-margin estimators conservative.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import special as sc

DEFAULT_TAYLOR_ORDER = 15

_SQRT2 = math.sqrt(2.0)
_HALF_SQRT_PI = math.sqrt(math.pi) / 2.0


def erf(x):
    """Error function, elementwise."""
    return sc.erf(x)


def gaussian_cdf(x):
    """Standard normal CDF, elementwise."""
    return sc.ndtr(x)


def _check_order(order: int) -> int:
    if isinstance(order, bool) or int(order) != order or order < 0:
        raise ValueError(f"Taylor order must be a non-negative integer, got {order!r}")
    return int(order)


@lru_cache(maxsize=None)
def _coeffs_exact(order: int) -> tuple[Fraction, ...]:
    c = [Fraction(1)]
    for k in range(1, order + 1):
        c.append(sum(c[m] * c[k - 1 - m] / ((m + 1) * (2 * m + 1)) for m in range(k)))
    return tuple(c)


def erf_inv_coeffs(order: int, exact: bool = False) -> list:
    """Coefficients ``c_0..c_M`` of the Maclaurin series of erf^{-1}.

    ``c_0 = 1`` and ``c_k = sum_{m<k} c_m c_{k-1-m} / ((m+1)(2m+1))``.
    With ``exact=True`` the coefficients are returned as ``Fraction``.
    """
    order = _check_order(order)
    c = _coeffs_exact(order)
    if exact:
        return list(c)
    return [float(v) for v in c]


@lru_cache(maxsize=None)
def _poly_coeffs(order: int) -> np.ndarray:
    # Phi^{-1}_M(p) = sum_k a_k x^(2k+1), x = 2p - 1
    c = erf_inv_coeffs(order)
    return np.array(
        [_SQRT2 * ck / (2 * k + 1) * _HALF_SQRT_PI ** (2 * k + 1) for k, ck in enumerate(c)]
    )


def taylor_quantile_poly(order: int = DEFAULT_TAYLOR_ORDER) -> np.ndarray:
    """Odd-power coefficients ``a_k`` with ``Phi^{-1}_M(p) = sum a_k (2p-1)^(2k+1)``."""
    return _poly_coeffs(_check_order(order)).copy()


def gaussian_quantile(p):
    """Standard normal quantile ``Phi^{-1}(p)`` for ``0 < p < 1``."""
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0.0)) or np.any(~(arr < 1.0)):
        raise ValueError("gaussian_quantile requires 0 < p < 1")
    out = sc.ndtri(arr)
    return float(out) if out.ndim == 0 else out


def gaussian_quantile_taylor(p, order: int = DEFAULT_TAYLOR_ORDER):
    """Order-``M`` truncated series surrogate of the Gaussian quantile.

    ``Phi^{-1}_M(p) = sqrt(2) sum_{k<=M} c_k/(2k+1) (sqrt(pi)/2 (2p-1))^(2k+1)``.

    It is a polynomial, so it is finite on the closed interval ``[0, 1]``.
    It under-estimates ``Phi^{-1}`` for ``p >= 1/2`` and over-estimates it for
    ``p <= 1/2``.
    """
    a = _poly_coeffs(_check_order(order))
    arr = np.asarray(p, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or np.any(np.isnan(arr)):
        raise ValueError("gaussian_quantile_taylor requires 0 <= p <= 1")
    x = 2.0 * arr - 1.0
    x2 = x * x
    acc = np.zeros_like(x)
    for ak in a[::-1]:
        acc = acc * x2 + ak
    out = acc * x
    return float(out) if out.ndim == 0 else out


def taylor_quantile_max(order: int = DEFAULT_TAYLOR_ORDER) -> float:
    """``Phi^{-1}_M(1)``; the surrogate's range is ``[-value, value]``."""
    return float(_poly_coeffs(_check_order(order)).sum())


def _poly_and_slope(x, a):
    x2 = x * x
    val = np.zeros_like(x)
    der = np.zeros_like(x)
    for k in range(a.size - 1, -1, -1):
        val = val * x2 + a[k]
        der = der * x2 + (2 * k + 1) * a[k]
    return val * x, der


def taylor_quantile_inverse(y, order: int = DEFAULT_TAYLOR_ORDER):
    """Inverse of ``Phi^{-1}_M`` on ``[0, 1]``, saturating outside its range.

    Values below ``Phi^{-1}_M(0)`` map to 0 and values above ``Phi^{-1}_M(1)``
    map to 1.  Solved in ``x = 2p - 1`` by Newton steps safeguarded with a
    bisection bracket (the polynomial is strictly increasing on ``[-1, 1]``).
    """
    a = _poly_coeffs(_check_order(order))
    arr = np.asarray(y, dtype=float)
    top = float(a.sum())
    target = np.clip(arr, -top, top)
    lo = -np.ones_like(target)
    hi = np.ones_like(target)
    x = np.clip(2.0 * sc.ndtr(target) - 1.0, -1.0, 1.0)
    for _ in range(100):
        g, dg = _poly_and_slope(x, a)
        r = g - target
        lo = np.where(r <= 0, np.maximum(lo, x), lo)
        hi = np.where(r >= 0, np.minimum(hi, x), hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - r / dg
        bad = ~((step > lo) & (step < hi))
        nxt = np.where(bad, 0.5 * (lo + hi), step)
        if np.all((np.abs(nxt - x) <= 4e-16) | (r == 0)):
            x = nxt
            break
        x = nxt
    out = np.clip(0.5 * (x + 1.0), 0.0, 1.0)
    out = np.where(arr >= top, 1.0, np.where(arr <= -top, 0.0, out))
    return float(out) if out.ndim == 0 else out


def beta_inv_cdf(target, a, b):
    """Quantile of the Beta(a, b) distribution: ``x`` with ``I_x(a, b) = target``."""
    t = np.asarray(target, dtype=float)
    if np.any(~(t > 0.0)) or np.any(~(t < 1.0)):
        raise ValueError("beta_inv_cdf requires 0 < target < 1")
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0):
        raise ValueError("beta_inv_cdf requires a > 0 and b > 0")
    out = sc.betaincinv(a, b, t)
    return float(out) if np.ndim(out) == 0 else out
