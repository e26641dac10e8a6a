"""Margin bounds for soft (simplex-valued) base classifiers.

Instead of bounding every class mean separately, each noisy sample is turned
into a single margin variable ``Z_i`` and one concentration bound is applied
to its mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import (
    Kind,
    MarginEstimate,
    Method,
    bonferroni_margin,
    check_alpha,
    cs_lower,
    empirical_bernstein_lower,
    top_two,
)
from .special import DEFAULT_TAYLOR_ORDER, gaussian_quantile_taylor, taylor_quantile_max

_DIRECT_METHOD = {"eb": Method.CONT_DIRECT_EB, "cs": Method.CONT_DIRECT_CS}


@dataclass(frozen=True)
class MarginSampleStream:
    z: np.ndarray
    kind: Kind
    lo: float
    hi: float
    predicted: int


@dataclass(frozen=True)
class FallbackSignal:
    """Returned when the Taylor-based second margin does not apply."""

    predicted: int
    predicted_mean: float
    reason: str = "predicted-class mean below 1/2"


def _matrix(matrix) -> np.ndarray:
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("expected a non-empty n x m probability matrix")
    if x.shape[1] < 2:
        raise ValueError("need at least two classes")
    return x


def predicted_class(matrix) -> int:
    """Argmax of the column means, lowest index on ties."""
    return top_two(_matrix(matrix).mean(axis=0))[0]


def build_z_first(matrix, predicted: int | None = None) -> MarginSampleStream:
    """``Z_i = X_i^y - max_{j != y} X_i^j``, values in ``[-1, 1]``."""
    x = _matrix(matrix)
    y = predicted_class(x) if predicted is None else int(predicted)
    z = x[:, y] - np.delete(x, y, axis=1).max(axis=1)
    return MarginSampleStream(z, Kind.FIRST, -1.0, 1.0, y)


def build_z_second(
    matrix, predicted: int | None = None, order: int = DEFAULT_TAYLOR_ORDER
) -> MarginSampleStream | FallbackSignal:
    """``Z_i = Phi_M^{-1}(X_i^y) - max_{j != y} Phi_M^{-1}(X_i^j)``.

    Only used when the predicted-class sample mean is at least 1/2 (plug-in
    check); otherwise a :class:`FallbackSignal` is returned.  Since
    ``Phi_M^{-1}`` is increasing, the max over competitors is taken before
    the map.
    """
    x = _matrix(matrix)
    y = predicted_class(x) if predicted is None else int(predicted)
    mean_y = float(x[:, y].mean())
    if mean_y < 0.5:
        return FallbackSignal(y, mean_y)
    x = np.clip(x, 0.0, 1.0)
    competitor = np.delete(x, y, axis=1).max(axis=1)
    z = gaussian_quantile_taylor(x[:, y], order) - gaussian_quantile_taylor(competitor, order)
    top = taylor_quantile_max(order)
    return MarginSampleStream(np.atleast_1d(z), Kind.SECOND, -2.0 * top, 2.0 * top, y)


def continuous_margin_lcb(stream: MarginSampleStream, alpha: float, method: str = "eb") -> MarginEstimate:
    """``1 - alpha`` lower bound on ``E[Z]`` from one bound on the rescaled stream.

    ``Z`` is mapped to ``[0, 1]`` with the stream's declared range, bounded
    with the empirical Bernstein inequality (``"eb"``) or the running
    intersection of the confidence sequence (``"cs"``), and mapped back.
    """
    check_alpha(alpha)
    if method not in _DIRECT_METHOD:
        raise ValueError(f"unknown method {method!r}")
    width = stream.hi - stream.lo
    u = np.clip((np.asarray(stream.z, dtype=float) - stream.lo) / width, 0.0, 1.0)
    if method == "eb":
        lower_u = empirical_bernstein_lower(u, alpha)
    else:
        lower_u = cs_lower(u, alpha)
    value = stream.lo + width * max(0.0, lower_u)
    return MarginEstimate(
        float(value),
        stream.kind,
        alpha,
        _DIRECT_METHOD[method],
        meta={"predicted": stream.predicted, "mean_z": float(np.mean(stream.z))},
    )


def continuous_margin(
    matrix,
    alpha: float,
    kind: Kind = Kind.FIRST,
    method: str = "eb",
    order: int = DEFAULT_TAYLOR_ORDER,
    predicted: int | None = None,
) -> MarginEstimate:
    """Direct margin bound for a probability matrix, with the Bonferroni fallback."""
    kind = Kind(kind)
    if kind is Kind.FIRST:
        return continuous_margin_lcb(build_z_first(matrix, predicted), alpha, method)
    stream = build_z_second(matrix, predicted, order)
    if isinstance(stream, FallbackSignal):
        bonf = bonferroni_margin(matrix, alpha, Kind.SECOND, method, predicted=stream.predicted)
        meta = dict(bonf.meta, fallback="bonferroni", predicted_mean=stream.predicted_mean)
        return MarginEstimate(
            bonf.value, Kind.SECOND, alpha, _DIRECT_METHOD[method], clipped=bonf.clipped, meta=meta
        )
    est = continuous_margin_lcb(stream, alpha, method)
    est.meta["mean_check"] = "plug-in"
    return est
