"""Confidence bounds on Bernoulli and bounded means.

Clopper-Pearson intervals for counts, the empirical Bernstein bound for
bounded samples, a predictable plug-in empirical-Bernstein confidence
sequence, and the Bonferroni margin estimator that combines per-class bounds.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .special import beta_inv_cdf, gaussian_quantile

P_MIN = 1e-9


class Kind(str, enum.Enum):
    FIRST = "FIRST"
    SECOND = "SECOND"


class Method(str, enum.Enum):
    CP_BONFERRONI = "CP_BONFERRONI"
    EB_BONFERRONI = "EB_BONFERRONI"
    CS_BONFERRONI = "CS_BONFERRONI"
    DISCRETE_JOINT = "DISCRETE_JOINT"
    CONT_DIRECT_EB = "CONT_DIRECT_EB"
    CONT_DIRECT_CS = "CONT_DIRECT_CS"


@dataclass(frozen=True)
class MarginEstimate:
    """Lower confidence bound on a first or second margin at level ``1 - alpha``."""

    value: float
    kind: Kind
    alpha: float
    method: Method
    clipped: bool = False
    meta: dict = field(default_factory=dict, compare=False)


class InsufficientSamples(ValueError):
    pass


def check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    return float(alpha)


def _check_counts(successes: int, trials: int) -> None:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if successes < 0 or successes > trials:
        raise ValueError(f"successes must lie in [0, {trials}], got {successes}")


# --------------------------------------------------------------------------
# Clopper-Pearson
# --------------------------------------------------------------------------


def clopper_pearson_lower(successes: int, trials: int, alpha: float) -> float:
    """One-sided ``1 - alpha`` lower bound ``BetaInv(alpha, k, n - k + 1)``."""
    _check_counts(successes, trials)
    check_alpha(alpha)
    if successes == 0:
        return 0.0
    return beta_inv_cdf(alpha, successes, trials - successes + 1)


def clopper_pearson_upper(successes: int, trials: int, alpha: float) -> float:
    """One-sided ``1 - alpha`` upper bound ``BetaInv(1 - alpha, k + 1, n - k)``."""
    _check_counts(successes, trials)
    check_alpha(alpha)
    if successes == trials:
        return 1.0
    return beta_inv_cdf(1.0 - alpha, successes + 1, trials - successes)


# --------------------------------------------------------------------------
# Empirical Bernstein
# --------------------------------------------------------------------------


def _eb_width(values: np.ndarray, delta: float, lo: float, hi: float) -> np.ndarray:
    n = values.shape[-1]
    if n < 2:
        raise InsufficientSamples("empirical Bernstein needs at least 2 samples")
    check_alpha(delta)
    if not lo < hi:
        raise ValueError("range must satisfy lo < hi")
    log_term = math.log(1.0 / delta)
    var = values.var(axis=-1, ddof=1)
    return np.sqrt(2.0 * var * log_term / n) + 7.0 * (hi - lo) * log_term / (3.0 * (n - 1))


def empirical_bernstein_upper(values, delta: float, lo: float = 0.0, hi: float = 1.0):
    """Upper ``1 - delta`` confidence bound on the mean of samples in ``[lo, hi]``.

    ``mean + sqrt(2 V ln(1/delta) / n) + 7 (hi - lo) ln(1/delta) / (3 (n - 1))``
    with ``V`` the unbiased sample variance.  Works along the last axis.
    """
    x = np.asarray(values, dtype=float)
    out = x.mean(axis=-1) + _eb_width(x, delta, lo, hi)
    return float(out) if out.ndim == 0 else out


def empirical_bernstein_lower(values, delta: float, lo: float = 0.0, hi: float = 1.0):
    """Lower bound obtained by reflecting the upper bound through ``x -> -x``."""
    x = np.asarray(values, dtype=float)
    out = x.mean(axis=-1) - _eb_width(x, delta, lo, hi)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Confidence sequence (predictable plug-in empirical Bernstein)
# --------------------------------------------------------------------------

LAMBDA_CAP = 0.5


def _psi_e(lam):
    return (-np.log1p(-lam) - lam) / 4.0


@dataclass(frozen=True)
class ConfidenceSequenceState:
    """Running state of a ``[0, 1]``-valued confidence sequence.

    ``alpha`` tunes the bets and the running intersection; build one with
    :meth:`start` and feed it through :func:`cs_observe`.
    """

    alpha: float
    t: int = 0
    sum_x: float = 0.0
    sum_sq_dev: float = 0.0
    mu_hat: float = 0.5
    sigma2_hat: float = 0.25
    sum_lx: float = 0.0
    sum_l: float = 0.0
    sum_slack: float = 0.0
    run_lower: float = 0.0
    run_upper: float = 1.0

    @classmethod
    def start(cls, alpha: float) -> ConfidenceSequenceState:
        return cls(alpha=check_alpha(alpha))


def _bet(alpha: float, sigma2_prev, t):
    return np.minimum(
        np.sqrt(2.0 * math.log(2.0 / alpha) / (sigma2_prev * t * np.log1p(t))), LAMBDA_CAP
    )


def cs_observe(state: ConfidenceSequenceState, x: float) -> ConfidenceSequenceState:
    """Return the state after observing ``x`` in ``[0, 1]``."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"confidence sequence observations must lie in [0, 1], got {x!r}")
    t = state.t + 1
    lam = float(_bet(state.alpha, state.sigma2_hat, t))
    v = 4.0 * (x - state.mu_hat) ** 2
    sum_x = state.sum_x + x
    mu = (0.5 + sum_x) / (t + 1)
    sum_sq = state.sum_sq_dev + (x - mu) ** 2
    new = replace(
        state,
        t=t,
        sum_x=sum_x,
        sum_sq_dev=sum_sq,
        mu_hat=mu,
        sigma2_hat=(0.25 + sum_sq) / (t + 1),
        sum_lx=state.sum_lx + lam * x,
        sum_l=state.sum_l + lam,
        sum_slack=state.sum_slack + v * float(_psi_e(lam)),
    )
    lo, hi = cs_interval(new)
    return replace(new, run_lower=max(state.run_lower, lo), run_upper=min(state.run_upper, hi))


def cs_interval(state: ConfidenceSequenceState, alpha: float | None = None) -> tuple[float, float]:
    """Interval at the current time, clipped to ``[0, 1]``.

    ``center = sum(l_i x_i) / sum(l_i)`` and
    ``radius = (log(2/alpha) + sum(v_i psi_e(l_i))) / sum(l_i)``.
    The running intersection for the state's own alpha is in
    ``state.run_lower`` / ``state.run_upper``.
    """
    if state.t == 0:
        raise ValueError("confidence sequence has no observations")
    a = state.alpha if alpha is None else check_alpha(alpha)
    center = state.sum_lx / state.sum_l
    radius = (math.log(2.0 / a) + state.sum_slack) / state.sum_l
    return max(0.0, center - radius), min(1.0, center + radius)


def cs_path(values, alpha: float, intersect: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised confidence sequence over the last axis.

    Returns ``(lower, upper)`` arrays with the same shape as ``values``; entry
    ``t-1`` is the interval after ``t`` observations.  With ``intersect`` the
    running intersection is returned.
    """
    check_alpha(alpha)
    x = np.asarray(values, dtype=float)
    if x.shape[-1] == 0:
        raise ValueError("confidence sequence has no observations")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("confidence sequence observations must lie in [0, 1]")
    t = np.arange(1, x.shape[-1] + 1, dtype=float)
    mu = (0.5 + np.cumsum(x, axis=-1)) / (t + 1)
    sigma2 = (0.25 + np.cumsum((x - mu) ** 2, axis=-1)) / (t + 1)
    ones = np.ones(x.shape[:-1] + (1,))
    mu_prev = np.concatenate([0.5 * ones, mu[..., :-1]], axis=-1)
    sigma2_prev = np.concatenate([0.25 * ones, sigma2[..., :-1]], axis=-1)
    lam = _bet(alpha, sigma2_prev, t)
    slack = np.cumsum(4.0 * (x - mu_prev) ** 2 * _psi_e(lam), axis=-1)
    sum_l = np.cumsum(lam, axis=-1)
    center = np.cumsum(lam * x, axis=-1) / sum_l
    radius = (math.log(2.0 / alpha) + slack) / sum_l
    lower = np.clip(center - radius, 0.0, 1.0)
    upper = np.clip(center + radius, 0.0, 1.0)
    if intersect:
        lower = np.maximum.accumulate(lower, axis=-1)
        upper = np.minimum.accumulate(upper, axis=-1)
    return lower, upper


def cs_lower(values, alpha: float):
    """Final running-intersection lower endpoint."""
    out = cs_path(values, alpha)[0][..., -1]
    return float(out) if out.ndim == 0 else out


def cs_upper(values, alpha: float):
    """Final running-intersection upper endpoint."""
    out = cs_path(values, alpha)[1][..., -1]
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Bonferroni margin
# --------------------------------------------------------------------------

_BONFERRONI_METHOD = {"cp": Method.CP_BONFERRONI, "eb": Method.EB_BONFERRONI, "cs": Method.CS_BONFERRONI}


def top_two(scores) -> tuple[int, int]:
    """Indices of the largest and second-largest entries (lowest index wins ties)."""
    s = np.asarray(scores, dtype=float)
    if s.size < 2:
        raise ValueError("need at least two classes")
    order = np.argsort(-s, kind="stable")
    return int(order[0]), int(order[1])


def _quantile_margin(lower_y: float, upper_j: float) -> tuple[float, bool]:
    ly = min(max(lower_y, P_MIN), 1.0 - P_MIN)
    uj = min(max(upper_j, P_MIN), 1.0 - P_MIN)
    clipped = ly != lower_y or uj != upper_j
    return gaussian_quantile(ly) - gaussian_quantile(uj), clipped


def bonferroni_margin(
    data,
    alpha: float,
    kind: Kind = Kind.FIRST,
    bound: str = "cp",
    predicted: int | None = None,
) -> MarginEstimate:
    """Margin lower bound from per-class bounds at level ``alpha / m`` each.

    ``data`` is a counts vector (``bound="cp"``) or an ``n x m`` probability
    matrix (``bound`` in ``{"eb", "cs"}``).  The predicted class gets a lower
    bound, every other class an upper bound, and the largest competing upper
    bound enters the margin.  For the second margin both bounds are mapped
    through ``Phi^{-1}`` after clipping to ``[P_MIN, 1 - P_MIN]``.
    """
    check_alpha(alpha)
    kind = Kind(kind)
    if bound not in _BONFERRONI_METHOD:
        raise ValueError(f"unknown bound provider {bound!r}")
    arr = np.asarray(data)
    if bound == "cp":
        counts = arr.astype(np.int64)
        if counts.ndim != 1:
            raise ValueError("Clopper-Pearson Bonferroni expects a counts vector")
        m = counts.size
        scores = counts
    else:
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError("expected a non-empty n x m probability matrix")
        m = arr.shape[1]
        scores = arr.mean(axis=0)
    if m < 2:
        raise ValueError("Bonferroni margin needs at least two classes")
    y = top_two(scores)[0] if predicted is None else int(predicted)
    a = alpha / m

    if bound == "cp":
        n = int(counts.sum())
        lower_y = clopper_pearson_lower(int(counts[y]), n, a)
        runner = max(int(counts[j]) for j in range(m) if j != y)
        upper_j = clopper_pearson_upper(runner, n, a)
    elif bound == "eb":
        lower_y = max(0.0, empirical_bernstein_lower(arr[:, y], a))
        others = np.delete(arr, y, axis=1).T
        upper_j = min(1.0, float(np.max(empirical_bernstein_upper(others, a))))
    else:
        lower_y = cs_lower(arr[:, y], a)
        others = np.delete(arr, y, axis=1).T
        upper_j = float(np.max(cs_upper(others, a)))

    if kind is Kind.FIRST:
        value, clipped = lower_y - upper_j, False
    else:
        value, clipped = _quantile_margin(lower_y, upper_j)
    return MarginEstimate(
        value=float(value),
        kind=kind,
        alpha=alpha,
        method=_BONFERRONI_METHOD[bound],
        clipped=clipped,
        meta={"predicted": y, "lower_y": float(lower_y), "upper_j": float(upper_j)},
    )
