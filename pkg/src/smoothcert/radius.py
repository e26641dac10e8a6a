"""Certified radii and certified test-set accuracy curves."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .bounds import Kind, MarginEstimate, check_alpha, clopper_pearson_lower


class RadiusKind(str, enum.Enum):
    R1 = "R1"
    R2 = "R2"


@dataclass(frozen=True)
class CertifiedRadius:
    value: float
    kind: RadiusKind
    margin: float
    correct: bool


@dataclass(frozen=True)
class CTACurve:
    radii: np.ndarray
    approx_acc: np.ndarray
    lcb_acc: np.ndarray
    N: int
    alpha: float

    def rows(self):
        return zip(self.radii.tolist(), self.approx_acc.tolist(), self.lcb_acc.tolist())


def _margin_value(margin) -> float:
    return float(margin.value if isinstance(margin, MarginEstimate) else margin)


def radius_first(margin, lipschitz: float, correct: bool = True) -> CertifiedRadius:
    """``max(0, margin) / (sqrt(2) L)``, zero when misclassified."""
    if isinstance(margin, MarginEstimate) and margin.kind is not Kind.FIRST:
        raise ValueError("radius_first needs a first-margin estimate")
    if not lipschitz > 0:
        raise ValueError("Lipschitz constant must be positive")
    m = _margin_value(margin)
    value = max(0.0, m) / (math.sqrt(2.0) * lipschitz) if correct else 0.0
    return CertifiedRadius(value, RadiusKind.R1, m, bool(correct))


def radius_second(margin, sigma: float, correct: bool = True) -> CertifiedRadius:
    """``sigma / 2 * max(0, margin)`` for a margin in Gaussian-quantile space."""
    if isinstance(margin, MarginEstimate) and margin.kind is not Kind.SECOND:
        raise ValueError("radius_second needs a second-margin estimate")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    m = _margin_value(margin)
    value = 0.5 * sigma * max(0.0, m) if correct else 0.0
    return CertifiedRadius(value, RadiusKind.R2, m, bool(correct))


def cta_curve(records, grid, alpha: float = 0.05) -> CTACurve:
    """Fraction of correct inputs with radius strictly above each grid radius.

    ``records`` holds :class:`CertifiedRadius` objects or ``(radius, correct)``
    pairs.  ``lcb_acc`` is the one-sided Clopper-Pearson lower bound on each
    fraction.
    """
    check_alpha(alpha)
    pairs = [(r.value, r.correct) if isinstance(r, CertifiedRadius) else (float(r[0]), bool(r[1])) for r in records]
    if not pairs:
        raise ValueError("no records to aggregate")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("radius grid must be strictly increasing")
    radii = np.array([p[0] for p in pairs])
    correct = np.array([p[1] for p in pairs])
    N = len(pairs)
    hits = ((radii[None, :] > grid[:, None]) & correct[None, :]).sum(axis=1)
    approx = hits / N
    lcb = np.array([clopper_pearson_lower(int(k), N, alpha) for k in hits])
    return CTACurve(grid, approx, lcb, N, alpha)


def gain_table(baseline, ours) -> np.ndarray:
    """Percent gain ``100 (ours - baseline) / baseline`` per radius.

    ``inf`` where the baseline is zero and ours positive, 0 where both are
    zero.  Accepts curves (uses ``approx_acc``) or plain sequences.
    """
    if isinstance(baseline, CTACurve) and isinstance(ours, CTACurve):
        if baseline.radii.shape != ours.radii.shape or not np.allclose(baseline.radii, ours.radii):
            raise ValueError("curves are on different radius grids")
        b, o = baseline.approx_acc, ours.approx_acc
    else:
        b = np.asarray(baseline, dtype=float)
        o = np.asarray(ours, dtype=float)
        if b.shape != o.shape:
            raise ValueError("baseline and ours have different lengths")
    out = np.empty(b.shape)
    for i, (bi, oi) in enumerate(zip(b.flat, o.flat)):
        if bi == 0:
            out.flat[i] = math.inf if oi > 0 else (0.0 if oi == 0 else -math.inf)
        else:
            out.flat[i] = 100.0 * (oi - bi) / bi
    return out


def format_gain(g: float) -> str:
    return "inf" if math.isinf(g) and g > 0 else ("-inf" if math.isinf(g) else f"{g:.2f}%")
