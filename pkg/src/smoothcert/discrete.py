"""Joint lower confidence bounds on margins from multinomial counts.

The multinomial counts are reduced to ``(X1, X2, X3)``: the predicted class,
the runner-up and everything else, with parameter ``q`` on the 2-simplex.
For a candidate bound ``L`` the subproblem is

    inf { Pi(theta | q) : q in simplex, g(q) <= L }

where ``Pi(theta | q)`` is the probability that the margin statistic falls
below the observed value ``theta`` and ``g(q) = q1 - q2`` (first margin) or
``Phi_M^{-1}(q1) - Phi_M^{-1}(q2)`` (second margin).  Bisection on ``L``
returns the largest ``L`` whose subproblem value is certified to be at least
``1 - alpha``.

Solver note: because the statistic is nondecreasing in ``X1`` and
nonincreasing in ``X2``, a coupling argument shows ``Pi`` is nonincreasing in
``q1`` and nondecreasing in ``q2`` (with ``q3`` absorbing the difference).
Every feasible point is therefore dominated by a point on the feasible
frontier ``q1 = q1max(q2)``, and on an interval ``[a, b]`` of ``q2`` the
value ``Pi(q1max(b), a)`` lower-bounds the frontier.  ``solve_signomial`` is
a branch and bound over that interval using these bounds.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special as sc

from .bounds import (
    Kind,
    MarginEstimate,
    Method,
    bonferroni_margin,
    check_alpha,
    clopper_pearson_lower,
    top_two,
)
from .special import (
    DEFAULT_TAYLOR_ORDER,
    gaussian_quantile_taylor,
    taylor_quantile_inverse,
)

# optimality gap target is 1e-4; the solver stops ten times tighter so its
# value stays within 1e-4 of brute-force references that carry their own error
SOLVER_TOL = 1e-5
DEFAULT_EPS = 1e-3
_TIE_TOL = 1e-12


class InfeasibleSubproblem(ValueError):
    pass


@dataclass(frozen=True)
class SignomialSubproblem:
    """One inner problem of the bisection.

    ``strict`` selects the event ``statistic < theta_tilde`` (the default used
    for certification) instead of ``statistic <= theta_tilde``.  ``start`` is
    an optional ``(q1, q2)`` warm start for the fast solver.
    """

    L: float
    theta_tilde: float
    n: int
    kind: Kind = Kind.FIRST
    alpha: float = 0.05
    taylor_order: int = DEFAULT_TAYLOR_ORDER
    strict: bool = True
    start: tuple[float, float] | None = None


@dataclass(frozen=True)
class SolverCertificate:
    """Result of a subproblem solve.

    With ``certified_lower`` the value is a proven lower bound on the
    infimum (and ``gap`` bounds its distance to the best feasible value).
    Otherwise the value is attained at the feasible point ``q``.
    """

    value: float
    certified_lower: bool
    evaluations: int
    q: tuple[float, float, float]
    gap: float = math.nan


# --------------------------------------------------------------------------
# Multinomial tail of the margin statistic
# --------------------------------------------------------------------------


def _check_simplex(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 3:
        raise ValueError("q must have three components")
    if np.any(q < -1e-12) or np.any(np.abs(q.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError(f"q is not on the 2-simplex: {q}")
    return np.clip(q, 0.0, 1.0)


@lru_cache(maxsize=64)
def _log_binom_row(n: int) -> np.ndarray:
    x = np.arange(n + 1)
    return sc.gammaln(n + 1) - sc.gammaln(x + 1) - sc.gammaln(n - x + 1)


def event_prob(thresholds: np.ndarray, n: int, q1, q2) -> np.ndarray:
    """``P(X2 >= thresholds[X1])`` for ``(X1, X2, X3) ~ Mult(n, (q1, q2, q3))``.

    Computed as ``sum_x1 Bin(x1; n, q1) P(Bin(n - x1, q2 / (1 - q1)) >= thr)``,
    vectorised over arrays of ``q1``, ``q2``.
    """
    q1 = np.atleast_1d(np.asarray(q1, dtype=float))[:, None]
    q2 = np.atleast_1d(np.asarray(q2, dtype=float))[:, None]
    x1 = np.arange(n + 1)
    rest = n - x1
    log_pmf = _log_binom_row(n) + sc.xlogy(x1, q1) + sc.xlog1py(rest, -q1)
    free = 1.0 - q1
    r = np.clip(np.divide(q2, free, out=np.zeros_like(q2), where=free > 0), 0.0, 1.0)
    thr = np.asarray(thresholds)
    inner = np.where(
        thr <= 0,
        1.0,
        np.where(thr > rest, 0.0, sc.bdtrc(np.maximum(thr - 1, 0), rest, r)),
    )
    return np.sum(np.exp(log_pmf) * inner, axis=1)


def _first_thresholds(k: int, n: int) -> np.ndarray:
    # x1 - x2 <= k  <=>  x2 >= x1 - k
    return np.arange(n + 1) - k


@lru_cache(maxsize=256)
def _taylor_grid(n: int, order: int) -> np.ndarray:
    return gaussian_quantile_taylor(np.arange(n + 1) / n, order)


def second_statistic(x1, x2, n: int, order: int = DEFAULT_TAYLOR_ORDER):
    """``Phi_M^{-1}(x1/n) - Phi_M^{-1}(x2/n)``."""
    vals = _taylor_grid(n, order)
    return vals[np.asarray(x1)] - vals[np.asarray(x2)]


def _second_thresholds(theta: float, n: int, order: int, strict: bool) -> np.ndarray:
    vals = _taylor_grid(n, order)
    tol = _TIE_TOL * max(1.0, abs(theta))
    target = vals - theta
    if strict:
        # vals[x1] - vals[x2] < theta  <=>  vals[x2] > vals[x1] - theta
        return np.searchsorted(vals, target + tol, side="right")
    return np.searchsorted(vals, target - tol, side="left")


def multinomial_margin_cdf_first(k: int, q, n: int) -> float:
    """Exact ``P(X1 - X2 <= k)`` under ``Mult(n, q)`` with ``q`` on the 2-simplex."""
    q = _check_simplex(q)
    if k < -n:
        return 0.0
    if k >= n:
        return 1.0
    return float(event_prob(_first_thresholds(int(k), n), n, q[0], q[1])[0])


def multinomial_margin_cdf_second(
    theta_tilde: float, q, n: int, order: int = DEFAULT_TAYLOR_ORDER, strict: bool = False
) -> float:
    """Exact ``P(Phi_M^{-1}(X1/n) - Phi_M^{-1}(X2/n) <= theta_tilde)`` (``<`` if strict)."""
    q = _check_simplex(q)
    thr = _second_thresholds(float(theta_tilde), n, order, strict)
    return float(event_prob(thr, n, q[0], q[1])[0])


def _thresholds(problem: SignomialSubproblem) -> np.ndarray:
    n = problem.n
    if problem.kind is Kind.FIRST:
        k = int(round(problem.theta_tilde * n))
        return _first_thresholds(k - 1 if problem.strict else k, n)
    return _second_thresholds(problem.theta_tilde, n, problem.taylor_order, problem.strict)


def subproblem_objective(problem: SignomialSubproblem, q) -> float:
    """``Pi(theta_tilde | q)`` for the event the subproblem uses."""
    q = _check_simplex(q)
    return float(event_prob(_thresholds(problem), problem.n, q[0], q[1])[0])


def constraint_value(problem: SignomialSubproblem, q1, q2):
    """``g(q)`` for the subproblem's margin kind."""
    if problem.kind is Kind.FIRST:
        return np.asarray(q1) - np.asarray(q2)
    o = problem.taylor_order
    return gaussian_quantile_taylor(q1, o) - gaussian_quantile_taylor(q2, o)


# --------------------------------------------------------------------------
# Feasible frontier
# --------------------------------------------------------------------------


@dataclass
class _Frontier:
    problem: SignomialSubproblem
    lo: float = field(init=False)
    hi: float = field(init=False)

    def __post_init__(self):
        p = self.problem
        L = float(p.L)
        if p.kind is Kind.FIRST:
            if L < -1.0:
                raise InfeasibleSubproblem(f"no q on the simplex has q1 - q2 <= {L}")
            self.lo = max(0.0, -L)
            self.hi = max(self.lo, (1.0 - L) / 2.0)
        else:
            # restricted to q1 >= 1/2, where the Taylor surrogate is conservative
            if L < 0.0:
                raise InfeasibleSubproblem("second-margin subproblem needs L >= 0 when q1 >= 1/2")
            self.lo = float(taylor_quantile_inverse(-L, p.taylor_order))
            self.hi = max(self.lo, float(taylor_quantile_inverse(-L / 2.0, p.taylor_order)))

    def q1max(self, q2):
        q2 = np.asarray(q2, dtype=float)
        p = self.problem
        if p.kind is Kind.FIRST:
            cap = p.L + q2
        else:
            o = p.taylor_order
            cap = taylor_quantile_inverse(p.L + gaussian_quantile_taylor(q2, o), o)
        return np.clip(np.minimum(cap, 1.0 - q2), 0.0, 1.0)

    def point(self, q2: float) -> tuple[float, float, float]:
        q1 = float(self.q1max(q2))
        return q1, float(q2), max(0.0, 1.0 - q1 - float(q2))


class _Evaluator:
    def __init__(self, problem: SignomialSubproblem):
        self.thr = _thresholds(problem)
        self.n = problem.n
        self.count = 0

    def __call__(self, q1, q2) -> np.ndarray:
        q1 = np.atleast_1d(np.asarray(q1, dtype=float))
        self.count += q1.size
        return event_prob(self.thr, self.n, q1, q2)


# --------------------------------------------------------------------------
# Solvers
# --------------------------------------------------------------------------


def solve_signomial(
    problem: SignomialSubproblem, tol: float = SOLVER_TOL, max_evals: int = 200_000
) -> SolverCertificate:
    """Certified global lower bound on the subproblem infimum.

    Branch and bound over ``q2`` along the feasible frontier; stops when the
    best feasible value exceeds the smallest open lower bound by at most
    ``tol``.  The returned value is a lower bound on the infimum even if
    ``max_evals`` is hit first (``gap`` then exceeds ``tol``).
    """
    fr = _Frontier(problem)
    ev = _Evaluator(problem)
    a, b = fr.lo, fr.hi
    if b - a <= 1e-15:
        q = fr.point(a)
        v = float(ev(q[0], q[1])[0])
        return SolverCertificate(v, True, ev.count, q, 0.0)

    ends = ev(fr.q1max(np.array([a, b])), np.array([a, b]))
    best_val, best_q2 = (float(ends[0]), a) if ends[0] <= ends[1] else (float(ends[1]), b)
    root_lb = float(ev(fr.q1max(b), a)[0])
    heap = [(root_lb, a, b)]
    floor = math.inf  # smallest lower bound among pruned intervals

    while heap and ev.count < max_evals:
        lb, a, b = heap[0]
        if best_val - lb <= tol:
            break
        heapq.heappop(heap)
        mid = 0.5 * (a + b)
        q1s = fr.q1max(np.array([mid, mid, b]))
        vals = ev(q1s, np.array([mid, a, mid]))
        fm, lb_left, lb_right = float(vals[0]), float(vals[1]), float(vals[2])
        if fm < best_val:
            best_val, best_q2 = fm, mid
        for child_lb, ca, cb in ((lb_left, a, mid), (lb_right, mid, b)):
            child_lb = max(child_lb, lb)
            if child_lb >= best_val - tol:
                floor = min(floor, child_lb)
            else:
                heapq.heappush(heap, (child_lb, ca, cb))

    open_lb = heap[0][0] if heap else math.inf
    value = min(open_lb, floor, best_val)
    return SolverCertificate(value, True, ev.count, fr.point(best_q2), best_val - value)


def fast_solve_signomial(
    problem: SignomialSubproblem, max_evals: int = 24, probes: int = 8
) -> SolverCertificate:
    """Cheap feasible-point search; the value upper-bounds the infimum.

    Probes the ``q3 = 0`` end of the frontier, the warm start and a coarse
    grid along the frontier, then refines the best probe by step-halving
    descent until the evaluation budget is spent.
    """
    fr = _Frontier(problem)
    ev = _Evaluator(problem)
    a, b = fr.lo, fr.hi

    def f(q2):
        return float(ev(fr.q1max(q2), q2)[0])

    best_q2, best = b, f(b)
    if b - a > 1e-15:
        grid = list(np.linspace(a, b, probes)[:-1])
        if problem.start is not None:
            grid.append(float(np.clip(problem.start[1], a, b)))
        grid = np.array(grid)
        vals = ev(fr.q1max(grid), grid)
        i = int(np.argmin(vals))
        if vals[i] < best:
            best_q2, best = float(grid[i]), float(vals[i])
        step = 0.5 * (b - a) / (probes - 1)
        while ev.count < max_evals and step > 1e-12:
            moved = False
            for cand in (best_q2 - step, best_q2 + step):
                if ev.count >= max_evals:
                    break
                c = min(max(cand, a), b)
                fc = f(c)
                if fc < best:
                    best_q2, best, moved = c, fc, True
                    break
            if not moved:
                step *= 0.5
    return SolverCertificate(best, False, ev.count, fr.point(best_q2))


# --------------------------------------------------------------------------
# Bisection drivers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BisectionStep:
    L: float
    value: float
    certified: bool
    accepted: bool


def _bisect(make_problem, theta_tilde: float, alpha: float, eps: float, fast: bool, tol: float):
    """Largest certified ``L`` in ``[0, theta_tilde]`` up to ``eps``.

    In fast mode the feasible-point solver is used while it keeps proving
    ``value < 1 - alpha``; the first time it cannot, that ``L`` is re-solved
    with the certified solver and the certified solver is used from then on.
    """
    left, right = 0.0, float(theta_tilde)
    close = not fast
    trace: list[BisectionStep] = []
    evals = 0
    while right - left > eps:
        L = 0.5 * (left + right)
        problem = make_problem(L)
        if not close:
            cert = fast_solve_signomial(problem)
            evals += cert.evaluations
            if cert.value < 1.0 - alpha:
                trace.append(BisectionStep(L, cert.value, False, False))
                right = L
                continue
            close = True
        cert = solve_signomial(problem, tol=tol)
        evals += cert.evaluations
        accepted = cert.value >= 1.0 - alpha
        trace.append(BisectionStep(L, cert.value, True, accepted))
        if accepted:
            left = L
        else:
            right = L
    return left, trace, evals


def _reduce_counts(counts, predicted: int | None):
    c = np.asarray(counts)
    if c.ndim != 1 or c.size < 2:
        raise ValueError("counts must be a vector with at least two classes")
    if np.any(c < 0) or np.any(c != np.round(c)):
        raise ValueError("counts must be non-negative integers")
    c = c.astype(np.int64)
    n = int(c.sum())
    if n < 1:
        raise ValueError("counts are empty")
    y = top_two(c)[0] if predicted is None else int(predicted)
    others = np.delete(c, y)
    x1 = int(c[y])
    x2 = int(others.max())
    return n, y, x1, x2


def first_margin_lcb(
    counts,
    alpha: float,
    eps: float = DEFAULT_EPS,
    fast: bool = False,
    predicted: int | None = None,
    tol: float = SOLVER_TOL,
) -> MarginEstimate:
    """Joint ``1 - alpha`` lower bound on ``p_y - max_{j != y} p_j``.

    A non-positive observed margin yields 0 without any certification.
    """
    check_alpha(alpha)
    n, y, x1, x2 = _reduce_counts(counts, predicted)
    theta = (x1 - x2) / n
    meta = {"predicted": y, "theta_tilde": theta}
    if theta <= 0:
        return MarginEstimate(0.0, Kind.FIRST, alpha, Method.DISCRETE_JOINT, meta=meta)

    def make(L):
        return SignomialSubproblem(
            L=L, theta_tilde=theta, n=n, kind=Kind.FIRST, alpha=alpha, start=(x1 / n, x2 / n)
        )

    left, trace, evals = _bisect(make, theta, alpha, eps, fast, tol)
    meta.update(trace=trace, evaluations=evals)
    return MarginEstimate(left, Kind.FIRST, alpha, Method.DISCRETE_JOINT, meta=meta)


def second_margin_lcb(
    counts,
    alpha: float,
    eps: float = DEFAULT_EPS,
    order: int = DEFAULT_TAYLOR_ORDER,
    fast: bool = False,
    predicted: int | None = None,
    tol: float = SOLVER_TOL,
) -> MarginEstimate:
    """Joint lower bound on ``Phi^{-1}(p_y) - Phi^{-1}(max_j p_j)``.

    Half of ``alpha`` is spent on a Clopper-Pearson pretest of ``p_y > 1/2``
    and half on the bisection.  If the pretest fails the Bonferroni
    Clopper-Pearson margin at level ``alpha`` is returned.
    """
    check_alpha(alpha)
    n, y, x1, x2 = _reduce_counts(counts, predicted)
    p_lower = clopper_pearson_lower(x1, n, alpha / 2.0)
    if p_lower <= 0.5:
        bonf = bonferroni_margin(counts, alpha, Kind.SECOND, "cp", predicted=y)
        meta = dict(bonf.meta, fallback="bonferroni", pretest_lower=p_lower)
        return MarginEstimate(
            bonf.value, Kind.SECOND, alpha, Method.DISCRETE_JOINT, clipped=bonf.clipped, meta=meta
        )

    theta = float(second_statistic(x1, x2, n, order))
    stage_alpha = alpha / 2.0
    meta = {"predicted": y, "theta_tilde": theta, "pretest_lower": p_lower, "taylor_order": order}

    def make(L):
        return SignomialSubproblem(
            L=L,
            theta_tilde=theta,
            n=n,
            kind=Kind.SECOND,
            alpha=stage_alpha,
            taylor_order=order,
            start=(x1 / n, x2 / n),
        )

    left, trace, evals = _bisect(make, theta, stage_alpha, eps, fast, tol)
    meta.update(trace=trace, evaluations=evals)
    return MarginEstimate(left, Kind.SECOND, alpha, Method.DISCRETE_JOINT, meta=meta)
