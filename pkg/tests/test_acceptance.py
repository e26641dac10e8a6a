"""Acceptance suite.  Every criterion prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the summary lines are
repeated at the end of the session) or ``python tests/test_acceptance.py``.
"""

import math
import time
import warnings
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import gammaln, xlogy

from smoothcert.bounds import (
    Kind,
    bonferroni_margin,
    clopper_pearson_lower,
    clopper_pearson_upper,
    cs_path,
    empirical_bernstein_lower,
    empirical_bernstein_upper,
)
from smoothcert.continuous import continuous_margin
from smoothcert.discrete import (
    SignomialSubproblem,
    first_margin_lcb,
    multinomial_margin_cdf_first,
    multinomial_margin_cdf_second,
    second_margin_lcb,
    second_statistic,
    solve_signomial,
)
from smoothcert.radius import cta_curve, format_gain, gain_table
from smoothcert.smoothing import (
    NoiseConfig,
    PrototypeClassifier,
    SimplexMapSpec,
    paired_prototypes,
    sample_counts,
    sample_prob_matrix,
)
from smoothcert.special import (
    erf,
    erf_inv_coeffs,
    gaussian_cdf,
    gaussian_quantile,
    gaussian_quantile_taylor,
)

RESULTS: list[str] = []


def report(number, title, ok, detail, started):
    line = f"CRITERION {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail} ({time.perf_counter() - started:.1f}s)"
    RESULTS.append(line)
    print(line)
    return ok


def recursion_coeffs(k_max):
    c = [Fraction(1)]
    for k in range(1, k_max + 1):
        c.append(sum(c[m] * c[k - 1 - m] / ((m + 1) * (2 * m + 1)) for m in range(k)))
    return c


# --------------------------------------------------------------------------
# 1. Special functions
# --------------------------------------------------------------------------


def check_special_functions():
    t0 = time.perf_counter()
    xs = np.linspace(-4.0, 4.0, 801)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        quad = np.array(
            [2 / math.sqrt(math.pi) * integrate.quad(lambda t: math.exp(-t * t), 0, x, epsabs=1e-15, epsrel=1e-14)[0]
             for x in xs]
        )
    erf_err = float(np.max(np.abs(erf(xs) - quad)))
    coeffs_ok = erf_inv_coeffs(3, exact=True) == [Fraction(1), Fraction(1), Fraction(7, 6), Fraction(127, 90)]
    coeffs_ok &= erf_inv_coeffs(25, exact=True) == recursion_coeffs(25)
    ps = np.concatenate([np.linspace(1e-6, 1 - 1e-6, 100001), np.geomspace(1e-6, 1e-2, 1000)])
    rt_err = float(np.max(np.abs(gaussian_cdf(gaussian_quantile(ps)) - ps)))
    elapsed = time.perf_counter() - t0
    ok = erf_err <= 1e-12 and coeffs_ok and rt_err <= 1e-9 and elapsed < 10
    return report(1, "special functions", ok,
                  f"erf err {erf_err:.1e}, coefficients {'match' if coeffs_ok else 'MISMATCH'}, round trip {rt_err:.1e}", t0)


# --------------------------------------------------------------------------
# 2. One-sided Taylor bound
# --------------------------------------------------------------------------


def check_taylor_sign():
    """sign(Phi^{-1}(p) - Phi^{-1}_M(p)) == sign(p - 1/2) or 0.

    Differences near p = 1/2 are far below double precision, so both sides are
    evaluated with mpmath at a precision that grows as p approaches 1/2, using
    the exact rational coefficients returned by the package.  Agreement of the
    float implementation with the high precision polynomial is checked too.
    """
    t0 = time.perf_counter()
    orders = range(1, 26)
    coeffs = erf_inv_coeffs(25, exact=True)
    grid = np.linspace(0.0, 1.0, 10000)
    violations = 0
    float_err = 0.0
    for p in grid:
        x_float = 2.0 * float(p) - 1.0
        # the gap after the order-M term is of size |x|^(2M+3): carry enough digits to resolve it
        digits = 0 if x_float == 0 else max(0.0, -math.log10(abs(x_float)))
        with mpmath.workdps(40 + int(digits * 54)):
            half_sqrt_pi = mpmath.sqrt(mpmath.pi) / 2
            mp_p = mpmath.mpf(float(p))
            if mp_p == 0:
                exact = -mpmath.inf
            elif mp_p == 1:
                exact = mpmath.inf
            else:
                exact = mpmath.sqrt(2) * mpmath.erfinv(2 * mp_p - 1)
            z = half_sqrt_pi * (2 * mp_p - 1)
            partial = mpmath.mpf(0)
            power = z
            sums = []
            for k, c in enumerate(coeffs):
                partial += mpmath.sqrt(2) * mpmath.mpf(c.numerator) / c.denominator / (2 * k + 1) * power
                power *= z * z
                sums.append(partial)
            expected = (mp_p > 0.5) - (mp_p < 0.5)
            for M in orders:
                diff = exact - sums[M]
                sign = (diff > 0) - (diff < 0)
                if sign != expected and sign != 0:
                    violations += 1
        float_err = max(float_err, max(abs(gaussian_quantile_taylor(float(p), M) - float(sums[M])) for M in (1, 15, 25)))
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and float_err < 1e-12 and elapsed < 30
    return report(2, "Taylor one-sided bound", ok,
                  f"{len(grid)} points x {len(orders)} orders, {violations} sign violations, float/mp agreement {float_err:.1e}", t0)


# --------------------------------------------------------------------------
# 3. Multinomial tails against enumeration
# --------------------------------------------------------------------------


def enumerate_pairs(n):
    x1, x2 = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = x1 + x2 <= n
    return x1[keep], x2[keep]


def enum_pmf(q, n, x1, x2):
    x3 = n - x1 - x2
    logp = (gammaln(n + 1) - gammaln(x1 + 1) - gammaln(x2 + 1) - gammaln(x3 + 1)
            + xlogy(x1, q[0]) + xlogy(x2, q[1]) + xlogy(x3, q[2]))
    return np.exp(logp)


def check_multinomial_tails():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    cases = 0
    for n in range(1, 9):
        x1, x2 = enumerate_pairs(n)
        qs = rng.dirichlet(np.ones(3), size=100)
        qs[:5] = [[1, 0, 0], [0, 1, 0], [0, 0, 1], [0.5, 0.5, 0], [0.2, 0, 0.8]]
        for q in qs:
            pmf = enum_pmf(q, n, x1, x2)
            for k in range(-n - 1, n + 1):
                ref = pmf[x1 - x2 <= k].sum()
                worst = max(worst, abs(multinomial_margin_cdf_first(k, q, n) - ref))
                cases += 1
            stat = second_statistic(x1, x2, n, 15)
            for theta in np.unique(np.round(stat, 12)):
                for strict in (False, True):
                    tol = 1e-9
                    event = stat < theta - tol if strict else stat <= theta + tol
                    ref = pmf[event].sum()
                    got = multinomial_margin_cdf_second(theta, q, n, 15, strict=strict)
                    worst = max(worst, abs(got - ref))
                    cases += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 60
    return report(3, "multinomial tail exactness", ok, f"{cases} cases, max abs error {worst:.1e}", t0)


# --------------------------------------------------------------------------
# 4. Interval coverage
# --------------------------------------------------------------------------


def _within(misses, reps, alpha):
    se = math.sqrt(alpha * (1 - alpha) / reps)
    return misses / reps <= alpha + 3 * se


def check_interval_coverage():
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    rows = []
    for alpha in (0.05, 0.01):
        # Clopper-Pearson: 1e5 binomial draws per case, bound tabulated per count
        for p, n in ((0.1, 50), (0.5, 50), (0.93, 40)):
            draws = rng.binomial(n, p, size=100_000)
            lo = np.array([clopper_pearson_lower(k, n, alpha) for k in range(n + 1)])
            hi = np.array([clopper_pearson_upper(k, n, alpha) for k in range(n + 1)])
            for side, miss in (("lower", np.sum(lo[draws] > p)), ("upper", np.sum(hi[draws] < p))):
                rows.append((f"CP {side} p={p}", alpha, int(miss), draws.size))
        # empirical Bernstein: 1e4 samples of size 100
        for name, sampler, mean in (
            ("beta(2,5)", lambda size: rng.beta(2, 5, size), 2 / 7),
            ("bern(0.3)", lambda size: rng.binomial(1, 0.3, size).astype(float), 0.3),
            ("unif", lambda size: rng.uniform(size=size), 0.5),
        ):
            x = sampler((10_000, 100))
            rows.append((f"EB lower {name}", alpha, int(np.sum(empirical_bernstein_lower(x, alpha) > mean)), 10_000))
            rows.append((f"EB upper {name}", alpha, int(np.sum(empirical_bernstein_upper(x, alpha) < mean)), 10_000))
            # confidence sequence: running intersection is time-uniform, so a
            # miss at any time shows up in the final interval
            lo_cs, hi_cs = cs_path(x, alpha)
            miss = np.sum((lo_cs[:, -1] > mean) | (hi_cs[:, -1] < mean))
            rows.append((f"CS {name}", alpha, int(miss), 10_000))
    bad = [r for r in rows if not _within(r[2], r[3], r[1])]
    worst = max(rows, key=lambda r: r[2] / r[3] - r[1])
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 300
    detail = (f"{len(rows)} cases, worst excess {worst[0]} at alpha={worst[1]}: {worst[2] / worst[3]:.4f}"
              + (f"; failing: {[r[0] for r in bad]}" if bad else ""))
    return report(4, "interval coverage", ok, detail, t0)


# --------------------------------------------------------------------------
# 5. Discrete joint bound validity and fast/certified agreement
# --------------------------------------------------------------------------


def check_joint_validity():
    t0 = time.perf_counter()
    q_star = np.array([0.6, 0.3, 0.1])
    theta_star = 0.3
    n, alpha, reps = 100, 0.05, 2000
    rng = np.random.default_rng(5)
    covered = 0
    for _ in range(reps):
        counts = rng.multinomial(n, q_star)
        covered += first_margin_lcb(counts, alpha, fast=True).value <= theta_star
    rate = covered / reps
    se = math.sqrt(alpha * (1 - alpha) / reps)
    valid = rate >= 1 - alpha - 3 * se

    rng = np.random.default_rng(6)
    eps = 1e-3
    worst = 0.0
    for i in range(100):
        m = int(rng.integers(3, 8))
        size = int(rng.integers(20, 200))
        p = rng.dirichlet(np.full(m, 0.6))
        counts = rng.multinomial(size, p)
        a = float(rng.choice([0.05, 0.01, 0.001]))
        fn = first_margin_lcb if i % 2 == 0 else second_margin_lcb
        slow = fn(counts, a, eps=eps, fast=False).value
        fast = fn(counts, a, eps=eps, fast=True).value
        worst = max(worst, abs(slow - fast))
    agree = worst <= eps
    elapsed = time.perf_counter() - t0
    ok = valid and agree and elapsed < 900
    return report(5, "discrete joint validity", ok,
                  f"coverage {rate:.4f} (need >= {1 - alpha - 3 * se:.4f}), fast/certified max diff {worst:.1e}", t0)


# --------------------------------------------------------------------------
# 6. Certified solver against a dense grid
# --------------------------------------------------------------------------


def _oracle_event(problem):
    n = problem.n
    x1, x2 = enumerate_pairs(n)
    if problem.kind is Kind.FIRST:
        k = int(round(problem.theta_tilde * n))
        keep = x1 - x2 < k
    else:
        c = recursion_coeffs(problem.taylor_order)
        a = np.array([math.sqrt(2) * float(ck) / (2 * k + 1) * (math.sqrt(math.pi) / 2) ** (2 * k + 1)
                      for k, ck in enumerate(c)])
        z1, z2 = 2 * x1 / n - 1, 2 * x2 / n - 1
        g = lambda z: sum(ak * z ** (2 * k + 1) for k, ak in enumerate(a))
        keep = g(z1) - g(z2) < problem.theta_tilde - 1e-12 * max(1, abs(problem.theta_tilde))
    return x1[keep], x2[keep], n - x1[keep] - x2[keep]


def _oracle_values(event, n, q1, q2):
    x1, x2, x3 = event
    q3 = np.clip(1 - q1 - q2, 0.0, 1.0)
    const = gammaln(n + 1) - gammaln(x1 + 1) - gammaln(x2 + 1) - gammaln(x3 + 1)
    out = np.empty(q1.size)
    for s in range(0, q1.size, 20000):
        sl = slice(s, s + 20000)
        logp = (const[None, :] + xlogy(x1[None, :], q1[sl, None]) + xlogy(x2[None, :], q2[sl, None])
                + xlogy(x3[None, :], q3[sl, None]))
        out[sl] = np.exp(logp).sum(axis=1)
    return out


def _feasible(problem, q1, q2):
    ok = (q1 >= 0) & (q2 >= 0) & (q1 + q2 <= 1 + 1e-15)
    if problem.kind is Kind.FIRST:
        return ok & (q1 - q2 <= problem.L)
    o = problem.taylor_order
    q1c, q2c = np.clip(q1, 0, 1), np.clip(q2, 0, 1)
    return ok & (q1 >= 0.5) & (gaussian_quantile_taylor(q1c, o) - gaussian_quantile_taylor(q2c, o) <= problem.L)


def grid_minimum(problem, side=1413):
    """Minimum over ~1e6 simplex grid points plus three rounds of local zoom."""
    i, j = np.meshgrid(np.arange(side + 1), np.arange(side + 1), indexing="ij")
    keep = i + j <= side
    q1, q2 = i[keep] / side, j[keep] / side
    feas = _feasible(problem, q1, q2)
    q1, q2 = q1[feas], q2[feas]
    event = _oracle_event(problem)
    if event[0].size == 0:
        return 0.0, keep.sum()
    vals = _oracle_values(event, problem.n, q1, q2)
    order = np.argsort(vals)[:12]
    best = float(vals[order[0]])
    centres = list(zip(q1[order], q2[order]))
    h = 2.0 / side
    for _ in range(3):
        new_centres = []
        for c1, c2 in centres:
            g = np.linspace(-h, h, 41)
            a, b = np.meshgrid(c1 + g, c2 + g, indexing="ij")
            a, b = a.ravel(), b.ravel()
            f = _feasible(problem, a, b)
            if not f.any():
                continue
            v = _oracle_values(event, problem.n, a[f], b[f])
            k = int(np.argmin(v))
            best = min(best, float(v[k]))
            new_centres.append((a[f][k], b[f][k]))
        centres = new_centres or centres
        h /= 10.0
    return best, int(keep.sum())


def random_subproblems(count, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(3, 21))
        kind = Kind.FIRST if len(out) % 2 == 0 else Kind.SECOND
        counts = rng.multinomial(n, rng.dirichlet(np.ones(3)))
        x1, x2 = int(counts[0]), int(counts[1])
        if kind is Kind.FIRST:
            if x1 <= x2:
                continue
            theta = (x1 - x2) / n
            L = float(rng.uniform(-0.3, theta))
        else:
            if 2 * x1 <= n:
                continue
            theta = float(second_statistic(x1, x2, n, 15))
            L = float(rng.uniform(0.0, theta))
        out.append(SignomialSubproblem(L=L, theta_tilde=theta, n=n, kind=kind))
    return out


def check_solver_oracle():
    t0 = time.perf_counter()
    worst_gap, worst_excess, points = 0.0, 0.0, 0
    for problem in random_subproblems(50, seed=99):
        cert = solve_signomial(problem)
        ref, points = grid_minimum(problem)
        worst_gap = max(worst_gap, abs(ref - cert.value))
        worst_excess = max(worst_excess, cert.value - ref)
    elapsed = time.perf_counter() - t0
    ok = worst_gap <= 1e-4 and worst_excess <= 1e-9 and elapsed < 600
    return report(6, "certified solver vs grid", ok,
                  f"50 problems, {points} grid points each, max |solver - grid| {worst_gap:.1e}, "
                  f"max solver excess {worst_excess:.1e}", t0)


# --------------------------------------------------------------------------
# 7. Dominance over the Bonferroni baselines
# --------------------------------------------------------------------------

DOM_ALPHA = 0.001
DOM_EPS = 1e-3
DOM_INPUTS = 500


def dominance_inputs(seed=11):
    """Confusable-pairs prototype classifier with 500 inputs drawn around their class prototypes."""
    rng = np.random.default_rng(seed)
    mu = paired_prototypes(10, 10, radius=3.0, delta=1.0, rng=rng)
    clf = PrototypeClassifier(mu, beta=2.0)
    labels = rng.integers(10, size=DOM_INPUTS)
    xs = mu[labels] + 0.5 * rng.standard_normal((DOM_INPUTS, 10))
    return clf, xs, labels


def _summary(ours, base, correct):
    ours, base = np.maximum(ours, 0.0), np.maximum(base, 0.0)
    diff = ours - base
    base_area = base[correct].sum()
    gain = ours[correct].sum() - base_area
    rel = gain / base_area if base_area > 0 else (math.inf if gain > 0 else 0.0)
    abs_gap = float(np.mean(diff[correct])) if correct.any() else 0.0
    return float(np.mean(diff >= 0)), float(diff.min()), rel, abs_gap


def dominance_table():
    clf, xs, labels = dominance_inputs()
    table = {}
    for kind in (Kind.FIRST, Kind.SECOND):
        fn = first_margin_lcb if kind is Kind.FIRST else second_margin_lcb
        for n in (100, 300, 500):
            ours, base, corr = [], [], []
            for i, x in enumerate(xs):
                counts = sample_counts(clf, x, NoiseConfig(0.5, n, seed=9), input_id=i)
                corr.append(np.argmax(counts) == labels[i])
                ours.append(fn(counts, DOM_ALPHA, eps=DOM_EPS, fast=True).value)
                base.append(bonferroni_margin(counts, DOM_ALPHA, kind, "cp").value)
            table[("DISCRETE", kind.value, "joint", n, None)] = _summary(np.array(ours), np.array(base), np.array(corr))
        for n, T in ((100, 1.0), (300, 1.0), (500, 1.0), (100, 0.1), (100, 10.0)):
            res = {"eb": ([], []), "cs": ([], [])}
            corr = []
            for i, x in enumerate(xs):
                X = sample_prob_matrix(clf, x, NoiseConfig(0.5, n, seed=9), SimplexMapSpec("SOFTMAX", T), input_id=i)
                corr.append(np.argmax(X.mean(axis=0)) == labels[i])
                for meth, (o, b) in res.items():
                    o.append(continuous_margin(X, DOM_ALPHA, kind, meth).value)
                    b.append(bonferroni_margin(X, DOM_ALPHA, kind, meth).value)
            for meth, (o, b) in res.items():
                table[("CONTINUOUS", kind.value, meth, n, T)] = _summary(np.array(o), np.array(b), np.array(corr))
    return table


def check_dominance():
    t0 = time.perf_counter()
    table = dominance_table()
    failures = []
    for key, (frac, worst, _, _) in table.items():
        if frac < 0.95 or worst < -DOM_EPS:
            failures.append(f"{'/'.join(str(k) for k in key if k is not None)} ge={frac:.3f} min={worst:.4f}")
    # relative gain (area under the CTA curve) must not grow with n
    for mode, kinds, meths in (("DISCRETE", ("FIRST", "SECOND"), ("joint",)),
                               ("CONTINUOUS", ("FIRST", "SECOND"), ("eb", "cs"))):
        for kind in kinds:
            for meth in meths:
                T = 1.0 if mode == "CONTINUOUS" else None
                rels = [table[(mode, kind, meth, n, T)][2] for n in (100, 300, 500)]
                if any(b > a + 1e-12 for a, b in zip(rels, rels[1:])):
                    failures.append(f"n-trend {mode}/{kind}/{meth} rel gain {np.round(rels, 4).tolist()}")
    # absolute discrepancy must not grow with temperature
    for kind in ("FIRST", "SECOND"):
        for meth in ("eb", "cs"):
            gaps = [table[("CONTINUOUS", kind, meth, 100, T)][3] for T in (0.1, 1.0, 10.0)]
            if any(b > a + 1e-12 for a, b in zip(gaps, gaps[1:])):
                failures.append(f"T-trend {kind}/{meth} gap {np.round(gaps, 4).tolist()}")
    for key, val in sorted(table.items(), key=str):
        print("   ", key, "ge=%.3f min=%.4f rel=%.4f abs=%.4f" % val)
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 1200
    detail = f"{len(table)} cells, {DOM_INPUTS} inputs each" + (f"; failing: {failures}" if failures else "")
    return report(7, "dominance ordering", ok, detail, t0)


# --------------------------------------------------------------------------
# 8. Gain table
# --------------------------------------------------------------------------


def check_gain_table():
    t0 = time.perf_counter()
    gains = gain_table([0.774, 0.582, 0.000], [0.780, 0.614, 0.538])
    text = [format_gain(g) for g in gains]
    ok = text == ["0.78%", "5.50%", "inf"]
    return report(8, "gain table arithmetic", ok, f"{text}", t0)


# --------------------------------------------------------------------------
# 9. CTA curve properties
# --------------------------------------------------------------------------


def check_cta_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    grid = np.linspace(0.0, 1.5, 31)
    problems = []
    for trial in range(50):
        N = int(rng.integers(1, 400))
        radii = np.where(rng.uniform(size=N) < 0.2, 0.0, rng.exponential(0.4, N))
        correct = rng.uniform(size=N) < 0.8
        curve = cta_curve(list(zip(radii, correct)), grid, alpha=0.05)
        if np.any(np.diff(curve.approx_acc) > 0) or np.any(np.diff(curve.lcb_acc) > 1e-15):
            problems.append(f"trial {trial}: not monotone")
        if np.any(curve.lcb_acc > curve.approx_acc + 1e-15):
            problems.append(f"trial {trial}: lcb above estimate")
        hits = np.array([np.sum((radii > r) & correct) for r in grid])
        ref = np.array([0.0 if k == 0 else stats.beta.ppf(0.05, k, N - k + 1) for k in hits])
        if np.max(np.abs(curve.lcb_acc - ref)) > 1e-12:
            problems.append(f"trial {trial}: lcb differs from Clopper-Pearson")
    ok = not problems
    return report(9, "CTA curve properties", ok, "50 random record sets" + (f"; {problems[:3]}" if problems else ""), t0)


# --------------------------------------------------------------------------

CRITERIA = [
    check_special_functions,
    check_taylor_sign,
    check_multinomial_tails,
    check_interval_coverage,
    check_joint_validity,
    check_solver_oracle,
    check_dominance,
    check_gain_table,
    check_cta_properties,
]


@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda f: f.__name__.removeprefix("check_"))
def test_criterion(criterion):
    assert criterion()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria passed")
