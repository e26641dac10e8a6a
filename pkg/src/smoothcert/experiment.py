"""Experiment configuration, synthetic data sources and the certify / coverage /
sweep drivers used by the command line."""

from __future__ import annotations

import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .bounds import Kind, Method, bonferroni_margin, check_alpha, clopper_pearson_lower, top_two
from .continuous import build_z_first, continuous_margin
from .discrete import first_margin_lcb, second_margin_lcb
from .radius import cta_curve, format_gain, gain_table, radius_first, radius_second
from .smoothing import (
    AffineClassifier,
    NoiseConfig,
    SimplexMap,
    SimplexMapSpec,
    sample_counts,
    sample_prob_matrix,
)
from .special import gaussian_quantile, gaussian_quantile_taylor

DISCRETE = "DISCRETE"
CONTINUOUS = "CONTINUOUS"

MODE_METHODS = {
    DISCRETE: (Method.CP_BONFERRONI, Method.DISCRETE_JOINT),
    CONTINUOUS: (
        Method.EB_BONFERRONI,
        Method.CS_BONFERRONI,
        Method.CONT_DIRECT_EB,
        Method.CONT_DIRECT_CS,
    ),
}
SYNTHETIC_SOURCES = {DISCRETE: ("multinomial", "affine"), CONTINUOUS: ("affine", "mixture")}
SWEEP_AXES = {"N": "n", "SIGMA": "sigma", "TEMPERATURE": "temperature"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    mode: str = DISCRETE
    n: int = 100
    sigma: float = 0.25
    temperature: float = 1.0
    simplex_map: str = "SOFTMAX"
    alpha: float = 0.001
    taylor_order: int = 15
    eps: float = 1e-3
    fast: bool = True
    methods: list = field(default_factory=list)
    seed: int | None = None
    data: str | None = None
    synthetic: str | None = None
    num_inputs: int = 100
    num_classes: int = 10
    input_dim: int = 10
    p: list | None = None
    support: list | None = None
    radius: str = "R2"
    lipschitz: float = 1.0
    radii: list | None = None
    cta_alpha: float = 0.05
    workers: int = 1
    out: str = "out"

    @property
    def kind(self) -> Kind:
        return Kind.FIRST if self.radius == "R1" else Kind.SECOND

    @property
    def grid(self) -> np.ndarray:
        if self.radii is not None:
            return np.asarray(self.radii, dtype=float)
        return np.round(np.linspace(0.0, 1.0, 21), 10)

    def validate(self) -> ExperimentConfig:
        err = ConfigError
        self.mode = str(self.mode).upper()
        if self.mode not in MODE_METHODS:
            raise err(f"mode must be DISCRETE or CONTINUOUS, got {self.mode!r}")
        if not self.methods:
            self.methods = [m.value for m in MODE_METHODS[self.mode]]
        try:
            methods = [Method(str(m).upper()) for m in self.methods]
        except ValueError as exc:
            raise err(str(exc)) from None
        bad = [m.value for m in methods if m not in MODE_METHODS[self.mode]]
        if bad:
            raise err(f"methods {bad} are not available in {self.mode} mode")
        self.methods = [m.value for m in methods]
        if (self.data is None) == (self.synthetic is None):
            raise err("exactly one of 'data' and 'synthetic' must be given")
        if self.synthetic is not None:
            if self.synthetic not in SYNTHETIC_SOURCES[self.mode]:
                raise err(f"synthetic source {self.synthetic!r} not available in {self.mode} mode")
            if self.seed is None:
                raise err("a seed is required for synthetic sources")
        if self.seed is not None and not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise err("seed must be a 64-bit unsigned integer")
        if not (isinstance(self.n, int) and self.n >= 1):
            raise err("n must be a positive integer")
        for key in ("sigma", "temperature", "eps", "lipschitz"):
            if not float(getattr(self, key)) > 0:
                raise err(f"{key} must be positive")
        for key in ("alpha", "cta_alpha"):
            try:
                check_alpha(getattr(self, key))
            except ValueError as exc:
                raise err(f"{key}: {exc}") from None
        if not (isinstance(self.taylor_order, int) and self.taylor_order >= 0):
            raise err("taylor_order must be a non-negative integer")
        if self.radius not in ("R1", "R2"):
            raise err("radius must be R1 or R2")
        if str(self.simplex_map).upper() not in SimplexMap.__members__:
            raise err(f"unknown simplex map {self.simplex_map!r}")
        self.simplex_map = str(self.simplex_map).upper()
        grid = self.grid
        if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
            raise err("radii must be a strictly increasing list")
        if self.mode == CONTINUOUS and self.n < 2:
            raise err("continuous mode needs n >= 2")
        if self.p is not None:
            p = np.asarray(self.p, dtype=float)
            if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise err("p must be a probability vector")
        if self.synthetic == "mixture":
            if self.support is None or self.p is None:
                raise err("the mixture source needs 'support' rows and weights 'p'")
            s = np.asarray(self.support, dtype=float)
            if s.ndim != 2 or s.shape[0] != len(self.p) or np.any(np.abs(s.sum(axis=1) - 1) > 1e-9):
                raise err("support must be one simplex row per weight in p")
        if not (isinstance(self.workers, int) and self.workers >= 1):
            raise err("workers must be a positive integer")
        return self

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2)


CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Flat JSON object with ExperimentConfig keys; unknown keys are errors."""
    values: dict = {}
    if path is not None:
        try:
            values = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigError("config must be a flat JSON object")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(values) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    return ExperimentConfig(**values).validate()


# --------------------------------------------------------------------------
# Data sources
# --------------------------------------------------------------------------


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def random_class_probs(rng: np.random.Generator, m: int) -> np.ndarray:
    """A class distribution with one dominant class at a random position."""
    top = rng.uniform(0.35, 1.0)
    rest = rng.dirichlet(np.full(m - 1, 0.5)) * (1.0 - top)
    y = rng.integers(m)
    return np.insert(rest, y, top)


def _affine_setup(cfg: ExperimentConfig):
    rng = _rng(cfg.seed, 1)
    m, d = cfg.num_classes, cfg.input_dim
    W = rng.standard_normal((m, d))
    clf = AffineClassifier(W, np.zeros(m))
    teacher = W + 0.3 * rng.standard_normal((m, d))
    xs = rng.standard_normal((cfg.num_inputs, d))
    labels = np.argmax(xs @ teacher.T, axis=1)
    return clf, xs, labels


def load_items(cfg: ExperimentConfig) -> list[io.InputItem]:
    if cfg.data is not None:
        if cfg.mode == DISCRETE:
            return io.read_counts_csv(cfg.data)
        return io.read_prob_jsonl(cfg.data)
    if cfg.synthetic == "multinomial":
        items = []
        for i in range(cfg.num_inputs):
            rng = _rng(cfg.seed, 2, i)
            p = np.asarray(cfg.p, dtype=float) if cfg.p is not None else random_class_probs(rng, cfg.num_classes)
            label = int(np.argmax(p)) if rng.uniform() < 0.85 else int(rng.integers(p.size))
            items.append(io.InputItem(str(i), label, rng.multinomial(cfg.n, p)))
        return items
    if cfg.synthetic == "mixture":
        support = np.asarray(cfg.support, dtype=float)
        w = np.asarray(cfg.p, dtype=float)
        items = []
        for i in range(cfg.num_inputs):
            rng = _rng(cfg.seed, 3, i)
            rows = support[rng.choice(len(w), size=cfg.n, p=w)]
            items.append(io.InputItem(str(i), int(np.argmax(w @ support)), rows))
        return items
    clf, xs, labels = _affine_setup(cfg)
    noise = NoiseConfig(cfg.sigma, cfg.n, cfg.seed)
    items = []
    for i, (x, label) in enumerate(zip(xs, labels)):
        if cfg.mode == DISCRETE:
            data = sample_counts(clf, x, noise, input_id=i)
        else:
            spec = SimplexMapSpec(SimplexMap(cfg.simplex_map), cfg.temperature)
            data = sample_prob_matrix(clf, x, noise, spec, input_id=i)
        items.append(io.InputItem(str(i), int(label), data))
    return items


# --------------------------------------------------------------------------
# Certification
# --------------------------------------------------------------------------


def estimate_margin(method: Method, data, cfg: ExperimentConfig):
    kind = cfg.kind
    a = cfg.alpha
    if method is Method.CP_BONFERRONI:
        return bonferroni_margin(data, a, kind, "cp")
    if method is Method.DISCRETE_JOINT:
        if kind is Kind.FIRST:
            return first_margin_lcb(data, a, eps=cfg.eps, fast=cfg.fast)
        return second_margin_lcb(data, a, eps=cfg.eps, order=cfg.taylor_order, fast=cfg.fast)
    if method is Method.EB_BONFERRONI:
        return bonferroni_margin(data, a, kind, "eb")
    if method is Method.CS_BONFERRONI:
        return bonferroni_margin(data, a, kind, "cs")
    bound = "eb" if method is Method.CONT_DIRECT_EB else "cs"
    return continuous_margin(data, a, kind, bound, cfg.taylor_order)


def _predicted(data, mode: str) -> int:
    arr = np.asarray(data)
    return top_two(arr if mode == DISCRETE else arr.mean(axis=0))[0]


def certify_item(item: io.InputItem, cfg: ExperimentConfig) -> list[dict]:
    correct = _predicted(item.data, cfg.mode) == item.label
    out = []
    for name in cfg.methods:
        est = estimate_margin(Method(name), item.data, cfg)
        if cfg.radius == "R1":
            rad = radius_first(est, cfg.lipschitz, correct)
        else:
            rad = radius_second(est, cfg.sigma, correct)
        out.append(
            {
                "input_id": item.input_id,
                "method": name,
                "margin": est.value,
                "radius": rad.value,
                "correct": bool(correct),
                "clipped": bool(est.clipped),
            }
        )
    return out


def _certify_star(args):
    return certify_item(*args)


def run_certify(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Certify every input with every method; write records, CTA curves and
    the config echo.  Returns ``{method: (records, curve)}``."""
    items = sorted(load_items(cfg), key=lambda it: io._id_key(it.input_id))
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            per_item = list(pool.map(_certify_star, [(it, cfg) for it in items], chunksize=4))
    else:
        per_item = [certify_item(it, cfg) for it in items]

    root = Path(out_dir if out_dir is not None else Path(cfg.out) / cfg.name)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.echo").write_text(cfg.to_json() + "\n")
    results = {}
    for name in cfg.methods:
        records = [r for recs in per_item for r in recs if r["method"] == name]
        curve = cta_curve([(r["radius"], r["correct"]) for r in records], cfg.grid, cfg.cta_alpha)
        mdir = root / name
        mdir.mkdir(exist_ok=True)
        io.write_records(mdir / "records.jsonl", records)
        io.write_cta_csv(mdir / "cta.csv", curve)
        results[name] = (records, curve)
    return results


def compare_curves(baseline_csv, ours_csv, out_csv=None) -> str:
    """Three-row table: baseline, ours and percent gain per radius."""
    rb, ab, _ = io.read_cta_csv(baseline_csv)
    ro, ao, _ = io.read_cta_csv(ours_csv)
    if rb.shape != ro.shape or not np.allclose(rb, ro):
        raise io.DataError("curves are on different radius grids")
    gains = gain_table(ab, ao)
    lines = [
        ",".join(["row"] + [repr(float(r)) for r in rb]),
        ",".join(["baseline"] + [f"{v:.3f}" for v in ab]),
        ",".join(["ours"] + [f"{v:.3f}" for v in ao]),
        ",".join(["gain"] + [format_gain(g) for g in gains]),
    ]
    text = "\n".join(lines) + "\n"
    if out_csv is not None:
        Path(out_csv).write_text(text)
    return text


# --------------------------------------------------------------------------
# Coverage
# --------------------------------------------------------------------------


def _true_margin(means, y: int, kind: Kind) -> float:
    py = means[y]
    pj = np.max(np.delete(means, y))
    if kind is Kind.FIRST:
        return float(py - pj)
    hi = math.inf if py >= 1.0 else gaussian_quantile(py) if py > 0 else -math.inf
    lo = -math.inf if pj <= 0.0 else gaussian_quantile(pj) if pj < 1 else math.inf
    return float(hi - lo)


def _true_direct(support, w, y: int, kind: Kind, order: int) -> float:
    """Exact ``E[Z]`` for a finite mixture of simplex rows."""
    if kind is Kind.FIRST:
        z = build_z_first(support, y).z
    else:
        comp = np.delete(support, y, axis=1).max(axis=1)
        z = gaussian_quantile_taylor(support[:, y], order) - gaussian_quantile_taylor(comp, order)
    return float(w @ z)


def run_coverage(cfg: ExperimentConfig, replications: int) -> list[dict]:
    """Empirical miscoverage of each method against a known ground truth.

    A replication misses when the reported bound is positive and exceeds the
    true margin of the class the estimator certified (a non-positive bound
    certifies nothing).  In DISCRETE mode a ``CP_LOWER`` row checks the
    one-sided Clopper-Pearson bound on the true top class probability.
    """
    if cfg.synthetic not in ("multinomial", "mixture") or cfg.p is None:
        raise ConfigError("coverage needs a synthetic multinomial or mixture source with a fixed 'p'")
    if replications < 1:
        raise ConfigError("replications must be positive")
    kind = cfg.kind
    p = np.asarray(cfg.p, dtype=float)
    misses = {name: 0 for name in cfg.methods}
    cp_misses = 0
    for r in range(replications):
        rng = _rng(cfg.seed, 4, r)
        if cfg.mode == DISCRETE:
            data = rng.multinomial(cfg.n, p)
            means = p
            top = top_two(p)[0]
            if clopper_pearson_lower(int(data[top]), cfg.n, cfg.alpha) > p[top]:
                cp_misses += 1
            y = top_two(data)[0]
        else:
            support = np.asarray(cfg.support, dtype=float)
            data = support[rng.choice(p.size, size=cfg.n, p=p)]
            means = p @ support
            y = top_two(data.mean(axis=0))[0]
        for name in cfg.methods:
            method = Method(name)
            est = estimate_margin(method, data, cfg)
            target = _true_margin(means, y, kind)
            if method in (Method.CONT_DIRECT_EB, Method.CONT_DIRECT_CS) and "fallback" not in est.meta:
                target = _true_direct(support, p, y, kind, cfg.taylor_order)
            if est.value > 0 and est.value > target:
                misses[name] += 1
    se = math.sqrt(cfg.alpha * (1 - cfg.alpha) / replications)
    rows = []
    tallies = list(misses.items())
    if cfg.mode == DISCRETE:
        tallies.insert(0, ("CP_LOWER", cp_misses))
    for name, k in tallies:
        rate = k / replications
        rows.append(
            {
                "method": name,
                "replications": replications,
                "misses": k,
                "miscoverage": rate,
                "se": math.sqrt(rate * (1 - rate) / replications),
                "alpha": cfg.alpha,
                "ok": rate <= cfg.alpha + 3 * se,
            }
        )
    return rows


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------


def run_sweep(cfg: ExperimentConfig, axis: str, values) -> list[dict]:
    """Certify once per axis value; one CTA panel per (value, method)."""
    axis = axis.upper()
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {sorted(SWEEP_AXES)}")
    if axis == "TEMPERATURE" and cfg.mode != CONTINUOUS:
        raise ConfigError("temperature sweeps need CONTINUOUS mode")
    key = SWEEP_AXES[axis]
    root = Path(cfg.out) / cfg.name
    summary = []
    for v in values:
        v = int(v) if key == "n" else float(v)
        if not v > 0:
            raise ConfigError("sweep values must be positive")
        sub = dataclasses.replace(cfg, **{key: v}).validate()
        results = run_certify(sub, root / f"{axis.lower()}={v}")
        for name, (records, curve) in results.items():
            summary.append(
                {
                    "axis": axis,
                    "value": v,
                    "method": name,
                    "mean_margin": float(np.mean([r["margin"] for r in records])),
                    "cta_r0": float(curve.approx_acc[0]),
                    "mean_cta": float(np.mean(curve.approx_acc)),
                }
            )
    root.mkdir(parents=True, exist_ok=True)
    with (root / "sweep.csv").open("w") as fh:
        fh.write("axis,value,method,mean_margin,cta_r0,mean_cta\n")
        for s in summary:
            fh.write(
                f"{s['axis']},{s['value']!r},{s['method']},{s['mean_margin']!r},{s['cta_r0']!r},{s['mean_cta']!r}\n"
            )
    return summary
