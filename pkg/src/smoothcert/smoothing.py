"""Monte Carlo sampling of a smoothed classifier.

A base classifier maps a batch of inputs ``(k, d)`` to logits ``(k, m)``.
Inputs are perturbed with isotropic Gaussian noise and either the hard class
(counts vector) or a simplex map of the logits (probability matrix) is
recorded for every sample.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import special as sc


class BaseClassifier(Protocol):
    num_classes: int
    input_dim: int

    def logits(self, batch: np.ndarray) -> np.ndarray: ...


class SimplexMap(str, enum.Enum):
    HARDMAX = "HARDMAX"
    SOFTMAX = "SOFTMAX"
    SPARSEMAX = "SPARSEMAX"


@dataclass(frozen=True)
class SimplexMapSpec:
    variant: SimplexMap = SimplexMap.SOFTMAX
    temperature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "variant", SimplexMap(self.variant))
        if self.variant is SimplexMap.SOFTMAX and not self.temperature > 0:
            raise ValueError("softmax temperature must be positive")


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float
    n: int
    seed: int = 0
    batch_size: int = 1024

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def hardmax(logits) -> np.ndarray:
    """One-hot at the argmax along the last axis (lowest index on ties)."""
    z = np.asarray(logits, dtype=float)
    out = np.zeros_like(z)
    np.put_along_axis(out, np.argmax(z, axis=-1)[..., None], 1.0, axis=-1)
    return out


def tempered_softmax(logits, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=float) / temperature
    return sc.softmax(z, axis=-1)


def sparsemax(logits) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex."""
    z = np.asarray(logits, dtype=float)
    srt = -np.sort(-z, axis=-1)
    k = np.arange(1, z.shape[-1] + 1)
    css = np.cumsum(srt, axis=-1) - 1.0
    support = srt - css / k > 0
    rho = support.sum(axis=-1, keepdims=True)
    tau = np.take_along_axis(css, rho - 1, axis=-1) / rho
    return np.maximum(z - tau, 0.0)


def apply_simplex_map(logits, spec: SimplexMapSpec) -> np.ndarray:
    if spec.variant is SimplexMap.HARDMAX:
        return hardmax(logits)
    if spec.variant is SimplexMap.SOFTMAX:
        return tempered_softmax(logits, spec.temperature)
    return sparsemax(logits)


def noise_rng(seed: int, input_id: int) -> np.random.Generator:
    """Counter-based stream keyed on ``(seed, input_id)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, input_id])))


def _noisy_logits(classifier: BaseClassifier, x, cfg: NoiseConfig, input_id: int):
    x = np.asarray(x, dtype=float).ravel()
    if x.size != classifier.input_dim:
        raise ValueError(f"input has dimension {x.size}, classifier expects {classifier.input_dim}")
    rng = noise_rng(cfg.seed, input_id)
    done = 0
    while done < cfg.n:
        k = min(cfg.batch_size, cfg.n - done)
        eps = rng.standard_normal((k, x.size)) * cfg.sigma
        out = np.asarray(classifier.logits(x + eps), dtype=float)
        if out.shape != (k, classifier.num_classes):
            raise ValueError(f"classifier returned shape {out.shape}, expected {(k, classifier.num_classes)}")
        yield out
        done += k


def sample_counts(classifier: BaseClassifier, x, cfg: NoiseConfig, input_id: int = 0) -> np.ndarray:
    """Class histogram of ``argmax f(x + eps)`` over ``cfg.n`` noise draws."""
    counts = np.zeros(classifier.num_classes, dtype=np.int64)
    for logits in _noisy_logits(classifier, x, cfg, input_id):
        counts += np.bincount(np.argmax(logits, axis=1), minlength=classifier.num_classes)
    return counts


def sample_prob_matrix(
    classifier: BaseClassifier, x, cfg: NoiseConfig, spec: SimplexMapSpec, input_id: int = 0
) -> np.ndarray:
    """``n x m`` matrix whose rows are ``s(f(x + eps_i))``."""
    rows = [apply_simplex_map(lg, spec) for lg in _noisy_logits(classifier, x, cfg, input_id)]
    return np.concatenate(rows, axis=0)


# --------------------------------------------------------------------------
# Synthetic classifiers
# --------------------------------------------------------------------------


class AffineClassifier:
    """``f(x) = W x + b``.

    For two classes the smoothed hard-class probabilities are Gaussian:
    ``P(class 0) = Phi((w.x + c) / (sigma ||w||))`` with ``w = W0 - W1``,
    ``c = b0 - b1`` (see :meth:`smoothed_binary_prob`).
    """

    def __init__(self, W, b):
        self.W = np.asarray(W, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.num_classes, self.input_dim = self.W.shape

    def logits(self, batch):
        return np.asarray(batch, dtype=float) @ self.W.T + self.b

    def smoothed_binary_prob(self, x, sigma: float) -> float:
        if self.num_classes != 2:
            raise ValueError("closed form only for two classes")
        w = self.W[0] - self.W[1]
        c = self.b[0] - self.b[1]
        return float(sc.ndtr((w @ np.asarray(x, dtype=float) + c) / (sigma * np.linalg.norm(w))))


class MultinomialOracle:
    """Hard classifier whose smoothed class distribution is exactly ``p``.

    The first input coordinate is standardised with the known ``center`` and
    ``sigma`` and pushed through ``Phi``; the uniform value selects a class by
    inverse CDF.  Deterministic in its input.
    """

    def __init__(self, p, center, sigma: float):
        self.p = np.asarray(p, dtype=float)
        self.cdf = np.cumsum(self.p)
        self.cdf[-1] = 1.0
        self.center = np.asarray(center, dtype=float).ravel()
        self.sigma = float(sigma)
        self.num_classes = self.p.size
        self.input_dim = self.center.size

    def logits(self, batch):
        batch = np.asarray(batch, dtype=float)
        u = sc.ndtr((batch[:, 0] - self.center[0]) / self.sigma)
        cls = np.minimum(np.searchsorted(self.cdf, u, side="right"), self.num_classes - 1)
        out = np.zeros((batch.shape[0], self.num_classes))
        out[np.arange(batch.shape[0]), cls] = 1.0
        return out


class PrototypeClassifier(AffineClassifier):
    """Nearest-prototype linear classifier ``beta (mu_k . x - |mu_k|^2 / 2)``.

    :func:`paired_prototypes` places the prototypes in confusable pairs: two
    classes share a centre and differ by ``delta`` along a private direction,
    and pair centres are ``radius`` apart along orthogonal directions.  Under
    Gaussian noise nearly all of the non-top mass then falls on the pair mate,
    which mimics the semantic confusions of trained image classifiers.
    """

    def __init__(self, prototypes, beta: float = 1.0):
        mu = np.asarray(prototypes, dtype=float)
        super().__init__(beta * mu, -0.5 * beta * np.sum(mu * mu, axis=1))
        self.prototypes = mu
        self.beta = float(beta)


def paired_prototypes(m: int, d: int, radius: float, delta: float, rng: np.random.Generator) -> np.ndarray:
    pairs = (m + 1) // 2
    if d < pairs + m // 2:
        raise ValueError("input dimension too small for the requested number of classes")
    basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    basis = basis.T
    mu = np.empty((m, d))
    for k in range(m):
        centre = radius * basis[k // 2]
        if k // 2 < m // 2:
            sign = 1.0 if k % 2 == 0 else -1.0
            centre = centre + sign * 0.5 * delta * basis[pairs + k // 2]
        mu[k] = centre
    return mu
