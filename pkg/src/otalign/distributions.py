"""Discrete distributions over views/descriptions and entropy weighting.

Each test image is a weighted mixture of its N augmented-view embeddings;
each class is a weighted mixture of its M description embeddings. Weights
come from the Shannon entropy of a temperature-scaled cosine posterior
against the class-mean embeddings: ``semantic`` mode upweights low-entropy
(confident) members, ``paper_literal`` keeps the opposite printed
convention for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

ENTROPY_SIGNS = ("paper_literal", "semantic")
ZERO_NORM_EPS = 1e-12


@dataclass
class WeightingConfig:
    temperature_logit: float = 100.0
    entropy_sign: str = "semantic"
    temperature_weight: float = 1.0

    def __post_init__(self):
        if self.temperature_logit <= 0 or self.temperature_weight <= 0:
            raise ValueError("temperatures must be positive")
        if self.entropy_sign not in ENTROPY_SIGNS:
            raise ValueError(f"entropy_sign must be one of {ENTROPY_SIGNS}")


@dataclass
class ViewSet:
    features: np.ndarray  # (N, d)
    weights: np.ndarray  # (N,), simplex


@dataclass
class TextBank:
    features: np.ndarray  # (K, M, d)
    means: np.ndarray = field(init=False)  # (K, d)
    weights: np.ndarray = field(init=False)  # (K, M), rows on the simplex
    config: WeightingConfig = field(default_factory=WeightingConfig)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 3:
            raise ValueError(f"bank features must be (K, M, d), got {self.features.shape}")
        self.means = self.features.mean(axis=1)
        self.weights = text_weights(self.features, self.means, self.config)

    @property
    def num_classes(self) -> int:
        return self.features.shape[0]


def unit_rows(x, what: str = "vector"):
    """Rows rescaled to unit norm; raises on a numerically zero row."""
    arr = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if (norms < ZERO_NORM_EPS).any():
        idx = int(np.flatnonzero(norms.reshape(-1) < ZERO_NORM_EPS)[0])
        raise NumericalError(f"{what} {idx} has near-zero norm; cosine undefined")
    return arr / norms


def _softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def class_posteriors(x, means, temperature_logit: float):
    """Softmax over classes of temperature-scaled cosine similarity.

    ``x`` may be a single vector or a stack of rows; returns matching
    (..., K) probabilities.
    """
    xn = unit_rows(np.atleast_2d(x), "input vector")
    mn = unit_rows(means, "class mean")
    post = _softmax(temperature_logit * (xn @ mn.T), axis=-1)
    return post[0] if np.asarray(x).ndim == 1 else post


def class_posterior(x, means, temperature_logit: float):
    """Single-vector form of class_posteriors."""
    return class_posteriors(np.asarray(x, dtype=np.float64), means, temperature_logit)


def entropy(p) -> float:
    """Natural-log Shannon entropy with 0*log(0) = 0."""
    arr = np.asarray(p, dtype=np.float64)
    if (arr < 0).any():
        raise ValueError("probability vector has a negative entry")
    return float(entropies(arr[None, :])[0])


def entropies(p):
    arr = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(arr > 0, arr * np.log(arr), 0.0)
    return -terms.sum(axis=-1)


def view_weights(views, means, cfg: WeightingConfig):
    """Entropy-softmax importance weights for a stack of view embeddings."""
    views = np.atleast_2d(np.asarray(views, dtype=np.float64))
    post = class_posteriors(views, means, cfg.temperature_logit)
    h = entropies(post)
    sign = 1.0 if cfg.entropy_sign == "paper_literal" else -1.0
    return _softmax(sign * h / cfg.temperature_weight, axis=-1)


def text_weights(bank_features, means, cfg: WeightingConfig):
    """Per-class description weights; row y applies view_weights to class y."""
    feats = np.asarray(bank_features, dtype=np.float64)
    k, m, d = feats.shape
    post = class_posteriors(feats.reshape(k * m, d), means, cfg.temperature_logit)
    h = entropies(post).reshape(k, m)
    sign = 1.0 if cfg.entropy_sign == "paper_literal" else -1.0
    return _softmax(sign * h / cfg.temperature_weight, axis=-1)


def build_view_set(views, means, cfg: WeightingConfig) -> ViewSet:
    views = np.atleast_2d(np.asarray(views, dtype=np.float64))
    return ViewSet(views, view_weights(views, means, cfg))


def build_text_bank(features, cfg: WeightingConfig | None = None) -> TextBank:
    """TextBank from (K, M, d) features or ((K*M, d), K) flat storage."""
    return TextBank(features=np.asarray(features, dtype=np.float64), config=cfg or WeightingConfig())


def bank_from_bundle(bundle, cfg: WeightingConfig | None = None) -> TextBank:
    m = bundle.manifest
    feats = np.asarray(bundle.text_features, dtype=np.float64).reshape(
        m.num_classes, m.descriptions_per_class, m.dim
    )
    return build_text_bank(feats, cfg)
