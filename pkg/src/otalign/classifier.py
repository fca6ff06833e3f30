"""Classifier variants over an embedding bundle.

Four methods share one argmin-over-scores code path (scores are distances,
lower is better, ties broken toward the lowest class index):

* ``cosine``       -- negative cosine to the class-mean embedding, view 0.
* ``mean_text``    -- negative mean over descriptions of per-description
  cosines, view 0.
* ``ot_raw``       -- Sinkhorn distance between the weighted view set and
  each class's weighted description set, raw features.
* ``ot_projected`` -- same with views projected onto the text subspace
  before the cost matrix; entropy weights are computed on the projected
  views so noise orthogonal to the subspace cannot leak into the weights.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ot
from .distributions import TextBank, ViewSet, WeightingConfig, unit_rows, view_weights
from .errors import DataError
from .subspace import SubspaceProjector, project

METHODS = ("cosine", "mean_text", "ot_raw", "ot_projected")


@dataclass
class OTParams:
    epsilon: float = ot.DEFAULT_EPSILON
    max_iters: int = ot.DEFAULT_MAX_ITERS
    tolerance: float = ot.DEFAULT_TOLERANCE


@dataclass
class ClassifierConfig:
    method: str = "ot_projected"
    components: int = 256
    weighting: WeightingConfig = field(default_factory=WeightingConfig)
    ot_params: OTParams = field(default_factory=OTParams)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method == "ot_projected" and self.components < 1:
            raise ValueError("ot_projected requires components >= 1")


@dataclass
class Prediction:
    label: int
    per_class_scores: np.ndarray  # (K,), lower is better
    margin: float  # runner-up score minus best score, >= 0


def _predict_from_scores(scores: np.ndarray) -> Prediction:
    scores = np.asarray(scores, dtype=np.float64)
    label = int(scores.argmin())
    if scores.size > 1:
        best, second = np.partition(scores, 1)[:2]
        margin = float(second - best)
    else:
        margin = 0.0
    return Prediction(label, scores, margin)


def cosine_classify(x, bank: TextBank) -> Prediction:
    """Zero-shot baseline: highest cosine to the class-mean embedding."""
    xn = unit_rows(np.asarray(x, dtype=np.float64), "input vector")
    mn = unit_rows(bank.means, "class mean")
    return _predict_from_scores(-(mn @ xn))


def mean_text_classify(x, bank: TextBank) -> Prediction:
    """Average-of-cosines variant across the per-class description sets."""
    xn = unit_rows(np.asarray(x, dtype=np.float64), "input vector")
    k, m, d = bank.features.shape
    zn = unit_rows(bank.features.reshape(k * m, d), "description")
    sims = (zn @ xn).reshape(k, m)
    return _predict_from_scores(-sims.mean(axis=1))


def build_cost(views, class_features, projector: SubspaceProjector | None = None):
    """Cosine cost matrix 1 - cos(view, description), entries in [0, 2]."""
    feats = np.atleast_2d(np.asarray(views, dtype=np.float64))
    if projector is not None:
        feats = project(projector, feats)
    vn = unit_rows(feats, "projected view" if projector is not None else "view")
    zn = unit_rows(np.atleast_2d(np.asarray(class_features, dtype=np.float64)), "description")
    return np.clip(1.0 - vn @ zn.T, 0.0, 2.0)


def _cost_tensor(view_feats, bank: TextBank, projector: SubspaceProjector | None):
    """(K, N, M) stack of per-class cost matrices for one sample."""
    feats = np.atleast_2d(np.asarray(view_feats, dtype=np.float64))
    if projector is not None:
        feats = project(projector, feats)
    vn = unit_rows(feats, "projected view" if projector is not None else "view")
    k, m, d = bank.features.shape
    zn = unit_rows(bank.features.reshape(k * m, d), "description").reshape(k, m, d)
    sims = np.einsum("nd,kmd->knm", vn, zn)
    return np.clip(1.0 - sims, 0.0, 2.0)


def ot_classify(
    views: ViewSet,
    bank: TextBank,
    projector: SubspaceProjector | None = None,
    cfg: ClassifierConfig | None = None,
) -> Prediction:
    """Lowest per-class transport distance wins.

    Uses ``views.weights`` as the source marginal; callers decide whether
    those weights came from raw or projected features.
    """
    cfg = cfg or ClassifierConfig()
    p = cfg.ot_params
    try:
        costs = _cost_tensor(views.features, bank, projector)
        distances = ot.sinkhorn_distances_batch(
            costs, views.weights, bank.weights, p.epsilon, p.max_iters, p.tolerance
        )
    except Exception as exc:
        raise type(exc)(f"ot_classify: {exc}") from exc
    return _predict_from_scores(distances)


@dataclass
class MethodReport:
    method: str
    accuracy: float
    mean_margin: float
    mean_score: float
    samples: int
    seconds: float


def _require_projector(cfg, projector):
    if cfg.method == "ot_projected" and projector is None:
        raise DataError("method ot_projected requires a projector")


def evaluate(
    bundle,
    cfg: ClassifierConfig,
    projector: SubspaceProjector | None = None,
    threads: int = 1,
) -> MethodReport:
    """Accuracy / margin / score statistics of one method over a bundle."""
    _require_projector(cfg, projector)
    man = bundle.manifest
    bank = TextBank(
        features=np.asarray(bundle.text_features, dtype=np.float64).reshape(
            man.num_classes, man.descriptions_per_class, man.dim
        ),
        config=cfg.weighting,
    )
    views = np.asarray(bundle.image_views, dtype=np.float64)
    labels = np.asarray(bundle.labels, dtype=np.int64)
    n_samples = man.num_samples
    started = time.perf_counter()
    if cfg.method in ("cosine", "mean_text"):
        classify = cosine_classify if cfg.method == "cosine" else mean_text_classify
        preds = [classify(views[s, 0], bank) for s in range(n_samples)]
    else:
        use_proj = projector if cfg.method == "ot_projected" else None
        preds: list = [None] * n_samples

        def work(s):
            feats = views[s]
            wfeats = project(use_proj, feats) if use_proj is not None else feats
            vs = ViewSet(feats, view_weights(wfeats, bank.means, cfg.weighting))
            preds[s] = ot_classify(vs, bank, use_proj, cfg)

        if threads > 1 and n_samples > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(work, range(n_samples)))
        else:
            for s in range(n_samples):
                work(s)
    elapsed = time.perf_counter() - started
    if n_samples == 0:
        return MethodReport(cfg.method, 0.0, 0.0, 0.0, 0, elapsed)
    hits = sum(p.label == labels[s] for s, p in enumerate(preds))
    return MethodReport(
        method=cfg.method,
        accuracy=hits / n_samples,
        mean_margin=float(np.mean([p.margin for p in preds])),
        mean_score=float(np.mean([p.per_class_scores.mean() for p in preds])),
        samples=n_samples,
        seconds=elapsed,
    )
