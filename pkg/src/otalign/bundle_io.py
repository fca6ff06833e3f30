"""On-disk embedding bundle format: loading, validation, synthesis.

A bundle directory holds four files:

* ``manifest.json`` -- shapes, class names, dtype tag, normalization mode,
  free-form ``metadata``.
* ``text.bin``    -- K*M*d float32 little-endian, class-major then
  description-major (row r = class r // M, description r % M).
* ``images.bin``  -- S*N*d float32 little-endian, sample-major then
  view-major.
* ``labels.bin``  -- S uint32 little-endian class indices.

All tensors are stored raw, row-major, uncompressed, so a load/write
round trip is bitwise exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

DTYPE_TAG = "f32le"
NORMALIZATIONS = ("unit", "raw")
UNIT_NORM_ATOL = 1e-4

# In-subspace jitter applied to description vectors by generate_synthetic.
DESCRIPTION_NOISE = 0.1


@dataclass
class Manifest:
    dim: int
    num_classes: int
    descriptions_per_class: int
    views_per_sample: int
    num_samples: int
    class_names: list[str]
    dtype: str = DTYPE_TAG
    normalization: str = "unit"
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        for name in ("dim", "num_classes", "descriptions_per_class", "views_per_sample"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise DataError(f"manifest.{name} must be a positive integer, got {value!r}")
        if not isinstance(self.num_samples, int) or self.num_samples < 0:
            raise DataError(f"manifest.num_samples must be >= 0, got {self.num_samples!r}")
        if self.dtype != DTYPE_TAG:
            raise DataError(f"manifest.dtype must be {DTYPE_TAG!r}, got {self.dtype!r}")
        if self.normalization not in NORMALIZATIONS:
            raise DataError(
                f"manifest.normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}"
            )
        if len(self.class_names) != self.num_classes:
            raise DataError(
                f"manifest.class_names has {len(self.class_names)} entries, expected {self.num_classes}"
            )
        if any(not isinstance(n, str) or not n for n in self.class_names):
            raise DataError("manifest.class_names entries must be non-empty strings")
        if len(set(self.class_names)) != self.num_classes:
            raise DataError("manifest.class_names entries must be unique")

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "num_classes": self.num_classes,
            "descriptions_per_class": self.descriptions_per_class,
            "views_per_sample": self.views_per_sample,
            "num_samples": self.num_samples,
            "class_names": list(self.class_names),
            "dtype": self.dtype,
            "normalization": self.normalization,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Manifest":
        required = (
            "dim",
            "num_classes",
            "descriptions_per_class",
            "views_per_sample",
            "num_samples",
            "class_names",
            "dtype",
            "normalization",
        )
        missing = [k for k in required if k not in raw]
        if missing:
            raise DataError(f"manifest.json missing fields: {missing}")
        m = cls(
            dim=raw["dim"],
            num_classes=raw["num_classes"],
            descriptions_per_class=raw["descriptions_per_class"],
            views_per_sample=raw["views_per_sample"],
            num_samples=raw["num_samples"],
            class_names=raw["class_names"],
            dtype=raw["dtype"],
            normalization=raw["normalization"],
            metadata=raw.get("metadata", {}),
        )
        m.validate()
        return m


@dataclass
class EmbeddingBundle:
    manifest: Manifest
    text_features: np.ndarray  # (K*M, d) float32
    image_views: np.ndarray  # (S, N, d) float32
    labels: np.ndarray  # (S,) uint32


def _check_finite(arr: np.ndarray, filename: str) -> None:
    flat = arr.reshape(-1)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        off = int(bad[0])
        raise DataError(
            f"{filename}: non-finite value at element {off} (byte offset {off * 4})"
        )


def _check_unit_rows(rows: np.ndarray, filename: str) -> None:
    norms = np.linalg.norm(rows.reshape(-1, rows.shape[-1]).astype(np.float64), axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_ATOL)
    if bad.size:
        row = int(bad[0])
        raise DataError(
            f"{filename}: row {row} has norm {norms[row]:.6f}, expected 1 within {UNIT_NORM_ATOL}"
        )


def validate_bundle(bundle: EmbeddingBundle) -> None:
    """Check every bundle invariant; raises DataError on the first violation."""
    m = bundle.manifest
    m.validate()
    k, mm, n, s, d = (
        m.num_classes,
        m.descriptions_per_class,
        m.views_per_sample,
        m.num_samples,
        m.dim,
    )
    if bundle.text_features.shape != (k * mm, d):
        raise DataError(
            f"text_features shape {bundle.text_features.shape} != {(k * mm, d)}"
        )
    if bundle.image_views.shape != (s, n, d):
        raise DataError(f"image_views shape {bundle.image_views.shape} != {(s, n, d)}")
    if bundle.labels.shape != (s,):
        raise DataError(f"labels shape {bundle.labels.shape} != {(s,)}")
    _check_finite(bundle.text_features, "text.bin")
    _check_finite(bundle.image_views, "images.bin")
    bad = np.flatnonzero(bundle.labels >= k)
    if bad.size:
        idx = int(bad[0])
        raise DataError(
            f"labels.bin: label {int(bundle.labels[idx])} at sample index {idx} is out of range [0, {k})"
        )
    if m.normalization == "unit":
        _check_unit_rows(bundle.text_features, "text.bin")
        if s:
            _check_unit_rows(bundle.image_views, "images.bin")


def _read_exact(path: Path, expected_bytes: int) -> bytes:
    if not path.is_file():
        raise DataError(f"missing file: {path.name}")
    blob = path.read_bytes()
    if len(blob) != expected_bytes:
        raise DataError(
            f"{path.name}: size {len(blob)} bytes, expected {expected_bytes} bytes"
        )
    return blob


def load_bundle(path, renormalize: bool = False) -> EmbeddingBundle:
    """Load and validate a bundle directory.

    With ``renormalize=True`` and a ``unit`` manifest, rows are rescaled to
    exactly unit norm after validation; the default leaves the stored bytes
    untouched so write/load round trips are bitwise exact.
    """
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DataError(f"missing file: manifest.json (in {root})")
    try:
        raw = json.loads(manifest_path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest.json: invalid JSON ({exc})") from exc
    manifest = Manifest.from_dict(raw)
    k, mm, n, s, d = (
        manifest.num_classes,
        manifest.descriptions_per_class,
        manifest.views_per_sample,
        manifest.num_samples,
        manifest.dim,
    )
    text = np.frombuffer(
        _read_exact(root / "text.bin", k * mm * d * 4), dtype="<f4"
    ).reshape(k * mm, d)
    images = np.frombuffer(
        _read_exact(root / "images.bin", s * n * d * 4), dtype="<f4"
    ).reshape(s, n, d)
    labels = np.frombuffer(_read_exact(root / "labels.bin", s * 4), dtype="<u4")
    bundle = EmbeddingBundle(manifest, text, images, labels)
    validate_bundle(bundle)
    if renormalize and manifest.normalization == "unit":
        bundle = EmbeddingBundle(
            manifest,
            _unit_rows_f32(text),
            _unit_rows_f32(images.reshape(-1, d)).reshape(s, n, d),
            labels,
        )
    return bundle


def _unit_rows_f32(rows: np.ndarray) -> np.ndarray:
    work = rows.astype(np.float64)
    work /= np.linalg.norm(work, axis=-1, keepdims=True)
    return work.astype("<f4")


def write_bundle(bundle: EmbeddingBundle, path) -> None:
    """Write a validated bundle; load_bundle(write_bundle(b)) is bitwise b."""
    validate_bundle(bundle)
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
        (root / "manifest.json").write_text(
            json.dumps(bundle.manifest.to_dict(), indent=2, sort_keys=True) + "\n",
            "utf-8",
        )
        (root / "text.bin").write_bytes(
            np.ascontiguousarray(bundle.text_features, dtype="<f4").tobytes()
        )
        (root / "images.bin").write_bytes(
            np.ascontiguousarray(bundle.image_views, dtype="<f4").tobytes()
        )
        (root / "labels.bin").write_bytes(
            np.ascontiguousarray(bundle.labels, dtype="<u4").tobytes()
        )
    except OSError as exc:
        raise DataError(f"cannot write bundle to {root}: {exc}") from exc


def generate_synthetic(
    seed: int,
    d: int,
    num_classes: int,
    descriptions_per_class: int,
    views_per_sample: int,
    num_samples: int,
    noise_scale: float,
    subspace_dim: int,
) -> EmbeddingBundle:
    """Deterministic synthetic bundle confined to a random low-dim subspace.

    Class prototypes, description vectors (prototype + 0.1 in-subspace
    jitter) and image views (prototype + ``noise_scale`` in-subspace jitter)
    are all unit-normalized and live inside one ``subspace_dim``-dimensional
    subspace of R^d.
    """
    if subspace_dim > d:
        raise DataError(f"subspace_dim {subspace_dim} exceeds dim {d}")
    if subspace_dim < 1 or min(d, num_classes, descriptions_per_class, views_per_sample) < 1:
        raise DataError("all shape parameters must be >= 1")
    if num_samples < 0 or noise_scale < 0:
        raise DataError("num_samples and noise_scale must be non-negative")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((d, subspace_dim)))
    protos = (basis @ rng.standard_normal((subspace_dim, num_classes))).T
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)

    text = np.empty((num_classes, descriptions_per_class, d))
    for y in range(num_classes):
        jitter = basis @ rng.standard_normal((subspace_dim, descriptions_per_class))
        rows = protos[y] + DESCRIPTION_NOISE * jitter.T
        text[y] = rows / np.linalg.norm(rows, axis=1, keepdims=True)

    labels = rng.integers(0, num_classes, num_samples, dtype=np.uint32)
    views = np.empty((num_samples, views_per_sample, d))
    for s in range(num_samples):
        jitter = basis @ rng.standard_normal((subspace_dim, views_per_sample))
        rows = protos[labels[s]] + noise_scale * jitter.T
        views[s] = rows / np.linalg.norm(rows, axis=1, keepdims=True)

    manifest = Manifest(
        dim=d,
        num_classes=num_classes,
        descriptions_per_class=descriptions_per_class,
        views_per_sample=views_per_sample,
        num_samples=num_samples,
        class_names=[f"class_{y:03d}" for y in range(num_classes)],
        normalization="unit",
        metadata={
            "generator": {
                "algorithm": "pcg64",
                "seed": seed,
                "noise_scale": noise_scale,
                "description_noise": DESCRIPTION_NOISE,
                "subspace_dim": subspace_dim,
            }
        },
    )
    bundle = EmbeddingBundle(
        manifest,
        text.reshape(num_classes * descriptions_per_class, d).astype("<f4"),
        views.astype("<f4"),
        labels.astype("<u4"),
    )
    validate_bundle(bundle)
    return bundle
