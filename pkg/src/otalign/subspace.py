"""Text-induced subspace: truncated SVD basis, projection, perturbation split.

The basis spans the top-C left-singular directions of the text feature
matrix arranged d x (K*M) (one column per description vector). Only the
left factor and singular values are kept; the decomposition is realized as
a symmetric eigendecomposition of the d x d Gram matrix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import symmetric_eigh_desc
from .errors import DataError

# Numerical-rank cutoff is tied to float32 storage noise of bundles.
_F32_EPS = float(np.finfo(np.float32).eps)


class RankDeficiencyError(DataError):
    """Requested more components than the numerical rank supports."""


@dataclass
class SubspaceProjector:
    basis: np.ndarray  # (d, C), orthonormal columns
    components: int
    singular_values: np.ndarray  # (C,), non-increasing

    @property
    def dim(self) -> int:
        return self.basis.shape[0]


def build_projector(text_features, components: int, center: bool = False) -> SubspaceProjector:
    """Top-``components`` singular subspace of the stacked text features.

    ``text_features`` is (K*M, d) with one description vector per row.
    Column signs follow a fixed convention (largest-magnitude entry
    positive). Raises RankDeficiencyError instead of padding when the
    matrix has fewer than ``components`` numerically nonzero singular
    values.
    """
    rows = np.asarray(text_features, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"text_features must be 2-D, got shape {rows.shape}")
    if not np.isfinite(rows).all():
        raise DataError("text_features contain non-finite values")
    n_rows, d = rows.shape
    limit = min(d, n_rows)
    if not 1 <= components <= limit:
        raise ValueError(
            f"components must be in [1, {limit}] for a {n_rows}x{d} text matrix, got {components}"
        )
    if center:
        rows = rows - rows.mean(axis=0)
    gram = rows.T @ rows
    eigvals, eigvecs = symmetric_eigh_desc(gram)
    sing = np.sqrt(np.clip(eigvals, 0.0, None))
    if sing[0] > 0:
        rank = int(np.count_nonzero(sing > sing[0] * max(d, n_rows) * _F32_EPS))
    else:
        rank = 0
    if rank < components:
        raise RankDeficiencyError(
            f"text matrix has numerical rank {rank} < requested components {components}"
        )
    basis = eigvecs[:, :components].copy()
    picks = np.abs(basis).argmax(axis=0)
    signs = np.sign(basis[picks, np.arange(components)])
    signs[signs == 0] = 1.0
    basis *= signs
    return SubspaceProjector(basis, components, sing[:components].copy())


def project(projector: SubspaceProjector, x):
    """Orthogonal projection onto the basis span; accepts (d,) or (..., d)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != projector.dim:
        raise ValueError(
            f"dimension mismatch: vector has {arr.shape[-1]}, projector has {projector.dim}"
        )
    return (arr @ projector.basis) @ projector.basis.T


@dataclass
class PerturbationSplit:
    parallel: np.ndarray
    orthogonal: np.ndarray


def split_perturbation(projector: SubspaceProjector, delta) -> PerturbationSplit:
    """Split delta into its in-span and orthogonal components (sum is exact)."""
    delta = np.asarray(delta, dtype=np.float64)
    parallel = project(projector, delta)
    return PerturbationSplit(parallel, delta - parallel)


def pca_coords(projector: SubspaceProjector, features):
    """Coordinates of each row on the first two basis directions."""
    if projector.components < 2:
        raise ValueError("pca_coords needs a projector with at least 2 components")
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape[-1] != projector.dim:
        raise ValueError(
            f"dimension mismatch: features have {feats.shape[-1]}, projector has {projector.dim}"
        )
    return feats @ projector.basis[:, :2]


def save_projector(projector: SubspaceProjector, path) -> None:
    """proj.bin: u32le d, u32le C, basis column-major f32le, singular values f32le."""
    out = Path(path)
    d, c = projector.basis.shape
    blob = struct.pack("<II", d, c)
    blob += projector.basis.astype("<f4").tobytes(order="F")
    blob += projector.singular_values.astype("<f4").tobytes()
    out.write_bytes(blob)


def load_projector(path) -> SubspaceProjector:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DataError(f"{path}: truncated header")
    d, c = struct.unpack_from("<II", raw)
    expected = 8 + 4 * d * c + 4 * c
    if len(raw) != expected:
        raise DataError(f"{path}: size {len(raw)} bytes, expected {expected} bytes")
    basis = np.frombuffer(raw, dtype="<f4", count=d * c, offset=8)
    basis = basis.reshape(d, c, order="F").astype(np.float64)
    sing = np.frombuffer(raw, dtype="<f4", count=c, offset=8 + 4 * d * c).astype(np.float64)
    ortho = np.abs(basis.T @ basis - np.eye(c)).max()
    if ortho > 1e-5:
        raise DataError(f"{path}: basis columns not orthonormal (max deviation {ortho:.2e})")
    return SubspaceProjector(basis, int(c), sing)
