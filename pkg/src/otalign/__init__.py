"""Robust zero-shot classification on embedding bundles.

Restores image-text alignment by projecting image embeddings onto the
subspace spanned by class-description embeddings, then classifies by
entropy-weighted optimal transport between view and description
distributions.
"""

__version__ = "0.1.0"
