"""Out-of-sample hashing with a trained bilinear model."""

from __future__ import annotations

import numpy as np

from .projection import project_features
from .types import BilinearHashModel, CodeMatrix, FeatureTensor

__all__ = ["encode"]


def encode(features: FeatureTensor, model: BilinearHashModel) -> CodeMatrix:
    """Hash queries as the sign of the learned code regression applied to the
    projected features; zero scores map to +1."""
    if (features.d1, features.d2) != (model.d1, model.d2):
        raise ValueError(
            f"query shape ({features.d1}, {features.d2}) does not match "
            f"model input ({model.d1}, {model.d2})"
        )
    h = project_features(features, model.left_proj, model.right_proj)
    if model.proj_mean is not None:
        h = h - model.proj_mean[:, None]
    scores = model.hash_weights @ h
    return CodeMatrix(np.where(scores >= 0, 1, -1).astype(np.int8))
