"""Baseline hashers: random-projection LSH and bilinear random-rotation codes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import CodeMatrix, FeatureTensor, _frozen

__all__ = [
    "BpbcModel",
    "LshModel",
    "random_orthonormal",
    "bpbc_model",
    "bpbc_encode",
    "bpbc_objective",
    "lsh_model",
    "lsh_encode",
]


@dataclass(frozen=True)
class BpbcModel:
    """Two orthonormal-column rotations; code length is k1*k2."""

    left_rot: np.ndarray   # (d1, k1)
    right_rot: np.ndarray  # (d2, k2)

    def __post_init__(self):
        for name, r in (("left_rot", self.left_rot), ("right_rot", self.right_rot)):
            r = np.asarray(r, dtype=np.float64)
            gram = r.T @ r
            if not np.allclose(gram, np.eye(r.shape[1]), atol=1e-10):
                raise ValueError(f"{name} columns are not orthonormal")
            object.__setattr__(self, name, _frozen(r))

    @property
    def bits(self) -> int:
        return self.left_rot.shape[1] * self.right_rot.shape[1]


@dataclass(frozen=True)
class LshModel:
    """Dense Gaussian projection hashing vectorized features to sign bits."""

    proj: np.ndarray  # (c, d1*d2)
    seed: int
    d1: int
    d2: int

    def __post_init__(self):
        proj = np.asarray(self.proj, dtype=np.float64)
        if proj.shape[1] != self.d1 * self.d2:
            raise ValueError(
                f"projection needs {self.d1 * self.d2} columns for "
                f"{self.d1}x{self.d2} inputs, got {proj.shape[1]}"
            )
        object.__setattr__(self, "proj", _frozen(proj))

    @property
    def bits(self) -> int:
        return self.proj.shape[0]


def random_orthonormal(d: int, k: int, seed) -> np.ndarray:
    """Orthonormalized Gaussian matrix (d, k), deterministic under the seed.

    Column signs are fixed so the QR factor has a positive diagonal.
    """
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d, k)))
    return q * np.sign(np.diag(r))


def bpbc_model(d1: int, d2: int, k1: int, k2: int, seed: int) -> BpbcModel:
    """Rotation baseline with independent seeded draws for the two sides."""
    return BpbcModel(random_orthonormal(d1, k1, seed),
                     random_orthonormal(d2, k2, seed + 1))


def bpbc_encode(features: FeatureTensor, model: BpbcModel) -> CodeMatrix:
    """Per sample: vectorized signs of the two-sided rotated feature matrix."""
    if (features.d1, features.d2) != (model.left_rot.shape[0], model.right_rot.shape[0]):
        raise ValueError(
            f"features ({features.d1}, {features.d2}) do not match rotations "
            f"({model.left_rot.shape[0]}, {model.right_rot.shape[0]})"
        )
    rotated = np.einsum("ai,nab,bj->nij", model.left_rot, features.data,
                        model.right_rot, optimize=True)
    signs = np.where(rotated >= 0, 1, -1).astype(np.int8)
    n = features.n
    return CodeMatrix(signs.transpose(0, 2, 1).reshape(n, -1).T)


def bpbc_objective(features: FeatureTensor, code_blocks: np.ndarray,
                   left_rot: np.ndarray, right_rot: np.ndarray) -> float:
    """Alignment between per-sample code blocks (n, k1, k2) and the rotated
    features; equals the entrywise L1 norm of the rotations' output when the
    blocks are its signs."""
    code_blocks = np.asarray(code_blocks, dtype=np.float64)
    rotated = np.einsum("ai,nab,bj->nij", left_rot, features.data, right_rot,
                        optimize=True)
    if code_blocks.shape != rotated.shape:
        raise ValueError(
            f"code blocks {code_blocks.shape} do not match rotated features {rotated.shape}"
        )
    return float(np.einsum("nij,nij->", code_blocks, rotated))


def lsh_model(d1: int, d2: int, bits: int, seed: int) -> LshModel:
    """Seeded standard-normal projection onto `bits` hyperplanes."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    rng = np.random.default_rng(seed)
    return LshModel(rng.standard_normal((bits, d1 * d2)), seed, d1, d2)


def lsh_encode(features: FeatureTensor, model: LshModel) -> CodeMatrix:
    """Signs of the random projections of the vectorized features."""
    if (features.d1, features.d2) != (model.d1, model.d2):
        raise ValueError(
            f"features ({features.d1}, {features.d2}) do not match model "
            f"({model.d1}, {model.d2})"
        )
    n = features.n
    flat = features.data.transpose(0, 2, 1).reshape(n, -1).T  # column-major per sample
    scores = model.proj @ flat
    return CodeMatrix(np.where(scores >= 0, 1, -1).astype(np.int8))
