"""Core containers: matrix-form features, labels, binary codes and the trained model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "sign",
    "vectorize",
    "unvectorize",
    "FeatureTensor",
    "LabelMatrix",
    "CodeMatrix",
    "PackedCodes",
    "pack_codes",
    "unpack_codes",
    "ModelHyper",
    "BilinearHashModel",
]


def sign(x):
    """Binarize to {-1, +1}, mapping zero to +1.

    Accepts scalars or arrays; raises ValueError on non-finite input.
    """
    arr = np.asarray(x)
    if not np.all(np.isfinite(arr)):
        raise ValueError("sign() requires finite input")
    out = np.where(arr >= 0, 1, -1).astype(np.int8)
    if np.isscalar(x) or arr.ndim == 0:
        return int(out)
    return out


def vectorize(m: np.ndarray) -> np.ndarray:
    """Stack a matrix into a vector column by column (column-major order)."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m.ravel(order="F")


def unvectorize(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vectorize`: reshape a vector back to rows x cols."""
    v = np.asarray(v)
    if v.size != rows * cols:
        raise ValueError(f"cannot reshape {v.size} entries into {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class FeatureTensor:
    """n samples of matrix-form features, stored as an (n, d1, d2) float array."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"features must be (n, d1, d2), got shape {data.shape}")
        n, d1, d2 = data.shape
        if n < 1 or d1 < 1 or d2 < 1:
            raise ValueError(f"all feature dimensions must be >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("features contain non-finite values")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d1(self) -> int:
        return self.data.shape[1]

    @property
    def d2(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LabelMatrix:
    """(l, n) one-hot / multi-hot label matrix; every sample carries >= 1 label."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"labels must be (l, n), got shape {data.shape}")
        if not np.isin(data, (0, 1)).all():
            raise ValueError("label entries must be exactly 0 or 1")
        data = data.astype(np.uint8)
        if (data.sum(axis=0) == 0).any():
            bad = int(np.flatnonzero(data.sum(axis=0) == 0)[0])
            raise ValueError(f"sample {bad} has no label")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def l(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class CodeMatrix:
    """(c, n) binary code matrix over {-1, +1}; samples are columns."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"codes must be (c, n), got shape {data.shape}")
        if not np.isin(data, (-1, 1)).all():
            raise ValueError("code entries must be exactly -1 or +1")
        object.__setattr__(self, "data", _frozen(data.astype(np.int8)))

    @property
    def c(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class PackedCodes:
    """Bit-packed codes for popcount ranking: one row of 64-bit words per sample.

    Bit k of a sample's word stream is 1 where code bit k is +1; words are
    little-endian so the first code bit is the lowest bit of the first word.
    """

    words: np.ndarray
    bits: int

    def __post_init__(self):
        words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if words.ndim != 2:
            raise ValueError(f"packed words must be (n, n_words), got {words.shape}")
        expected = (self.bits + 63) // 64
        if words.shape[1] != expected:
            raise ValueError(
                f"{self.bits}-bit codes need {expected} words per sample, got {words.shape[1]}"
            )
        object.__setattr__(self, "words", _frozen(words))

    @property
    def n(self) -> int:
        return self.words.shape[0]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, idx) -> "PackedCodes":
        rows = self.words[idx]
        if rows.ndim == 1:
            rows = rows[None, :]
        return PackedCodes(rows, self.bits)


def pack_codes(codes: CodeMatrix) -> PackedCodes:
    """Pack a CodeMatrix into per-sample little-endian 64-bit words (+1 -> bit 1)."""
    c, n = codes.c, codes.n
    bits = (codes.data.T > 0).astype(np.uint8)  # (n, c)
    packed = np.packbits(bits, axis=1, bitorder="little")  # (n, ceil(c/8))
    n_words = (c + 63) // 64
    padded = np.zeros((n, n_words * 8), dtype=np.uint8)
    padded[:, : packed.shape[1]] = packed
    words = padded.view("<u8")
    return PackedCodes(words, c)


def unpack_codes(packed: PackedCodes) -> CodeMatrix:
    """Exact inverse of :func:`pack_codes`."""
    as_bytes = np.ascontiguousarray(packed.words).view("<u8").view(np.uint8)
    as_bytes = as_bytes.reshape(packed.n, -1)
    bits = np.unpackbits(as_bytes, axis=1, bitorder="little", count=packed.bits)
    return CodeMatrix((bits.astype(np.int8) * 2 - 1).T)


@dataclass(frozen=True)
class ModelHyper:
    """Hyper-parameters and training metadata attached to a trained model."""

    lam: float
    mu: float
    c1: int
    c2: int
    bits: int
    t1: int
    t2: int
    tol: float = 1e-5
    seed: int = 0
    centered: bool = False


@dataclass(frozen=True)
class BilinearHashModel:
    """Trained hasher: two-sided projections plus code-space and label-space maps.

    left_proj (d1 x c1) and right_proj (d2 x c2) reduce a matrix feature to
    c1 x c2; hash_weights (c x c1*c2) maps the vectorized projection to code
    space; label_weights (c x l) is the linear classifier fit during training.
    """

    left_proj: np.ndarray
    right_proj: np.ndarray
    hash_weights: np.ndarray
    label_weights: np.ndarray
    hyper: ModelHyper
    objective_trace: tuple = field(default_factory=tuple)
    proj_mean: np.ndarray | None = None

    def __post_init__(self):
        q1 = np.asarray(self.left_proj, dtype=np.float64)
        q2 = np.asarray(self.right_proj, dtype=np.float64)
        u = np.asarray(self.hash_weights, dtype=np.float64)
        w = np.asarray(self.label_weights, dtype=np.float64)
        h = self.hyper
        if q1.shape != (q1.shape[0], h.c1):
            raise ValueError(f"left projection must have {h.c1} columns, got {q1.shape}")
        if q2.shape != (q2.shape[0], h.c2):
            raise ValueError(f"right projection must have {h.c2} columns, got {q2.shape}")
        if u.shape != (h.bits, h.c1 * h.c2):
            raise ValueError(
                f"hash weights must be ({h.bits}, {h.c1 * h.c2}), got {u.shape}"
            )
        if w.shape[0] != h.bits:
            raise ValueError(f"label weights must have {h.bits} rows, got {w.shape}")
        for name, arr in (("left_proj", q1), ("right_proj", q2),
                          ("hash_weights", u), ("label_weights", w)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        trace = tuple(float(v) for v in self.objective_trace)
        for prev, cur in zip(trace, trace[1:]):
            if cur > prev + 1e-8 * max(abs(prev), 1.0):
                raise ValueError(
                    f"objective trace increases from {prev!r} to {cur!r}"
                )
        mean = self.proj_mean
        if mean is not None:
            mean = np.asarray(mean, dtype=np.float64)
            if mean.shape != (h.c1 * h.c2,):
                raise ValueError(f"projection mean must be ({h.c1 * h.c2},), got {mean.shape}")
            object.__setattr__(self, "proj_mean", _frozen(mean))
        object.__setattr__(self, "left_proj", _frozen(q1))
        object.__setattr__(self, "right_proj", _frozen(q2))
        object.__setattr__(self, "hash_weights", _frozen(u))
        object.__setattr__(self, "label_weights", _frozen(w))
        object.__setattr__(self, "objective_trace", trace)

    @property
    def d1(self) -> int:
        return self.left_proj.shape[0]

    @property
    def d2(self) -> int:
        return self.right_proj.shape[0]

    @property
    def bits(self) -> int:
        return self.hyper.bits

    @property
    def n_labels(self) -> int:
        return self.label_weights.shape[1]
