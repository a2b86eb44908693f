"""File formats and dataset utilities.

Formats (all multi-byte integers and floats little-endian unless noted):

* IDX        -- standard big-endian MNIST container, read-only here.
* B2F ("B2F1")  -- matrix features + labels: header n, d1, d2, l as u32,
  then n row-major float32 d1 x d2 matrices, then the l x n label bytes.
* model ("BSDH") -- trained bilinear hasher, float64 arrays, bit-exact round trip.
* rotation ("BPBC") / projection ("LSH1") -- baseline hasher models.
* codes ("B2C1") -- packed binary codes, one bit row per sample.
* manifest  -- flat "key=value" text, one pair per line, sorted by key.
"""

from __future__ import annotations

import gzip
import os
import struct
import tempfile

import numpy as np

from .baselines import BpbcModel, LshModel
from .types import (
    BilinearHashModel,
    CodeMatrix,
    FeatureTensor,
    LabelMatrix,
    ModelHyper,
    PackedCodes,
    pack_codes,
)

__all__ = [
    "DataFormatError",
    "load_idx",
    "load_b2f",
    "save_b2f",
    "save_model",
    "load_model",
    "save_bpbc_model",
    "save_lsh_model",
    "load_any_model",
    "save_codes",
    "load_codes",
    "synth_multilabel",
    "split_dataset",
    "write_manifest",
    "read_manifest",
    "atomic_write_bytes",
]

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801

B2F_MAGIC = b"B2F1"
MODEL_MAGIC = b"BSDH"
BPBC_MAGIC = b"BPBC"
LSH_MAGIC = b"LSH1"
CODES_MAGIC = b"B2C1"

FORMAT_VERSION = 1


class DataFormatError(ValueError):
    """Malformed or truncated input file."""


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    """Cursor over a byte buffer that reports the offset of any shortfall."""

    def __init__(self, data: bytes, path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, count: int, what: str) -> bytes:
        end = self.offset + count
        if end > len(self.data):
            raise DataFormatError(
                f"{self.path}: truncated while reading {what} at byte {self.offset} "
                f"(need {count} bytes, have {len(self.data) - self.offset})"
            )
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def expect_end(self):
        if self.offset != len(self.data):
            raise DataFormatError(
                f"{self.path}: {len(self.data) - self.offset} unexpected trailing "
                f"bytes at byte {self.offset}"
            )


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        rest = fh.read()
    data = head + rest
    if head == b"\x1f\x8b":  # gzip-compressed container
        try:
            data = gzip.decompress(data)
        except OSError as exc:
            raise DataFormatError(f"{path}: bad gzip stream: {exc}") from exc
    return data


def load_idx(images_path, labels_path, scale: bool = True):
    """Read an IDX image/label file pair into features and one-hot labels.

    Pixels are scaled to [0, 1] unless scale=False keeps the raw 0-255 range.
    Digit labels are one-hot encoded into 10 rows.
    """
    img = _Reader(_read_bytes(images_path), images_path)
    magic, n, rows, cols = img.unpack(">IIII", "image header")
    if magic != _IDX_IMAGES_MAGIC:
        raise DataFormatError(
            f"{images_path}: bad image magic 0x{magic:08x} at byte 0 "
            f"(expected 0x{_IDX_IMAGES_MAGIC:08x})"
        )
    pixels = np.frombuffer(img.take(n * rows * cols, "image payload"), dtype=np.uint8)
    img.expect_end()

    lab = _Reader(_read_bytes(labels_path), labels_path)
    magic, n_labels = lab.unpack(">II", "label header")
    if magic != _IDX_LABELS_MAGIC:
        raise DataFormatError(
            f"{labels_path}: bad label magic 0x{magic:08x} at byte 0 "
            f"(expected 0x{_IDX_LABELS_MAGIC:08x})"
        )
    if n_labels != n:
        raise DataFormatError(
            f"{labels_path}: {n_labels} labels for {n} images"
        )
    digits = np.frombuffer(lab.take(n_labels, "label payload"), dtype=np.uint8)
    lab.expect_end()
    if digits.size and digits.max() > 9:
        raise DataFormatError(
            f"{labels_path}: digit label {digits.max()} out of range 0-9"
        )

    data = pixels.reshape(n, rows, cols).astype(np.float64)
    if scale:
        data /= 255.0
    onehot = np.zeros((10, n), dtype=np.uint8)
    onehot[digits, np.arange(n)] = 1
    return FeatureTensor(data), LabelMatrix(onehot)


def save_b2f(path, features: FeatureTensor, labels: LabelMatrix) -> None:
    if features.n != labels.n:
        raise ValueError(f"{features.n} samples but {labels.n} label columns")
    header = B2F_MAGIC + struct.pack("<IIII", features.n, features.d1,
                                     features.d2, labels.l)
    body = features.data.astype("<f4").tobytes(order="C")
    body += labels.data.astype(np.uint8).tobytes(order="C")
    atomic_write_bytes(path, header + body)


def load_b2f(path):
    """Read a B2F container, validating sizes and label values strictly."""
    r = _Reader(_read_bytes(path), path)
    magic = r.take(4, "magic")
    if magic != B2F_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r} at byte 0")
    n, d1, d2, l = r.unpack("<IIII", "header")
    if min(n, d1, d2, l) < 1:
        raise DataFormatError(f"{path}: non-positive size in header {(n, d1, d2, l)}")
    feat = np.frombuffer(r.take(4 * n * d1 * d2, "feature payload"), dtype="<f4")
    raw_labels = np.frombuffer(r.take(l * n, "label payload"), dtype=np.uint8)
    r.expect_end()
    label_data = raw_labels.reshape(l, n)
    if not np.isin(label_data, (0, 1)).all():
        raise DataFormatError(f"{path}: label bytes outside {{0,1}}")
    if (label_data.sum(axis=0) == 0).any():
        bad = int(np.flatnonzero(label_data.sum(axis=0) == 0)[0])
        raise DataFormatError(f"{path}: sample {bad} has no label")
    feat64 = feat.astype(np.float64).reshape(n, d1, d2)
    if not np.all(np.isfinite(feat64)):
        raise DataFormatError(f"{path}: non-finite feature values")
    return FeatureTensor(feat64), LabelMatrix(label_data)


def _pack_array(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype=np.float64).astype("<f8").tobytes(order="C")


def _take_array(r: _Reader, count: int, what: str) -> np.ndarray:
    return np.frombuffer(r.take(8 * count, what), dtype="<f8").astype(np.float64)


def save_model(model: BilinearHashModel, path) -> None:
    """Serialize a trained model; load_model reproduces it bit-exactly."""
    h = model.hyper
    out = [MODEL_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    out.append(struct.pack("<6I", model.d1, model.d2, h.c1, h.c2, h.bits,
                           model.n_labels))
    out.append(struct.pack("<ddIIdqB", h.lam, h.mu, h.t1, h.t2, h.tol,
                           h.seed, int(h.centered)))
    out.append(struct.pack("<I", len(model.objective_trace)))
    out.append(np.asarray(model.objective_trace, dtype="<f8").tobytes())
    out.append(_pack_array(model.left_proj))
    out.append(_pack_array(model.right_proj))
    out.append(_pack_array(model.hash_weights))
    out.append(_pack_array(model.label_weights))
    if h.centered:
        out.append(_pack_array(model.proj_mean))
    atomic_write_bytes(path, b"".join(out))


def load_model(path) -> BilinearHashModel:
    r = _Reader(_read_bytes(path), path)
    magic = r.take(4, "magic")
    if magic != MODEL_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r} at byte 0")
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported model version {version} (expected {FORMAT_VERSION})"
        )
    d1, d2, c1, c2, bits, l = r.unpack("<6I", "shape header")
    lam, mu, t1, t2, tol, seed, centered = r.unpack("<ddIIdqB", "hyper block")
    (trace_len,) = r.unpack("<I", "trace length")
    trace = tuple(_take_array(r, trace_len, "objective trace"))
    q1 = _take_array(r, d1 * c1, "left projection").reshape(d1, c1)
    q2 = _take_array(r, d2 * c2, "right projection").reshape(d2, c2)
    u = _take_array(r, bits * c1 * c2, "hash weights").reshape(bits, c1 * c2)
    w = _take_array(r, bits * l, "label weights").reshape(bits, l)
    mean = _take_array(r, c1 * c2, "projection mean") if centered else None
    r.expect_end()
    hyper = ModelHyper(lam=lam, mu=mu, c1=c1, c2=c2, bits=bits, t1=t1, t2=t2,
                       tol=tol, seed=seed, centered=bool(centered))
    return BilinearHashModel(q1, q2, u, w, hyper, objective_trace=trace,
                             proj_mean=mean)


def save_bpbc_model(model: BpbcModel, path) -> None:
    d1, k1 = model.left_rot.shape
    d2, k2 = model.right_rot.shape
    out = [BPBC_MAGIC, struct.pack("<I", FORMAT_VERSION),
           struct.pack("<4I", d1, k1, d2, k2),
           _pack_array(model.left_rot), _pack_array(model.right_rot)]
    atomic_write_bytes(path, b"".join(out))


def save_lsh_model(model: LshModel, path) -> None:
    out = [LSH_MAGIC, struct.pack("<I", FORMAT_VERSION),
           struct.pack("<3Iq", model.d1, model.d2, model.bits, model.seed),
           _pack_array(model.proj)]
    atomic_write_bytes(path, b"".join(out))


def load_any_model(path):
    """Load whichever hasher model lives at path, dispatching on the magic."""
    data = _read_bytes(path)
    magic = data[:4]
    if magic == MODEL_MAGIC:
        return load_model(path)
    r = _Reader(data, path)
    r.take(4, "magic")
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported version {version} (expected {FORMAT_VERSION})"
        )
    if magic == BPBC_MAGIC:
        d1, k1, d2, k2 = r.unpack("<4I", "shape header")
        r1 = _take_array(r, d1 * k1, "left rotation").reshape(d1, k1)
        r2 = _take_array(r, d2 * k2, "right rotation").reshape(d2, k2)
        r.expect_end()
        return BpbcModel(r1, r2)
    if magic == LSH_MAGIC:
        d1, d2, bits, seed = r.unpack("<3Iq", "shape header")
        proj = _take_array(r, bits * d1 * d2, "projection").reshape(bits, d1 * d2)
        r.expect_end()
        return LshModel(proj, seed, d1, d2)
    raise DataFormatError(f"{path}: unknown model magic {magic!r} at byte 0")


def save_codes(codes, path) -> None:
    """Write packed codes; accepts a CodeMatrix or already-packed codes."""
    packed = pack_codes(codes) if isinstance(codes, CodeMatrix) else codes
    n_bytes = (packed.bits + 7) // 8
    rows = (np.ascontiguousarray(packed.words).astype("<u8")
            .view(np.uint8).reshape(packed.n, -1)[:, :n_bytes])
    header = CODES_MAGIC + struct.pack("<III", FORMAT_VERSION, packed.bits, packed.n)
    atomic_write_bytes(path, header + rows.tobytes(order="C"))


def load_codes(path) -> PackedCodes:
    r = _Reader(_read_bytes(path), path)
    magic = r.take(4, "magic")
    if magic != CODES_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r} at byte 0")
    version, bits, n = r.unpack("<III", "header")
    if version != FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported codes version {version} (expected {FORMAT_VERSION})"
        )
    if bits < 1:
        raise DataFormatError(f"{path}: non-positive code length {bits}")
    n_bytes = (bits + 7) // 8
    raw = np.frombuffer(r.take(n * n_bytes, "code payload"), dtype=np.uint8)
    r.expect_end()
    n_words = (bits + 63) // 64
    padded = np.zeros((n, n_words * 8), dtype=np.uint8)
    padded[:, :n_bytes] = raw.reshape(n, n_bytes)
    return PackedCodes(padded.view("<u8"), bits)


def synth_multilabel(n: int, d1: int, d2: int, l: int, labels_per_sample: int = 1,
                     noise: float = 0.1, seed: int = 0):
    """Synthetic matrix features built from per-class prototypes.

    Sample i always carries class i mod l (so classes stay balanced) plus
    labels_per_sample - 1 extra random classes; its feature is the mean of the
    chosen prototypes plus Gaussian noise. Deterministic under the seed.
    """
    if min(n, d1, d2, l) < 1:
        raise ValueError("n, d1, d2 and l must all be >= 1")
    if not 1 <= labels_per_sample <= l:
        raise ValueError(f"labels_per_sample must be in [1, {l}]")
    rng = np.random.default_rng(seed)
    prototypes = rng.standard_normal((l, d1, d2))
    label_data = np.zeros((l, n), dtype=np.uint8)
    feats = np.zeros((n, d1, d2))
    for i in range(n):
        chosen = [i % l]
        if labels_per_sample > 1:
            others = np.delete(np.arange(l), i % l)
            chosen.extend(rng.choice(others, size=labels_per_sample - 1,
                                     replace=False))
        label_data[chosen, i] = 1
        feats[i] = prototypes[chosen].mean(axis=0)
    feats += noise * rng.standard_normal((n, d1, d2))
    return FeatureTensor(feats), LabelMatrix(label_data)


def split_dataset(features: FeatureTensor, labels: LabelMatrix,
                  n_train: int, n_query: int, seed: int):
    """Seeded disjoint train/query split; returns the pieces plus a manifest
    fragment recording how it was made."""
    if features.n != labels.n:
        raise ValueError(f"{features.n} samples but {labels.n} label columns")
    if n_train + n_query > features.n:
        raise ValueError(
            f"cannot draw {n_train}+{n_query} samples from {features.n}"
        )
    perm = np.random.default_rng(seed).permutation(features.n)
    train_idx = perm[:n_train]
    query_idx = perm[n_train:n_train + n_query]
    info = {"split_seed": seed, "n_train": n_train, "n_query": n_query,
            "n_source": features.n}
    return (FeatureTensor(features.data[train_idx]),
            LabelMatrix(labels.data[:, train_idx]),
            FeatureTensor(features.data[query_idx]),
            LabelMatrix(labels.data[:, query_idx]),
            info)


def write_manifest(path, entries: dict) -> None:
    lines = [f"{key}={entries[key]}" for key in sorted(entries)]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_manifest(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            key, _, value = line.partition("=")
            out[key] = value
    return out
