"""Discriminant bilinear projections: class scatter, generalized eigensolve, fitting."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .types import FeatureTensor, LabelMatrix, _frozen

__all__ = [
    "EigenSolverError",
    "ClassStatistics",
    "ScatterPair",
    "class_statistics",
    "scatter_for_left",
    "scatter_for_right",
    "top_discriminant_directions",
    "discriminant_traces",
    "fit_bilinear",
    "project_features",
]

_TINY = 1e-300


class EigenSolverError(RuntimeError):
    """Generalized eigensolve failed; message carries conditioning diagnostics."""


@dataclass(frozen=True)
class ClassStatistics:
    """Per-class mean matrices, the global mean, and class member counts.

    With multi-hot labels a sample contributes to every class it carries;
    classes with no members are listed in ``empty_classes``.
    """

    means: np.ndarray        # (l, d1, d2)
    global_mean: np.ndarray  # (d1, d2)
    counts: np.ndarray       # (l,)
    empty_classes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "means", _frozen(np.asarray(self.means, dtype=np.float64)))
        object.__setattr__(self, "global_mean", _frozen(np.asarray(self.global_mean, dtype=np.float64)))
        object.__setattr__(self, "counts", _frozen(np.asarray(self.counts, dtype=np.float64)))


@dataclass(frozen=True)
class ScatterPair:
    """Between-class and within-class scatter matrices (same square size)."""

    between: np.ndarray
    within: np.ndarray

    def __post_init__(self):
        s_b = np.asarray(self.between, dtype=np.float64)
        s_w = np.asarray(self.within, dtype=np.float64)
        if s_b.ndim != 2 or s_b.shape[0] != s_b.shape[1] or s_b.shape != s_w.shape:
            raise ValueError(f"scatter matrices must be square and equal-sized, got {s_b.shape} / {s_w.shape}")
        for name, s in (("between", s_b), ("within", s_w)):
            scale = max(1.0, float(np.abs(s).max(initial=0.0)))
            if np.abs(s - s.T).max(initial=0.0) > 1e-10 * scale:
                raise ValueError(f"{name}-class scatter is not symmetric")
        object.__setattr__(self, "between", _frozen(s_b))
        object.__setattr__(self, "within", _frozen(s_w))

    @property
    def dim(self) -> int:
        return self.between.shape[0]


def class_statistics(features: FeatureTensor, labels: LabelMatrix) -> ClassStatistics:
    """Arithmetic class means, global mean and membership counts."""
    if features.n != labels.n:
        raise ValueError(f"{features.n} samples but {labels.n} label columns")
    x = features.data
    y = labels.data.astype(np.float64)
    counts = y.sum(axis=1)
    means = np.einsum("ln,nab->lab", y, x)
    present = counts > 0
    means[present] /= counts[present, None, None]
    empty = tuple(int(i) for i in np.flatnonzero(~present))
    if empty:
        warnings.warn(f"classes with no members excluded from scatter: {list(empty)}")
    return ClassStatistics(means, x.mean(axis=0), counts, empty)


def _scatter(means, global_mean, counts, feats, label_rows, proj) -> ScatterPair:
    present = counts > 0
    diffs = means[present] - global_mean
    t = diffs @ proj
    s_b = np.einsum("lik,ljk,l->ij", t, t, counts[present])
    dim = feats.shape[1]
    s_w = np.zeros((dim, dim))
    for i in np.flatnonzero(present):
        members = label_rows[i].astype(bool)
        centered = feats[members] - means[i]
        p = centered @ proj
        s_w += np.einsum("mik,mjk->ij", p, p)
    return ScatterPair(0.5 * (s_b + s_b.T), 0.5 * (s_w + s_w.T))


def scatter_for_left(stats: ClassStatistics, features: FeatureTensor,
                     labels: LabelMatrix, right_proj: np.ndarray) -> ScatterPair:
    """d1 x d1 scatter pair for solving the left projection, given the right one."""
    right_proj = np.asarray(right_proj, dtype=np.float64)
    if right_proj.ndim != 2 or right_proj.shape[0] != features.d2:
        raise ValueError(f"right projection must be ({features.d2}, k), got {right_proj.shape}")
    return _scatter(stats.means, stats.global_mean, stats.counts,
                    features.data, labels.data, right_proj)


def scatter_for_right(stats: ClassStatistics, features: FeatureTensor,
                      labels: LabelMatrix, left_proj: np.ndarray) -> ScatterPair:
    """d2 x d2 scatter pair for the right projection; transposed-role mirror of
    :func:`scatter_for_left`."""
    left_proj = np.asarray(left_proj, dtype=np.float64)
    if left_proj.ndim != 2 or left_proj.shape[0] != features.d1:
        raise ValueError(f"left projection must be ({features.d1}, k), got {left_proj.shape}")
    return _scatter(stats.means.transpose(0, 2, 1), stats.global_mean.T, stats.counts,
                    features.data.transpose(0, 2, 1), labels.data, left_proj)


def _canonical_sign(vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy()
    for j in range(out.shape[1]):
        nz = np.flatnonzero(np.abs(out[:, j]) > 1e-12)
        if nz.size and out[nz[0], j] < 0:
            out[:, j] = -out[:, j]
    return out


def top_discriminant_directions(pair: ScatterPair, k: int, ridge: float):
    """Leading directions of the ridge-regularized symmetric-definite problem
    between @ q = value * (within + ridge*I) @ q.

    Returns (directions, eigenvalues): directions (dim, k) are orthonormal under
    the regularized within-scatter inner product and ordered by descending
    eigenvalue; exact ties are ordered by the sign-canonicalized vectors so the
    output is deterministic.
    """
    if not 1 <= k <= pair.dim:
        raise ValueError(f"k must be in [1, {pair.dim}], got {k}")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    regularized = pair.within + ridge * np.eye(pair.dim)
    try:
        values, vectors = scipy.linalg.eigh(pair.between, regularized)
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        w_ext = np.linalg.eigvalsh(regularized)
        raise EigenSolverError(
            f"generalized eigensolve failed: {exc} "
            f"(regularized within-scatter eigenvalue range [{w_ext.min():.3e}, {w_ext.max():.3e}])"
        ) from exc
    vectors = _canonical_sign(vectors)
    order = sorted(range(pair.dim),
                   key=lambda i: (-values[i], tuple(vectors[:, i])))
    keep = order[:k]
    return vectors[:, keep], values[keep]


def discriminant_traces(stats: ClassStatistics, features: FeatureTensor,
                        labels: LabelMatrix, left_proj: np.ndarray,
                        right_proj: np.ndarray) -> tuple[float, float]:
    """Between- and within-class squared-norm traces of the projected data."""
    present = stats.counts > 0
    diffs = stats.means[present] - stats.global_mean
    proj = np.einsum("ai,lab,bj->lij", left_proj, diffs, right_proj, optimize=True)
    between = float((stats.counts[present] * (proj ** 2).sum(axis=(1, 2))).sum())
    within = 0.0
    for i in np.flatnonzero(present):
        members = labels.data[i].astype(bool)
        centered = features.data[members] - stats.means[i]
        p = np.einsum("ai,nab,bj->nij", left_proj, centered, right_proj, optimize=True)
        within += float((p ** 2).sum())
    return between, within


def _ridge_size(within: np.ndarray, scale: float) -> float:
    ridge = scale * float(np.trace(within)) / within.shape[0]
    if ridge <= 0.0:
        ridge = scale  # all-zero within-scatter: fall back to an absolute ridge
    return ridge


def fit_bilinear(features: FeatureTensor, labels: LabelMatrix, c1: int, c2: int,
                 rounds: int = 5, ridge_scale: float = 1e-6,
                 stop_tol: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """Alternate the two discriminant eigensolves to learn both projections.

    The right projection starts as the first c2 identity columns; each round
    solves for the left projection given the right, then the right given the
    left. Stops early once the between/within trace ratio stagnates.
    """
    if not 1 <= c1 <= features.d1:
        raise ValueError(f"c1 must be in [1, {features.d1}], got {c1}")
    if not 1 <= c2 <= features.d2:
        raise ValueError(f"c2 must be in [1, {features.d2}], got {c2}")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    stats = class_statistics(features, labels)
    right = np.eye(features.d2)[:, :c2]
    left = np.eye(features.d1)[:, :c1]
    prev_ratio = None
    for _ in range(rounds):
        pair = scatter_for_left(stats, features, labels, right)
        left, _ = top_discriminant_directions(pair, c1, _ridge_size(pair.within, ridge_scale))
        pair = scatter_for_right(stats, features, labels, left)
        right, _ = top_discriminant_directions(pair, c2, _ridge_size(pair.within, ridge_scale))
        between, within = discriminant_traces(stats, features, labels, left, right)
        ratio = between / max(within, _TINY)
        if prev_ratio is not None and abs(ratio - prev_ratio) <= stop_tol * max(abs(prev_ratio), _TINY):
            break
        prev_ratio = ratio
    return left, right


def project_features(features: FeatureTensor, left_proj: np.ndarray,
                     right_proj: np.ndarray) -> np.ndarray:
    """Project every sample two-sidedly and vectorize: column i is
    vec(left' @ X_i @ right), column-major. Output is (c1*c2, n)."""
    left_proj = np.asarray(left_proj, dtype=np.float64)
    right_proj = np.asarray(right_proj, dtype=np.float64)
    if left_proj.shape[0] != features.d1 or right_proj.shape[0] != features.d2:
        raise ValueError(
            f"projections ({left_proj.shape}, {right_proj.shape}) do not match "
            f"features ({features.d1}, {features.d2})"
        )
    reduced = np.einsum("ai,nab,bj->nij", left_proj, features.data, right_proj,
                        optimize=True)
    n = features.n
    return reduced.transpose(0, 2, 1).reshape(n, -1).T
