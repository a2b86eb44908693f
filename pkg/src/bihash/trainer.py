"""Alternating trainer: ridge classifier, code regression, and discrete code descent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .projection import fit_bilinear, project_features
from .types import (
    BilinearHashModel,
    CodeMatrix,
    FeatureTensor,
    LabelMatrix,
    ModelHyper,
    _frozen,
)

__all__ = [
    "TrainConfig",
    "TrainState",
    "TrainResult",
    "objective_value",
    "update_classifier",
    "update_code_regression",
    "code_linear_term",
    "update_code_row",
    "update_codes",
    "train",
]

_TINY = 1e-300


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for the alternating optimization.

    lam weights the classifier ridge penalty, mu the quantization loss; bits is
    the code length, t2 the outer iteration cap and tol the relative-change
    stopping threshold. max_sweeps bounds the row sweeps per code update.
    """

    lam: float = 1e-5
    mu: float = 1e-1
    bits: int = 32
    t2: int = 10
    tol: float = 1e-5
    seed: int = 0
    max_sweeps: int = 3
    center_projected: bool = False
    scatter_ridge_scale: float = 1e-6
    reg_ridge_scale: float = 1e-8

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.bits < 1:
            raise ValueError("bits must be >= 1")
        if self.t2 < 1:
            raise ValueError("t2 must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")


@dataclass(frozen=True)
class TrainState:
    """Snapshot of the optimization variables handed to a training monitor."""

    codes: np.ndarray
    label_weights: np.ndarray
    hash_weights: np.ndarray
    objective: float
    iteration: int

    def __post_init__(self):
        object.__setattr__(self, "codes", _frozen(self.codes))
        object.__setattr__(self, "label_weights", _frozen(self.label_weights))
        object.__setattr__(self, "hash_weights", _frozen(self.hash_weights))


@dataclass(frozen=True)
class TrainResult:
    model: BilinearHashModel
    codes: CodeMatrix
    objective_trace: tuple
    converged: bool
    iterations: int


def _check_2d(name, arr, rows=None, cols=None):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    return arr


def objective_value(labels, codes, classifier, regression, projected,
                    lam: float, mu: float) -> float:
    """Training loss: label-fit residual + lam*||classifier||^2 + mu*quantization."""
    y = _check_2d("labels", labels)
    b = _check_2d("codes", codes, cols=y.shape[1])
    w = _check_2d("classifier", classifier, rows=b.shape[0], cols=y.shape[0])
    h = _check_2d("projected", projected, cols=y.shape[1])
    u = _check_2d("regression", regression, rows=b.shape[0], cols=h.shape[0])
    fit = y - w.T @ b
    quant = b - u @ h
    return float((fit * fit).sum() + lam * (w * w).sum() + mu * (quant * quant).sum())


def update_classifier(codes, labels, lam: float) -> np.ndarray:
    """Exact ridge solution (codes @ codes' + lam*I) \\ codes @ labels'."""
    b = _check_2d("codes", codes)
    y = _check_2d("labels", labels, cols=b.shape[1])
    c = b.shape[0]
    gram = b @ b.T + lam * np.eye(c)
    try:
        return scipy.linalg.solve(gram, b @ y.T, assume_a="pos")
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "code Gram system is singular; set lam > 0 to regularize"
        ) from exc


def update_code_regression(codes, projected, ridge_scale: float = 1e-8) -> np.ndarray:
    """Least-squares map from projected features onto the codes.

    The feature Gram matrix gets a trace-scaled ridge so the solve stays
    well-posed when the projected dimension exceeds the sample count.
    """
    b = _check_2d("codes", codes)
    h = _check_2d("projected", projected, cols=b.shape[1])
    k = h.shape[0]
    gram = h @ h.T
    ridge = ridge_scale * float(np.trace(gram)) / k
    if ridge <= 0.0:
        ridge = ridge_scale
    return scipy.linalg.solve(gram + ridge * np.eye(k), h @ b.T, assume_a="pos").T


def code_linear_term(labels, classifier, projected, regression, mu: float) -> np.ndarray:
    """(n, c) coefficient matrix of the linear part of the code subproblem."""
    y = _check_2d("labels", labels)
    w = _check_2d("classifier", classifier, cols=y.shape[0])
    h = _check_2d("projected", projected, cols=y.shape[1])
    u = _check_2d("regression", regression, rows=w.shape[0], cols=h.shape[0])
    return y.T @ w.T + mu * h.T @ u.T


def update_code_row(codes, classifier, linear_term, row: int) -> np.ndarray:
    """Exact {-1,+1} minimizer of the code subproblem for one row, others fixed."""
    b = _check_2d("codes", codes)
    w = _check_2d("classifier", classifier, rows=b.shape[0])
    m = _check_2d("linear_term", linear_term, rows=b.shape[1], cols=b.shape[0])
    if not 0 <= row < b.shape[0]:
        raise ValueError(f"row must be in [0, {b.shape[0]}), got {row}")
    v = w[row]
    w_rest = np.delete(w, row, axis=0)
    b_rest = np.delete(b, row, axis=0)
    coupling = (w_rest @ v) @ b_rest
    return np.where(m[:, row] - coupling >= 0, 1.0, -1.0)


def update_codes(codes, classifier, regression, projected, labels, mu: float,
                 max_sweeps: int = 3, row_hook=None) -> np.ndarray:
    """Cyclic row sweeps of :func:`update_code_row` until a sweep changes nothing.

    Every intermediate state stays exactly in {-1,+1}; row_hook(row, codes) is
    invoked after each row update when given.
    """
    b = np.array(codes, dtype=np.float64)
    w = _check_2d("classifier", classifier, rows=b.shape[0])
    m = code_linear_term(labels, w, projected, regression, mu)
    for _ in range(max_sweeps):
        changed = False
        for row in range(b.shape[0]):
            z = update_code_row(b, w, m, row)
            if not np.array_equal(z, b[row]):
                changed = True
                b[row] = z
            if row_hook is not None:
                row_hook(row, b)
        if not changed:
            break
    return b


def train(features: FeatureTensor, labels: LabelMatrix, config: TrainConfig,
          c1: int, c2: int, t1: int = 5, monitor=None) -> TrainResult:
    """Fit the bilinear projections, then alternate the three variable updates.

    Codes initialize uniformly at random over {-1,+1} from config.seed. The
    outer loop stops once the relative objective change drops below config.tol
    or after config.t2 iterations. The data terms grow linearly with the sample
    count while the ridge penalty does not, so lam is applied per sample
    (scaled by n internally); update_classifier itself treats its argument
    literally.
    """
    if features.n != labels.n:
        raise ValueError(f"{features.n} samples but {labels.n} label columns")
    left, right = fit_bilinear(features, labels, c1, c2, rounds=t1,
                               ridge_scale=config.scatter_ridge_scale)
    h = project_features(features, left, right)
    proj_mean = None
    if config.center_projected:
        proj_mean = h.mean(axis=1)
        h = h - proj_mean[:, None]

    n = features.n
    y = labels.data.astype(np.float64)
    rng = np.random.default_rng(config.seed)
    b = (rng.integers(0, 2, size=(config.bits, n)) * 2 - 1).astype(np.float64)
    lam_eff = config.lam * n

    def current_objective(b_, w_, u_):
        return objective_value(y, b_, w_, u_, h, lam_eff, config.mu)

    def notify(stage, b_, w_, u_, iteration):
        if monitor is not None:
            monitor(stage, TrainState(b_.copy(), w_.copy(), u_.copy(),
                                      current_objective(b_, w_, u_), iteration))

    w = update_classifier(b, y, lam_eff)
    u = update_code_regression(b, h, config.reg_ridge_scale)
    trace = [current_objective(b, w, u)]
    notify("init", b, w, u, 0)

    converged = False
    iterations = 0
    for it in range(1, config.t2 + 1):
        if it > 1:
            w = update_classifier(b, y, lam_eff)
            notify("classifier", b, w, u, it)
            u = update_code_regression(b, h, config.reg_ridge_scale)
            notify("regression", b, w, u, it)
        row_hook = None
        if monitor is not None:
            row_hook = lambda row, b_: notify("code_row", b_, w, u, it)  # noqa: E731
        b = update_codes(b, w, u, h, y, config.mu,
                         max_sweeps=config.max_sweeps, row_hook=row_hook)
        obj = current_objective(b, w, u)
        if not np.isfinite(obj):
            raise RuntimeError(f"objective became non-finite at iteration {it}: {obj!r}")
        prev = trace[-1]
        trace.append(obj)
        iterations = it
        if abs(prev - obj) < config.tol * max(abs(prev), _TINY):
            converged = True
            break

    hyper = ModelHyper(lam=config.lam, mu=config.mu, c1=c1, c2=c2,
                       bits=config.bits, t1=t1, t2=config.t2, tol=config.tol,
                       seed=config.seed, centered=config.center_projected)
    model = BilinearHashModel(left, right, u, w, hyper,
                              objective_trace=tuple(trace), proj_mean=proj_mean)
    return TrainResult(model=model, codes=CodeMatrix(b.astype(np.int8)),
                       objective_trace=tuple(trace), converged=converged,
                       iterations=iterations)
