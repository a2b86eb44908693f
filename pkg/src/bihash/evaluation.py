"""Hamming-ranking retrieval and the precision / recall / MAP metric suite."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .types import LabelMatrix, PackedCodes, _frozen

__all__ = [
    "ZeroRelevantError",
    "RankingResult",
    "hamming_distance",
    "rank_database",
    "precision_at_k",
    "recall_at_k",
    "average_precision",
    "mean_average_precision",
    "pr_curve",
    "mean_pr_curve",
    "evaluate_retrieval",
    "write_metrics_csv",
    "write_pr_csv",
]

logger = logging.getLogger(__name__)


class ZeroRelevantError(ValueError):
    """Raised for queries with no relevant database item; such queries are
    excluded from aggregate metrics."""


@dataclass(frozen=True)
class RankingResult:
    """Database indices sorted by ascending Hamming distance (ties by index),
    with the relevance flag of each ranked item."""

    order: np.ndarray
    relevance: np.ndarray

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.int64)
        rel = np.asarray(self.relevance, dtype=np.uint8)
        if order.ndim != 1 or rel.shape != order.shape:
            raise ValueError("order and relevance must be 1-D and equal-length")
        if not np.array_equal(np.sort(order), np.arange(order.size)):
            raise ValueError("order is not a permutation of the database indices")
        object.__setattr__(self, "order", _frozen(order))
        object.__setattr__(self, "relevance", _frozen(rel))

    @property
    def n(self) -> int:
        return self.order.size


def _word_distances(query_words: np.ndarray, db_words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(np.bitwise_xor(query_words, db_words)).sum(axis=-1)


def hamming_distance(a: PackedCodes, b: PackedCodes):
    """Differing-bit count between packed codes of equal length.

    Pairs rows of a and b; one side may hold a single code, which is compared
    against every row of the other. Returns an int for a single pair.
    """
    if a.bits != b.bits:
        raise ValueError(f"code lengths differ: {a.bits} vs {b.bits}")
    if a.n != b.n and a.n != 1 and b.n != 1:
        raise ValueError(f"cannot pair {a.n} codes with {b.n}")
    dist = _word_distances(a.words, b.words).astype(np.int64)
    if dist.size == 1:
        return int(dist[0])
    return dist


def _label_array(labels) -> np.ndarray:
    if isinstance(labels, LabelMatrix):
        return labels.data
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValueError(f"labels must be (l, n), got shape {arr.shape}")
    return arr


def rank_database(query_code: PackedCodes, database_codes: PackedCodes,
                  database_labels, query_labels) -> RankingResult:
    """Rank the database by Hamming distance to one query; an item is relevant
    when it shares at least one label with the query."""
    if query_code.n != 1:
        raise ValueError(f"expected a single query code, got {query_code.n}")
    if database_codes.n == 0:
        raise ValueError("database is empty")
    db_labels = _label_array(database_labels)
    q_labels = _label_array(query_labels)
    if db_labels.shape[1] != database_codes.n:
        raise ValueError(
            f"{database_codes.n} database codes but {db_labels.shape[1]} label columns"
        )
    dist = hamming_distance(query_code, database_codes)
    dist = np.atleast_1d(dist)
    order = np.argsort(dist, kind="stable")
    shared = q_labels[:, 0] @ db_labels
    return RankingResult(order, (shared[order] > 0).astype(np.uint8))


def precision_at_k(result: RankingResult, k: int) -> float:
    """Fraction of the first k ranked items that are relevant."""
    if not 1 <= k <= result.n:
        raise ValueError(f"k must be in [1, {result.n}], got {k}")
    return float(result.relevance[:k].sum()) / k


def recall_at_k(result: RankingResult, k: int) -> float:
    """Fraction of all relevant items found in the first k."""
    if not 1 <= k <= result.n:
        raise ValueError(f"k must be in [1, {result.n}], got {k}")
    total = int(result.relevance.sum())
    if total == 0:
        raise ZeroRelevantError("query has no relevant database item")
    return float(result.relevance[:k].sum()) / total


def average_precision(result: RankingResult) -> float:
    """Precision averaged at the rank of every relevant item, full ranking."""
    rel = result.relevance.astype(np.float64)
    total = rel.sum()
    if total == 0:
        raise ZeroRelevantError("query has no relevant database item")
    precision = np.cumsum(rel) / np.arange(1, rel.size + 1)
    return float((precision * rel).sum() / total)


def pr_curve(result: RankingResult) -> np.ndarray:
    """(n, 2) array of (recall, precision) at every cut-off k = 1..n."""
    rel = result.relevance.astype(np.float64)
    total = rel.sum()
    if total == 0:
        raise ZeroRelevantError("query has no relevant database item")
    hits = np.cumsum(rel)
    ks = np.arange(1, rel.size + 1)
    return np.column_stack([hits / total, hits / ks])


def _iter_rankings(query_codes: PackedCodes, database_codes: PackedCodes,
                   query_labels, database_labels):
    q_labels = _label_array(query_labels)
    if q_labels.shape[1] != query_codes.n:
        raise ValueError(
            f"{query_codes.n} query codes but {q_labels.shape[1]} label columns"
        )
    for i in range(query_codes.n):
        yield i, rank_database(query_codes[i], database_codes,
                               database_labels, q_labels[:, i:i + 1])


def mean_average_precision(query_codes: PackedCodes, database_codes: PackedCodes,
                           query_labels, database_labels) -> float:
    """Mean of per-query average precision; queries without any relevant
    database item are excluded (and logged)."""
    scores = []
    skipped = 0
    for i, ranking in _iter_rankings(query_codes, database_codes,
                                     query_labels, database_labels):
        try:
            scores.append(average_precision(ranking))
        except ZeroRelevantError:
            skipped += 1
            logger.warning("query %d has no relevant item; excluded from MAP", i)
    if not scores:
        raise ValueError("no query has a relevant database item")
    return float(np.mean(scores))


def mean_pr_curve(query_codes: PackedCodes, database_codes: PackedCodes,
                  query_labels, database_labels) -> np.ndarray:
    """Pointwise mean of per-query precision-recall curves over valid queries."""
    curves = []
    for i, ranking in _iter_rankings(query_codes, database_codes,
                                     query_labels, database_labels):
        try:
            curves.append(pr_curve(ranking))
        except ZeroRelevantError:
            logger.warning("query %d has no relevant item; excluded from PR curve", i)
    if not curves:
        raise ValueError("no query has a relevant database item")
    return np.mean(np.stack(curves), axis=0)


def evaluate_retrieval(query_codes: PackedCodes, database_codes: PackedCodes,
                       query_labels, database_labels, k_grid=None) -> dict:
    """Full per-query evaluation: MAP, mean precision@k and recall@k over the
    grid, and the mean PR curve. Returns a plain dict ready for CSV output."""
    n_db = database_codes.n
    if k_grid is None:
        k_grid = [1, 5, 10, 50, 100, 500, 1000]
    ks = sorted({min(int(k), n_db) for k in k_grid if k >= 1})
    ap, curves = [], []
    prec = {k: [] for k in ks}
    rec = {k: [] for k in ks}
    skipped = 0
    for i, ranking in _iter_rankings(query_codes, database_codes,
                                     query_labels, database_labels):
        try:
            ap.append(average_precision(ranking))
        except ZeroRelevantError:
            skipped += 1
            logger.warning("query %d has no relevant item; excluded", i)
            continue
        curves.append(pr_curve(ranking))
        for k in ks:
            prec[k].append(precision_at_k(ranking, k))
            rec[k].append(recall_at_k(ranking, k))
    if not ap:
        raise ValueError("no query has a relevant database item")
    return {
        "map": float(np.mean(ap)),
        "precision_at": {k: float(np.mean(prec[k])) for k in ks},
        "recall_at": {k: float(np.mean(rec[k])) for k in ks},
        "pr_curve": np.mean(np.stack(curves), axis=0),
        "queries_evaluated": len(ap),
        "queries_skipped": skipped,
    }


def write_metrics_csv(path, rows) -> None:
    """Rows of (method, code_length, metric, k, value); k may be empty."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "code_length", "metric", "k", "value"])
        for row in rows:
            writer.writerow(list(row))


def write_pr_csv(path, curve: np.ndarray) -> None:
    """Mean PR curve as one (k, recall, precision) row per cut-off."""
    curve = np.asarray(curve)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "recall", "precision"])
        for k, (r, p) in enumerate(curve, start=1):
            writer.writerow([k, repr(float(r)), repr(float(p))])
