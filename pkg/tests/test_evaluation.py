import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bihash.evaluation import (
    RankingResult,
    ZeroRelevantError,
    average_precision,
    evaluate_retrieval,
    hamming_distance,
    mean_average_precision,
    mean_pr_curve,
    pr_curve,
    precision_at_k,
    rank_database,
    recall_at_k,
    write_metrics_csv,
    write_pr_csv,
)
from bihash.types import CodeMatrix, pack_codes


def make_packed(columns):
    """columns: list of +-1 sequences, one per sample."""
    return pack_codes(CodeMatrix(np.array(columns, dtype=np.int8).T))


def random_codes(rng, c, n):
    return pack_codes(CodeMatrix(rng.choice([-1, 1], size=(c, n)).astype(np.int8)))


# ---------------------------------------------------------------------------
# fully independent naive reference implementation (pure python)
# ---------------------------------------------------------------------------

def naive_unpack(packed):
    out = []
    for row in np.asarray(packed.words):
        bits = []
        for word in row:
            for b in range(64):
                bits.append((int(word) >> b) & 1)
        out.append(bits[:packed.bits])
    return out


def naive_rank(query_bits, db_bits, q_label, db_labels):
    dists = []
    for j, code in enumerate(db_bits):
        d = sum(1 for a, b in zip(query_bits, code) if a != b)
        dists.append((d, j))
    order = [j for _, j in sorted(dists)]
    rel = [1 if any(a and b for a, b in zip(q_label, db_labels[j])) else 0
           for j in order]
    return order, rel


def naive_metrics(rel):
    n = len(rel)
    total = sum(rel)
    precisions = [sum(rel[:k]) / k for k in range(1, n + 1)]
    recalls = [sum(rel[:k]) / total for k in range(1, n + 1)]
    ap = sum(precisions[i] * rel[i] for i in range(n)) / total
    return precisions, recalls, ap


def naive_map(query_codes, db_codes, q_labels, db_labels):
    q_bits = naive_unpack(query_codes)
    db_bits = naive_unpack(db_codes)
    q_cols = [list(col) for col in np.asarray(q_labels).T]
    db_cols = [list(col) for col in np.asarray(db_labels).T]
    scores = []
    for i, qb in enumerate(q_bits):
        _, rel = naive_rank(qb, db_bits, q_cols[i], db_cols)
        if sum(rel) == 0:
            continue
        scores.append(naive_metrics(rel)[2])
    return sum(scores) / len(scores)


class TestHammingDistance:
    def test_identical_codes(self):
        a = make_packed([[1, -1, 1]])
        assert hamming_distance(a, a) == 0

    def test_single_differing_bit(self):
        a = make_packed([[1, 1, -1]])
        b = make_packed([[1, -1, -1]])
        assert hamming_distance(a, b) == 1

    def test_length_mismatch(self):
        a = make_packed([[1, 1]])
        b = make_packed([[1, 1, 1]])
        with pytest.raises(ValueError):
            hamming_distance(a, b)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_naive_bit_loop(self, seed):
        rng = np.random.default_rng(seed)
        a = random_codes(rng, 70, 8)
        b = random_codes(rng, 70, 8)
        ours = hamming_distance(a, b)
        a_bits, b_bits = naive_unpack(a), naive_unpack(b)
        for i in range(8):
            expected = sum(1 for x, y in zip(a_bits[i], b_bits[i]) if x != y)
            assert ours[i] == expected

    def test_metric_axioms_on_random_triples(self):
        rng = np.random.default_rng(5)
        n = 10_000
        a = random_codes(rng, 48, n)
        b = random_codes(rng, 48, n)
        c = random_codes(rng, 48, n)
        ab = hamming_distance(a, b)
        ba = hamming_distance(b, a)
        ac = hamming_distance(a, c)
        cb = hamming_distance(c, b)
        aa = hamming_distance(a, a)
        assert (ab == ba).all()
        assert (aa == 0).all()
        assert (ab >= 0).all() and (ab <= 48).all()
        assert (ab <= ac + cb).all()

    def test_xor_mask_invariance(self):
        rng = np.random.default_rng(6)
        a = random_codes(rng, 40, 5)
        b = random_codes(rng, 40, 6)
        mask = rng.integers(0, 2**63, size=a.words.shape[1], dtype=np.uint64)
        from bihash.types import PackedCodes
        a_m = PackedCodes(np.bitwise_xor(a.words, mask), 40)
        b_m = PackedCodes(np.bitwise_xor(b.words, mask), 40)
        for i in range(5):
            np.testing.assert_array_equal(hamming_distance(a[i], b),
                                          hamming_distance(a_m[i], b_m))


class TestRankDatabase:
    def test_single_relevant_item(self):
        query = make_packed([[1, 1]])
        db = make_packed([[1, -1]])
        labels = np.array([[1]])
        result = rank_database(query, db, labels, labels)
        np.testing.assert_array_equal(result.order, [0])
        np.testing.assert_array_equal(result.relevance, [1])

    def test_equal_codes_tie_break_by_index(self):
        query = make_packed([[1, 1, 1]])
        db = make_packed([[1, 1, 1]] * 5)
        db_labels = np.eye(5, dtype=np.uint8)[:1].repeat(1, axis=0)
        db_labels = np.ones((1, 5), dtype=np.uint8)
        result = rank_database(query, db, db_labels, np.ones((1, 1), np.uint8))
        np.testing.assert_array_equal(result.order, np.arange(5))

    def test_matches_naive_sort(self):
        rng = np.random.default_rng(7)
        db = random_codes(rng, 4, 8)
        query = random_codes(rng, 4, 1)
        db_labels = np.zeros((3, 8), dtype=np.uint8)
        db_labels[rng.integers(0, 3, 8), np.arange(8)] = 1
        q_label = np.array([[1], [0], [0]], dtype=np.uint8)
        result = rank_database(query, db, db_labels, q_label)
        order, rel = naive_rank(naive_unpack(query)[0], naive_unpack(db),
                                [1, 0, 0], [list(c) for c in db_labels.T])
        np.testing.assert_array_equal(result.order, order)
        np.testing.assert_array_equal(result.relevance, rel)

    def test_empty_database(self):
        query = make_packed([[1]])
        from bihash.types import PackedCodes
        empty = PackedCodes(np.zeros((0, 1), dtype=np.uint64), 1)
        with pytest.raises(ValueError):
            rank_database(query, empty, np.zeros((1, 0)), np.ones((1, 1)))


def ranking_from_relevance(rel):
    return RankingResult(np.arange(len(rel)), np.asarray(rel, dtype=np.uint8))


class TestPointMetrics:
    def test_precision_example(self):
        assert precision_at_k(ranking_from_relevance([1, 0, 1, 0]), 2) == 0.5

    def test_precision_all_relevant(self):
        result = ranking_from_relevance([1, 1, 1])
        for k in (1, 2, 3):
            assert precision_at_k(result, k) == 1.0

    def test_precision_k_out_of_range(self):
        with pytest.raises(ValueError):
            precision_at_k(ranking_from_relevance([1]), 2)

    def test_recall_examples(self):
        result = ranking_from_relevance([1, 0, 1, 0])
        assert recall_at_k(result, 3) == 1.0
        assert recall_at_k(result, 1) == 0.5

    def test_recall_at_full_depth_is_one(self):
        rng = np.random.default_rng(8)
        rel = rng.integers(0, 2, 12)
        rel[0] = 1
        assert recall_at_k(ranking_from_relevance(rel), 12) == 1.0

    def test_recall_zero_relevant(self):
        with pytest.raises(ZeroRelevantError):
            recall_at_k(ranking_from_relevance([0, 0]), 1)

    def test_ap_examples(self):
        assert average_precision(ranking_from_relevance([1, 1, 0])) == 1.0
        assert average_precision(ranking_from_relevance([0, 1])) == 0.5
        assert average_precision(ranking_from_relevance([1, 0, 1])) == \
            pytest.approx((1.0 + 2.0 / 3.0) / 2.0)

    def test_ap_is_one_iff_relevant_first(self):
        assert average_precision(ranking_from_relevance([1, 1, 0, 0])) == 1.0
        assert average_precision(ranking_from_relevance([1, 0, 1, 0])) < 1.0

    @pytest.mark.parametrize("seed", range(10))
    def test_metrics_match_naive(self, seed):
        rng = np.random.default_rng(seed)
        rel = rng.integers(0, 2, rng.integers(2, 30))
        rel[rng.integers(0, len(rel))] = 1
        result = ranking_from_relevance(rel)
        precisions, recalls, ap = naive_metrics(list(rel))
        for k in range(1, len(rel) + 1):
            assert precision_at_k(result, k) == pytest.approx(precisions[k - 1],
                                                              abs=1e-12)
            assert recall_at_k(result, k) == pytest.approx(recalls[k - 1],
                                                           abs=1e-12)
        assert average_precision(result) == pytest.approx(ap, abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40)
    def test_counts_are_integers(self, seed):
        rng = np.random.default_rng(seed)
        rel = rng.integers(0, 2, int(rng.integers(2, 25)))
        rel[0] = 1
        result = ranking_from_relevance(rel)
        total = rel.sum()
        for k in range(1, len(rel) + 1):
            hits = precision_at_k(result, k) * k
            assert hits == pytest.approx(round(hits), abs=1e-9)
            found = recall_at_k(result, k) * total
            assert found == pytest.approx(round(found), abs=1e-9)


class TestPrCurve:
    def test_all_relevant_constant_precision(self):
        curve = pr_curve(ranking_from_relevance([1, 1, 1]))
        np.testing.assert_allclose(curve[:, 1], 1.0)

    def test_single_relevant_at_last_rank(self):
        n = 6
        rel = [0] * (n - 1) + [1]
        curve = pr_curve(ranking_from_relevance(rel))
        np.testing.assert_allclose(curve[-1], [1.0, 1.0 / n])

    def test_recall_non_decreasing(self):
        rng = np.random.default_rng(9)
        rel = rng.integers(0, 2, 20)
        rel[3] = 1
        curve = pr_curve(ranking_from_relevance(rel))
        assert (np.diff(curve[:, 0]) >= 0).all()

    def test_matches_per_k_naive(self):
        rng = np.random.default_rng(10)
        rel = rng.integers(0, 2, 15)
        rel[0] = 1
        curve = pr_curve(ranking_from_relevance(rel))
        precisions, recalls, _ = naive_metrics(list(rel))
        np.testing.assert_allclose(curve[:, 0], recalls, atol=1e-12)
        np.testing.assert_allclose(curve[:, 1], precisions, atol=1e-12)


class TestAggregates:
    def _toy(self, seed=0, n_query=10, n_db=50, c=16, l=4):
        rng = np.random.default_rng(seed)
        q_codes = random_codes(rng, c, n_query)
        db_codes = random_codes(rng, c, n_db)
        q_labels = np.zeros((l, n_query), dtype=np.uint8)
        q_labels[rng.integers(0, l, n_query), np.arange(n_query)] = 1
        db_labels = np.zeros((l, n_db), dtype=np.uint8)
        db_labels[rng.integers(0, l, n_db), np.arange(n_db)] = 1
        return q_codes, db_codes, q_labels, db_labels

    def test_single_query_equals_its_ap(self):
        q_codes, db_codes, q_labels, db_labels = self._toy()
        one = mean_average_precision(q_codes[0], db_codes,
                                     q_labels[:, :1], db_labels)
        ranking = rank_database(q_codes[0], db_codes, db_labels, q_labels[:, :1])
        assert one == average_precision(ranking)

    def test_duplicated_query_set_unchanged(self):
        q_codes, db_codes, q_labels, db_labels = self._toy(seed=1)
        from bihash.types import PackedCodes
        doubled = PackedCodes(np.vstack([q_codes.words, q_codes.words]),
                              q_codes.bits)
        doubled_labels = np.hstack([q_labels, q_labels])
        base = mean_average_precision(q_codes, db_codes, q_labels, db_labels)
        again = mean_average_precision(doubled, db_codes, doubled_labels, db_labels)
        assert again == pytest.approx(base, rel=1e-12)

    def test_matches_fully_independent_naive(self):
        q_codes, db_codes, q_labels, db_labels = self._toy(seed=2)
        ours = mean_average_precision(q_codes, db_codes, q_labels, db_labels)
        reference = naive_map(q_codes, db_codes, q_labels, db_labels)
        assert ours == pytest.approx(reference, abs=1e-12)

    def test_zero_relevant_query_excluded(self, caplog):
        q_codes, db_codes, q_labels, db_labels = self._toy(seed=3, l=4)
        # give query 0 a label absent from the database
        q_labels = q_labels.copy()
        q_labels[:, 0] = 0
        q_labels = np.vstack([q_labels, np.zeros((1, q_labels.shape[1]), np.uint8)])
        q_labels[4, 0] = 1
        db_labels = np.vstack([db_labels, np.zeros((1, db_labels.shape[1]), np.uint8)])
        with caplog.at_level("WARNING"):
            value = mean_average_precision(q_codes, db_codes, q_labels, db_labels)
        assert "excluded" in caplog.text
        from bihash.types import PackedCodes
        rest = PackedCodes(q_codes.words[1:], q_codes.bits)
        expected = mean_average_precision(rest, db_codes, q_labels[:, 1:], db_labels)
        assert value == pytest.approx(expected, rel=1e-12)

    def test_all_queries_invalid_raises(self):
        q_codes, db_codes, q_labels, db_labels = self._toy(seed=4, l=2)
        db_labels = np.zeros((3, db_labels.shape[1]), dtype=np.uint8)
        db_labels[2] = 1  # database only carries class 2
        q_labels = np.zeros((3, q_labels.shape[1]), dtype=np.uint8)
        q_labels[0] = 1  # queries only class 0
        with pytest.raises(ValueError):
            mean_average_precision(q_codes, db_codes, q_labels, db_labels)

    def test_database_permutation_invariance_without_ties(self):
        # distances made pairwise-distinct so index tie-breaking never fires
        c = 16
        base = -np.ones((c, 6), dtype=np.int8)
        for j in range(6):
            base[:j, j] = 1  # database item j at distance j from the query
        db_codes = pack_codes(CodeMatrix(base))
        query = make_packed([[-1] * c])
        db_labels = np.array([[1, 0, 1, 0, 1, 0], [0, 1, 0, 1, 0, 1]],
                             dtype=np.uint8)
        q_label = np.array([[1], [0]], dtype=np.uint8)
        direct = average_precision(rank_database(query, db_codes, db_labels,
                                                 q_label))
        rng = np.random.default_rng(11)
        perm = rng.permutation(6)
        from bihash.types import PackedCodes
        shuffled = PackedCodes(db_codes.words[perm], c)
        permuted = average_precision(rank_database(query, shuffled,
                                                   db_labels[:, perm], q_label))
        assert permuted == pytest.approx(direct, rel=1e-15)

    def test_mean_pr_curve_matches_manual_average(self):
        q_codes, db_codes, q_labels, db_labels = self._toy(seed=5, n_query=4)
        mean_curve = mean_pr_curve(q_codes, db_codes, q_labels, db_labels)
        manual = []
        for i in range(4):
            ranking = rank_database(q_codes[i], db_codes, db_labels,
                                    q_labels[:, i:i + 1])
            manual.append(pr_curve(ranking))
        np.testing.assert_allclose(mean_curve, np.mean(manual, axis=0),
                                   atol=1e-12)

    def test_evaluate_retrieval_report(self):
        q_codes, db_codes, q_labels, db_labels = self._toy(seed=6)
        report = evaluate_retrieval(q_codes, db_codes, q_labels, db_labels,
                                    k_grid=[1, 5, 10, 500])
        assert report["queries_evaluated"] == 10
        assert set(report["precision_at"]) == {1, 5, 10, 50}  # 500 capped at n_db
        expected_map = naive_map(q_codes, db_codes, q_labels, db_labels)
        assert report["map"] == pytest.approx(expected_map, abs=1e-12)


class TestCsvOutput:
    def test_metrics_csv_round_trip(self, tmp_path):
        path = tmp_path / "metrics.csv"
        rows = [("bsdh", 32, "map", "", "0.85"),
                ("lsh", 32, "precision", 10, "0.4")]
        write_metrics_csv(path, rows)
        with open(path, newline="", encoding="utf-8") as fh:
            parsed = list(csv.reader(fh))
        assert parsed[0] == ["method", "code_length", "metric", "k", "value"]
        assert parsed[1] == ["bsdh", "32", "map", "", "0.85"]
        assert parsed[2] == ["lsh", "32", "precision", "10", "0.4"]

    def test_pr_csv_header_and_values(self, tmp_path):
        path = tmp_path / "pr.csv"
        curve = np.array([[0.5, 1.0], [1.0, 0.75]])
        write_pr_csv(path, curve)
        with open(path, newline="", encoding="utf-8") as fh:
            parsed = list(csv.reader(fh))
        assert parsed[0] == ["k", "recall", "precision"]
        assert parsed[1] == ["1", "0.5", "1.0"]
        assert parsed[2] == ["2", "1.0", "0.75"]
