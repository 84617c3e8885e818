import numpy as np
import pytest

from ncd.rankstats import (
    PairwiseLabelMatrix,
    RankConfig,
    cosine_labels,
    hard_rs,
    mixed_pos_neg_labels,
    pairwise_label_matrix,
    soft_rs,
    top_k_index_set,
)


# ---------------------------------------------------------------------------
# Independent oracle: fully sort both vectors and count shared leading indices.
# Deliberately avoids argsort-of-negated / indicator tricks used by the module.
def oracle_top_k(v, k):
    pairs = sorted(enumerate(v), key=lambda p: (-p[1], p[0]))
    return {i for i, _ in pairs[:k]}


def oracle_soft(a, b, k):
    return len(oracle_top_k(a, k) & oracle_top_k(b, k)) / k


def oracle_hard(a, b, k):
    return 1 if oracle_top_k(a, k) == oracle_top_k(b, k) else 0


class TestTopK:
    def test_sorted_input(self):
        assert set(top_k_index_set([5, 4, 3, 2, 1], 2)) == {0, 1}

    def test_tie_break_lowest_index(self):
        assert set(top_k_index_set([1, 1, 0], 1)) == {0}

    def test_positive_scaling_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            v = rng.normal(size=12)
            k = int(rng.integers(1, 12))
            ref = top_k_index_set(v, k)
            assert np.array_equal(top_k_index_set(2.0 * v, k), ref)
            assert np.array_equal(top_k_index_set(0.5 * v + 3.0, k), ref)

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            top_k_index_set([1.0, 2.0], 3)
        with pytest.raises(ValueError):
            top_k_index_set([1.0, 2.0], 0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            top_k_index_set([1.0, np.nan], 1)


class TestSoftHardRs:
    def test_identical_vectors(self):
        v = np.arange(10.0)
        assert soft_rs(v, v, 5) == 1.0
        assert hard_rs(v, v, 5) == 1

    def test_disjoint_top_sets(self):
        assert soft_rs([9, 8, 1, 0], [0, 1, 8, 9], 2) == 0.0

    def test_partial_overlap(self):
        assert soft_rs([5, 4, 3, 2], [5, 1, 4, 2], 2) == 0.5

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            soft_rs([1.0, 2.0], [1.0, 2.0, 3.0], 1)

    def test_hard_iff_soft_one(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a = rng.normal(size=8)
            b = a.copy()
            if rng.random() < 0.5:
                b = rng.normal(size=8)
            k = int(rng.integers(1, 9))
            s = soft_rs(a, b, k)
            h = hard_rs(a, b, k)
            assert (h == 1) == (s == 1.0)
            if h == 0:
                assert s < 1.0

    def test_symmetry_and_grid_values(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            d = int(rng.integers(2, 24))
            k = int(rng.integers(1, d + 1))
            a, b = rng.normal(size=d), rng.normal(size=d)
            s = soft_rs(a, b, k)
            assert s == soft_rs(b, a, k)
            # s is exactly a multiple of 1/k
            assert s in {c / k for c in range(k + 1)}

    @pytest.mark.parametrize("k", [1, 5, 30])
    def test_against_sort_oracle(self, k):
        rng = np.random.default_rng(123 + k)
        for _ in range(1000):
            a = rng.normal(size=64)
            b = rng.normal(size=64)
            assert soft_rs(a, b, k) == oracle_soft(a, b, k)
            assert hard_rs(a, b, k) == oracle_hard(a, b, k)


class TestPairwiseLabelMatrix:
    def test_identical_rows_all_ones(self):
        Z = np.tile(np.arange(6.0), (2, 1))
        out = pairwise_label_matrix(Z, RankConfig(k=3))
        assert np.array_equal(out.labels, np.ones((2, 2)))
        assert out.mask.all()

    def test_one_hot_rows_identity(self):
        Z = np.eye(5)
        out = pairwise_label_matrix(Z, RankConfig(k=1, mode="hard"))
        assert np.array_equal(out.labels, np.eye(5))

    def test_matches_per_pair_oracle(self):
        rng = np.random.default_rng(42)
        Z = rng.normal(size=(8, 16))
        for mode in ("soft", "hard"):
            out = pairwise_label_matrix(Z, RankConfig(k=3, mode=mode))
            for i in range(8):
                for j in range(8):
                    if i == j:
                        expect = 1.0
                    elif mode == "soft":
                        expect = oracle_soft(Z[i], Z[j], 3)
                    else:
                        expect = float(oracle_hard(Z[i], Z[j], 3))
                    assert out.labels[i, j] == expect

    def test_exhaustive_small_sweep(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            m = int(rng.integers(1, 17))
            d = int(rng.integers(2, 33))
            k = int(rng.integers(1, d + 1))
            Z = rng.normal(size=(m, d))
            out = pairwise_label_matrix(Z, RankConfig(k=k))
            assert np.array_equal(out.labels, out.labels.T)
            assert np.array_equal(np.diag(out.labels), np.ones(m))
            for i in range(m):
                for j in range(i + 1, m):
                    assert out.labels[i, j] == oracle_soft(Z[i], Z[j], k)

    def test_k_exceeding_dim(self):
        with pytest.raises(ValueError):
            pairwise_label_matrix(np.ones((2, 3)), RankConfig(k=4))


class TestCosineLabels:
    def test_hard_threshold(self):
        # rows at a known angle: cos = 0.95 >= 0.9 -> positive pair
        a = np.array([1.0, 0.0])
        c = 0.95
        b = np.array([c, np.sqrt(1 - c * c)])
        out = cosine_labels(np.stack([a, b]), "hard", threshold=0.9)
        assert out.labels[0, 1] == 1.0

    def test_soft_identical_and_orthogonal(self):
        Z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        out = cosine_labels(Z, "soft")
        assert out.labels[0, 1] == pytest.approx(1.0)
        assert out.labels[0, 2] == 0.0  # clamp of zero

    def test_negative_cosine_clamped(self):
        Z = np.array([[1.0, 0.0], [-1.0, 0.0]])
        out = cosine_labels(Z, "soft")
        assert out.labels[0, 1] == 0.0

    def test_zero_row_rejected(self):
        with pytest.raises(ValueError):
            cosine_labels(np.array([[0.0, 0.0], [1.0, 0.0]]), "soft")

    def test_diagonal_exactly_one(self):
        rng = np.random.default_rng(3)
        out = cosine_labels(rng.normal(size=(6, 9)), "soft")
        assert np.array_equal(np.diag(out.labels), np.ones(6))


class TestMixedLabels:
    def _mat(self, arr):
        arr = np.asarray(arr, dtype=float)
        return PairwiseLabelMatrix(arr, np.ones(arr.shape, dtype=bool))

    def test_local_positive_wins(self):
        local = self._mat([[1, 1], [1, 1]])
        glob = self._mat([[1, 0], [0, 1]])
        out = mixed_pos_neg_labels(local, glob)
        assert out.labels[0, 1] == 1.0
        assert out.mask[0, 1]

    def test_agreeing_negative(self):
        local = self._mat([[1, 0], [0, 1]])
        glob = self._mat([[1, 0], [0, 1]])
        out = mixed_pos_neg_labels(local, glob)
        assert out.labels[0, 1] == 0.0
        assert out.mask[0, 1]

    def test_conflict_masked_out(self):
        local = self._mat([[1, 0], [0, 1]])
        glob = self._mat([[1, 1], [1, 1]])
        out = mixed_pos_neg_labels(local, glob)
        assert not out.mask[0, 1]
        assert out.labels[0, 0] == 1.0 and out.mask[0, 0]

    def test_soft_inputs_rejected(self):
        soft = self._mat([[1.0, 0.5], [0.5, 1.0]])
        hard = self._mat([[1, 0], [0, 1]])
        with pytest.raises(ValueError):
            mixed_pos_neg_labels(soft, hard)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mixed_pos_neg_labels(self._mat(np.eye(2)), self._mat(np.eye(3)))
