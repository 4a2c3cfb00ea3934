"""Group bilinear head tests: logits, threshold scores, decoding."""

import numpy as np
import pytest

from memre import head as hd
from memre import tensor as T
from memre.errors import ConfigError
from memre.tensor import Tensor


def make_head(d, k, R, seed=0):
    return hd.init_head(d, k, R, seed)


class TestGroupBilinearLogits:
    def test_identity_blocks(self):
        head = make_head(4, 2, 2)
        for group in head.blocks:
            for i in range(2):
                group[i].data = np.eye(2)
        e = Tensor(np.array([1.0, 0.0, 1.0, 0.0]))
        logits = hd.group_bilinear_logits(e, e, head)
        np.testing.assert_allclose(logits.data, [2.0, 2.0, 2.0], atol=1e-12)
        np.testing.assert_allclose(T.sigmoid(logits).data[0], 0.880797, atol=1e-6)

    def test_zero_blocks_give_half_probability(self):
        head = make_head(4, 2, 3)
        for group in head.blocks:
            for b in group:
                b.data = np.zeros_like(b.data)
        e = Tensor(np.random.default_rng(0).normal(size=4))
        logits = hd.group_bilinear_logits(e, e, head)
        np.testing.assert_array_equal(logits.data, np.zeros(4))
        np.testing.assert_allclose(T.sigmoid(logits).data, 0.5)

    def test_k1_matches_dense_bilinear_oracle(self):
        rng = np.random.default_rng(1)
        head = make_head(4, 1, 2, seed=3)
        eh, et = rng.normal(size=4), rng.normal(size=4)
        logits = hd.group_bilinear_logits(Tensor(eh), Tensor(et), head)
        for c, group in enumerate(head.blocks):
            expected = eh @ group[0].data @ et
            np.testing.assert_allclose(logits.data[c], expected, atol=1e-12)

    def test_bilinearity_in_head_argument(self):
        rng = np.random.default_rng(2)
        head = make_head(8, 4, 3, seed=4)
        eh, et = rng.normal(size=8), rng.normal(size=8)
        base = hd.group_bilinear_logits(Tensor(eh), Tensor(et), head).data
        scaled = hd.group_bilinear_logits(Tensor(2.5 * eh), Tensor(et), head).data
        np.testing.assert_allclose(scaled, 2.5 * base, atol=1e-10)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        head = make_head(8, 4, 5, seed=5)
        Eh, Et = rng.normal(size=(6, 8)), rng.normal(size=(6, 8))
        batched = hd.group_bilinear_logits_batch(Tensor(Eh), Tensor(Et), head)
        for b in range(6):
            single = hd.group_bilinear_logits(Tensor(Eh[b]), Tensor(Et[b]), head)
            np.testing.assert_allclose(batched.data[b], single.data, atol=1e-10)

    def test_indivisible_group_count_rejected(self):
        with pytest.raises(ConfigError):
            hd.init_head(6, 4, 2, seed=0)

    def test_parameter_count_per_class(self):
        d, k = 16, 4
        head = make_head(d, k, 3)
        for group in head.blocks:
            assert sum(b.data.size for b in group) == d * d // k


class TestClassScores:
    def test_zero_threshold(self):
        f = hd.class_scores(Tensor(np.array([0.0, 0.7, -0.3])))
        np.testing.assert_allclose(f.data, [0.7, -0.3], atol=1e-15)

    def test_shift_invariance(self):
        logits = np.array([0.4, 1.2, -0.5, 0.9])
        base = hd.class_scores(Tensor(logits)).data
        shifted = hd.class_scores(Tensor(logits + 3.3)).data
        np.testing.assert_allclose(base, shifted, atol=1e-12)

    def test_tie_gives_zero(self):
        f = hd.class_scores(Tensor(np.array([1.1, 1.1, 0.0])))
        assert f.data[0] == 0.0

    def test_batch_variant(self):
        logits = np.array([[0.0, 1.0, -1.0], [2.0, 2.0, 5.0]])
        f = hd.class_scores(Tensor(logits))
        np.testing.assert_allclose(f.data, [[1.0, -1.0], [0.0, 3.0]])


class TestDecode:
    def test_strict_inequality_excludes_ties(self):
        assert hd.decode(np.array([0.2, -0.1, 0.0])) == {1}

    def test_all_negative_is_empty(self):
        assert hd.decode(np.array([-0.5, -0.1, -2.0])) == set()

    def test_brute_force_oracle_agreement(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            f = rng.normal(size=rng.integers(1, 12))
            expected = set()
            for i in range(len(f)):
                if f[i] > 0.0:
                    expected.add(i + 1)
            assert hd.decode(f) == expected

    def test_candidate_bound(self):
        R, N = 7, 5
        rng = np.random.default_rng(7)
        total = 0
        for h in range(N):
            for t in range(N):
                if h == t:
                    continue
                total += len(hd.decode(rng.normal(size=R)))
        assert total <= R * N * (N - 1)
