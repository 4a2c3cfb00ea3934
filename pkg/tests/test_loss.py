"""Risk estimator tests: hand-computed values, exact reductions,
non-negativity, unbiasedness at scale, and gradient checks."""

import math

import numpy as np
import pytest

from memre import loss as L
from memre import tensor as T
from memre.data import SynthConfig, synthesize_pu_corpus
from memre.errors import ConfigError, InvalidPriorError, PreconditionError
from memre.tensor import Tensor

LN2 = math.log(2.0)


def scores_of(f, mask):
    return L.BatchScores(f=Tensor(np.asarray(f, dtype=float)), positive_mask=np.asarray(mask, dtype=bool))


def table_of(pi, pi_labeled, n_p=10, n_u=90):
    pi = np.atleast_1d(np.asarray(pi, dtype=float))
    pi_labeled = np.atleast_1d(np.asarray(pi_labeled, dtype=float))
    pi_u = np.array([L.prior_shift(a, b) for a, b in zip(pi, pi_labeled)])
    k = pi.shape[0]
    return L.ClassPriorTable(
        pi=pi, pi_labeled=pi_labeled, pi_u=pi_u,
        n_p=np.full(k, n_p), n_u=np.full(k, n_u),
    )


class TestPriorShift:
    def test_fully_labeled_gives_zero(self):
        assert L.prior_shift(0.3, 0.3) == 0.0

    def test_unlabeled_gives_pi(self):
        assert L.prior_shift(0.3, 0.0) == 0.3

    def test_hand_value(self):
        np.testing.assert_allclose(L.prior_shift(0.3, 0.1), 0.2 / 0.9, atol=1e-15)

    def test_rejects_labeled_above_pi(self):
        with pytest.raises(InvalidPriorError):
            L.prior_shift(0.2, 0.3)

    def test_rejects_full_labeling_prior(self):
        with pytest.raises(InvalidPriorError):
            L.prior_shift(1.0, 1.0)


class TestPnRisk:
    def test_zero_scores_single_class(self):
        risk = L.pn_risk(scores_of([[0.0], [0.0]], [[True], [False]]))
        np.testing.assert_allclose(risk.data, 2 * LN2, atol=1e-12)

    def test_separated_scores_vanish(self):
        risk = L.pn_risk(scores_of([[20.0], [-20.0]], [[True], [False]]))
        assert float(risk.data) < 1e-8

    def test_classes_are_additive(self):
        f = [[0.3, 0.3], [-0.6, -0.6]]
        mask = [[True, True], [False, False]]
        double = L.pn_risk(scores_of(f, mask))
        single = L.pn_risk(scores_of([[0.3], [-0.6]], [[True], [False]]))
        np.testing.assert_allclose(double.data, 2 * single.data, atol=1e-12)

    def test_empty_batch_rejected(self):
        with pytest.raises(PreconditionError):
            L.pn_risk(scores_of(np.zeros((0, 1)), np.zeros((0, 1), dtype=bool)))


class TestPuRisk:
    def test_hand_value_at_zero_scores(self):
        risk = L.pu_risk(scores_of([[0.0], [0.0]], [[True], [False]]), table_of(0.5, 0.0))
        np.testing.assert_allclose(risk.data, LN2, atol=1e-12)

    def test_no_positives_reduces_to_unlabeled_term(self):
        risk = L.pu_risk(scores_of([[0.1], [-0.2]], [[False], [False]]), table_of(0.5, 0.0))
        expected = 0.5 * (math.log1p(math.exp(0.1)) + math.log1p(math.exp(-0.2)))
        np.testing.assert_allclose(risk.data, expected, atol=1e-12)

    def test_clamp_blocks_negative_term(self):
        # unlabeled loss small, positive negative-loss large: inner must clamp to 0
        f = [[8.0], [8.0], [8.0], [-8.0]]
        mask = [[True], [True], [True], [False]]
        risk, terms = L.pu_risk(scores_of(f, mask), table_of(0.5, 0.0), L.LossConfig(), return_terms=True)
        assert (terms["second"].data >= 0).all()
        assert terms["second"].data[0] == 0.0

    def test_missing_table_rejected(self):
        with pytest.raises(ConfigError):
            L.pu_risk(scores_of([[0.0]], [[True]]), None)


class TestSsrPuRisk:
    def test_bit_equal_to_pu_when_no_labels_dropped(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            k = int(rng.integers(1, 5))
            b = int(rng.integers(2, 12))
            f = rng.normal(size=(b, k))
            mask = rng.random(size=(b, k)) < 0.3
            table = table_of(rng.uniform(0.05, 0.6, size=k), np.zeros(k))
            pu = L.pu_risk(scores_of(f, mask), table)
            ssr = L.ssr_pu_risk(scores_of(f, mask), table)
            assert float(pu.data) == float(ssr.data)

    def test_zero_shift_kills_subtraction_coefficient(self):
        pi = np.array([0.37])
        table = table_of(pi, pi)
        _, unl, sub = L.ssr_coefficients(table.pi, table.pi_u)
        assert sub[0] == 0.0
        np.testing.assert_allclose(unl[0], 1.0 - 0.37, atol=1e-15)

    def test_worked_example_is_ln2(self):
        table = table_of(0.5, 0.25)
        np.testing.assert_allclose(table.pi_u, 1.0 / 3.0, atol=1e-15)
        risk = L.ssr_pu_risk(scores_of([[0.0], [0.0]], [[True], [False]]), table)
        assert abs(float(risk.data) - LN2) < 1e-12

    def test_gamma_weight_multiplies_positive_term(self):
        table = table_of(0.2, 0.1)
        plain = L.ssr_pu_risk(scores_of([[0.0], [0.0]], [[True], [False]]), table)
        weighted = L.ssr_pu_risk(
            scores_of([[0.0], [0.0]], [[True], [False]]), table, L.LossConfig(use_gamma_weight=True)
        )
        gamma = math.sqrt((1 - 0.2) / 0.2)
        pos = 0.2 * LN2
        np.testing.assert_allclose(float(weighted.data) - float(plain.data), (gamma - 1) * pos, atol=1e-12)

    def test_nonnegativity_random_batches(self):
        rng = np.random.default_rng(1)
        for _ in range(2000):
            k = int(rng.integers(1, 4))
            b = int(rng.integers(2, 8))
            f = rng.normal(scale=3.0, size=(b, k))
            mask = rng.random(size=(b, k)) < 0.4
            pi = rng.uniform(0.02, 0.7, size=k)
            pi_labeled = pi * rng.uniform(0.0, 1.0, size=k)
            risk, terms = L.ssr_pu_risk(
                scores_of(f, mask), table_of(pi, pi_labeled), L.LossConfig(), return_terms=True
            )
            assert (terms["second"].data >= 0).all()
            assert float(risk.data) >= 0

    def test_gradient_matches_finite_differences_off_kink(self):
        rng = np.random.default_rng(2)
        table = table_of([0.3, 0.2], [0.1, 0.05])
        f0 = rng.normal(size=(6, 2))
        mask = rng.random(size=(6, 2)) < 0.5

        def value(arr):
            with T.no_grad():
                return float(L.ssr_pu_risk(scores_of(arr, mask), table).data)

        _, terms = L.ssr_pu_risk(scores_of(f0, mask), table, L.LossConfig(), return_terms=True)
        raw = L.ssr_pu_risk(scores_of(f0, mask), table, L.LossConfig(clamp_nonnegative=False), return_terms=True)[1]
        if np.any(np.abs(raw["second"].data) <= 1e-3):
            pytest.skip("sampled point too close to the clamp kink")
        x = Tensor(f0, requires_grad=True)
        risk = L.ssr_pu_risk(L.BatchScores(f=x, positive_mask=mask), table)
        T.backward(risk)
        step = 1e-5
        for idx in [(0, 0), (3, 1), (5, 0)]:
            bump = np.zeros_like(f0)
            bump[idx] = step
            fd = (value(f0 + bump) - value(f0 - bump)) / (2 * step)
            np.testing.assert_allclose(x.grad[idx], fd, rtol=1e-4, atol=1e-7)

    def test_unbiased_negative_risk_at_scale(self):
        # unclamped shift-corrected negative term should estimate the
        # ground-truth PN negative risk
        pi, pi_labeled = 0.3, 0.12
        table = table_of(pi, pi_labeled)
        n = 10_000
        estimates, truths = [], []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            y = rng.random(n) < pi
            labeled = y & (rng.random(n) < (pi_labeled / pi))
            x = np.where(y, rng.normal(1.2, 1.0, n), rng.normal(-1.2, 1.0, n))
            f = 0.8 * x
            softplus = np.logaddexp(0.0, f)
            truths.append((1 - pi) * softplus[~y].mean())
            bs = scores_of(f[:, None], labeled[:, None])
            _, terms = L.ssr_pu_risk(bs, table, L.LossConfig(clamp_nonnegative=False), return_terms=True)
            estimates.append(float(terms["second"].data[0]))
        est, truth = np.mean(estimates), np.mean(truths)
        assert abs(est - truth) / truth < 0.05


class TestEstimatePriors:
    def test_fully_labeled_corpus_gives_zero_shift(self):
        res = synthesize_pu_corpus(SynthConfig(num_train=40, num_dev=0, num_test=0, keep_rate=1.0, seed=5))
        table = L.estimate_priors(res.train, 8, assumed_pi=res.priors_train.pi)
        np.testing.assert_allclose(table.pi_labeled, res.priors_train.pi, atol=1e-12)
        np.testing.assert_allclose(table.pi_u, 0.0, atol=1e-12)

    def test_half_keep_rate_recovered_within_three_sigma(self):
        cfg = SynthConfig(num_train=400, num_dev=0, num_test=0, keep_rate=0.5, seed=6,
                          universe_entities=80, true_priors=0.06)
        res = synthesize_pu_corpus(cfg)
        # fact-level censoring: count kept facts, each an independent coin
        facts_true, facts_kept = {}, {}
        for doc, truth in zip(res.train, res.oracle):
            kept_keys = {(doc.entity_name(t.head), doc.entity_name(t.tail), t.relation) for t in doc.labels}
            for t in truth.labels:
                key = (truth.entity_name(t.head), truth.entity_name(t.tail), t.relation)
                facts_true.setdefault(t.relation, set()).add(key)
                if key in kept_keys:
                    facts_kept.setdefault(t.relation, set()).add(key)
        for rel, universe in facts_true.items():
            n = len(universe)
            kept = len(facts_kept.get(rel, ()))
            sigma = math.sqrt(n * 0.5 * 0.5)
            assert abs(kept - 0.5 * n) <= 3 * sigma

    def test_estimated_labeled_prior_tracks_keep_rate(self):
        # occurrence-level censoring makes each triple an independent coin,
        # so the counted labeled prior lands within 3 binomial sigmas
        cfg = SynthConfig(num_train=400, num_dev=0, num_test=0, keep_rate=0.5, seed=9,
                          universe_entities=80, true_priors=0.06, censor_unit="occurrence")
        res = synthesize_pu_corpus(cfg)
        table = L.estimate_priors(res.train, 8, assumed_pi=np.maximum(res.priors_train.pi, 1e-9))
        from memre.data import enumerate_pairs

        total = sum(len(enumerate_pairs(d)) for d in res.train)
        for i in range(8):
            n_true = res.priors_train.pi[i] * total
            if n_true < 20:
                continue
            sigma = math.sqrt(n_true * 0.25)
            assert abs(table.pi_labeled[i] * total - 0.5 * n_true) <= 3 * sigma

    def test_empty_class_still_tabulated(self):
        res = synthesize_pu_corpus(SynthConfig(num_train=30, num_dev=0, num_test=0, keep_rate=1.0, seed=7))
        table = L.estimate_priors(res.train, 10)
        assert table.num_classes == 10
        assert table.pi_labeled[9] == 0.0

    def test_assumed_pi_below_labeled_rejected(self):
        res = synthesize_pu_corpus(SynthConfig(num_train=40, num_dev=0, num_test=0, keep_rate=1.0, seed=8))
        with pytest.raises(InvalidPriorError):
            L.estimate_priors(res.train, 8, assumed_pi=1e-9)


class TestPriorTableIO:
    def test_save_load_roundtrip(self, tmp_path):
        table = table_of([0.3, 0.2], [0.1, 0.0])
        path = tmp_path / "priors.csv"
        table.save(path)
        again = L.ClassPriorTable.load(path)
        np.testing.assert_array_equal(table.pi, again.pi)
        np.testing.assert_array_equal(table.pi_labeled, again.pi_labeled)
        np.testing.assert_array_equal(table.pi_u, again.pi_u)
        np.testing.assert_array_equal(table.n_p, again.n_p)

    def test_validation_rejects_inverted_priors(self):
        with pytest.raises(InvalidPriorError):
            L.ClassPriorTable(
                pi=np.array([0.1]), pi_labeled=np.array([0.2]), pi_u=np.array([0.0]),
                n_p=np.array([1]), n_u=np.array([9]),
            ).validate()
