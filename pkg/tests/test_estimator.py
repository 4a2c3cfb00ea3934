"""Estimator facade tests: sklearn conventions and end-to-end behavior."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from memre.data import SynthConfig, synthesize_pu_corpus
from memre.errors import InputError
from memre.estimator import MemoryRelationExtractor, check_documents


@pytest.fixture(scope="module")
def world():
    return synthesize_pu_corpus(
        SynthConfig(num_train=30, num_dev=10, num_test=10, seed=31, universe_entities=20,
                    entities_per_doc=3, keep_rate=0.8)
    )


def small_extractor(**kw):
    defaults = dict(hidden_dim=8, memory_size=3, read_layers=1, bilinear_groups=2,
                    encoder_layers=0, epochs=1, batch_docs=8, seed=0)
    defaults.update(kw)
    return MemoryRelationExtractor(**defaults)


class TestSklearnConventions:
    def test_get_set_params_roundtrip(self):
        est = small_extractor()
        params = est.get_params()
        assert params["memory_size"] == 3
        est.set_params(memory_size=5)
        assert est.memory_size == 5

    def test_clone_preserves_params(self):
        est = small_extractor(loss="pu", learning_rate=2e-3)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_not_fitted_raises(self, world):
        est = small_extractor()
        with pytest.raises(NotFittedError):
            est.predict(world.dev)

    def test_y_must_be_none(self, world):
        est = small_extractor()
        with pytest.raises(InputError):
            est.fit(world.train, y=[1, 2, 3])


class TestFitPredictScore:
    def test_fit_sets_state(self, world):
        est = small_extractor().fit(world.train, dev_docs=world.dev)
        assert hasattr(est, "model_")
        assert est.num_relations_ == 8
        assert est.report_.loss_curve

    def test_fit_returns_self(self, world):
        est = small_extractor()
        assert est.fit(world.train) is est

    def test_predict_returns_tuples(self, world):
        est = small_extractor().fit(world.train)
        preds = est.predict(world.test)
        for item in preds:
            doc_id, h, t, r = item
            assert isinstance(doc_id, str)
            assert h != t
            assert 1 <= r <= 8

    def test_score_in_unit_interval(self, world):
        est = small_extractor().fit(world.train)
        score = est.score(world.test)
        assert 0.0 <= score <= 1.0

    def test_pair_scores_shape(self, world):
        est = small_extractor().fit(world.train)
        f = est.predict_pair_scores(world.test[0], 0, 1)
        assert f.shape == (8,)

    def test_pretrain_path_freezes_memory(self, world):
        est = small_extractor(pretrain_epochs=1)
        est.fit(world.train, pretrain_docs=world.oracle)
        assert est.model_.memory.frozen

    def test_bypass_configuration(self, world):
        est = small_extractor(memory_size=0).fit(world.train)
        assert est.model_.memory is None

    def test_seed_reproducibility(self, world):
        a = small_extractor(seed=5).fit(world.train)
        b = small_extractor(seed=5).fit(world.train)
        assert a.report_.loss_curve == b.report_.loss_curve


class TestValidation:
    def test_empty_input_rejected(self):
        with pytest.raises(InputError):
            check_documents([])

    def test_non_document_rejected(self):
        with pytest.raises(InputError):
            check_documents([{"not": "a document"}])
