"""scikit-learn style estimator facade over the training pipeline.

``MemoryRelationExtractor`` follows the usual conventions: constructor
arguments are stored verbatim, all work happens in ``fit``, fitted state
lives in trailing-underscore attributes, and ``get_params`` /
``set_params`` come from ``BaseEstimator`` so the model composes with
``clone``, grid search, and friends.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import loss as loss_mod
from . import tensor as T
from . import trainer as trainer_mod
from .data import Document
from .errors import InputError


def check_documents(docs, name: str = "X") -> list[Document]:
    """Validate a document collection before training or inference."""
    docs = list(docs)
    if not docs:
        raise InputError(f"{name} is empty")
    for doc in docs:
        if not isinstance(doc, Document):
            raise InputError(f"{name} must contain Document objects, got {type(doc).__name__}")
        doc.validate()
    return docs


class MemoryRelationExtractor(BaseEstimator):
    """Document-level relation extractor with a trainable token memory.

    Parameters
    ----------
    hidden_dim : embedding width d; must be divisible by both
        ``attention_heads`` and ``bilinear_groups``.
    memory_size : number of learnable memory tokens; 0 disables the
        memory read entirely (bypass baseline).
    read_layers : summarizer depth in 1..4.
    bilinear_groups : k in the grouped bilinear head.
    encoder_layers : self-attention blocks (0, 1, or 2).
    loss : "pn", "pu", or "ssr-pu".
    prior_inflation : factor applied to counted labeled priors when no
        explicit prior table is given (the true prior is unobservable
        under censored labels).
    epochs, learning_rate, batch_docs : single-stage schedule; a distant
        pretraining stage can be added through ``fit``.
    pretrain_epochs, pretrain_learning_rate : schedule for the optional
        noisy pretraining stage (used when ``fit`` receives
        ``pretrain_docs``); memory tokens are frozen afterwards.
    """

    def __init__(
        self,
        hidden_dim: int = 64,
        memory_size: int = 200,
        read_layers: int = 4,
        bilinear_groups: int = 4,
        encoder_layers: int = 1,
        attention_heads: int = 4,
        max_doc_len: int = 512,
        init_scale: float = 0.1,
        loss: str = "ssr-pu",
        prior_inflation: float = loss_mod.DEFAULT_PRIOR_INFLATION,
        epochs: int = 5,
        learning_rate: float = 1e-3,
        batch_docs: int = 8,
        pretrain_epochs: int = 3,
        pretrain_learning_rate: float = 1e-3,
        grad_clip: float = 5.0,
        weight_decay: float = 0.0,
        seed: int = 0,
    ):
        self.hidden_dim = hidden_dim
        self.memory_size = memory_size
        self.read_layers = read_layers
        self.bilinear_groups = bilinear_groups
        self.encoder_layers = encoder_layers
        self.attention_heads = attention_heads
        self.max_doc_len = max_doc_len
        self.init_scale = init_scale
        self.loss = loss
        self.prior_inflation = prior_inflation
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_docs = batch_docs
        self.pretrain_epochs = pretrain_epochs
        self.pretrain_learning_rate = pretrain_learning_rate
        self.grad_clip = grad_clip
        self.weight_decay = weight_decay
        self.seed = seed

    def _train_config(self, with_pretrain: bool) -> trainer_mod.TrainConfig:
        model = trainer_mod.ModelConfig(
            hidden_dim=self.hidden_dim,
            memory_size=self.memory_size,
            read_layers=self.read_layers,
            bilinear_groups=self.bilinear_groups,
            encoder_layers=self.encoder_layers,
            attention_heads=self.attention_heads,
            max_doc_len=self.max_doc_len,
            init_scale=self.init_scale,
        )
        stages = []
        if with_pretrain:
            stages.append(
                trainer_mod.StageConfig(
                    split="pretrain",
                    epochs=self.pretrain_epochs,
                    lr=self.pretrain_learning_rate,
                    batch_docs=self.batch_docs,
                    loss=self.loss,
                )
            )
        stages.append(
            trainer_mod.StageConfig(
                split="train",
                epochs=self.epochs,
                lr=self.learning_rate,
                batch_docs=self.batch_docs,
                loss=self.loss,
                freeze_memory=with_pretrain,
            )
        )
        return trainer_mod.TrainConfig(
            model=model,
            stages=stages,
            optimizer=trainer_mod.OptimizerConfig(weight_decay=self.weight_decay),
            seed=self.seed,
            grad_clip=self.grad_clip,
        )

    def fit(self, X, y=None, dev_docs=None, pretrain_docs=None, priors=None):
        """Train on a document collection.

        ``X`` is a sequence of :class:`~memre.data.Document`; labels ride
        on the documents, so ``y`` is accepted only for API compatibility
        and must be None. ``pretrain_docs`` adds a first-stage pass on a
        noisy split with the memory frozen afterwards. ``priors`` may be
        a prebuilt prior table; otherwise one is counted from ``X`` and
        inflated by ``prior_inflation``.
        """
        if y is not None:
            raise InputError("labels live on the documents; pass y=None")
        train_docs = check_documents(X)
        corpora = {"train": train_docs}
        if dev_docs is not None:
            corpora["dev"] = check_documents(dev_docs, "dev_docs")
        if pretrain_docs is not None:
            corpora["pretrain"] = check_documents(pretrain_docs, "pretrain_docs")
        cfg = self._train_config(with_pretrain=pretrain_docs is not None)
        num_relations = trainer_mod._infer_num_relations(corpora)
        if priors is None and self.loss in ("pu", "ssr-pu"):
            priors = loss_mod.estimate_priors(train_docs, num_relations, inflation=self.prior_inflation)
        result = trainer_mod.run_training(corpora, cfg, priors=priors)
        self.model_ = result.params
        self.report_ = result.report
        self.priors_ = priors
        self.num_relations_ = num_relations
        self.vocab_ = result.params.vocab
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("fit the extractor before calling predict/score")

    def predict(self, X) -> list[tuple[str, int, int, int]]:
        """Decoded (doc_id, head, tail, relation) tuples for every pair."""
        self._check_fitted()
        docs = check_documents(X)
        preds = []
        with T.no_grad():
            for lo in range(0, len(docs), 16):
                batch = [d for d in docs[lo : lo + 16] if d.num_entities >= 2]
                if not batch:
                    continue
                scores, index = trainer_mod.forward_batch(batch, self.model_)
                rows, rels = np.nonzero(scores.data > 0.0)
                for row, rel in zip(rows, rels):
                    doc_id, h, t = index[row]
                    preds.append((doc_id, h, t, int(rel) + 1))
        return preds

    def predict_pair_scores(self, doc: Document, head: int, tail: int) -> np.ndarray:
        """Threshold-relative scores f for one ordered entity pair."""
        self._check_fitted()
        with T.no_grad():
            _, f = trainer_mod.forward_pair(doc, head, tail, self.model_)
        return f.data.copy()

    def score(self, X, y=None) -> float:
        """Micro-F1 of decoded triples against the documents' labels."""
        self._check_fitted()
        docs = check_documents(X)
        report = trainer_mod.evaluate(self.model_, docs)
        return report.f1
