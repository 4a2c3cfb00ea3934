"""Staged training loop, batched forward pass, optimizer, checkpoints.

The protocol mirrors the two-stage recipe the package is built around:
optionally pretrain on a large noisy split, freeze the memory tokens,
then fine-tune on the clean split. Single-stage runs cover the PN / PU /
shift-corrected baselines. All randomness flows from the config seed, so
a (seed, config, corpus) triple determines the loss curve bit for bit.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import head as head_mod
from . import loss as loss_mod
from . import memory as mem_mod
from . import tensor as T
from .data import Document, enumerate_pairs
from .errors import ConfigError, DivergenceError, PreconditionError
from .evalx import MetricReport, evaluate_sets
from .tensor import Tensor

CHECKPOINT_FORMAT = "memre-ckpt-v1"


@dataclass
class ModelConfig:
    hidden_dim: int = 64
    memory_size: int = 200
    read_layers: int = 4
    bilinear_groups: int = 4
    encoder_layers: int = 1
    attention_heads: int = 4
    max_doc_len: int = 512
    init_scale: float = 0.1

    def validate(self) -> None:
        if self.hidden_dim % self.bilinear_groups:
            raise ConfigError("hidden_dim must be divisible by bilinear_groups")
        if self.memory_size < 0:
            raise ConfigError("memory_size must be >= 0 (0 disables the memory)")


@dataclass
class StageConfig:
    split: str
    epochs: int = 1
    lr: float = 1e-3
    batch_docs: int = 8
    loss: str = "ssr-pu"
    freeze_memory: bool = False

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr < 0:
            raise ConfigError("learning rate must be nonnegative")
        if self.loss not in loss_mod.RISK_FUNCTIONS:
            raise ConfigError(f"unknown loss {self.loss!r}")


@dataclass
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    stages: list[StageConfig] = field(default_factory=list)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    grad_clip: float = 5.0
    checkpoint_every: int = 0
    unlabeled_pair_fraction: float = 1.0
    eval_batch_docs: int = 16
    dev_split: str = "dev"
    test_split: str = "test"

    def validate(self) -> None:
        self.model.validate()
        if not self.stages:
            raise ConfigError("at least one training stage required")
        for stage in self.stages:
            stage.validate()
        frozen = [s.freeze_memory for s in self.stages]
        if True in frozen and not all(frozen[frozen.index(True):]):
            raise ConfigError("memory can be frozen once; later stages cannot unfreeze it")
        if not (0.0 < self.unlabeled_pair_fraction <= 1.0):
            raise ConfigError("unlabeled_pair_fraction must be in (0, 1]")

    def training_splits(self) -> list[str]:
        seen = []
        for stage in self.stages:
            if stage.split not in seen:
                seen.append(stage.split)
        return seen

    def clone(self) -> "TrainConfig":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        out = {
            **{k: getattr(self.model, k) for k in vars(self.model)},
            **{k: getattr(self.optimizer, k) for k in vars(self.optimizer)},
            "seed": self.seed,
            "grad_clip": self.grad_clip,
            "checkpoint_every": self.checkpoint_every,
            "unlabeled_pair_fraction": self.unlabeled_pair_fraction,
            "stages": [dict(vars(s)) for s in self.stages],
        }
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        model_keys = set(vars(ModelConfig()))
        opt_keys = set(vars(OptimizerConfig()))
        model = ModelConfig(**{k: v for k, v in data.items() if k in model_keys})
        optimizer = OptimizerConfig(**{k: v for k, v in data.items() if k in opt_keys})
        stages = [StageConfig(**s) for s in data.get("stages", [])]
        extra = {
            k: data[k]
            for k in ("seed", "grad_clip", "checkpoint_every", "unlabeled_pair_fraction", "eval_batch_docs")
            if k in data
        }
        cfg = cls(model=model, stages=stages, optimizer=optimizer, **extra)
        cfg.validate()
        return cfg


@dataclass
class ModelParams:
    """Every learnable tensor in the pipeline, plus the vocabulary."""

    vocab: enc.Vocab
    num_relations: int
    encoder_cfg: enc.EncoderConfig
    encoder: enc.EncoderParams
    memory: mem_mod.MemoryState | None
    read: mem_mod.ReadConfig | None
    head: head_mod.BilinearHead

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = list(self.encoder.named())
        if self.memory is not None:
            out.extend(self.memory.named())
            out.extend(self.read.named())
        out.extend(self.head.named())
        return out

    @property
    def memory_enabled(self) -> bool:
        return self.memory is not None


def init_model(model_cfg: ModelConfig, vocab: enc.Vocab, num_relations: int, seed: int) -> ModelParams:
    model_cfg.validate()
    encoder_cfg = enc.EncoderConfig(
        vocab_size=len(vocab),
        hidden_dim=model_cfg.hidden_dim,
        num_layers=model_cfg.encoder_layers,
        num_heads=model_cfg.attention_heads,
        max_len=model_cfg.max_doc_len,
        seed=seed,
        init_scale=model_cfg.init_scale,
    )
    encoder_params = enc.init_encoder(encoder_cfg)
    if model_cfg.memory_size > 0:
        memory = mem_mod.init_memory(model_cfg.memory_size, model_cfg.hidden_dim, seed + 1)
        read = mem_mod.init_read(model_cfg.hidden_dim, model_cfg.read_layers, seed + 2)
    else:
        memory, read = None, None
    head = head_mod.init_head(model_cfg.hidden_dim, model_cfg.bilinear_groups, num_relations, seed + 3)
    return ModelParams(
        vocab=vocab,
        num_relations=num_relations,
        encoder_cfg=encoder_cfg,
        encoder=encoder_params,
        memory=memory,
        read=read,
        head=head,
    )


# ---------------------------------------------------------------------------
# forward passes


def _doc_token_ids(doc: Document, vocab: enc.Vocab) -> np.ndarray:
    return vocab.encode(doc.tokens())


def _pool_doc_entities(doc: Document, params: ModelParams) -> list[enc.EntityEmbedding]:
    ids = _doc_token_ids(doc, params.vocab)
    embs, _ = enc.encode_document(ids, params.encoder_cfg, params.encoder)
    limit = embs.data.shape[0]
    pooled = []
    for e_idx, mentions in enumerate(doc.entities):
        spans = [(s, e) for s, e in (doc.flat_span(m) for m in mentions) if s < limit]
        if not spans:
            # all mentions truncated away; pool the last surviving token
            spans = [(limit - 1, limit)]
        spans = [(s, min(e, limit)) for s, e in spans]
        pooled.append(enc.pool_entity(embs, spans, e_idx))
    return pooled


def forward_pair(doc: Document, h: int, t: int, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Single-pair forward: encode, pool, read, score.

    Returns (logits including the threshold class, threshold-relative
    scores). The batched path used in training computes the same values.
    """
    if h == t or not (0 <= h < doc.num_entities and 0 <= t < doc.num_entities):
        raise PreconditionError(f"invalid pair ({h}, {t}) for {doc.num_entities} entities")
    pooled = _pool_doc_entities(doc, params)
    pair_input = enc.entity_pair_inputs(pooled[h], pooled[t])
    if params.memory_enabled:
        out = mem_mod.read(params.memory, pair_input, params.read)
    else:
        out = mem_mod.read_bypass(pair_input)
    d = params.encoder_cfg.hidden_dim
    e_h = T.reshape(T.narrow(out.Z, 0, 0, 1), (d,))
    e_t = T.reshape(T.narrow(out.Z, 0, 1, 1), (d,))
    logits = head_mod.group_bilinear_logits(e_h, e_t, params.head)
    return logits, head_mod.class_scores(logits)


def forward_batch(
    docs: list[Document],
    params: ModelParams,
    pair_lists: list[list[tuple[int, int]]] | None = None,
) -> tuple[Tensor, list[tuple[str, int, int]]]:
    """Batched forward over all (or given) pairs of a document batch.

    Each document is encoded once; entity vectors feed every pair that
    mentions them. Returns threshold-relative scores (pairs, R) and the
    (doc_id, head, tail) index of each row.
    """
    vectors: list[Tensor] = []
    index: list[tuple[str, int, int]] = []
    for doc, pairs in zip(docs, pair_lists or [None] * len(docs)):
        doc_pairs = enumerate_pairs(doc) if pairs is None else pairs
        if not doc_pairs:
            continue
        pooled = _pool_doc_entities(doc, params)
        for h, t in doc_pairs:
            vectors.append(pooled[h].vector)
            vectors.append(pooled[t].vector)
            index.append((doc.doc_id, h, t))
    if not index:
        raise PreconditionError("no candidate pairs in batch")
    d = params.encoder_cfg.hidden_dim
    batch = len(index)
    stacked = T.reshape(T.stack_rows(vectors), (batch, 2, d))
    if params.memory_enabled:
        z = mem_mod.read_batch(params.memory, stacked, params.read)
    else:
        z = stacked
    e_h = T.reshape(T.narrow(z, 1, 0, 1), (batch, d))
    e_t = T.reshape(T.narrow(z, 1, 1, 1), (batch, d))
    logits = head_mod.group_bilinear_logits_batch(e_h, e_t, params.head)
    return head_mod.class_scores(logits), index


def _label_mask(docs: list[Document], index: list[tuple[str, int, int]], num_relations: int) -> np.ndarray:
    labels: dict[tuple[str, int, int], set[int]] = {}
    for doc in docs:
        for triple in doc.labels:
            labels.setdefault((doc.doc_id, triple.head, triple.tail), set()).add(triple.relation)
    mask = np.zeros((len(index), num_relations), dtype=bool)
    for row, key in enumerate(index):
        for rel in labels.get(key, ()):
            if 1 <= rel <= num_relations:
                mask[row, rel - 1] = True
    return mask


def _subsample_pairs(doc: Document, fraction: float, rng: np.random.Generator) -> list[tuple[int, int]]:
    pairs = enumerate_pairs(doc)
    if fraction >= 1.0:
        return pairs
    labeled = {(t.head, t.tail) for t in doc.labels}
    kept = [p for p in pairs if p in labeled or rng.random() < fraction]
    return kept or pairs[:1]


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """Adaptive moments with decoupled weight decay, fixed update order."""

    def __init__(self, named_params: list[tuple[str, Tensor]], cfg: OptimizerConfig):
        self.named = named_params
        self.cfg = cfg
        self.state = {name: (np.zeros_like(p.data), np.zeros_like(p.data), 0) for name, p in named_params}

    def step(self, lr: float, skip: set[str] = frozenset()) -> None:
        c = self.cfg
        for name, p in self.named:
            if name in skip or p.grad is None:
                continue
            m, v, t = self.state[name]
            t += 1
            g = p.grad
            m = c.beta1 * m + (1 - c.beta1) * g
            v = c.beta2 * v + (1 - c.beta2) * (g * g)
            m_hat = m / (1 - c.beta1**t)
            v_hat = v / (1 - c.beta2**t)
            p.data = p.data - lr * (m_hat / (np.sqrt(v_hat) + c.eps) + c.weight_decay * p.data)
            self.state[name] = (m, v, t)

    def zero_grad(self) -> None:
        for _, p in self.named:
            p.grad = None


def clip_gradients(named_params, max_norm: float) -> float:
    total = 0.0
    for _, p in named_params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for _, p in named_params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, path, extra: dict | None = None) -> None:
    """Named parameters as shape + row-major float64 values (JSON).

    Floats serialize via ``repr`` so reloading is bit-exact.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "num_relations": params.num_relations,
        "config": {
            "hidden_dim": params.encoder_cfg.hidden_dim,
            "encoder_layers": params.encoder_cfg.num_layers,
            "attention_heads": params.encoder_cfg.num_heads,
            "max_doc_len": params.encoder_cfg.max_len,
            "init_scale": params.encoder_cfg.init_scale,
            "memory_size": params.memory.size if params.memory else 0,
            "read_layers": params.read.num_layers if params.read else 0,
            "bilinear_groups": params.head.k,
        },
        "vocab": params.vocab.tokens,
        "params": {
            name: {"shape": list(p.data.shape), "values": [float(v) for v in p.data.reshape(-1)]}
            for name, p in params.named_parameters()
        },
    }
    if extra:
        payload["extra"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format {payload.get('format')!r}")
    cfg = payload["config"]
    model_cfg = ModelConfig(
        hidden_dim=cfg["hidden_dim"],
        memory_size=cfg["memory_size"],
        read_layers=max(cfg["read_layers"], 1),
        bilinear_groups=cfg["bilinear_groups"],
        encoder_layers=cfg["encoder_layers"],
        attention_heads=cfg["attention_heads"],
        max_doc_len=cfg["max_doc_len"],
        init_scale=cfg.get("init_scale", 0.1),
    )
    if cfg["memory_size"] == 0:
        model_cfg.memory_size = 0
    vocab = enc.Vocab(payload["vocab"])
    params = init_model(model_cfg, vocab, payload["num_relations"], seed=0)
    stored = payload["params"]
    for name, p in params.named_parameters():
        if name not in stored:
            raise ConfigError(f"checkpoint missing parameter {name}")
        entry = stored[name]
        p.data = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
    return params


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainReport:
    loss_curve: list[float] = field(default_factory=list)
    stage_wall_time: list[float] = field(default_factory=list)
    dev_metrics: list[dict] = field(default_factory=list)
    final_checkpoint: str | None = None
    best_dev_f1: float | None = None
    diverged: bool = False

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "loss_curve": self.loss_curve,
            "dev_metrics": self.dev_metrics,
            "final_checkpoint": self.final_checkpoint,
            "best_dev_f1": self.best_dev_f1,
            "diverged": self.diverged,
        }
        if include_timing:
            out["stage_wall_time"] = self.stage_wall_time
        return out


@dataclass
class TrainResult:
    params: ModelParams
    report: TrainReport
    dev_report: MetricReport | None = None
    test_report: MetricReport | None = None


def _memory_param_names(params: ModelParams) -> set[str]:
    if params.memory is None:
        return set()
    return {name for name, _ in params.memory.named()}


def _snapshot(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.named_parameters()}


def _restore(params: ModelParams, snapshot: dict[str, np.ndarray]) -> None:
    for name, p in params.named_parameters():
        p.data = snapshot[name].copy()


def train(
    params: ModelParams,
    corpora: dict[str, list[Document]],
    cfg: TrainConfig,
    priors: loss_mod.ClassPriorTable | None = None,
    out_dir=None,
) -> TrainReport:
    """Run the configured stages in order; keep the best-dev parameters.

    PU losses require a prior table (one table used for every stage, or a
    dict keyed by split when stages train on differently-censored data).
    A non-finite loss aborts with :class:`DivergenceError`; the last
    finite-loss checkpoint (when an output directory is given) is carried
    on the exception.
    """
    cfg.validate()
    out_dir = Path(out_dir) if out_dir is not None else None
    if isinstance(priors, loss_mod.ClassPriorTable):
        priors_by_split = {stage.split: priors for stage in cfg.stages}
    else:
        priors_by_split = dict(priors or {})
    for stage in cfg.stages:
        if stage.loss in ("pu", "ssr-pu") and stage.split not in priors_by_split:
            raise ConfigError(f"PU losses need a class prior table for split {stage.split!r}")
    rng = np.random.default_rng(cfg.seed)
    optimizer = AdamW(params.named_parameters(), cfg.optimizer)
    report = TrainReport()
    loss_cfg = loss_mod.LossConfig()
    dev_docs = corpora.get(cfg.dev_split)
    best: tuple[float, dict] | None = None
    last_good_path = None
    for stage_idx, stage in enumerate(cfg.stages):
        stage_start = time.perf_counter()
        docs = corpora.get(stage.split)
        if not docs:
            raise ConfigError(f"stage {stage_idx}: split {stage.split!r} missing or empty")
        frozen = stage.freeze_memory or (params.memory is not None and params.memory.frozen)
        skip = _memory_param_names(params) if frozen else set()
        risk_fn = loss_mod.RISK_FUNCTIONS[stage.loss]
        stage_priors = priors_by_split.get(stage.split)
        for epoch in range(stage.epochs):
            order = rng.permutation(len(docs))
            epoch_losses = []
            for lo in range(0, len(docs), stage.batch_docs):
                batch = [docs[i] for i in order[lo : lo + stage.batch_docs]]
                pair_lists = [
                    _subsample_pairs(doc, cfg.unlabeled_pair_fraction, rng) for doc in batch
                ]
                scores, index = forward_batch(batch, params, pair_lists)
                mask = _label_mask(batch, index, params.num_relations)
                batch_scores = loss_mod.BatchScores(f=scores, positive_mask=mask)
                if stage.loss == "pn":
                    risk = risk_fn(batch_scores)
                else:
                    risk = risk_fn(batch_scores, stage_priors, loss_cfg)
                value = float(risk.data)
                if not np.isfinite(value):
                    report.diverged = True
                    raise DivergenceError(
                        f"non-finite loss at stage {stage_idx} epoch {epoch}",
                        last_checkpoint=last_good_path,
                    )
                optimizer.zero_grad()
                T.backward(risk)
                clip_gradients(optimizer.named, cfg.grad_clip)
                optimizer.step(stage.lr, skip=skip)
                epoch_losses.append(value)
            report.loss_curve.append(float(np.mean(epoch_losses)))
            if dev_docs:
                dev_report = evaluate(params, dev_docs, batch_docs=cfg.eval_batch_docs)
                report.dev_metrics.append(
                    {"stage": stage_idx, "epoch": epoch, "f1": dev_report.f1,
                     "precision": dev_report.precision, "recall": dev_report.recall}
                )
                if best is None or dev_report.f1 > best[0]:
                    best = (dev_report.f1, _snapshot(params))
            if out_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                last_good_path = str(out_dir / f"ckpt_stage{stage_idx}_epoch{epoch}.json")
                save_checkpoint(params, last_good_path)
        if stage.freeze_memory and params.memory is not None:
            params.memory.frozen = True
        report.stage_wall_time.append(time.perf_counter() - stage_start)
    if best is not None:
        report.best_dev_f1 = best[0]
        _restore(params, best[1])
    if out_dir is not None:
        final = str(out_dir / "checkpoint.json")
        save_checkpoint(params, final)
        report.final_checkpoint = final
    return report


def evaluate(
    params: ModelParams,
    docs: list[Document],
    batch_docs: int = 16,
    distant_triples: set | None = None,
    topk: int | None = None,
) -> MetricReport:
    """Decode every candidate pair and score against the documents' labels."""
    if not docs:
        raise PreconditionError("evaluation corpus is empty")
    preds: set = set()
    gold: set = set()
    for doc in docs:
        for t in doc.labels:
            gold.add((doc.doc_id, t.head, t.tail, t.relation))
    with T.no_grad():
        for lo in range(0, len(docs), batch_docs):
            batch = [d for d in docs[lo : lo + batch_docs] if d.num_entities >= 2]
            if not batch:
                continue
            scores, index = forward_batch(batch, params)
            f = scores.data
            rows, rels = np.nonzero(f > 0.0)
            for row, rel in zip(rows, rels):
                doc_id, h, t = index[row]
                preds.add((doc_id, h, t, int(rel) + 1))
    return evaluate_sets(preds, gold, distant_triples=distant_triples, docs=docs, topk=topk)


def run_training(corpora: dict[str, list[Document]], cfg: TrainConfig, priors=None, out_dir=None) -> TrainResult:
    """Convenience wrapper: build vocab and model, train, evaluate dev/test."""
    first_split = cfg.stages[0].split
    train_docs = []
    for split in cfg.training_splits():
        train_docs.extend(corpora.get(split, []))
    if not train_docs:
        raise ConfigError(f"no documents found for training splits (first: {first_split!r})")
    num_relations = _infer_num_relations(corpora)
    if priors is None and any(s.loss in ("pu", "ssr-pu") for s in cfg.stages):
        priors = {
            split: loss_mod.estimate_priors(corpora[split], num_relations)
            for split in cfg.training_splits()
            if corpora.get(split)
        }
    vocab = enc.build_vocab(train_docs)
    params = init_model(cfg.model, vocab, num_relations, cfg.seed)
    report = train(params, corpora, cfg, priors=priors, out_dir=out_dir)
    result = TrainResult(params=params, report=report)
    if corpora.get(cfg.dev_split):
        result.dev_report = evaluate(params, corpora[cfg.dev_split], batch_docs=cfg.eval_batch_docs)
    if corpora.get(cfg.test_split):
        result.test_report = evaluate(params, corpora[cfg.test_split], batch_docs=cfg.eval_batch_docs)
    return result


def _infer_num_relations(corpora: dict[str, list[Document]]) -> int:
    best = 0
    for docs in corpora.values():
        for doc in docs:
            for t in doc.labels:
                best = max(best, t.relation)
    if best == 0:
        raise ConfigError("no labeled relations anywhere in the corpora")
    return best
