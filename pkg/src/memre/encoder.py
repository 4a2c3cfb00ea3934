"""Desk-scale document encoder: embedding table plus optional post-norm
self-attention blocks, with logsumexp pooling of entity mentions.

The encoder is deliberately small; it exists so the memory and loss
machinery have contextual token embeddings to work with, not to compete
with large pretrained models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, InputError, PreconditionError
from .tensor import Tensor

UNK_TOKEN = "<unk>"
UNK_ID = 0


@dataclass
class EncoderConfig:
    vocab_size: int
    hidden_dim: int = 64
    num_layers: int = 1
    num_heads: int = 4
    max_len: int = 512
    seed: int = 0
    init_scale: float = 0.1
    ffn_multiplier: int = 2

    def validate(self) -> None:
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be positive")
        if self.num_layers not in (0, 1, 2):
            raise ConfigError("num_layers must be 0, 1, or 2")
        if self.hidden_dim % self.num_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")


@dataclass
class EntityEmbedding:
    """Pooled representation of one entity before memory augmentation."""

    vector: Tensor
    entity_index: int
    mention_count: int


@dataclass
class AttentionLayerParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix: str):
        return [
            (f"{prefix}.wq", self.wq),
            (f"{prefix}.wk", self.wk),
            (f"{prefix}.wv", self.wv),
            (f"{prefix}.wo", self.wo),
            (f"{prefix}.w1", self.w1),
            (f"{prefix}.b1", self.b1),
            (f"{prefix}.w2", self.w2),
            (f"{prefix}.b2", self.b2),
        ]


@dataclass
class EncoderParams:
    embed: Tensor
    layers: list[AttentionLayerParams] = field(default_factory=list)

    def named(self):
        out = [("encoder.embed", self.embed)]
        for i, layer in enumerate(self.layers):
            out.extend(layer.named(f"encoder.layer{i}"))
        return out


def init_encoder(cfg: EncoderConfig) -> EncoderParams:
    """Seeded parameter initialization; weights ~ N(0, init_scale^2)."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d = cfg.hidden_dim
    h = cfg.ffn_multiplier * d

    def w(*shape):
        return Tensor(rng.normal(0.0, cfg.init_scale, size=shape), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    embed = w(cfg.vocab_size, d)
    layers = [
        AttentionLayerParams(
            wq=w(d, d), wk=w(d, d), wv=w(d, d), wo=w(d, d),
            w1=w(d, h), b1=zeros(h), w2=w(h, d), b2=zeros(d),
        )
        for _ in range(cfg.num_layers)
    ]
    return EncoderParams(embed=embed, layers=layers)


def _attention_block(x: Tensor, layer: AttentionLayerParams, cfg: EncoderConfig) -> Tensor:
    d = cfg.hidden_dim
    dh = d // cfg.num_heads
    scale = 1.0 / np.sqrt(dh)
    q = T.matmul(x, layer.wq)
    k = T.matmul(x, layer.wk)
    v = T.matmul(x, layer.wv)
    heads = []
    for i in range(cfg.num_heads):
        qh = T.narrow(q, 1, i * dh, dh)
        kh = T.narrow(k, 1, i * dh, dh)
        vh = T.narrow(v, 1, i * dh, dh)
        attn = T.row_softmax(T.mul(T.matmul(qh, T.transpose(kh)), Tensor(scale)))
        heads.append(T.matmul(attn, vh))
    mixed = T.matmul(T.concat(heads, axis=1), layer.wo)
    x = T.layer_norm(T.add(x, mixed))
    ffn = T.affine(T.tanh(T.affine(x, layer.w1, layer.b1)), layer.w2, layer.b2)
    return T.layer_norm(T.add(x, ffn))


def encode_document(token_ids: Sequence[int], cfg: EncoderConfig, params: EncoderParams) -> tuple[Tensor, bool]:
    """Contextual embeddings, one row per token.

    Returns ``(embeddings, truncated)``; overlong documents are cut to
    ``cfg.max_len`` and flagged rather than rejected.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError("encode_document needs a non-empty flat token sequence")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InputError(f"token id out of vocabulary range [0, {cfg.vocab_size})")
    truncated = ids.size > cfg.max_len
    if truncated:
        ids = ids[: cfg.max_len]
    x = T.take_rows(params.embed, ids)
    for layer in params.layers:
        x = _attention_block(x, layer, cfg)
    return x, truncated


def pool_entity(token_embs: Tensor, mention_spans: Sequence[tuple[int, int]], entity_index: int = -1) -> EntityEmbedding:
    """Pool an entity's mentions into one vector.

    Takes the first-token embedding of each mention span (flat ``[start,
    end)`` offsets into the encoded document) and combines them with a
    dimension-wise logsumexp, which is permutation-invariant and smooth.
    """
    spans = list(mention_spans)
    if not spans:
        raise PreconditionError("pool_entity needs at least one mention")
    length = token_embs.data.shape[0]
    starts = []
    for start, end in spans:
        if not (0 <= start < end <= length):
            raise InputError(f"mention span [{start}, {end}) outside document of {length} tokens")
        starts.append(start)
    rows = T.take_rows(token_embs, starts)
    pooled = T.logsumexp_rows(rows)
    return EntityEmbedding(vector=pooled, entity_index=entity_index, mention_count=len(spans))


def entity_pair_inputs(head: EntityEmbedding, tail: EntityEmbedding) -> Tensor:
    """Stack head and tail vectors into the 2-row read input."""
    if head.vector.data.shape != tail.vector.data.shape:
        raise DimensionError("head/tail embedding dims disagree")
    return T.stack_rows([head.vector, tail.vector])


class Vocab:
    """Token-to-id mapping; id 0 is always the unknown token."""

    def __init__(self, tokens: Sequence[str]):
        if not tokens or tokens[0] != UNK_TOKEN:
            tokens = [UNK_TOKEN] + [t for t in tokens if t != UNK_TOKEN]
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.id_of(t) for t in tokens], dtype=np.int64)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        return cls(tokens)


def build_vocab(documents, max_size: int | None = None) -> Vocab:
    """Frequency-ranked vocabulary over whitespace tokens, unknown id 0.

    Ties break lexicographically so the mapping is deterministic.
    """
    counts: dict[str, int] = {}
    for doc in documents:
        for sentence in doc.sentences:
            for token in sentence:
                counts[token] = counts.get(token, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if max_size is not None:
        ranked = ranked[: max(0, max_size - 1)]
    return Vocab([UNK_TOKEN] + [tok for tok, _ in ranked])
