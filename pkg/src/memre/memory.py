"""Token-memory read path.

A bank of learnable memory tokens is concatenated with the two entity
rows, offset by a learnable positional embedding, and summarized down to
two memory-augmented entity vectors. Each summarizer layer scores every
row with a small MLP (one hidden layer, tanh) and takes a softmax across
rows per output token, so outputs are convex combinations of the rows.

There is no write path: memory changes only through gradient descent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, PreconditionError
from .tensor import Tensor

MEMORY_INIT_STD = 0.02
NUM_INPUT_TOKENS = 2


@dataclass
class MemoryState:
    """Learnable memory tokens plus positional offsets for [M || I] rows.

    When ``frozen`` is set the trainer skips updates for both tensors, so
    a training stage leaves them bit-identical.
    """

    M: Tensor
    pos: Tensor
    frozen: bool = False

    @property
    def size(self) -> int:
        return self.M.data.shape[0]

    def named(self):
        return [("memory.M", self.M), ("memory.pos", self.pos)]


@dataclass
class ReadLayerParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix: str):
        return [
            (f"{prefix}.w1", self.w1),
            (f"{prefix}.b1", self.b1),
            (f"{prefix}.w2", self.w2),
            (f"{prefix}.b2", self.b2),
        ]


@dataclass
class ReadConfig:
    """Summarizer stack: ``num_layers`` reads, each emitting r=2 tokens."""

    r: int = NUM_INPUT_TOKENS
    num_layers: int = 1
    layers: list[ReadLayerParams] = field(default_factory=list)

    def validate(self) -> None:
        if self.r != NUM_INPUT_TOKENS:
            raise ConfigError("read output count is fixed at 2 (head and tail)")
        if self.num_layers not in (1, 2, 3, 4):
            raise ConfigError("num_layers must be in 1..4")
        if len(self.layers) != self.num_layers:
            raise ConfigError("one parameter set per read layer required")

    def named(self):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named(f"memory.read.{i}"))
        return out


@dataclass
class ReadOutput:
    """Memory-augmented head (row 0) and tail (row 1), with the final
    layer's importance weights (rows sum to one)."""

    Z: Tensor
    W: Tensor


def init_memory(m: int, d: int, seed: int) -> MemoryState:
    """Memory tokens ~ N(0, 0.02^2); positional embeddings start at zero.

    Zero-initialized tokens are rejected because they leave the read
    output constant and starve the memory of gradient signal.
    """
    if m < 1 or d < 1:
        raise ConfigError("memory needs m >= 1 and d >= 1")
    rng = np.random.default_rng(seed)
    M = Tensor(rng.normal(0.0, MEMORY_INIT_STD, size=(m, d)), requires_grad=True)
    pos = Tensor(np.zeros((m + NUM_INPUT_TOKENS, d)), requires_grad=True)
    return MemoryState(M=M, pos=pos, frozen=False)


def init_read(d: int, num_layers: int, seed: int, hidden: int | None = None) -> ReadConfig:
    """Fresh MLP parameters per layer; hidden width defaults to d."""
    rng = np.random.default_rng(seed)
    h = d if hidden is None else hidden
    layers = []
    for _ in range(num_layers):
        layers.append(
            ReadLayerParams(
                w1=Tensor(rng.normal(0.0, MEMORY_INIT_STD, size=(d, h)), requires_grad=True),
                b1=Tensor(np.zeros(h), requires_grad=True),
                w2=Tensor(rng.normal(0.0, MEMORY_INIT_STD, size=(h, NUM_INPUT_TOKENS)), requires_grad=True),
                b2=Tensor(np.zeros(NUM_INPUT_TOKENS), requires_grad=True),
            )
        )
    cfg = ReadConfig(num_layers=num_layers, layers=layers)
    cfg.validate()
    return cfg


def _row_scores(rows: Tensor, layer: ReadLayerParams) -> Tensor:
    """Score each input row with r values: affine -> tanh -> affine."""
    return T.affine(T.tanh(T.affine(rows, layer.w1, layer.b1)), layer.w2, layer.b2)


def summarize(V: Tensor, cfg: ReadConfig, layer: int = 0) -> tuple[Tensor, Tensor]:
    """Summarize p rows into r weighted aggregates.

    Scores (p, r) become importance weights by softmax per output token
    across the p rows; each output is that weighted sum of rows.
    """
    if V.data.ndim != 2:
        raise DimensionError(f"summarize expects a matrix, got {V.shape}")
    if V.data.shape[0] < cfg.r:
        raise PreconditionError(f"cannot summarize {V.data.shape[0]} rows into {cfg.r} outputs")
    scores = _row_scores(V, cfg.layers[layer])
    W = T.row_softmax(T.transpose(scores))
    Z = T.matmul(W, V)
    return Z, W


def read(mem: MemoryState, I: Tensor, cfg: ReadConfig) -> ReadOutput:
    """Single-pair read: V = [M || I] + pos, then the summarizer stack.

    Layer 0 reads V; each later layer reads [V || Z_prev] with its own
    parameters, so every layer sees the full memory.
    """
    cfg.validate()
    d = mem.M.data.shape[1]
    if I.data.shape != (NUM_INPUT_TOKENS, d):
        raise DimensionError(f"read input must be (2, {d}), got {I.shape}")
    V = T.add(T.concat_rows(mem.M, I), mem.pos)
    Z: Tensor | None = None
    W: Tensor | None = None
    for layer in range(cfg.num_layers):
        rows = V if Z is None else T.concat_rows(V, Z)
        Z, W = summarize(rows, cfg, layer)
    return ReadOutput(Z=Z, W=W)


def read_bypass(I: Tensor) -> ReadOutput:
    """Memory disabled: output the input rows unchanged (Z = I, W = I2)."""
    return ReadOutput(Z=I, W=Tensor(np.eye(NUM_INPUT_TOKENS)))


def read_batch(mem: MemoryState, I: Tensor, cfg: ReadConfig) -> Tensor:
    """Vectorized read over a batch of pairs, shape (B, 2, d) -> (B, 2, d).

    The memory rows and their MLP scores are shared across the batch and
    computed once; only the per-pair rows go through the MLP per pair.
    Row ordering matches the single-pair path ([M; I; Z_prev]), so both
    produce the same values up to float reassociation.
    """
    cfg.validate()
    m, d = mem.M.data.shape
    if I.data.ndim != 3 or I.data.shape[1] != NUM_INPUT_TOKENS or I.data.shape[2] != d:
        raise DimensionError(f"read_batch input must be (B, 2, {d}), got {I.shape}")
    batch = I.data.shape[0]
    pos_mem = T.narrow(mem.pos, 0, 0, m)
    pos_inp = T.narrow(mem.pos, 0, m, NUM_INPUT_TOKENS)
    M_aug = T.add(mem.M, pos_mem)
    I_aug = T.add(I, pos_inp)
    Z: Tensor | None = None
    for layer in range(cfg.num_layers):
        pair_rows = I_aug if Z is None else T.concat([I_aug, Z], axis=1)
        q = pair_rows.data.shape[1]
        shared_scores = _row_scores(M_aug, cfg.layers[layer])
        flat = T.reshape(pair_rows, (batch * q, d))
        pair_scores = T.reshape(_row_scores(flat, cfg.layers[layer]), (batch, q, cfg.r))
        scores = T.concat([T.expand_batch(shared_scores, batch), pair_scores], axis=1)
        W = T.row_softmax(T.transpose(scores))
        W_mem = T.narrow(W, 2, 0, m)
        W_pair = T.narrow(W, 2, m, q)
        Z = T.add(T.matmul(W_mem, M_aug), T.matmul(W_pair, pair_rows))
    return Z
