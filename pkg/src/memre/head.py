"""Group bilinear pair classifier with a learned threshold class.

Entity vectors are split into k groups; each class (including the
threshold class at index 0) owns one (d/k, d/k) block per group, so a
class costs d^2/k parameters instead of d^2. Per-class scores subtract
the threshold logit and decode at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor

HEAD_INIT_STD = 0.02
THRESHOLD_INDEX = 0


@dataclass
class BilinearHead:
    """Blocks indexed [class][group]; class 0 is the threshold class."""

    k: int
    num_relations: int
    blocks: list[list[Tensor]]

    @property
    def block_dim(self) -> int:
        return self.blocks[0][0].data.shape[0]

    def named(self):
        out = []
        for c, group in enumerate(self.blocks):
            for i, block in enumerate(group):
                out.append((f"head.class{c}.group{i}", block))
        return out


def init_head(d: int, k: int, num_relations: int, seed: int) -> BilinearHead:
    if d % k:
        raise ConfigError(f"hidden dim {d} not divisible by group count {k}")
    rng = np.random.default_rng(seed)
    dk = d // k
    blocks = [
        [Tensor(rng.normal(0.0, HEAD_INIT_STD, size=(dk, dk)), requires_grad=True) for _ in range(k)]
        for _ in range(num_relations + 1)
    ]
    return BilinearHead(k=k, num_relations=num_relations, blocks=blocks)


def group_bilinear_logits(e_h: Tensor, e_t: Tensor, head: BilinearHead) -> Tensor:
    """Per-class logits for one pair: logit_c = sum_i e_h^i B_c^i e_t^i.

    Index 0 is the threshold class; a sigmoid of a logit is the reported
    probability, but losses stay in logit space.
    """
    d = e_h.data.shape[0]
    if e_h.data.shape != (d,) or e_t.data.shape != (d,):
        raise DimensionError("group_bilinear_logits expects flat vectors")
    if d % head.k:
        raise ConfigError(f"hidden dim {d} not divisible by group count {head.k}")
    dk = d // head.k
    h_row = T.reshape(e_h, (1, d))
    t_col = T.reshape(e_t, (d, 1))
    per_class = []
    for group in head.blocks:
        pieces = []
        for i, block in enumerate(group):
            hi = T.narrow(h_row, 1, i * dk, dk)
            ti = T.narrow(t_col, 0, i * dk, dk)
            pieces.append(T.matmul(T.matmul(hi, block), ti))
        total = pieces[0]
        for piece in pieces[1:]:
            total = T.add(total, piece)
        per_class.append(T.reshape(total, (1,)))
    return T.reshape(T.concat(per_class, axis=0), (len(head.blocks),))


def _flat_class_matrix(head: BilinearHead) -> Tensor:
    """Stack each class's blocks into one row of a (R+1, d^2/k) matrix."""
    dk = head.block_dim
    rows = []
    for group in head.blocks:
        rows.append(T.reshape(T.concat([T.reshape(b, (1, dk * dk)) for b in group], axis=1), (head.k * dk * dk,)))
    return T.stack_rows(rows)


def group_bilinear_logits_batch(Eh: Tensor, Et: Tensor, head: BilinearHead) -> Tensor:
    """Batched logits: (B, d) x (B, d) -> (B, R+1).

    Builds groupwise outer-product features and hits them with the
    flattened class blocks; algebraically identical to the single-pair
    form.
    """
    batch, d = Eh.data.shape
    dk = d // head.k
    h4 = T.reshape(Eh, (batch, head.k, dk, 1))
    t4 = T.reshape(Et, (batch, head.k, 1, dk))
    feats = T.reshape(T.mul(h4, t4), (batch, head.k * dk * dk))
    return T.matmul(feats, T.transpose(_flat_class_matrix(head)))


def class_scores(logits: Tensor) -> Tensor:
    """Threshold-relative scores f_i = logit_i - logit_TH, i = 1..R."""
    if logits.data.ndim == 1:
        n = logits.data.shape[0]
        th = T.narrow(logits, 0, THRESHOLD_INDEX, 1)
        return T.sub(T.narrow(logits, 0, 1, n - 1), th)
    n = logits.data.shape[1]
    th = T.narrow(logits, 1, THRESHOLD_INDEX, 1)
    return T.sub(T.narrow(logits, 1, 1, n - 1), th)


def decode(scores) -> set[int]:
    """Relations with strictly positive threshold-relative score.

    Ties with the threshold are not predicted; an empty set means the
    pair expresses no relation. Relation ids are 1-based.
    """
    f = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    return {i + 1 for i in range(f.shape[0]) if f[i] > 0.0}
