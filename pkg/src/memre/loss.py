"""Risk estimators for multi-label pair classification under incomplete
labeling.

Three training risks over per-class threshold-relative scores:

* ``pn_risk`` treats every unlabeled pair as negative.
* ``pu_risk`` is the non-negative positive-unlabeled risk: the estimated
  negative risk is clamped at zero per class to stop flexible models from
  driving it negative.
* ``ssr_pu_risk`` additionally corrects for a shifted labeling prior,
  where the positive rate inside the unlabeled pool, pi_u = (pi -
  pi_labeled) / (1 - pi_labeled), differs from pi.

The surrogate loss is logistic: l(z, +1) = softplus(-z), l(z, -1) =
softplus(z); convex in z for both labels. With pi_labeled = 0 the
shift-corrected coefficients reduce to the plain PU ones exactly (the
unlabeled coefficient becomes x/x = 1.0 and the subtraction coefficient
pi_u * 1.0), so the two estimators agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, InvalidPriorError, PreconditionError
from .tensor import Tensor


@dataclass
class ClassPriorTable:
    """Per-class priors and counts driving the PU corrections.

    Invariant per class: 0 <= pi_labeled <= pi < 1, with pi_u derived via
    the prior shift.
    """

    pi: np.ndarray
    pi_labeled: np.ndarray
    pi_u: np.ndarray
    n_p: np.ndarray
    n_u: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.pi.shape[0]

    def validate(self) -> None:
        for name, arr in (("pi", self.pi), ("pi_labeled", self.pi_labeled)):
            if np.any(arr < 0) or np.any(arr >= 1):
                raise InvalidPriorError(f"{name} must lie in [0, 1)")
        bad = np.nonzero(self.pi_labeled > self.pi)[0]
        if bad.size:
            raise InvalidPriorError(f"pi_labeled > pi for class {int(bad[0]) + 1}")
        if np.any(self.n_p < 0) or np.any(self.n_u < 0):
            raise InvalidPriorError("counts must be nonnegative")

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("class_id,pi,pi_labeled,pi_u,n_p,n_u\n")
            for i in range(self.num_classes):
                fh.write(
                    f"{i + 1},{float(self.pi[i])!r},{float(self.pi_labeled[i])!r},{float(self.pi_u[i])!r},"
                    f"{int(self.n_p[i])},{int(self.n_u[i])}\n"
                )

    @classmethod
    def load(cls, path) -> "ClassPriorTable":
        rows = []
        with open(path, encoding="utf-8") as fh:
            header = fh.readline()
            if not header.startswith("class_id"):
                raise ConfigError(f"not a prior table: {path}")
            for line in fh:
                parts = line.strip().split(",")
                if len(parts) != 6:
                    raise ConfigError(f"malformed prior row: {line!r}")
                rows.append(parts)
        rows.sort(key=lambda p: int(p[0]))
        table = cls(
            pi=np.array([float(p[1]) for p in rows]),
            pi_labeled=np.array([float(p[2]) for p in rows]),
            pi_u=np.array([float(p[3]) for p in rows]),
            n_p=np.array([int(p[4]) for p in rows]),
            n_u=np.array([int(p[5]) for p in rows]),
        )
        table.validate()
        return table


@dataclass
class LossConfig:
    use_gamma_weight: bool = False
    clamp_nonnegative: bool = True


@dataclass
class BatchScores:
    """Score matrix (B, K) plus the observed-positive mask.

    Column i collects f_i over the batch; mask true means the sample is a
    labeled positive for that class, everything else is unlabeled.
    """

    f: Tensor
    positive_mask: np.ndarray

    def __post_init__(self):
        if self.f.data.ndim != 2 or self.positive_mask.shape != self.f.data.shape:
            raise PreconditionError("scores and mask must share a (batch, classes) shape")

    @property
    def num_classes(self) -> int:
        return self.f.data.shape[1]

    @property
    def batch_size(self) -> int:
        return self.f.data.shape[0]

    def counts(self) -> tuple[np.ndarray, np.ndarray]:
        n_p = self.positive_mask.sum(axis=0)
        return n_p, self.positive_mask.shape[0] - n_p


def prior_shift(pi: float, pi_labeled: float) -> float:
    """Positive rate inside the unlabeled pool under censored labeling."""
    if not (0.0 <= pi_labeled <= pi < 1.0):
        raise InvalidPriorError(f"need 0 <= pi_labeled <= pi < 1, got pi={pi}, pi_labeled={pi_labeled}")
    return (pi - pi_labeled) / (1.0 - pi_labeled)


def ssr_coefficients(pi: np.ndarray, pi_u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shift-corrected risk coefficients (positive, unlabeled, subtraction).

    The subtraction coefficient is computed as pi_u * (1 - pi) / (1 -
    pi_u) so that it is exactly 0.0 when pi_u = 0 and exactly pi when
    pi_u = pi (the no-shift reduction).
    """
    if np.any(pi_u >= 1.0):
        raise InvalidPriorError("pi_u must be < 1")
    unlabeled = (1.0 - pi) / (1.0 - pi_u)
    subtraction = pi_u * unlabeled
    return pi.copy(), unlabeled, subtraction


def _masked_class_means(scores: BatchScores):
    """Per-class means of the logistic losses over positives / unlabeled.

    Empty groups contribute zero (their weights are identically zero), so
    classes absent from a batch fall out of the sums cleanly.
    """
    mask = scores.positive_mask.astype(np.float64)
    n_p, n_u = scores.counts()
    w_pos = mask / np.maximum(n_p, 1)[None, :]
    w_unl = (1.0 - mask) / np.maximum(n_u, 1)[None, :]
    loss_pos = T.softplus(T.neg(scores.f))
    loss_neg = T.softplus(scores.f)
    mean_p_pos = T.tensor_sum(T.mul(loss_pos, Tensor(w_pos)), axis=0)
    mean_p_neg = T.tensor_sum(T.mul(loss_neg, Tensor(w_pos)), axis=0)
    mean_u_neg = T.tensor_sum(T.mul(loss_neg, Tensor(w_unl)), axis=0)
    return mean_p_pos, mean_p_neg, mean_u_neg


def _gamma_weights(table: ClassPriorTable) -> np.ndarray:
    """Class weights ((1 - pi) / pi)^0.5, 1 where the class prior is 0."""
    safe = np.where(table.pi > 0, table.pi, 1.0)
    return np.where(table.pi > 0, np.sqrt((1.0 - safe) / safe), 1.0)


def _check_batch(scores: BatchScores, table: ClassPriorTable | None) -> None:
    if scores.batch_size == 0:
        raise PreconditionError("empty batch")
    if table is not None and table.num_classes != scores.num_classes:
        raise ConfigError(
            f"prior table covers {table.num_classes} classes, scores have {scores.num_classes}"
        )


def _assemble_risk(
    scores: BatchScores,
    pos_coef: np.ndarray,
    unl_coef: np.ndarray,
    sub_coef: np.ndarray,
    cfg: LossConfig,
    gamma: np.ndarray | None,
    return_terms: bool,
):
    mean_p_pos, mean_p_neg, mean_u_neg = _masked_class_means(scores)
    if gamma is not None:
        pos_coef = pos_coef * gamma
    pos_terms = T.mul(Tensor(pos_coef), mean_p_pos)
    inner = T.sub(T.mul(Tensor(unl_coef), mean_u_neg), T.mul(Tensor(sub_coef), mean_p_neg))
    second_terms = T.relu(inner) if cfg.clamp_nonnegative else inner
    risk = T.add(T.tensor_sum(pos_terms), T.tensor_sum(second_terms))
    if return_terms:
        return risk, {"positive": pos_terms, "second": second_terms}
    return risk


def pn_risk(scores: BatchScores, table: ClassPriorTable | None = None, cfg: LossConfig | None = None):
    """Supervised baseline: unlabeled samples are treated as negatives.

    Sum over classes of mean_P l(f, +1) + mean_U l(f, -1).
    """
    _check_batch(scores, None)
    mean_p_pos, _, mean_u_neg = _masked_class_means(scores)
    return T.add(T.tensor_sum(mean_p_pos), T.tensor_sum(mean_u_neg))


def pu_risk(
    scores: BatchScores,
    table: ClassPriorTable,
    cfg: LossConfig | None = None,
    return_terms: bool = False,
):
    """Non-negative PU risk: pi * mean_P l(+1) + max(0, mean_U l(-1) -
    pi * mean_P l(-1)) per class."""
    cfg = cfg or LossConfig()
    if table is None:
        raise ConfigError("pu_risk needs a class prior table")
    _check_batch(scores, table)
    pi = table.pi
    ones = np.ones_like(pi)
    gamma = _gamma_weights(table) if cfg.use_gamma_weight else None
    return _assemble_risk(scores, pi, ones, pi * ones, cfg, gamma, return_terms)


def ssr_pu_risk(
    scores: BatchScores,
    table: ClassPriorTable,
    cfg: LossConfig | None = None,
    return_terms: bool = False,
):
    """Non-negative PU risk corrected for the labeling prior shift."""
    cfg = cfg or LossConfig()
    if table is None:
        raise ConfigError("ssr_pu_risk needs a class prior table")
    _check_batch(scores, table)
    pos_coef, unl_coef, sub_coef = ssr_coefficients(table.pi, table.pi_u)
    gamma = _gamma_weights(table) if cfg.use_gamma_weight else None
    return _assemble_risk(scores, pos_coef, unl_coef, sub_coef, cfg, gamma, return_terms)


RISK_FUNCTIONS = {"pn": pn_risk, "pu": pu_risk, "ssr-pu": ssr_pu_risk}

DEFAULT_PRIOR_INFLATION = 2.0


def estimate_priors(
    documents,
    num_relations: int,
    assumed_pi=None,
    inflation: float = DEFAULT_PRIOR_INFLATION,
) -> ClassPriorTable:
    """Count labeled-pair fractions and combine with an assumed true prior.

    ``pi_labeled`` is observable: labeled positives per class over all
    candidate ordered pairs. The true prior is not observable under
    censored labels, so pi comes from ``assumed_pi`` (scalar or
    per-class); when absent it defaults to pi_labeled scaled by
    ``inflation`` and capped below 1.
    """
    from .data import enumerate_pairs

    total_pairs = 0
    labeled = np.zeros(num_relations, dtype=np.int64)
    for doc in documents:
        total_pairs += len(enumerate_pairs(doc))
        seen = set()
        for triple in doc.labels:
            key = (triple.head, triple.tail, triple.relation)
            if key in seen:
                continue
            seen.add(key)
            if not (1 <= triple.relation <= num_relations):
                raise ConfigError(f"relation id {triple.relation} outside 1..{num_relations}")
            labeled[triple.relation - 1] += 1
    if total_pairs == 0:
        raise PreconditionError("no candidate pairs in corpus")
    pi_labeled = labeled / total_pairs
    if assumed_pi is None:
        pi = np.minimum(pi_labeled * inflation, 0.999)
    else:
        pi = np.broadcast_to(np.asarray(assumed_pi, dtype=np.float64), (num_relations,)).copy()
    bad = np.nonzero(pi_labeled > pi)[0]
    if bad.size:
        raise InvalidPriorError(
            f"class {int(bad[0]) + 1}: pi_labeled {pi_labeled[bad[0]]:.6f} exceeds assumed pi {pi[bad[0]]:.6f}"
        )
    pi_u = np.array([prior_shift(float(p), float(pl)) for p, pl in zip(pi, pi_labeled)])
    table = ClassPriorTable(
        pi=pi,
        pi_labeled=pi_labeled,
        pi_u=pi_u,
        n_p=labeled,
        n_u=total_pairs - labeled,
    )
    table.validate()
    return table
