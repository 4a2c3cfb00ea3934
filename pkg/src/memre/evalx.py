"""Micro-averaged metrics, frequency splits, ablation driver, PCA export.

Predictions and gold labels are sets of (doc_id, head, tail, relation)
tuples. The leakage-discounted score (``ign_f1``) removes triples whose
(head name, tail name, relation) also occur in a distant training triple
set before rescoring; matching is by entity surface name since distant
and evaluation documents index entities differently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError

Triple = tuple[str, int, int, int]


@dataclass
class MetricReport:
    precision: float
    recall: float
    f1: float
    ign_f1: float | None = None
    num_predicted: int = 0
    num_gold: int = 0
    num_correct: int = 0
    per_class: dict = field(default_factory=dict)
    subreports: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "ign_f1": self.ign_f1,
            "num_predicted": self.num_predicted,
            "num_gold": self.num_gold,
            "num_correct": self.num_correct,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
        }
        if self.subreports:
            out["subreports"] = {k: v.to_dict() for k, v in self.subreports.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def micro_prf(preds: set, gold: set) -> tuple[float, float, float]:
    """Micro precision / recall / F1 over triple sets.

    No predictions gives precision 0; empty gold is an error. F1 is 0
    when precision + recall is 0.
    """
    if not gold:
        raise PreconditionError("micro_prf needs a non-empty gold set")
    correct = len(preds & gold)
    p = correct / len(preds) if preds else 0.0
    r = correct / len(gold)
    f1 = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
    return p, r, f1


def _names_of(docs) -> dict[str, "object"]:
    return {doc.doc_id: doc for doc in docs}


def _to_name_triple(triple: Triple, doc) -> tuple[str, str, int]:
    _, h, t, r = triple
    return doc.entity_name(h), doc.entity_name(t), r


def ign_f1(preds: set, gold: set, distant_triples: set, docs) -> tuple[float, float, float]:
    """micro_prf after discarding triples present in the distant set.

    ``distant_triples`` holds (head name, tail name, relation) tuples;
    an empty set reproduces micro_prf exactly.
    """
    if not distant_triples:
        return micro_prf(preds, gold)
    by_id = _names_of(docs)
    kept_preds = {t for t in preds if _to_name_triple(t, by_id[t[0]]) not in distant_triples}
    kept_gold = {t for t in gold if _to_name_triple(t, by_id[t[0]]) not in distant_triples}
    if not kept_gold:
        raise PreconditionError("distant set covers all gold triples; nothing left to score")
    return micro_prf(kept_preds, kept_gold)


def distant_triple_set(docs) -> set[tuple[str, str, int]]:
    """Name-keyed triples of a (distant) training corpus for ign scoring."""
    out = set()
    for doc in docs:
        for t in doc.labels:
            out.add((doc.entity_name(t.head), doc.entity_name(t.tail), t.relation))
    return out


def per_class_counts(preds: set, gold: set) -> dict[int, dict]:
    relations = {t[3] for t in gold} | {t[3] for t in preds}
    table = {}
    for r in sorted(relations):
        p_r = {t for t in preds if t[3] == r}
        g_r = {t for t in gold if t[3] == r}
        table[r] = {"tp": len(p_r & g_r), "fp": len(p_r - g_r), "fn": len(g_r - p_r)}
    return table


def topk_split(gold: set, k: int) -> tuple[set[int], set[int]]:
    """Split relation ids into the K most frequent (ties by lower id) and
    the rest."""
    counts: dict[int, int] = {}
    for _, _, _, r in gold:
        counts[r] = counts.get(r, 0) + 1
    ranked = sorted(counts, key=lambda r: (-counts[r], r))
    top = set(ranked[:k])
    rest = set(ranked[k:])
    return top, rest


def _restrict(triples: set, relations: set[int]) -> set:
    return {t for t in triples if t[3] in relations}


def evaluate_sets(
    preds: set,
    gold: set,
    distant_triples: set | None = None,
    docs=None,
    topk: int | None = None,
) -> MetricReport:
    """Assemble a full report; sub-reports are omitted for empty gold."""
    p, r, f1 = micro_prf(preds, gold)
    if distant_triples:
        _, _, ign = ign_f1(preds, gold, distant_triples, docs)
    else:
        ign = f1
    report = MetricReport(
        precision=p,
        recall=r,
        f1=f1,
        ign_f1=ign,
        num_predicted=len(preds),
        num_gold=len(gold),
        num_correct=len(preds & gold),
        per_class=per_class_counts(preds, gold),
    )
    if topk is not None:
        top, rest = topk_split(gold, topk)
        for tag, rel_set in ((f"top{topk}", top), (f"rest{topk}", rest)):
            sub_gold = _restrict(gold, rel_set)
            if not sub_gold:
                continue
            sp, sr, sf = micro_prf(_restrict(preds, rel_set), sub_gold)
            report.subreports[tag] = MetricReport(
                precision=sp, recall=sr, f1=sf,
                num_predicted=len(_restrict(preds, rel_set)),
                num_gold=len(sub_gold),
                num_correct=len(_restrict(preds, rel_set) & sub_gold),
            )
    return report


ABLATION_CSV_HEADER = "axis,value,precision,recall,f1,ign_f1,seed"
ABLATION_AXES = ("memory-size", "read-layers", "label-fraction")


def _ablation_point(axis: str, value, seed: int, corpora, base_config):
    from . import trainer as trainer_mod
    from .data import drop_labels

    cfg = base_config.clone()
    cfg.seed = int(seed)
    corpora_run = dict(corpora)
    if axis == "memory-size":
        cfg.model.memory_size = int(value)
    elif axis == "read-layers":
        cfg.model.read_layers = int(value)
    else:
        fraction = float(value)
        for split in cfg.training_splits():
            corpora_run[split] = drop_labels(corpora_run[split], fraction, int(seed))
    result = trainer_mod.run_training(corpora_run, cfg)
    report = result.test_report if result.test_report else result.dev_report
    return {
        "axis": axis,
        "value": value,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "ign_f1": report.ign_f1 if report.ign_f1 is not None else report.f1,
        "seed": int(seed),
    }


def run_ablation(axis: str, values, corpora, base_config, seeds=(0,), out_path=None, jobs: int = 1):
    """Train and evaluate once per (value, seed); returns CSV-ready rows.

    ``memory-size`` swaps the memory token count (0 engages the bypass),
    ``read-layers`` the summarizer depth, and ``label-fraction``
    subsamples training labels (priors are recounted so the shift
    correction sees the new labeled rate). Points are independent, so
    ``jobs`` > 1 fans them out over processes; row order and content are
    identical either way.
    """
    if axis not in ABLATION_AXES:
        raise PreconditionError(f"unknown ablation axis {axis!r}; pick one of {ABLATION_AXES}")
    points = [(value, int(seed)) for value in values for seed in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_ablation_worker, [(axis, v, s, corpora, base_config) for v, s in points]))
    else:
        rows = [_ablation_point(axis, v, s, corpora, base_config) for v, s in points]
    if out_path is not None:
        write_ablation_csv(rows, out_path)
    return rows


def _ablation_worker(args):
    return _ablation_point(*args)


def write_ablation_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ABLATION_CSV_HEADER + "\n")
        for row in rows:
            fh.write(
                f"{row['axis']},{row['value']},{float(row['precision'])!r},{float(row['recall'])!r},"
                f"{float(row['f1'])!r},{float(row['ign_f1'])!r},{row['seed']}\n"
            )


# ---------------------------------------------------------------------------
# PCA export


def pca_2d(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Top-2 principal components via covariance eigendecomposition.

    Returns (coordinates, explained-variance ratios). Component signs are
    fixed so the largest-magnitude loading is positive.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise PreconditionError("PCA needs at least 3 rows")
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:2]
    components = eigvecs[:, order]
    for j in range(components.shape[1]):
        pivot = np.argmax(np.abs(components[:, j]))
        if components[pivot, j] < 0:
            components[:, j] = -components[:, j]
    coords = centered @ components
    total = eigvals.sum()
    explained = eigvals[order] / total if total > 0 else np.zeros(2)
    return coords, explained


def export_memory_pca(memory_tokens: np.ndarray, entity_vectors: np.ndarray, out_path) -> np.ndarray:
    """Project memory tokens and head-entity vectors into 2-d, tag rows.

    CSV columns: kind, x, y; head entities first, then memory tokens.
    """
    combined = np.vstack([entity_vectors, memory_tokens])
    coords, _ = pca_2d(combined)
    kinds = ["head-entity"] * entity_vectors.shape[0] + ["memory-token"] * memory_tokens.shape[0]
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("kind,x,y\n")
        for kind, (x, y) in zip(kinds, coords):
            fh.write(f"{kind},{float(x)!r},{float(y)!r}\n")
    return coords
