"""memre: memory-augmented document-level relation extraction.

A desk-scale pipeline: a minimal reverse-mode autodiff core, a small
document encoder, a learnable token-memory read module, a grouped
bilinear classifier with a learned threshold class, positive-unlabeled
risk estimators with prior-shift correction, a staged trainer, and
evaluation / ablation tooling. See the README for the CLI.
"""

from .data import Document, EntityMention, RelationTriple, SynthConfig, synthesize_pu_corpus
from .estimator import MemoryRelationExtractor
from .loss import ClassPriorTable, LossConfig, pn_risk, prior_shift, pu_risk, ssr_pu_risk
from .tensor import Tensor, backward, no_grad
from .trainer import ModelConfig, StageConfig, TrainConfig, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ClassPriorTable",
    "Document",
    "EntityMention",
    "LossConfig",
    "MemoryRelationExtractor",
    "ModelConfig",
    "RelationTriple",
    "StageConfig",
    "SynthConfig",
    "Tensor",
    "TrainConfig",
    "__version__",
    "backward",
    "load_checkpoint",
    "no_grad",
    "pn_risk",
    "prior_shift",
    "pu_risk",
    "save_checkpoint",
    "ssr_pu_risk",
    "synthesize_pu_corpus",
]
