"""Instrumental-variable debiasing for small text classifiers.

Modules
-------
causal_linear  linear structural model, IV and OLS estimators
corpus         JSONL datasets, vocabulary, synthetic confounded corpora
perturb        swap / delete / insert / synonym perturbations as instruments
model          mean-pool + tanh encoder with a linear head, manual gradients
ivtrain        stage-1 alpha, L_IV, Adam and the training loop
metrics        accuracy, macro-F1 and explicit/implicit subset scores
cli            the ``isaiv`` command
"""

__version__ = "0.1.0"

from .causal_linear import ScmConfig, estimate_iv, estimate_ols, ols_bias_plim, simulate_scm
from .corpus import Example, SynthConfig, Vocabulary, build_vocab, generate_confounded, load_jsonl, save_jsonl
from .ivtrain import Resources, TrainConfig, estimate_alpha, evaluate, iv_loss, train
from .metrics import MetricsReport, macro_f1, subset_report
from .model import ModelDims, ModelParams, init_params
from .perturb import ALL_KINDS, InstrumentKind, PerturbConfig, SimilarityIndex, SynonymLexicon, augment

__all__ = [
    "ALL_KINDS",
    "Example",
    "InstrumentKind",
    "MetricsReport",
    "ModelDims",
    "ModelParams",
    "PerturbConfig",
    "Resources",
    "ScmConfig",
    "SimilarityIndex",
    "SynonymLexicon",
    "SynthConfig",
    "TrainConfig",
    "Vocabulary",
    "augment",
    "build_vocab",
    "estimate_alpha",
    "estimate_iv",
    "estimate_ols",
    "evaluate",
    "generate_confounded",
    "init_params",
    "iv_loss",
    "load_jsonl",
    "macro_f1",
    "ols_bias_plim",
    "save_jsonl",
    "simulate_scm",
    "subset_report",
    "train",
]
