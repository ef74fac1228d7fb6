"""Jailbreak prompt detection from windowed co-occurrence tensors.

Pipeline: tokenize a prompt corpus, build one sparse co-occurrence matrix
per prompt, stack them into an N x N x M tensor, factorize it with
alternating least squares, classify prompts by KNN label propagation in
the embedding space, and rank them by distance to the embedding centroid.
"""

from .centrality import CentralityRanking, RankedPrompt, centroid, rank_by_centrality
from .cooccur import CooccurrenceMatrix, cooccurrence_matrix, stack_slices
from .corpus import (
    PromptRecord,
    Vocabulary,
    balanced_subsample,
    build_vocabulary,
    deduplicate,
    drop_empty,
    load_dataset,
    map_records,
    prepare_corpus,
    tokenize,
)
from .cpd import CpOptions, FactorModel, cp_als, embeddings, fit
from .errors import (
    DataError,
    FormatVersionError,
    IntegrityError,
    NumericalError,
    ParseError,
    PromptFactorError,
    ValidationError,
)
from .evalharness import (
    EvalReport,
    ExperimentConfig,
    FractionResult,
    SweepResult,
    derive_seed,
    f1_score,
    run_experiment,
    sensitivity_sweep,
    stratified_kfold,
)
from .modelio import export_embeddings, load_bundle, load_model, save_model
from .propagate import LabelState, knn_propagate
from .sptensor import SparseTensor, frobenius_norm, mttkrp, reconstruct_entry

__version__ = "0.1.0"

__all__ = [
    "CentralityRanking",
    "CooccurrenceMatrix",
    "CpOptions",
    "DataError",
    "EvalReport",
    "ExperimentConfig",
    "FactorModel",
    "FormatVersionError",
    "FractionResult",
    "IntegrityError",
    "LabelState",
    "NumericalError",
    "ParseError",
    "PromptFactorError",
    "PromptRecord",
    "RankedPrompt",
    "SparseTensor",
    "SweepResult",
    "ValidationError",
    "Vocabulary",
    "balanced_subsample",
    "build_vocabulary",
    "centroid",
    "cooccurrence_matrix",
    "cp_als",
    "deduplicate",
    "derive_seed",
    "drop_empty",
    "embeddings",
    "export_embeddings",
    "f1_score",
    "fit",
    "frobenius_norm",
    "knn_propagate",
    "load_bundle",
    "load_dataset",
    "load_model",
    "map_records",
    "mttkrp",
    "prepare_corpus",
    "rank_by_centrality",
    "reconstruct_entry",
    "run_experiment",
    "save_model",
    "sensitivity_sweep",
    "stack_slices",
    "stratified_kfold",
    "tokenize",
]
