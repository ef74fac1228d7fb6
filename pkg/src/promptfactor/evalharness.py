"""Label-scarce evaluation protocol: stratified k-fold CV over a fraction grid.

For each repeat, the co-occurrence tensor and its decomposition are built
once over ALL prompts (labels only gate which seeds are revealed), then
every (fold, fraction) cell reveals a stratified subset of the training
fold's labels, propagates, and scores F1 on the held-out fold. All
randomness flows from one root seed through ``derive_seed``, so any cell
is reproducible in isolation.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cooccur import cooccurrence_matrix, stack_slices
from .corpus import PromptRecord, balanced_subsample, build_vocabulary, drop_empty, map_records
from .cpd import CpOptions, cp_als, embeddings
from .errors import ValidationError
from .propagate import knn_propagate

logger = logging.getLogger(__name__)

F1_MODES = ("macro", "binary", "weighted")

DEFAULT_FRACTIONS = (0.2, 0.1, 0.05, 0.03, 0.02, 0.01, 0.005)


def derive_seed(root: int, *tags) -> int:
    """Expand the root seed into an independent per-purpose stream seed.

    Hashes (root, tags...) with SHA-256; floats are keyed by their repr so
    e.g. fraction 0.05 always derives the same stream.
    """
    material = repr((int(root),) + tuple(repr(t) for t in tags)).encode()
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")


@dataclass
class ExperimentConfig:
    """Protocol knobs for one evaluation grid.

    ``repeats`` defaults to 50 when ``resample_per_class`` is set (the
    imbalanced-dataset protocol) and to 1 otherwise.
    """

    window: int = 5
    rank: int = 10
    label_fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    folds: int = 5
    repeats: int | None = None
    k_neighbors: int = 5
    seed: int = 0
    f1_mode: str = "macro"
    min_count: int = 1
    cp_max_iters: int = 100
    cp_tol: float = 1e-6
    resample_per_class: int | None = None

    def __post_init__(self):
        if self.window < 2:
            raise ValidationError(f"window must be >= 2, got {self.window}")
        if self.rank < 1:
            raise ValidationError(f"rank must be >= 1, got {self.rank}")
        if self.folds < 2:
            raise ValidationError(f"folds must be >= 2, got {self.folds}")
        if self.k_neighbors < 1:
            raise ValidationError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.f1_mode not in F1_MODES:
            raise ValidationError(f"f1_mode must be one of {F1_MODES}, got {self.f1_mode!r}")
        fractions = tuple(sorted(set(float(p) for p in self.label_fractions), reverse=True))
        if not fractions:
            raise ValidationError("label_fractions must be nonempty")
        if any(not 0.0 < p <= 1.0 for p in fractions):
            raise ValidationError("label fractions must lie in (0, 1]")
        self.label_fractions = fractions
        if self.repeats is None:
            self.repeats = 50 if self.resample_per_class else 1
        if self.repeats < 1:
            raise ValidationError(f"repeats must be >= 1, got {self.repeats}")
        if self.resample_per_class is not None and self.resample_per_class < 1:
            raise ValidationError("resample_per_class must be >= 1 when set")


@dataclass
class FractionResult:
    """Scores for one label fraction; ``scores`` is ordered repeat-major."""

    fraction: float
    mean_f1: float
    std_f1: float
    scores: list[float]
    seed_counts: list[int]


@dataclass
class EvalReport:
    """Evaluation output for one (window, rank) configuration."""

    dataset: str
    window: int
    rank: int
    folds: int
    repeats: int
    k_neighbors: int
    f1_mode: str
    seed: int
    std_scope: str
    n_records: int
    n_terms: int
    dropped: int
    fits: list[float]
    fractions: list[FractionResult]
    runtime_seconds: float = 0.0

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = asdict(self)
        if not include_runtime:
            d.pop("runtime_seconds")
        return d

    def result_for(self, fraction: float) -> FractionResult:
        for fr in self.fractions:
            if fr.fraction == fraction:
                return fr
        raise KeyError(f"no result for fraction {fraction}")


def stratified_kfold(labels, folds: int, seed: int) -> np.ndarray:
    """Assign each index to one of ``folds`` folds, preserving class balance.

    Per-class fold sizes differ by at most 1. Deterministic given the seed.
    """
    labels = np.asarray(labels)
    if folds < 2:
        raise ValidationError(f"folds must be >= 2, got {folds}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(labels.shape[0], dtype=np.int64)
    for cls in sorted(np.unique(labels).tolist()):
        members = np.flatnonzero(labels == cls)
        if members.size < folds:
            raise ValidationError(
                f"class {cls} has {members.size} members, fewer than {folds} folds"
            )
        shuffled = members[rng.permutation(members.size)]
        assignment[shuffled] = np.arange(shuffled.size) % folds
    return assignment


def f1_score(y_true, y_pred, mode: str = "macro") -> float:
    """F1 with the jailbreak class (1) positive; macro and weighted variants.

    A per-class F1 with a zero denominator (no true or predicted members)
    counts as 0.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValidationError(
            f"y_true and y_pred lengths differ: {y_true.shape} vs {y_pred.shape}"
        )
    if mode not in F1_MODES:
        raise ValidationError(f"f1 mode must be one of {F1_MODES}, got {mode!r}")

    def per_class(positive: int) -> float:
        tp = int(np.sum((y_true == positive) & (y_pred == positive)))
        fp = int(np.sum((y_true != positive) & (y_pred == positive)))
        fn = int(np.sum((y_true == positive) & (y_pred != positive)))
        denom = 2 * tp + fp + fn
        return 2.0 * tp / denom if denom else 0.0

    if mode == "binary":
        return per_class(1)
    f1_by_class = [per_class(0), per_class(1)]
    if mode == "macro":
        return float(np.mean(f1_by_class))
    weights = [float(np.mean(y_true == 0)), float(np.mean(y_true == 1))]
    return float(np.dot(weights, f1_by_class))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def seed_quota(class_counts: dict[int, int], fraction: float) -> dict[int, int]:
    """Per-class seed counts for a training fold at the given label fraction.

    The total is round(fraction * fold size), subject to at least one seed
    per class and at most the class size; the split across classes is
    proportional (largest-remainder rounding).
    """
    classes = sorted(class_counts)
    n = sum(class_counts.values())
    total = min(max(_round_half_up(fraction * n), len(classes)), n)
    ideals = {c: total * class_counts[c] / n for c in classes}
    quota = {c: math.floor(ideals[c]) for c in classes}
    leftovers = sorted(classes, key=lambda c: (-(ideals[c] - quota[c]), c))
    for c in leftovers[: total - sum(quota.values())]:
        quota[c] += 1
    for c in classes:  # every class contributes at least one seed
        while quota[c] < 1:
            donor = max(classes, key=lambda d: quota[d])
            quota[donor] -= 1
            quota[c] += 1
    for c in classes:  # cap at class size, pushing surplus to classes with room
        if quota[c] > class_counts[c]:
            surplus = quota[c] - class_counts[c]
            quota[c] = class_counts[c]
            for d in classes:
                room = class_counts[d] - quota[d]
                take = min(room, surplus)
                quota[d] += take
                surplus -= take
    return quota


def _sample_seed_positions(labels, train_positions, fraction: float, seed: int) -> list[int]:
    """Stratified label reveal: choose seed positions inside a training fold."""
    train_positions = np.asarray(train_positions)
    counts: dict[int, int] = {}
    for cls in np.unique(labels[train_positions]).tolist():
        counts[int(cls)] = int(np.sum(labels[train_positions] == cls))
    quota = seed_quota(counts, fraction)
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for cls in sorted(quota):
        members = np.sort(train_positions[labels[train_positions] == cls])
        pick = rng.choice(members.size, size=quota[cls], replace=False)
        chosen.extend(int(members[p]) for p in pick)
    return sorted(chosen)


def run_experiment(records: list[PromptRecord], config: ExperimentConfig,
                   dataset: str = "") -> EvalReport:
    """Run the full fraction grid and aggregate F1 across folds and repeats.

    ``records`` must carry text and a label for every prompt; corpus-level
    preprocessing (deduplication) is the caller's responsibility. Identical
    config and seed reproduce the report exactly, runtime aside.
    """
    if not records:
        raise ValidationError("no records to evaluate")
    if any(rec.label is None for rec in records):
        raise ValidationError("every record needs a label for evaluation")

    t0 = time.perf_counter()
    scores: dict[float, list[float]] = {p: [] for p in config.label_fractions}
    seed_counts: dict[float, list[int]] = {p: [] for p in config.label_fractions}
    fits: list[float] = []
    n_records = n_terms = dropped_total = 0

    for rep in range(config.repeats):
        rep_records = records
        if config.resample_per_class is not None:
            rep_records = balanced_subsample(
                records, config.resample_per_class, derive_seed(config.seed, "resample", rep)
            )
        vocab = build_vocabulary(rep_records, min_count=config.min_count)
        kept, dropped = drop_empty(map_records(rep_records, vocab))
        if not kept:
            raise ValidationError("all records became empty after preprocessing")
        labels = np.array([rec.label for rec in kept], dtype=np.int64)
        if rep == 0:
            n_records, n_terms, dropped_total = len(kept), len(vocab), dropped

        matrices = [cooccurrence_matrix(rec.tokens, len(vocab), config.window) for rec in kept]
        tensor = stack_slices(matrices, len(vocab))
        model = cp_als(tensor, CpOptions(
            rank=config.rank, max_iters=config.cp_max_iters, tol=config.cp_tol,
            seed=derive_seed(config.seed, "cp", rep),
        ))
        emb = embeddings(model)
        fits.append(model.fit_history[-1])

        fold_of = stratified_kfold(labels, config.folds, derive_seed(config.seed, "folds", rep))
        for fold in range(config.folds):
            train_positions = np.flatnonzero(fold_of != fold)
            test_positions = np.flatnonzero(fold_of == fold)
            for fraction in config.label_fractions:
                seeds_at = _sample_seed_positions(
                    labels, train_positions, fraction,
                    derive_seed(config.seed, "seeds", rep, fold, fraction),
                )
                state = knn_propagate(
                    emb, [(p, int(labels[p])) for p in seeds_at], k=config.k_neighbors
                )
                score = f1_score(labels[test_positions], state.labels[test_positions],
                                 config.f1_mode)
                scores[fraction].append(float(score))
                seed_counts[fraction].append(len(seeds_at))
        logger.info("repeat %d/%d done (fit %.4f)", rep + 1, config.repeats, fits[-1])

    results = [
        FractionResult(
            fraction=p,
            mean_f1=float(np.mean(scores[p])),
            std_f1=float(np.std(scores[p])),
            scores=scores[p],
            seed_counts=seed_counts[p],
        )
        for p in config.label_fractions
    ]
    return EvalReport(
        dataset=dataset, window=config.window, rank=config.rank, folds=config.folds,
        repeats=config.repeats, k_neighbors=config.k_neighbors, f1_mode=config.f1_mode,
        seed=config.seed,
        std_scope="folds" if config.repeats == 1 else "folds x repeats",
        n_records=n_records, n_terms=n_terms, dropped=dropped_total, fits=fits,
        fractions=results, runtime_seconds=time.perf_counter() - t0,
    )


@dataclass
class SweepResult:
    """Grid of reports from a window-size and rank sensitivity sweep."""

    reports: list[EvalReport] = field(default_factory=list)

    def cell(self, window: int, rank: int) -> EvalReport:
        for rep in self.reports:
            if rep.window == window and rep.rank == rank:
                return rep
        raise KeyError(f"no sweep cell for window={window}, rank={rank}")

    def rows(self):
        """Plot-ready long-format rows, one per (window, rank, fraction)."""
        for rep in self.reports:
            for fr in rep.fractions:
                yield {
                    "dataset": rep.dataset, "window": rep.window, "rank": rep.rank,
                    "fraction": fr.fraction, "mean_f1": fr.mean_f1, "std_f1": fr.std_f1,
                    "runtime_seconds": rep.runtime_seconds,
                }


def sensitivity_sweep(records: list[PromptRecord], windows, ranks,
                      base_config: ExperimentConfig, dataset: str = "") -> SweepResult:
    """One ``run_experiment`` per (window, rank) grid cell."""
    windows = list(windows)
    ranks = list(ranks)
    if not windows or not ranks:
        raise ValidationError("window and rank grids must be nonempty")
    result = SweepResult()
    for window in windows:
        for rank in ranks:
            config = replace(base_config, window=window, rank=rank)
            logger.info("sweep cell window=%d rank=%d", window, rank)
            result.reports.append(run_experiment(records, config, dataset=dataset))
    return result


def write_long_csv(reports, path: str | Path) -> None:
    """Per-fold scores in long format: dataset,window,rank,fraction,fold,repeat,f1."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "window", "rank", "fraction", "fold", "repeat", "f1"])
        for rep in reports:
            for fr in rep.fractions:
                for idx, score in enumerate(fr.scores):
                    writer.writerow([
                        rep.dataset, rep.window, rep.rank, repr(fr.fraction),
                        idx % rep.folds, idx // rep.folds, repr(score),
                    ])


def summary_dict(reports, config: ExperimentConfig) -> dict:
    """JSON-ready summary: config echo plus per-cell means, stds, runtimes."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    return {
        "config": asdict(config),
        "results": [rep.to_dict() for rep in reports],
    }


def write_summary_json(reports, config: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary_dict(reports, config), fh, indent=2)
        fh.write("\n")
