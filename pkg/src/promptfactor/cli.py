"""Command-line entry point: fit, classify, rank, evaluate, sweep, export.

Every flag can also come from a JSON config file (``--config``); explicit
flags win over file values. All randomness flows from the single
``--seed`` through per-purpose derived streams, so runs with identical
flags produce identical artifacts (timing fields aside). Exit codes:
0 success, 2 configuration or validation error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .centrality import rank_by_centrality
from .cooccur import cooccurrence_matrix, stack_slices
from .corpus import deduplicate, load_dataset, parse_label, prepare_corpus
from .cpd import CpOptions, cp_als, embeddings
from .errors import DataError, NumericalError, ValidationError
from .evalharness import (
    DEFAULT_FRACTIONS,
    ExperimentConfig,
    derive_seed,
    run_experiment,
    sensitivity_sweep,
    write_long_csv,
    write_summary_json,
)
from .modelio import export_embeddings, load_bundle, save_model
from .propagate import knn_propagate

logger = logging.getLogger(__name__)

SENSITIVITY_WINDOWS = (3, 4, 5, 6, 7, 8, 9, 10, 12, 15, 18, 20)
SENSITIVITY_RANKS = (1, 10, 30, 50, 80)

_COMMON_DEFAULTS = {
    "format": "csv",
    "window": 5,
    "rank": 10,
    "min_count": 1,
    "seed": 0,
    "max_iters": 100,
    "tol": 1e-6,
    "dedupe": True,
    "out": "out",
}

_EVAL_DEFAULTS = {
    "fractions": ",".join(repr(p) for p in DEFAULT_FRACTIONS),
    "folds": 5,
    "repeats": None,
    "k": 5,
    "f1": "macro",
    "resample_per_class": None,
}


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _load_config_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ValidationError(f"config file {path} must contain a JSON object")
    return config


def _resolve(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Apply precedence: explicit flag > config file value > default."""
    file_config = _load_config_file(args.config) if getattr(args, "config", None) else {}
    known = set(defaults) | {k for k in vars(args) if k not in ("func", "config", "verbose", "quiet")}
    unknown = set(file_config) - known
    if unknown:
        raise ValidationError(f"unknown config file key(s): {sorted(unknown)}")
    for key, default in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, file_config.get(key, default))
    for key in known - set(defaults):
        if getattr(args, key, None) is None and key in file_config:
            setattr(args, key, file_config[key])
    return args


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(args, *names) -> None:
    for name in names:
        if getattr(args, name, None) is None:
            raise ValidationError(f"--{name.replace('_', '-')} is required")


def _build_model(args):
    """Shared fit pipeline: dataset file to (corpus, tensor, model)."""
    records = load_dataset(args.dataset, args.format)
    corpus = prepare_corpus(records, min_count=args.min_count, dedupe=args.dedupe)
    n = len(corpus.vocab)
    matrices = [cooccurrence_matrix(rec.tokens, n, args.window) for rec in corpus.records]
    tensor = stack_slices(matrices, n)
    opts = CpOptions(rank=args.rank, max_iters=args.max_iters, tol=args.tol,
                     seed=derive_seed(args.seed, "cp", 0))
    model = cp_als(tensor, opts)
    return corpus, tensor, model


def cmd_fit(args) -> int:
    _require(args, "dataset")
    out = _out_dir(args)
    corpus, tensor, model = _build_model(args)
    config_echo = {
        "dataset": str(args.dataset), "format": args.format, "window": args.window,
        "rank": args.rank, "min_count": args.min_count, "seed": args.seed,
        "max_iters": args.max_iters, "tol": args.tol, "dedupe": args.dedupe,
    }
    model_path = out / "model.pfm"
    save_model(model, corpus.vocab, model_path,
               ids=[rec.id for rec in corpus.records],
               labels=[rec.label for rec in corpus.records],
               config=config_echo)
    summary = {
        "model": str(model_path),
        "n_records": len(corpus.records),
        "n_terms": len(corpus.vocab),
        "dropped_empty": corpus.dropped,
        "tensor_nnz": tensor.nnz,
        "fit": model.fit_history[-1],
        "iterations": len(model.fit_history),
        "config": config_echo,
    }
    with open(out / "fit_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"model written to {model_path} "
          f"(fit {model.fit_history[-1]:.4f} after {len(model.fit_history)} sweeps)")
    return 0


def _read_id_label_csv(path) -> list[tuple[int, int]]:
    pairs = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"id", "label"} - set(reader.fieldnames):
            raise DataError(f"{path}: need a CSV with id,label columns")
        for i, row in enumerate(reader):
            try:
                pairs.append((int(row["id"]), parse_label(row["label"])))
            except ValueError as exc:
                raise DataError(f"{path}: row {i + 1}: {exc}") from exc
    return pairs


def cmd_classify(args) -> int:
    _require(args, "model", "seeds")
    out = _out_dir(args)
    bundle = load_bundle(args.model)
    row_of = {int(pid): row for row, pid in enumerate(bundle.ids)}
    seeds = []
    for pid, label in _read_id_label_csv(args.seeds):
        if pid not in row_of:
            raise ValidationError(f"seed id {pid} is not in the model")
        seeds.append((row_of[pid], label))
    state = knn_propagate(embeddings(bundle.model), seeds, k=args.k)
    labels_path = out / "labels.csv"
    with open(labels_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "score", "is_seed"])
        for row, pid in enumerate(bundle.ids):
            writer.writerow([int(pid), int(state.labels[row]),
                             repr(float(state.scores[row])), int(state.is_seed[row])])
    print(f"labels written to {labels_path} "
          f"({int(state.labels.sum())} of {len(bundle.ids)} flagged as jailbreak)")
    return 0


def cmd_rank(args) -> int:
    _require(args, "model")
    out = _out_dir(args)
    bundle = load_bundle(args.model)
    row_of = {int(pid): row for row, pid in enumerate(bundle.ids)}
    if args.labels:
        labels = np.full(len(bundle.ids), -1, dtype=np.int64)
        for pid, label in _read_id_label_csv(args.labels):
            if pid not in row_of:
                raise ValidationError(f"label id {pid} is not in the model")
            labels[row_of[pid]] = label
    elif bundle.labels is not None:
        labels = bundle.labels.astype(np.int64)
    else:
        raise ValidationError("model carries no labels; pass --labels CSV")
    if (labels < 0).any():
        raise ValidationError("every prompt needs a label (ground truth or propagated)")

    texts = {}
    if args.dataset:
        for rec in load_dataset(args.dataset, args.format):
            texts[rec.id] = rec.text

    ranking = rank_by_centrality(
        embeddings(bundle.model), labels, class_filter=args.class_filter,
        ids=bundle.ids, per_class_centroids=args.per_class_centroids,
    )
    ranking_path = out / "ranking.csv"
    with open(ranking_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["degree", "id", "distance", "label"] + (["prompt"] if texts else [])
        writer.writerow(header)
        for entry in ranking:
            row = [entry.degree, entry.id, repr(entry.distance), entry.label]
            if texts:
                row.append(texts.get(entry.id, ""))
            writer.writerow(row)
    print(f"ranking of {len(ranking)} prompts written to {ranking_path}")
    return 0


def _experiment_config(args) -> ExperimentConfig:
    return ExperimentConfig(
        window=args.window, rank=args.rank,
        label_fractions=tuple(_float_list(args.fractions)),
        folds=args.folds, repeats=args.repeats, k_neighbors=args.k,
        seed=args.seed, f1_mode=args.f1, min_count=args.min_count,
        cp_max_iters=args.max_iters, cp_tol=args.tol,
        resample_per_class=args.resample_per_class,
    )


def _print_report(report) -> None:
    print(f"dataset={report.dataset} window={report.window} rank={report.rank} "
          f"f1={report.f1_mode} (std over {report.std_scope})")
    for fr in report.fractions:
        print(f"  {fr.fraction * 100:5.1f}% labels: F1 {fr.mean_f1:.3f} +/- {fr.std_f1:.3f}")
    print(f"  runtime: {report.runtime_seconds:.1f}s")


def cmd_evaluate(args) -> int:
    _require(args, "dataset")
    out = _out_dir(args)
    records = load_dataset(args.dataset, args.format)
    if args.dedupe:
        records = deduplicate(records)
    config = _experiment_config(args)
    report = run_experiment(records, config, dataset=Path(args.dataset).stem)
    write_long_csv(report, out / "results_long.csv")
    write_summary_json(report, config, out / "summary.json")
    _print_report(report)
    print(f"wrote {out / 'results_long.csv'} and {out / 'summary.json'}")
    return 0


def cmd_sweep(args) -> int:
    _require(args, "dataset")
    out = _out_dir(args)
    records = load_dataset(args.dataset, args.format)
    if args.dedupe:
        records = deduplicate(records)
    config = _experiment_config(args)
    sweep = sensitivity_sweep(records, _int_list(args.windows), _int_list(args.ranks),
                              config, dataset=Path(args.dataset).stem)
    write_long_csv(sweep.reports, out / "sweep_cells_long.csv")
    with open(out / "sweep_table.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "window", "rank", "fraction",
                         "mean_f1", "std_f1", "runtime_seconds"])
        for row in sweep.rows():
            writer.writerow([row["dataset"], row["window"], row["rank"],
                             repr(row["fraction"]), repr(row["mean_f1"]),
                             repr(row["std_f1"]), repr(row["runtime_seconds"])])
    write_summary_json(sweep.reports, config, out / "sweep_summary.json")
    print(f"swept {len(sweep.reports)} cells; wrote {out / 'sweep_table.csv'}")
    return 0


def cmd_export_embeddings(args) -> int:
    _require(args, "model")
    bundle = load_bundle(args.model)
    labels = None
    if bundle.labels is not None:
        labels = [None if l < 0 else int(l) for l in bundle.labels]
    out_path = Path(args.out)
    if out_path.suffix != ".csv":
        out_path.mkdir(parents=True, exist_ok=True)
        out_path = out_path / "embeddings.csv"
    export_embeddings(bundle.model, labels, out_path, ids=bundle.ids)
    print(f"embeddings written to {out_path}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--out", help="output directory (default: out)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")


def _add_corpus_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", help="prompt dataset file")
    parser.add_argument("--format", choices=("csv", "jsonl"), help="dataset format (default csv)")
    parser.add_argument("--min-count", dest="min_count", type=int,
                        help="drop terms with corpus frequency below this (default 1)")
    parser.add_argument("--dedupe", action=argparse.BooleanOptionalAction, default=None,
                        help="deduplicate normalized texts (default on)")


def _add_fit_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--window", type=int, help="co-occurrence window size (default 5)")
    parser.add_argument("--rank", type=int, help="decomposition rank (default 10)")
    parser.add_argument("--seed", type=int, help="root random seed (default 0)")
    parser.add_argument("--max-iters", dest="max_iters", type=int,
                        help="ALS sweep limit (default 100)")
    parser.add_argument("--tol", type=float, help="relative fit-change stop (default 1e-6)")


def _add_eval_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--fractions", help="comma list of label fractions "
                        "(default 0.2,0.1,0.05,0.03,0.02,0.01,0.005)")
    parser.add_argument("--folds", type=int, help="CV folds (default 5)")
    parser.add_argument("--repeats", type=int,
                        help="protocol repeats (default 1; 50 with --resample-per-class)")
    parser.add_argument("--k", type=int, help="KNN neighbor count (default 5)")
    parser.add_argument("--f1", choices=("macro", "binary", "weighted"),
                        help="F1 averaging mode (default macro)")
    parser.add_argument("--resample-per-class", dest="resample_per_class", type=int,
                        help="balanced resample size per class, drawn fresh each repeat")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptfactor",
        description="Detect jailbreak prompts from the latent space of "
                    "windowed co-occurrence tensors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="build the co-occurrence tensor and factorize it")
    _add_corpus_flags(p)
    _add_fit_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_fit, defaults={**_COMMON_DEFAULTS})

    p = sub.add_parser("classify", help="propagate seed labels to all prompts")
    p.add_argument("--model", help="model file from fit")
    p.add_argument("--seeds", help="CSV of id,label seed annotations")
    p.add_argument("--k", type=int, help="KNN neighbor count (default 5)")
    _add_common(p)
    p.set_defaults(func=cmd_classify, defaults={"k": 5, "out": "out"})

    p = sub.add_parser("rank", help="rank prompts by centroid distance")
    p.add_argument("--model", help="model file from fit")
    p.add_argument("--labels", help="CSV of id,label (defaults to labels stored in the model)")
    p.add_argument("--class-filter", dest="class_filter", type=int, choices=(0, 1),
                   help="rank only this class")
    p.add_argument("--per-class-centroids", dest="per_class_centroids",
                   action=argparse.BooleanOptionalAction, default=None,
                   help="measure each prompt against its own class centroid")
    p.add_argument("--dataset", help="optional dataset file to attach prompt text")
    p.add_argument("--format", choices=("csv", "jsonl"))
    _add_common(p)
    p.set_defaults(func=cmd_rank,
                   defaults={"per_class_centroids": False, "format": "csv", "out": "out"})

    p = sub.add_parser("evaluate", help="stratified k-fold F1 over a label-fraction grid")
    _add_corpus_flags(p)
    _add_fit_flags(p)
    _add_eval_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate, defaults={**_COMMON_DEFAULTS, **_EVAL_DEFAULTS})

    p = sub.add_parser("sweep", help="window-size and rank sensitivity grids")
    _add_corpus_flags(p)
    _add_fit_flags(p)
    _add_eval_flags(p)
    p.add_argument("--windows", help="comma list of window sizes "
                   f"(default {','.join(map(str, SENSITIVITY_WINDOWS))})")
    p.add_argument("--ranks", help="comma list of ranks "
                   f"(default {','.join(map(str, SENSITIVITY_RANKS))})")
    _add_common(p)
    p.set_defaults(func=cmd_sweep, defaults={
        **_COMMON_DEFAULTS, **_EVAL_DEFAULTS,
        "windows": ",".join(map(str, SENSITIVITY_WINDOWS)),
        "ranks": ",".join(map(str, SENSITIVITY_RANKS)),
    })

    p = sub.add_parser("export-embeddings", help="write the embedding matrix as CSV")
    p.add_argument("--model", help="model file from fit")
    _add_common(p)
    p.set_defaults(func=cmd_export_embeddings, defaults={"out": "out"})

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else (logging.WARNING if args.quiet else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _resolve(args, args.defaults)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
