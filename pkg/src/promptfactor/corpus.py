"""Prompt dataset loading, tokenization, vocabulary, and resampling.

The corpus pipeline is: load raw records (text + label), optionally
deduplicate on normalized text, build a vocabulary over the whole corpus,
re-express every record as a sequence of term indices, and drop records
whose token sequence ends up empty (an all-zero tensor slice carries no
signal). ``prepare_corpus`` chains these steps.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError, ValidationError

logger = logging.getLogger(__name__)

BENIGN = 0
JAILBREAK = 1

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")

_LABEL_ALIASES = {
    "benign": BENIGN,
    "jailbreak": JAILBREAK,
    "0": BENIGN,
    "1": JAILBREAK,
}


@dataclass
class PromptRecord:
    """One prompt: raw text, its mapped token indices, and an optional label.

    ``tokens`` is empty until the record has been mapped through a
    vocabulary; afterwards it contains indices in ``[0, len(vocab))``.
    """

    id: int
    text: str
    label: int | None = None
    tokens: list[int] = field(default_factory=list)


class Vocabulary:
    """Bijection between corpus terms and dense indices ``0..N-1``.

    Index order is descending corpus frequency with lexicographic
    tie-breaking, so indices are reproducible across runs. Immutable after
    construction; safe to share across threads.
    """

    def __init__(self, index_to_term: list[str]):
        self.index_to_term = list(index_to_term)
        self.term_to_index = {t: i for i, t in enumerate(self.index_to_term)}
        if len(self.term_to_index) != len(self.index_to_term):
            raise ValidationError("vocabulary terms must be unique")

    def __len__(self) -> int:
        return len(self.index_to_term)

    def __contains__(self, term: str) -> bool:
        return term in self.term_to_index

    def index(self, term: str) -> int:
        return self.term_to_index[term]

    def term(self, index: int) -> str:
        return self.index_to_term[index]

    def map_tokens(self, tokens: list[str]) -> list[int]:
        """Map string tokens to indices, dropping out-of-vocabulary terms."""
        t2i = self.term_to_index
        return [t2i[t] for t in tokens if t in t2i]


def tokenize(text: str) -> list[str]:
    """Lowercase and split on maximal runs of non-alphanumeric characters.

    Empty tokens are dropped, so any mix of whitespace and punctuation acts
    as a single separator. No stemming, no stopword removal: structural
    words ("ignore", "now", ...) are part of the signal.
    """
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def normalized_text(text: str) -> str:
    """Canonical form used for deduplication: tokens re-joined by spaces."""
    return " ".join(tokenize(text))


def parse_label(value) -> int:
    """Parse a raw label value into 0 (benign) or 1 (jailbreak)."""
    if isinstance(value, bool):
        raise ValidationError(f"unknown label value: {value!r}")
    if isinstance(value, int):
        if value in (BENIGN, JAILBREAK):
            return value
        raise ValidationError(f"unknown label value: {value!r}")
    if isinstance(value, str):
        key = value.strip().lower()
        if key in _LABEL_ALIASES:
            return _LABEL_ALIASES[key]
    raise ValidationError(f"unknown label value: {value!r}")


def load_dataset(path: str | Path, format: str = "csv") -> list[PromptRecord]:
    """Load prompt records from a CSV or JSONL file.

    CSV files need a header row with ``prompt`` and ``label`` columns
    (RFC 4180 quoting, UTF-8). JSONL files need one object per line with
    ``prompt`` and ``label`` fields. Ids are assigned in file order,
    starting at 0.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    if format == "csv":
        return _load_csv(path)
    if format == "jsonl":
        return _load_jsonl(path)
    raise ValidationError(f"unknown dataset format: {format!r} (expected csv or jsonl)")


def _load_csv(path: Path) -> list[PromptRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = {"prompt", "label"} - set(reader.fieldnames)
        if missing:
            raise ParseError(f"{path}: header is missing column(s) {sorted(missing)}")
        for i, row in enumerate(reader):
            if row.get("prompt") is None or row.get("label") is None:
                raise ParseError(f"{path}: row {i + 1} is missing prompt or label")
            records.append(PromptRecord(id=i, text=row["prompt"], label=parse_label(row["label"])))
    return records


def _load_jsonl(path: Path) -> list[PromptRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        row = 0
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {lineno} is not valid JSON: {exc}") from exc
            if not isinstance(obj, dict) or "prompt" not in obj or "label" not in obj:
                raise ParseError(f"{path}: line {lineno} is missing prompt or label")
            records.append(PromptRecord(id=row, text=str(obj["prompt"]), label=parse_label(obj["label"])))
            row += 1
    return records


def deduplicate(records: list[PromptRecord]) -> list[PromptRecord]:
    """Drop records whose normalized text was already seen, keeping the first.

    Normalization is tokenize-and-rejoin, so texts differing only in case
    or punctuation collapse to one record. Original ids are preserved.
    """
    seen: set[str] = set()
    kept = []
    for rec in records:
        key = normalized_text(rec.text)
        if key in seen:
            continue
        seen.add(key)
        kept.append(rec)
    if len(kept) < len(records):
        logger.info("deduplicate: removed %d of %d records", len(records) - len(kept), len(records))
    return kept


def build_vocabulary(records: list[PromptRecord], min_count: int = 1) -> Vocabulary:
    """Build the corpus-wide vocabulary over both classes combined.

    Every term with total corpus frequency >= ``min_count`` gets an index;
    ordering is descending frequency, ties broken lexicographically.
    """
    if min_count < 1:
        raise ValidationError(f"min_count must be >= 1, got {min_count}")
    if not records:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    freq: Counter[str] = Counter()
    for rec in records:
        freq.update(tokenize(rec.text))
    terms = sorted((t for t, c in freq.items() if c >= min_count), key=lambda t: (-freq[t], t))
    if not terms:
        raise ValidationError("no term reaches min_count; vocabulary would be empty")
    return Vocabulary(terms)


def map_records(records: list[PromptRecord], vocab: Vocabulary) -> list[PromptRecord]:
    """Return new records with ``tokens`` set to vocabulary indices.

    Terms below the vocabulary threshold (absent from ``vocab``) are
    dropped from the sequence.
    """
    return [replace(rec, tokens=vocab.map_tokens(tokenize(rec.text))) for rec in records]


def drop_empty(records: list[PromptRecord]) -> tuple[list[PromptRecord], int]:
    """Split off records whose mapped token sequence is empty.

    Returns (kept records, dropped count). Empty records would contribute
    all-zero tensor slices, which carry no signal.
    """
    kept = [rec for rec in records if rec.tokens]
    dropped = len(records) - len(kept)
    if dropped:
        logger.info("drop_empty: dropped %d record(s) with empty token sequences", dropped)
    return kept, dropped


@dataclass
class PreparedCorpus:
    """Final preprocessed corpus: mapped records, vocabulary, drop count."""

    records: list[PromptRecord]
    vocab: Vocabulary
    dropped: int

    @property
    def labels(self) -> list[int | None]:
        return [rec.label for rec in self.records]


def prepare_corpus(
    records: list[PromptRecord],
    min_count: int = 1,
    dedupe: bool = True,
) -> PreparedCorpus:
    """Run the full preprocessing chain: dedup, vocabulary, mapping, drop."""
    if dedupe:
        records = deduplicate(records)
    vocab = build_vocabulary(records, min_count=min_count)
    mapped = map_records(records, vocab)
    kept, dropped = drop_empty(mapped)
    logger.info(
        "prepared corpus: %d records, %d terms, %d dropped as empty",
        len(kept), len(vocab), dropped,
    )
    return PreparedCorpus(records=kept, vocab=vocab, dropped=dropped)


def balanced_subsample(records: list[PromptRecord], per_class: int, seed: int) -> list[PromptRecord]:
    """Sample exactly ``per_class`` records of each label, without replacement.

    Sampling is uniform and deterministic for a given seed. Output preserves
    the input ordering of the selected records.
    """
    if per_class < 1:
        raise ValidationError(f"per_class must be >= 1, got {per_class}")
    by_class: dict[int, list[int]] = {}
    for pos, rec in enumerate(records):
        if rec.label is None:
            raise ValidationError(f"record id {rec.id} has no label; cannot stratify")
        by_class.setdefault(rec.label, []).append(pos)
    rng = np.random.default_rng(seed)
    selected: list[int] = []
    for label in sorted(by_class):
        positions = by_class[label]
        if len(positions) < per_class:
            raise ValidationError(
                f"class {label} has only {len(positions)} records, need {per_class}"
            )
        chosen = rng.choice(len(positions), size=per_class, replace=False)
        selected.extend(positions[i] for i in chosen)
    selected.sort()
    return [records[i] for i in selected]
