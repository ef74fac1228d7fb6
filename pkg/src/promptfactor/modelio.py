"""Model persistence and embedding export.

Models are stored in a single self-describing binary container: magic
bytes, a format version, a JSON header (dims, rank, config echo), raw
little-endian float64 matrices, the vocabulary, and a trailing SHA-256
checksum. Round trips are bitwise exact, which matters more here than
interoperability; the embeddings CSV covers interop.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .cpd import FactorModel, embeddings
from .errors import FormatVersionError, IntegrityError, ValidationError

MAGIC = b"PFMB"
FORMAT_VERSION = 1
_DIGEST_BYTES = 32


@dataclass
class ModelBundle:
    """Everything a model file carries besides the factors themselves."""

    model: FactorModel
    vocab: Vocabulary
    ids: np.ndarray
    labels: np.ndarray | None
    config: dict | None


def _array_bytes(a: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(a, dtype=dtype).tobytes()


def save_model(model: FactorModel, vocab: Vocabulary, path: str | Path,
               ids=None, labels=None, config: dict | None = None) -> None:
    """Write the model, vocabulary, and per-prompt metadata to ``path``.

    ``ids`` default to 0..M-1. ``labels`` may contain None for unlabeled
    prompts. ``config`` is echoed verbatim into the file header.
    """
    m = model.C.shape[0]
    ids = np.arange(m, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    if ids.shape != (m,):
        raise ValidationError(f"ids must have one entry per prompt ({m}), got {ids.shape}")
    label_arr = None
    if labels is not None:
        label_arr = np.array([-1 if l is None else int(l) for l in labels], dtype=np.int8)
        if label_arr.shape != (m,):
            raise ValidationError(f"labels must have one entry per prompt ({m})")

    header = {
        "dims": [int(model.A.shape[0]), int(model.B.shape[0]), m],
        "rank": int(model.rank),
        "n_fits": len(model.fit_history),
        "has_labels": label_arr is not None,
        "config": config,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    vocab_bytes = json.dumps(vocab.index_to_term).encode("utf-8")

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    blob += struct.pack("<Q", len(header_bytes))
    blob += header_bytes
    blob += _array_bytes(model.A, "<f8")
    blob += _array_bytes(model.B, "<f8")
    blob += _array_bytes(model.C, "<f8")
    blob += _array_bytes(model.weights, "<f8")
    blob += _array_bytes(np.asarray(model.fit_history), "<f8")
    blob += _array_bytes(ids, "<i8")
    if label_arr is not None:
        blob += _array_bytes(label_arr, "<i1")
    blob += struct.pack("<Q", len(vocab_bytes))
    blob += vocab_bytes
    blob += hashlib.sha256(blob).digest()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise IntegrityError(f"{self.path}: truncated file (needed {count} more bytes)")
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def array(self, dtype: str, shape) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 0
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def load_bundle(path: str | Path) -> ModelBundle:
    """Read a model container, verifying version and checksum first."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < len(MAGIC) + 4 + _DIGEST_BYTES:
        raise IntegrityError(f"{path}: file too short to be a model container")
    if data[: len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: bad magic bytes; not a model container")
    digest = data[-_DIGEST_BYTES:]
    body = data[:-_DIGEST_BYTES]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch; file is corrupt or truncated")

    reader = _Reader(body, path)
    reader.take(len(MAGIC))
    (version,) = struct.unpack("<I", reader.take(4))
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"{path}: format version {version} is not supported (current version is {FORMAT_VERSION})"
        )
    (header_len,) = struct.unpack("<Q", reader.take(8))
    header = json.loads(reader.take(header_len).decode("utf-8"))
    n_a, n_b, m = header["dims"]
    rank = header["rank"]

    A = reader.array("<f8", (n_a, rank))
    B = reader.array("<f8", (n_b, rank))
    C = reader.array("<f8", (m, rank))
    weights = reader.array("<f8", (rank,))
    fits = reader.array("<f8", (header["n_fits"],))
    ids = reader.array("<i8", (m,))
    labels = None
    if header["has_labels"]:
        labels = reader.array("<i1", (m,))
    (vocab_len,) = struct.unpack("<Q", reader.take(8))
    vocab = Vocabulary(json.loads(reader.take(vocab_len).decode("utf-8")))

    model = FactorModel(A=A, B=B, C=C, weights=weights, rank=rank,
                        fit_history=fits.tolist())
    return ModelBundle(model=model, vocab=vocab, ids=ids, labels=labels,
                       config=header.get("config"))


def load_model(path: str | Path) -> tuple[FactorModel, Vocabulary]:
    bundle = load_bundle(path)
    return bundle.model, bundle.vocab


def export_embeddings(model: FactorModel, labels, path: str | Path, ids=None) -> None:
    """Write the embedding matrix as CSV: id,label,c_1..c_R.

    Values use shortest round-trip decimal form; a None label leaves the
    cell blank.
    """
    emb = embeddings(model)
    m, rank = emb.shape
    ids = range(m) if ids is None else list(ids)
    labels = [None] * m if labels is None else list(labels)
    if len(labels) != m or len(list(ids)) != m:
        raise ValidationError("ids and labels must have one entry per prompt")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("id,label," + ",".join(f"c_{r + 1}" for r in range(rank)) + "\n")
        for row, (pid, label) in enumerate(zip(ids, labels)):
            cell = "" if label is None or (isinstance(label, (int, np.integer)) and label < 0) \
                else str(int(label))
            values = ",".join(repr(float(v)) for v in emb[row])
            fh.write(f"{int(pid)},{cell},{values}\n")
