"""Windowed co-occurrence matrices and their stacking into a tensor.

A window of size w means token positions at distance <= w-1 co-occur.
Counts are raw symmetric frequencies: each in-window position pair (p, q)
adds 1 to (tokens[p], tokens[q]) and 1 to (tokens[q], tokens[p]), so a
repeated term adds 2 to its diagonal cell. Windows never span prompt
boundaries; every prompt gets its own matrix.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .sptensor import SparseTensor


class CooccurrenceMatrix:
    """Symmetric sparse N x N count matrix in coordinate form."""

    def __init__(self, n: int, rows, cols, counts):
        self.n = int(n)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.float64)

    @property
    def nnz(self) -> int:
        return int(self.counts.size)

    def value(self, i: int, j: int) -> float:
        hit = (self.rows == i) & (self.cols == j)
        return float(self.counts[hit].sum())

    def total(self) -> float:
        return float(self.counts.sum())

    def to_dict(self) -> dict[tuple[int, int], float]:
        return {
            (int(i), int(j)): float(v)
            for i, j, v in zip(self.rows, self.cols, self.counts)
        }

    def __repr__(self) -> str:
        return f"CooccurrenceMatrix(n={self.n}, nnz={self.nnz})"


def cooccurrence_matrix(tokens, n: int, window: int) -> CooccurrenceMatrix:
    """Count in-window co-occurrences for one prompt's token sequence.

    Every ordered position pair (p, q) with 1 <= q - p <= window - 1
    contributes one count in each direction. All token indices must be
    below ``n``.
    """
    if window < 2:
        raise ValidationError(f"window must be >= 2, got {window}")
    toks = np.asarray(tokens, dtype=np.int64)
    if toks.ndim != 1:
        raise ValidationError("tokens must be a flat sequence of indices")
    if toks.size and (toks.min() < 0 or toks.max() >= n):
        raise ValidationError(f"token index out of range for vocabulary size {n}")

    length = toks.size
    firsts, seconds = [], []
    for d in range(1, window):
        if d >= length:
            break
        firsts.append(toks[:-d])
        seconds.append(toks[d:])
    if not firsts:
        return CooccurrenceMatrix(n, [], [], [])
    a = np.concatenate(firsts)
    b = np.concatenate(seconds)
    # Symmetric: store both directions; a == b pairs land on the diagonal twice.
    rows = np.concatenate([a, b])
    cols = np.concatenate([b, a])
    lin = rows * n + cols
    uniq, counts = np.unique(lin, return_counts=True)
    return CooccurrenceMatrix(n, uniq // n, uniq % n, counts.astype(np.float64))


def stack_slices(matrices: list[CooccurrenceMatrix], n: int) -> SparseTensor:
    """Stack M co-occurrence matrices into an N x N x M COO tensor.

    Slice k of the result equals ``matrices[k]`` entrywise; a matrix with
    no entries still occupies its slice (it contributes to M, not to nnz).
    """
    if not matrices:
        raise ValidationError("cannot stack an empty list of matrices")
    for idx, mat in enumerate(matrices):
        if mat.n != n:
            raise ValidationError(f"slice {idx} has dimension {mat.n}, expected {n}")
    i = np.concatenate([m.rows for m in matrices]) if matrices else np.array([], dtype=np.int64)
    j = np.concatenate([m.cols for m in matrices])
    v = np.concatenate([m.counts for m in matrices])
    k = np.repeat(np.arange(len(matrices), dtype=np.int64), [m.nnz for m in matrices])
    return SparseTensor((n, n, len(matrices)), i, j, k, v)
