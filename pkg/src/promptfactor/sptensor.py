"""Sparse third-order tensor in coordinate form, plus the MTTKRP kernel.

Entries are coalesced (duplicate coordinates summed) and sorted slice-major
at construction, which makes every operation on the entry arrays
deterministic: repeated runs are bit-stable. Instances are treated as
immutable after construction.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


class SparseTensor:
    """Order-3 COO tensor with dims (I, J, K) and float64 values."""

    def __init__(self, dims, i, j, k, values):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValidationError(f"dims must be three positive integers, got {dims}")
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        k = np.asarray(k, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (i.shape == j.shape == k.shape == values.shape) or i.ndim != 1:
            raise ValidationError("coordinate and value arrays must be 1-D and equally long")
        if i.size:
            if i.min() < 0 or i.max() >= dims[0] or j.min() < 0 or j.max() >= dims[1] \
                    or k.min() < 0 or k.max() >= dims[2]:
                raise ValidationError("tensor coordinates out of range for dims")
            if not np.all(np.isfinite(values)):
                raise ValidationError("tensor values must be finite")
        self.dims = dims
        self.i, self.j, self.k, self.values = _coalesce(dims, i, j, k, values)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def slice_count(self, k: int) -> int:
        """Number of stored entries in frontal slice k."""
        return int(np.count_nonzero(self.k == k))

    def to_dense(self) -> np.ndarray:
        """Materialize the full dense array. Intended for small tensors only."""
        dense = np.zeros(self.dims)
        dense[self.i, self.j, self.k] = self.values
        return dense

    def scaled(self, alpha: float) -> "SparseTensor":
        """New tensor with every value multiplied by ``alpha``."""
        return SparseTensor(self.dims, self.i, self.j, self.k, self.values * alpha)

    def __repr__(self) -> str:
        return f"SparseTensor(dims={self.dims}, nnz={self.nnz})"


def _coalesce(dims, i, j, k, values):
    """Sum duplicate coordinates and sort entries by (k, i, j)."""
    if i.size == 0:
        return i, j, k, values
    lin = (k * dims[0] + i) * dims[1] + j
    uniq, inverse = np.unique(lin, return_inverse=True)
    vals = np.bincount(inverse, weights=values, minlength=uniq.size)
    kk, rest = np.divmod(uniq, dims[0] * dims[1])
    ii, jj = np.divmod(rest, dims[1])
    return ii, jj, kk, vals


def frobenius_norm(t: SparseTensor) -> float:
    """sqrt of the sum of squared entry values."""
    return float(np.sqrt(np.dot(t.values, t.values)))


def _check_factors(t: SparseTensor, factors) -> int:
    if len(factors) != 3:
        raise ValidationError("expected exactly three factor matrices")
    rank = None
    for mode, f in enumerate(factors):
        f = np.asarray(f)
        if f.ndim != 2:
            raise ValidationError(f"factor for mode {mode} must be a matrix")
        if f.shape[0] != t.dims[mode]:
            raise ValidationError(
                f"factor for mode {mode} has {f.shape[0]} rows, tensor dim is {t.dims[mode]}"
            )
        if rank is None:
            rank = f.shape[1]
        elif f.shape[1] != rank:
            raise ValidationError("factor matrices disagree on rank")
    return int(rank)


def mttkrp(t: SparseTensor, factors, mode: int) -> np.ndarray:
    """Matricized-tensor times Khatri-Rao product along ``mode``.

    For mode 2: out[k, r] = sum over entries (i, j, k, v) of v * A[i, r] * B[j, r];
    modes 0 and 1 are the symmetric analogues. Equals the dense unfolding
    multiplied by the Khatri-Rao product of the other two factors.

    Accumulation uses one bincount per component over the stored entry
    order, so results are deterministic for a given tensor.
    """
    if mode not in (0, 1, 2):
        raise ValidationError(f"mode must be 0, 1, or 2, got {mode}")
    rank = _check_factors(t, factors)
    A, B, C = (np.asarray(f, dtype=np.float64) for f in factors)
    out = np.zeros((t.dims[mode], rank))
    if t.nnz == 0:
        return out
    if mode == 0:
        idx, f1, i1, f2, i2 = t.i, B, t.j, C, t.k
    elif mode == 1:
        idx, f1, i1, f2, i2 = t.j, A, t.i, C, t.k
    else:
        idx, f1, i1, f2, i2 = t.k, A, t.i, B, t.j
    for r in range(rank):
        out[:, r] = np.bincount(
            idx, weights=t.values * f1[i1, r] * f2[i2, r], minlength=t.dims[mode]
        )
    return out


def reconstruct_entry(model, i: int, j: int, k: int) -> float:
    """Value of the CP model at (i, j, k): sum_r lambda_r A[i,r] B[j,r] C[k,r]."""
    A, B, C = model.A, model.B, model.C
    if not (0 <= i < A.shape[0] and 0 <= j < B.shape[0] and 0 <= k < C.shape[0]):
        raise ValidationError(f"index ({i}, {j}, {k}) out of range for model dims")
    return float(np.sum(model.weights * A[i] * B[j] * C[k]))


def reconstruct_entries(model, i, j, k) -> np.ndarray:
    """Vectorized ``reconstruct_entry`` over coordinate arrays."""
    prod = model.A[np.asarray(i)] * model.B[np.asarray(j)] * model.C[np.asarray(k)]
    return prod @ model.weights
