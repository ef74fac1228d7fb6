"""CP decomposition by alternating least squares.

Per sweep, each factor is the least-squares solution
``mttkrp(t, mode) @ pinv(hadamard of the other two Gram matrices + ridge*I)``.
A and B are column-normalized right after their updates (the following
solves reabsorb the scale), C keeps the scale during iteration, and at
finalization the column norms of C become the component weights. Row k of
the C factor is prompt k's embedding.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .sptensor import SparseTensor, frobenius_norm, mttkrp, reconstruct_entries

logger = logging.getLogger(__name__)


@dataclass
class CpOptions:
    """Solver options. ``init`` overrides the seeded uniform(0,1) start."""

    rank: int
    max_iters: int = 100
    tol: float = 1e-6
    seed: int = 0
    ridge: float = 1e-10
    init: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        if self.rank < 1:
            raise ValidationError(f"rank must be >= 1, got {self.rank}")
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ValidationError(f"tol must be > 0, got {self.tol}")
        if self.ridge < 0:
            raise ValidationError(f"ridge must be >= 0, got {self.ridge}")


@dataclass
class FactorModel:
    """CP factors with per-component weights and the solver's fit trace.

    After finalization all three factor matrices have unit-norm columns
    (zero columns of degenerate components stay zero) and ``weights``
    carries the scale.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    weights: np.ndarray
    rank: int
    fit_history: list[float] = field(default_factory=list)

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.A.shape[0], self.B.shape[0], self.C.shape[0])


def _solve_gram(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve factor @ gram = rhs for factor; pinv fallback for singular grams."""
    try:
        return np.linalg.solve(gram, rhs.T).T
    except np.linalg.LinAlgError:
        return rhs @ np.linalg.pinv(gram)


def _normalize_columns(factor: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(factor, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return factor / safe


def cp_als(t: SparseTensor, opts: CpOptions) -> FactorModel:
    """Decompose a sparse tensor into ``opts.rank`` rank-one components.

    Iterates A, B, C updates until the fit (1 - relative reconstruction
    error) changes by less than ``opts.tol`` or ``opts.max_iters`` sweeps
    have run. Deterministic for a given seed.
    """
    if t.nnz == 0:
        raise ValidationError("cannot decompose a tensor with no stored entries")
    R = opts.rank
    I, J, K = t.dims
    if R > min(I, J, K):
        warnings.warn(
            f"rank {R} exceeds min(tensor dims) = {min(I, J, K)}; "
            "components will be linearly dependent",
            stacklevel=2,
        )

    if opts.init is not None:
        A, B, C = (np.array(f, dtype=np.float64) for f in opts.init)
        for f, dim in zip((A, B, C), t.dims):
            if f.shape != (dim, R):
                raise ValidationError(f"init factor has shape {f.shape}, expected {(dim, R)}")
    else:
        rng = np.random.default_rng(opts.seed)
        A = rng.uniform(size=(I, R))
        B = rng.uniform(size=(J, R))
        C = rng.uniform(size=(K, R))

    norm_t = frobenius_norm(t)
    ridge_eye = opts.ridge * np.eye(R)
    fit_history: list[float] = []

    for sweep in range(opts.max_iters):
        A = _solve_gram((B.T @ B) * (C.T @ C) + ridge_eye, mttkrp(t, (A, B, C), 0))
        A = _normalize_columns(A)
        B = _solve_gram((A.T @ A) * (C.T @ C) + ridge_eye, mttkrp(t, (A, B, C), 1))
        B = _normalize_columns(B)
        m2 = mttkrp(t, (A, B, C), 2)
        C = _solve_gram((A.T @ A) * (B.T @ B) + ridge_eye, m2)

        # <t, reconstruction> falls out of the mode-2 MTTKRP, so the fit
        # costs nothing beyond the Gram products already at hand.
        iprod = float(np.sum(m2 * C))
        model_sq = float(np.sum((A.T @ A) * (B.T @ B) * (C.T @ C)))
        err_sq = max(norm_t**2 - 2.0 * iprod + model_sq, 0.0)
        fit_value = 1.0 - np.sqrt(err_sq) / norm_t
        if not (np.isfinite(fit_value) and np.isfinite(A).all()
                and np.isfinite(B).all() and np.isfinite(C).all()):
            raise NumericalError(f"non-finite values at iteration {sweep + 1}")
        fit_history.append(float(fit_value))
        if sweep > 0 and abs(fit_history[-1] - fit_history[-2]) < opts.tol:
            break

    logger.debug("cp_als: rank %d, %d sweeps, fit %.6f", R, len(fit_history), fit_history[-1])
    weights = np.linalg.norm(C, axis=0)
    C = _normalize_columns(C)
    return FactorModel(A=A, B=B, C=C, weights=weights, rank=R, fit_history=fit_history)


def fit(t: SparseTensor, model: FactorModel, chunk: int = 1_000_000) -> float:
    """1 - relative Frobenius reconstruction error, without densifying.

    Uses ``|t - X|^2 = |t|^2 - 2<t, X> + |X|^2`` where the inner product
    sums the reconstruction over stored entries only.
    """
    if model.dims != t.dims:
        raise ValidationError(f"model dims {model.dims} do not match tensor dims {t.dims}")
    norm_t = frobenius_norm(t)
    if norm_t == 0.0:
        raise ValidationError("fit is undefined for a zero tensor")
    iprod = 0.0
    for start in range(0, t.nnz, chunk):
        sl = slice(start, start + chunk)
        iprod += float(np.dot(t.values[sl], reconstruct_entries(model, t.i[sl], t.j[sl], t.k[sl])))
    grams = (model.A.T @ model.A) * (model.B.T @ model.B) * (model.C.T @ model.C)
    model_sq = float(model.weights @ grams @ model.weights)
    err_sq = max(norm_t**2 - 2.0 * iprod + model_sq, 0.0)
    return float(1.0 - np.sqrt(err_sq) / norm_t)


def embeddings(model: FactorModel, fold_weights: bool = True) -> np.ndarray:
    """Per-prompt embedding matrix (M x R).

    By default the component weights are folded in as ``C @ diag(weights)``
    so embedding geometry reflects component magnitudes; pass
    ``fold_weights=False`` for the bare normalized C.
    """
    if fold_weights:
        return model.C * model.weights[np.newaxis, :]
    return model.C.copy()
