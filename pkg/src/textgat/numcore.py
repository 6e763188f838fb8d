"""Dense/sparse matrix kernels with a documented, deterministic reduction order.

Everything is 64-bit float. Row reductions go left to right (np ufunc
reduceat semantics), so repeated runs on the same inputs are bit-identical.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RNG_ALGORITHM = "pcg64"


@dataclass(frozen=True)
class RngSpec:
    """Named RNG algorithm plus 64-bit seed; identical spec -> identical stream."""

    algorithm: str = RNG_ALGORITHM
    seed: int = 0

    def generator(self) -> np.random.Generator:
        if self.algorithm != RNG_ALGORITHM:
            raise ValueError(f"unsupported rng algorithm: {self.algorithm!r}")
        return np.random.Generator(np.random.PCG64(self.seed))


def make_rng(seed: int) -> np.random.Generator:
    return RngSpec(seed=seed).generator()


class SparseMatrix:
    """Immutable CSR matrix of float64 values.

    Column indices are strictly increasing within each row and explicit
    zeros are never stored, so a given set of entries has exactly one
    representation.
    """

    __slots__ = ("shape", "indptr", "indices", "data")

    def __init__(self, shape, indptr, indices, data):
        n_rows, n_cols = shape
        indptr = np.asarray(indptr, dtype=np.int64)
        indices = np.asarray(indices, dtype=np.int64)
        data = np.asarray(data, dtype=np.float64)
        if indptr.shape != (n_rows + 1,) or indptr[0] != 0 or indptr[-1] != len(indices):
            raise ValueError("malformed row offsets")
        if np.any(np.diff(indptr) < 0):
            raise ValueError("row offsets must be monotone")
        if len(indices) != len(data):
            raise ValueError("indices/data length mismatch")
        if len(indices) and (indices.min() < 0 or indices.max() >= n_cols):
            raise ValueError("column index out of range")
        if len(indices) > 1:
            row_start = np.zeros(len(indices), dtype=bool)
            row_start[indptr[1:-1][indptr[1:-1] < len(indices)]] = True
            bad = (~row_start[1:]) & (np.diff(indices) <= 0)
            if np.any(bad):
                raise ValueError("columns not strictly increasing within a row")
        if np.any(data == 0.0):
            raise ValueError("explicit zeros are not allowed")
        object.__setattr__(self, "shape", (int(n_rows), int(n_cols)))
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "data", data)

    def __setattr__(self, name, value):
        raise AttributeError("SparseMatrix is immutable")

    @property
    def nnz(self) -> int:
        return int(len(self.data))

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "SparseMatrix":
        """Canonicalize COO triples: row-major sort, duplicates summed, zeros dropped."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        n_rows, n_cols = shape
        if rows.shape != cols.shape or rows.shape != vals.shape:
            raise ValueError("COO arrays must have identical length")
        if len(rows):
            order = np.lexsort((cols, rows))
            rows, cols, vals = rows[order], cols[order], vals[order]
            keys = rows * np.int64(n_cols) + cols
            boundary = np.concatenate(([True], keys[1:] != keys[:-1]))
            starts = np.flatnonzero(boundary)
            summed = np.add.reduceat(vals, starts)
            rows, cols = rows[starts], cols[starts]
            keep = summed != 0.0
            rows, cols, vals = rows[keep], cols[keep], summed[keep]
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(shape, indptr, cols, vals)

    @classmethod
    def from_dense(cls, dense) -> "SparseMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        rows, cols = np.nonzero(dense)
        return cls.from_coo(rows, cols, dense[rows, cols], dense.shape)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n, dtype=np.int64)
        return cls.from_coo(idx, idx, np.ones(n), (n, n))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.float64)
        out[self.row_ids(), self.indices] = self.data
        return out

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry, aligned with indices/data."""
        return np.repeat(np.arange(self.shape[0], dtype=np.int64), np.diff(self.indptr))

    def to_coo(self):
        return self.row_ids(), self.indices.copy(), self.data.copy()

    def transpose(self) -> "SparseMatrix":
        rows, cols, vals = self.to_coo()
        return SparseMatrix.from_coo(cols, rows, vals, (self.shape[1], self.shape[0]))

    def with_data(self, data) -> "SparseMatrix":
        """Same pattern, new values; entries that became zero are dropped."""
        rows = self.row_ids()
        return SparseMatrix.from_coo(rows, self.indices, data, self.shape)

    def row_sums(self) -> np.ndarray:
        out = np.zeros(self.shape[0], dtype=np.float64)
        sizes = np.diff(self.indptr)
        if self.nnz:
            starts = np.minimum(self.indptr[:-1], self.nnz - 1)
            summed = np.add.reduceat(self.data, starts)
            out[sizes > 0] = summed[sizes > 0]
        return out

    def __eq__(self, other):
        return (
            isinstance(other, SparseMatrix)
            and self.shape == other.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )


def spmm(a: SparseMatrix, b: np.ndarray) -> np.ndarray:
    """Sparse @ dense. Each output row accumulates its terms left to right."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2:
        raise ValueError("dense operand must be 2-D")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    if a.nnz == 0:
        return out
    prod = a.data[:, None] * b[a.indices]
    starts = np.minimum(a.indptr[:-1], a.nnz - 1)
    summed = np.add.reduceat(prod, starts, axis=0)
    sizes = np.diff(a.indptr)
    out[sizes > 0] = summed[sizes > 0]
    return out


def leaky_relu(x, alpha: float):
    """x for x >= 0 else alpha*x; scalar in, scalar out."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.where(arr >= 0.0, arr, alpha * arr)
    if arr.ndim == 0:
        return float(out)
    return out


def leaky_relu_grad(x, alpha: float):
    """1 for x >= 0 else alpha (the x >= 0 branch owns the origin)."""
    arr = np.asarray(x, dtype=np.float64)
    return np.where(arr >= 0.0, 1.0, alpha)


def softmax_row(v):
    """Max-subtracted softmax along the last axis; rows sum to 1 within 1e-12."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("softmax of an empty vector")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def finite_diff_check(f, params, grads, *, epsilon: float = 1e-5,
                      samples: int | None = 50, rng=None) -> float:
    """Central-difference validation of analytic gradients.

    ``f(params) -> scalar loss`` must be deterministic; ``grads`` are the
    analytic gradients at ``params`` (same shapes). Returns the max over
    sampled coordinates of |g_fd - g_an| / max(1, |g_fd|, |g_an|).
    """
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    loss0 = float(f(params))
    if not np.isfinite(loss0):
        raise ValueError("non-finite loss")
    sizes = [p.size for p in params]
    total = int(np.sum(sizes))
    if total == 0:
        return 0.0
    if samples is None or samples >= total:
        picked = np.arange(total)
    else:
        rng = rng if rng is not None else make_rng(0)
        picked = np.sort(rng.choice(total, size=samples, replace=False))
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for flat in picked:
        pi = int(np.searchsorted(offsets, flat, side="right") - 1)
        local = int(flat - offsets[pi])
        param = params[pi]
        orig = param.flat[local]
        param.flat[local] = orig + epsilon
        lp = float(f(params))
        param.flat[local] = orig - epsilon
        lm = float(f(params))
        param.flat[local] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise ValueError("non-finite loss during perturbation")
        g_fd = (lp - lm) / (2.0 * epsilon)
        g_an = float(grads[pi].flat[local])
        rel = abs(g_fd - g_an) / max(1.0, abs(g_fd), abs(g_an))
        worst = max(worst, rel)
    return worst
