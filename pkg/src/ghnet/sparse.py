"""Sparse graph operators: CSR adjacency, symmetric normalization, k-hop propagation.

All matrices are stored in compressed-sparse-row form with float64 values.
The two graph filters used by the models are produced by :func:`sym_normalize`:
with self-loops (the re-normalized filter used by plain graph convolutions) and
without (the filter used for multi-hop propagation, where a node's own features
travel through an explicit bypass instead of a self-loop).

Instances are immutable after construction and safe to share across threads.
The sparse-dense product accumulates each output row in CSR index order, so
results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class CsrMatrix:
    """Immutable sparse matrix in CSR form.

    Invariants (checked on construction):
      * ``row_offsets`` is non-decreasing, starts at 0 and ends at ``nnz``;
      * column indices are strictly increasing within each row (no duplicates);
      * all column indices are in ``[0, num_cols)``.
    """

    num_rows: int
    num_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        cols = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "values", vals)
        if self.num_rows < 0 or self.num_cols < 0:
            raise ValueError("matrix dimensions must be non-negative")
        if offsets.shape != (self.num_rows + 1,):
            raise ValueError("row_offsets must have length num_rows + 1")
        if offsets[0] != 0 or offsets[-1] != len(cols) or len(cols) != len(vals):
            raise ValueError("row_offsets endpoints must match nnz")
        if np.any(np.diff(offsets) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if len(cols) and (cols.min() < 0 or cols.max() >= self.num_cols):
            raise ValueError("column index out of range")
        # strictly increasing within each row: negative diffs may only occur
        # at row boundaries
        if len(cols) > 1:
            decreasing = np.flatnonzero(np.diff(cols) <= 0) + 1
            if not np.all(np.isin(decreasing, offsets)):
                raise ValueError("column indices must be strictly increasing per row")
        for arr in (offsets, cols, vals):
            arr.flags.writeable = False

    @property
    def nnz(self) -> int:
        return len(self.values)

    @cached_property
    def _scipy(self) -> sp.csr_matrix:
        # scipy backs the sparse-dense product; its CSR kernel accumulates each
        # row sequentially in index order, which keeps results bitwise
        # reproducible
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets),
            shape=(self.num_rows, self.num_cols),
        )

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.num_rows, self.num_cols))
        rows = np.repeat(np.arange(self.num_rows), np.diff(self.row_offsets))
        out[rows, self.col_indices] = self.values
        return out

    def transpose(self) -> "CsrMatrix":
        rows = np.repeat(np.arange(self.num_rows), np.diff(self.row_offsets))
        return _from_coo(self.col_indices, rows, self.values, self.num_cols, self.num_rows)


def _from_coo(rows, cols, vals, num_rows: int, num_cols: int) -> CsrMatrix:
    """Assemble a CsrMatrix from unordered COO triplets (no duplicates)."""
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    counts = np.bincount(rows, minlength=num_rows)
    offsets = np.concatenate(([0], np.cumsum(counts)))
    return CsrMatrix(num_rows, num_cols, offsets, cols, vals)


def build_csr(edges, n: int) -> CsrMatrix:
    """Build the symmetrized, deduplicated, self-loop-free binary adjacency.

    Each input pair (i, j) contributes both (i, j) and (j, i) with value 1.0;
    duplicates collapse and pairs with i == j are dropped.  The result is
    independent of the input edge order.
    """
    pairs = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    bad = (pairs < 0) | (pairs >= n)
    if bad.any():
        i = int(np.flatnonzero(bad.any(axis=1))[0])
        raise ValueError(
            f"edge ({pairs[i, 0]}, {pairs[i, 1]}) out of range for {n} nodes"
        )
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    both = np.concatenate([pairs, pairs[:, ::-1]])
    keys = np.unique(both[:, 0] * np.int64(n) + both[:, 1])
    rows, cols = keys // n, keys % n
    return _from_coo(rows, cols, np.ones(len(keys)), n, n)


def degrees(a: CsrMatrix) -> np.ndarray:
    """Per-node degree d_i = sum_j a_ij (row sums)."""
    return np.add.reduceat(
        np.concatenate([a.values, [0.0]]), a.row_offsets[:-1]
    ) * (np.diff(a.row_offsets) > 0)


def sym_normalize(a: CsrMatrix, with_self_loop: bool) -> CsrMatrix:
    """Symmetric degree normalization D^{-1/2} A D^{-1/2}.

    With ``with_self_loop`` the adjacency is first augmented with unit
    diagonal entries (the re-normalized filter); without, isolated nodes have
    zero degree and their normalization coefficient is defined as 0, leaving
    their rows empty.  Expects a square, symmetric, binary, zero-diagonal
    input.
    """
    if a.num_rows != a.num_cols:
        raise ValueError("sym_normalize requires a square matrix")
    n = a.num_rows
    rows = np.repeat(np.arange(n), np.diff(a.row_offsets))
    cols = a.col_indices.copy()
    vals = a.values.copy()
    if with_self_loop:
        rows = np.concatenate([rows, np.arange(n)])
        cols = np.concatenate([cols, np.arange(n)])
        vals = np.concatenate([vals, np.ones(n)])
    deg = np.bincount(rows, weights=vals, minlength=n)
    inv_sqrt = np.zeros(n)
    nz = deg > 0
    inv_sqrt[nz] = deg[nz] ** -0.5
    # coefficient computed as one product per entry; multiplication is
    # commutative, so entries (i,j) and (j,i) come out bitwise equal
    scaled = vals * (inv_sqrt[rows] * inv_sqrt[cols])
    return _from_coo(rows, cols, scaled, n, n)


def spmm(s: CsrMatrix, h: np.ndarray) -> np.ndarray:
    """Sparse-dense product s @ h with per-row accumulation in CSR order."""
    h = np.ascontiguousarray(h, dtype=np.float64)
    if h.ndim != 2 or s.num_cols != h.shape[0]:
        raise ValueError(
            f"dimension mismatch: {s.num_rows}x{s.num_cols} @ {h.shape}"
        )
    return s._scipy @ h


def k_hop_propagate(s: CsrMatrix, h: np.ndarray, k: int) -> np.ndarray:
    """Apply the filter k times in sequence; S^k is never materialized."""
    if k < 1:
        raise ValueError("k must be >= 1: a propagation block always propagates")
    out = h
    for _ in range(k):
        out = spmm(s, out)
    return out
