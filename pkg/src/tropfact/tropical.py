"""Max-plus (tropical) semiring kernels.

Matrices are plain ``float64`` numpy arrays; the bottom element is ``-inf``.
NaN is never a valid entry.
"""

from __future__ import annotations

import csv
import io
import os
from typing import Optional, Tuple, Union

import numpy as np

NEG_INF = float("-inf")

MaskLike = Union["ObservationMask", np.ndarray, None]


class NonFiniteInputError(ValueError):
    """A -inf (or NaN) value reached a computation that needs finite data."""


class MatrixParseError(ValueError):
    """Malformed matrix text."""


class ObservationMask:
    """Set of observed ``(i, j)`` cells of a ``rows x cols`` matrix.

    Stored as a boolean array; duplicates are impossible by construction.
    """

    def __init__(self, array: np.ndarray):
        array = np.asarray(array)
        if array.ndim != 2:
            raise ValueError("mask must be two-dimensional")
        self.array = array.astype(bool, copy=True)
        self.array.setflags(write=False)

    @classmethod
    def from_pairs(cls, rows: int, cols: int, pairs) -> "ObservationMask":
        arr = np.zeros((rows, cols), dtype=bool)
        pairs = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        if len(pairs):
            if (pairs < 0).any() or (pairs[:, 0] >= rows).any() or (pairs[:, 1] >= cols).any():
                raise ValueError("mask index out of range")
            arr[pairs[:, 0], pairs[:, 1]] = True
        return cls(arr)

    @classmethod
    def full(cls, rows: int, cols: int) -> "ObservationMask":
        return cls(np.ones((rows, cols), dtype=bool))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.array.shape

    @property
    def rows(self) -> int:
        return self.array.shape[0]

    @property
    def cols(self) -> int:
        return self.array.shape[1]

    def pairs(self) -> np.ndarray:
        """Observed cells as an ``(k, 2)`` array in row-major order."""
        return np.argwhere(self.array)

    def __len__(self) -> int:
        return int(self.array.sum())

    def __contains__(self, item) -> bool:
        i, j = item
        return bool(self.array[i, j])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ObservationMask):
            return NotImplemented
        return np.array_equal(self.array, other.array)

    def __repr__(self) -> str:
        return f"ObservationMask(shape={self.shape}, observed={len(self)})"


def as_mask_array(mask: MaskLike, shape: Tuple[int, int]) -> Optional[np.ndarray]:
    """Normalize a mask argument to a boolean array, or ``None`` for all-ones."""
    if mask is None:
        return None
    arr = mask.array if isinstance(mask, ObservationMask) else np.asarray(mask, dtype=bool)
    if arr.shape != tuple(shape):
        raise ValueError(f"mask shape {arr.shape} does not match {tuple(shape)}")
    return arr


def check_matrix(M, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {M.shape}")
    if np.isnan(M).any():
        raise NonFiniteInputError(f"{name} contains NaN")
    if np.isposinf(M).any():
        raise NonFiniteInputError(f"{name} contains +inf")
    return M


def identity(n: int) -> np.ndarray:
    """Max-plus identity: 0 on the diagonal, -inf elsewhere."""
    E = np.full((n, n), NEG_INF)
    np.fill_diagonal(E, 0.0)
    return E


def tropical_terms(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """All sums ``A[i, l] + B[l, j]`` as an ``(m, p, n)`` array.

    -inf + x is -inf for every finite x and -inf, so plain float addition
    already respects the absorbing rule; +inf never enters.
    """
    return A[:, :, None] + B[None, :, :]


def maxplus_matvec(A, x) -> np.ndarray:
    A = check_matrix(A, "A")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, x has shape {x.shape}")
    if np.isnan(x).any():
        raise NonFiniteInputError("x contains NaN")
    return (A + x[None, :]).max(axis=1)


def maxplus_matmul(A, B) -> np.ndarray:
    A = check_matrix(A, "A")
    B = check_matrix(B, "B")
    if A.shape[1] != B.shape[0]:
        raise ValueError(f"inner dimensions differ: {A.shape} vs {B.shape}")
    out = np.empty((A.shape[0], B.shape[1]))
    # row blocks keep the (rows, p, n) temporary bounded
    step = max(1, 4_000_000 // max(1, A.shape[1] * B.shape[1]))
    for start in range(0, A.shape[0], step):
        out[start:start + step] = tropical_terms(A[start:start + step], B).max(axis=1)
    return out


def select_maximizers(terms: np.ndarray, rng: np.random.Generator, tol: float = 0.0):
    """Max over axis 1 of ``terms`` with uniform random tie-breaking.

    Returns ``(values, pi)`` where ``pi`` holds the chosen inner index, or -1
    where every term is -inf. Random draws are consumed only for tied cells,
    one ``integers`` call in row-major order, so results depend on the seed
    alone.
    """
    values = terms.max(axis=1)
    pi = terms.argmax(axis=1)
    finite = np.isfinite(values)
    is_max = terms >= (values - tol)[:, None, :]
    counts = is_max.sum(axis=1)
    tied = (counts > 1) & finite
    if tied.any():
        ti, tj = np.nonzero(tied)
        picks = rng.integers(0, counts[ti, tj])
        for i, j, k in zip(ti, tj, picks):
            pi[i, j] = np.flatnonzero(is_max[i, :, j])[k]
    pi[~finite] = -1
    return values, pi


def maxplus_matmul_argmax(A, B, rng: np.random.Generator, tol: float = 0.0):
    """Max-plus product together with the maximizing inner index per entry.

    The index map uses 0-based inner indices and -1 marks entries whose
    terms are all -inf (argmax undefined).
    """
    A = check_matrix(A, "A")
    B = check_matrix(B, "B")
    if A.shape[1] != B.shape[0]:
        raise ValueError(f"inner dimensions differ: {A.shape} vs {B.shape}")
    return select_maximizers(tropical_terms(A, B), rng, tol)


def frobenius_error(Y, P, mask: MaskLike = None) -> float:
    """Frobenius norm of ``Y - P`` over the observed cells (not squared)."""
    Y = np.asarray(Y, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if Y.shape != P.shape:
        raise ValueError(f"shape mismatch: {Y.shape} vs {P.shape}")
    m = as_mask_array(mask, Y.shape)
    if m is None:
        y, p = Y.ravel(), P.ravel()
    else:
        y, p = Y[m], P[m]
    if not (np.isfinite(y).all() and np.isfinite(p).all()):
        raise NonFiniteInputError("non-finite entry inside the observation mask")
    d = y - p
    return float(np.sqrt(np.dot(d, d)))


def _format_entry(x: float) -> str:
    if x == NEG_INF:
        return "-inf"
    return f"{x:.17g}"


def write_matrix(M, path_or_buf) -> None:
    """Write ``M`` as CSV; ``-inf`` marks the bottom element."""
    M = check_matrix(M)
    lines = [",".join(_format_entry(float(x)) for x in row) for row in M]
    text = "\n".join(lines) + "\n"
    if isinstance(path_or_buf, (str, os.PathLike)):
        with open(path_or_buf, "w", newline="") as f:
            f.write(text)
    else:
        path_or_buf.write(text)


def read_matrix(path_or_buf) -> np.ndarray:
    if isinstance(path_or_buf, (str, os.PathLike)):
        with open(path_or_buf, newline="") as f:
            text = f.read()
    else:
        text = path_or_buf.read()
    rows = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            values = [float(c) for c in row]
        except ValueError as exc:
            raise MatrixParseError(f"line {lineno}: {exc}") from None
        if any(np.isnan(v) or v == float("inf") for v in values):
            raise MatrixParseError(f"line {lineno}: only finite values and -inf are allowed")
        if rows and len(values) != len(rows[0]):
            raise MatrixParseError(
                f"line {lineno}: expected {len(rows[0])} columns, got {len(values)}")
        rows.append(values)
    if not rows:
        raise MatrixParseError("empty matrix")
    return np.array(rows, dtype=np.float64)
