"""Row-sparse binary-labeled datasets and the text format they live in on disk.

The on-disk format is one example per line, ``<label> <idx>:<val> ...`` with
1-based feature indices; an optional first line ``#n_features=<m>`` declares
the feature count (needed when trailing columns are all-zero). Indices are
0-based in memory.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse


class SparseFormatError(ValueError):
    """A sparse text file violates the line format."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class LabelValidationError(ValueError):
    """A parsed label is not 0 or 1."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


@dataclass(frozen=True)
class SparseDataset:
    """Immutable row-sparse feature matrix with binary labels and row weights.

    Attributes
    ----------
    X : scipy.sparse.csr_matrix
        n_rows x n_features, float64, strictly increasing indices per row.
    labels : ndarray of int64
        Per-row label in {0, 1}.
    weights : ndarray of float64
        Per-row nonnegative instance weight (1.0 unless set explicitly).
    """

    X: sparse.csr_matrix
    labels: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        X = sparse.csr_matrix(self.X, dtype=np.float64, copy=False)
        labels = np.asarray(self.labels, dtype=np.int64)
        if self.weights is None:
            weights = np.ones(X.shape[0], dtype=np.float64)
        else:
            weights = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", weights)
        self._validate()

    def _validate(self):
        n = self.X.shape[0]
        if self.labels.shape != (n,):
            raise ValueError(f"labels shape {self.labels.shape} != ({n},)")
        if self.weights.shape != (n,):
            raise ValueError(f"weights shape {self.weights.shape} != ({n},)")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise LabelValidationError("labels must be 0 or 1")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and nonnegative")
        if not np.all(np.isfinite(self.X.data)):
            raise ValueError("feature values must be finite")
        indptr, indices = self.X.indptr, self.X.indices
        if indices.size > 1:
            gaps = np.diff(indices)
            within_row = np.ones(gaps.size, dtype=bool)
            # positions followed by a row boundary are exempt
            boundaries = indptr[1:-1] - 1
            within_row[boundaries[(boundaries >= 0) & (boundaries < gaps.size)]] = False
            if np.any(gaps[within_row] <= 0):
                bad = int(np.flatnonzero(within_row & (gaps <= 0))[0])
                row = int(np.searchsorted(indptr, bad, side="right")) - 1
                raise ValueError(f"row {row}: feature indices not strictly increasing")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices and values of row i."""
        lo, hi = self.X.indptr[i], self.X.indptr[i + 1]
        return self.X.indices[lo:hi], self.X.data[lo:hi]

    def subset(self, rows: np.ndarray | Sequence[int]) -> "SparseDataset":
        """New dataset restricted to the given rows, in the given order."""
        rows = np.asarray(rows, dtype=np.int64)
        return SparseDataset(self.X[rows], self.labels[rows], self.weights[rows])

    def with_labels(self, labels: np.ndarray) -> "SparseDataset":
        return SparseDataset(self.X, labels, self.weights)

    def with_weights(self, weights: np.ndarray) -> "SparseDataset":
        return SparseDataset(self.X, self.labels, weights)

    def equals(self, other: "SparseDataset") -> bool:
        return (
            self.X.shape == other.X.shape
            and np.array_equal(self.X.indptr, other.X.indptr)
            and np.array_equal(self.X.indices, other.X.indices)
            and np.array_equal(self.X.data, other.X.data)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.weights, other.weights)
        )

    @classmethod
    def from_rows(
        cls,
        rows: Iterable[Sequence[tuple[int, float]]],
        labels: Sequence[int],
        n_features: int | None = None,
        weights: Sequence[float] | None = None,
    ) -> "SparseDataset":
        """Build from per-row lists of (feature index, value) pairs."""
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for row in rows:
            for j, v in row:
                indices.append(j)
                data.append(v)
            indptr.append(len(indices))
        if n_features is None:
            n_features = max(indices) + 1 if indices else 0
        X = sparse.csr_matrix(
            (
                np.asarray(data, dtype=np.float64),
                np.asarray(indices, dtype=np.int32),
                np.asarray(indptr, dtype=np.int32),
            ),
            shape=(len(indptr) - 1, n_features),
        )
        return cls(X, np.asarray(labels, dtype=np.int64), weights)

    @classmethod
    def from_dense(
        cls,
        X: np.ndarray,
        labels: Sequence[int],
        weights: Sequence[float] | None = None,
    ) -> "SparseDataset":
        return cls(sparse.csr_matrix(np.asarray(X, dtype=np.float64)), labels, weights)


@dataclass(frozen=True)
class AugmentedProblem:
    """A dataset side by side with a scaled identity block, one column per row.

    Column ``m + i`` is nonzero only at row ``i`` with value ``shift_scale``,
    so a coefficient on that column moves row i's log-odds by
    ``shift_scale * coefficient``. The base dataset is referenced, not copied.
    """

    base: SparseDataset
    shift_scale: float
    total_features: int

    def design(self) -> sparse.csr_matrix:
        """Materialize ``[X | shift_scale * I]`` as CSR."""
        n = self.base.n_rows
        eye = sparse.identity(n, dtype=np.float64, format="csr") * self.shift_scale
        return sparse.hstack([self.base.X, eye], format="csr")

    def to_dataset(self) -> SparseDataset:
        return SparseDataset(self.design(), self.base.labels, self.base.weights)


def augment_with_identity(d: SparseDataset, shift_scale: float = 1.0) -> AugmentedProblem:
    """Append one scaled indicator column per row to the design matrix."""
    if not shift_scale > 0:
        raise ValueError(f"shift_scale must be positive, got {shift_scale}")
    return AugmentedProblem(d, float(shift_scale), d.n_features + d.n_rows)


_HEADER_PREFIX = "#n_features="


def load_sparse(path: str | os.PathLike) -> SparseDataset:
    """Parse a sparse text file into a dataset.

    Raises SparseFormatError on malformed lines (with the 1-based line
    number) and LabelValidationError on labels outside {0, 1}.
    """
    declared_m: int | None = None
    labels: list[int] = []
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    max_index = -1

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if lineno == 1 and line.startswith(_HEADER_PREFIX):
                    try:
                        declared_m = int(line[len(_HEADER_PREFIX):])
                    except ValueError:
                        raise SparseFormatError("bad n_features header", lineno)
                    if declared_m < 0:
                        raise SparseFormatError("negative n_features header", lineno)
                    continue
                raise SparseFormatError("unexpected comment line", lineno)
            tokens = line.split()
            try:
                label_value = float(tokens[0])
            except ValueError:
                raise SparseFormatError(f"unreadable label {tokens[0]!r}", lineno)
            if label_value not in (0.0, 1.0):
                raise LabelValidationError(
                    f"label must be 0 or 1, got {tokens[0]!r}", lineno
                )
            prev = -1
            for tok in tokens[1:]:
                idx_str, sep, val_str = tok.partition(":")
                if not sep:
                    raise SparseFormatError(f"expected idx:val, got {tok!r}", lineno)
                try:
                    idx = int(idx_str)
                    val = float(val_str)
                except ValueError:
                    raise SparseFormatError(f"expected idx:val, got {tok!r}", lineno)
                if idx < 1:
                    raise SparseFormatError(f"feature index must be >= 1, got {idx}", lineno)
                if not math.isfinite(val):
                    raise SparseFormatError(f"non-finite value {val_str!r}", lineno)
                j = idx - 1
                if j <= prev:
                    raise SparseFormatError(
                        f"feature indices must be strictly increasing, got {idx}", lineno
                    )
                prev = j
                indices.append(j)
                data.append(val)
            max_index = max(max_index, prev)
            labels.append(int(label_value))
            indptr.append(len(indices))

    n_features = max_index + 1
    if declared_m is not None:
        if declared_m < n_features:
            raise SparseFormatError(
                f"header declares {declared_m} features but index {n_features} appears"
            )
        n_features = declared_m
    X = sparse.csr_matrix(
        (
            np.asarray(data, dtype=np.float64),
            np.asarray(indices, dtype=np.int64),
            np.asarray(indptr, dtype=np.int64),
        ),
        shape=(len(labels), n_features),
    )
    return SparseDataset(X, np.asarray(labels, dtype=np.int64))


def write_sparse(d: SparseDataset, path: str | os.PathLike) -> None:
    """Write the dataset in the text format; lossless for float64 values.

    Instance weights are not part of the format and are not written.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{_HEADER_PREFIX}{d.n_features}\n")
        for i in range(d.n_rows):
            idx, val = d.row(i)
            parts = [str(int(d.labels[i]))]
            parts.extend(f"{j + 1}:{v:.17g}" for j, v in zip(idx, val))
            fh.write(" ".join(parts) + "\n")


def subsample_negatives(d: SparseDataset, ratio: float, seed: int) -> SparseDataset:
    """Drop random negatives until #neg <= ratio * #pos; positives all kept.

    Row order is preserved. Deterministic for a given seed.
    """
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    pos = np.flatnonzero(d.labels == 1)
    neg = np.flatnonzero(d.labels == 0)
    if pos.size == 0:
        raise ValueError("dataset has no positive rows")
    target = int(ratio * pos.size)
    if neg.size <= target:
        return d
    rng = np.random.default_rng(seed)
    kept_neg = rng.choice(neg, size=target, replace=False)
    kept = np.sort(np.concatenate([pos, kept_neg]))
    return d.subset(kept)
