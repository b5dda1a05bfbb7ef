"""Neighborhood-vote label filtering as a preprocessing baseline.

A training row is kept only if every one of its nearby rows carries the same
label; rows that disagree with their neighborhood are dropped before a
standard logistic fit. The neighborhood of size ``k`` counts the row itself
(its own nearest point), so ``k - 1`` other rows actually vote and ``k = 1``
filters nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import SparseDataset
from .solver import FitOptions, GlmFit, PenaltySpec, fit_penalized, predict_labels

DEFAULT_K_GRID = (1, 2, 3, 5, 7, 9)


@dataclass(frozen=True)
class FilterConfig:
    """Neighborhood size and metric for the label filter.

    ``k`` counts the row itself; only Euclidean distance over the
    (implicitly zero-padded) sparse vectors is supported.
    """

    k: int = 3
    metric: str = "euclidean"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.metric != "euclidean":
            raise ValueError("only the euclidean metric is supported")


class FilterEmptiedClassError(ValueError):
    """Filtering removed every row of one class."""

    def __init__(self, k: int, kept_class_counts: tuple[int, int]):
        self.k = k
        self.kept_class_counts = kept_class_counts
        super().__init__(
            f"k={k} is infeasible: filtering kept {kept_class_counts[0]} rows "
            f"of class 0 and {kept_class_counts[1]} of class 1"
        )


def _pairwise_sq_dists(d: SparseDataset) -> np.ndarray:
    gram = (d.X @ d.X.T).toarray()
    sq = np.diag(gram)
    out = sq[:, None] + sq[None, :] - 2.0 * gram
    np.maximum(out, 0.0, out=out)
    return out


def knn_filter(
    d: SparseDataset, cfg: FilterConfig
) -> tuple[SparseDataset, list[int]]:
    """Drop rows whose nearest other rows don't all share their label.

    Returns the filtered dataset (row order preserved) and the discarded
    row indices. Each row's own zero-distance point occupies the first
    neighbor slot, so the vote is over its ``k - 1`` nearest other rows,
    equal distances resolved toward the lower row index. Deterministic.
    """
    n = d.n_rows
    if cfg.k >= n:
        raise ValueError(f"k={cfg.k} must be smaller than the number of rows ({n})")
    if cfg.k == 1:
        return d, []

    sq = _pairwise_sq_dists(d)
    order_key = np.arange(n)
    discarded: list[int] = []
    for i in range(n):
        row = sq[i].copy()
        row[i] = np.inf  # the row itself never votes
        order = np.lexsort((order_key, row))
        voters = order[: cfg.k - 1]
        if np.any(d.labels[voters] != d.labels[i]):
            discarded.append(i)
    if not discarded:
        return d, []
    kept = np.setdiff1d(np.arange(n), np.asarray(discarded))
    return d.subset(kept), discarded


def fit_prefiltered(
    d: SparseDataset,
    cfg: FilterConfig,
    theta_penalty: PenaltySpec = PenaltySpec(),
    options: FitOptions = FitOptions(),
) -> tuple[GlmFit, list[int]]:
    """Filter, then run a standard penalized fit on the surviving rows.

    Raises FilterEmptiedClassError if either class is wiped out.
    """
    filtered, discarded = knn_filter(d, cfg)
    n_pos = int((filtered.labels == 1).sum())
    n_neg = filtered.n_rows - n_pos
    if d.n_rows > 0 and (n_pos == 0 or n_neg == 0):
        raise FilterEmptiedClassError(cfg.k, (n_neg, n_pos))
    return fit_penalized(filtered, theta_penalty, options), discarded


def select_k(
    train: SparseDataset,
    dev: SparseDataset,
    grid: Sequence[int] = DEFAULT_K_GRID,
    theta_penalty: PenaltySpec = PenaltySpec(),
    options: FitOptions = FitOptions(),
) -> tuple[int, GlmFit, list[int]]:
    """Pick the filter size with the fewest dev misclassifications.

    Grid values that are infeasible (too large for the dataset, or emptying
    a class) are skipped; ties go to the smaller k.
    """
    best: tuple[float, int, GlmFit, list[int]] | None = None
    for k in sorted(grid):
        try:
            fit, discarded = fit_prefiltered(train, FilterConfig(k), theta_penalty, options)
        except (ValueError, FilterEmptiedClassError):
            continue
        errors = float(np.mean(predict_labels(dev.X, fit) != dev.labels))
        if best is None or errors < best[0]:
            best = (errors, k, fit, discarded)
    if best is None:
        raise ValueError("no feasible k in the grid")
    return best[1], best[2], best[3]


def format_discarded(indices: Sequence[int]) -> str:
    """Newline-separated discarded row indices, one per line."""
    return "".join(f"{i}\n" for i in indices)
