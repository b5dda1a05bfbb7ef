"""Cross-validated hyperparameter selection for the robust model.

Three procedures are provided: plain cross-validation of the shift penalty
(optionally constrained by a "noise budget" bounding the fraction of rows
allowed nonzero shifts), a two-stage family search that pairs each feature
penalty with the shift penalty maximizing full-training-set accuracy before
cross-validating over the family, and a simplified sequential search that
first tunes the feature penalty with a standard fit and then the shift
penalty with the robust one. Scoring is held-out 0-1 accuracy by default
(F1 available); ties always resolve toward the stronger penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.special import expit

from .data import SparseDataset
from .robust import fit_robust_path
from .solver import FitOptions, PenaltySpec, fit_penalized, predict_labels


@dataclass(frozen=True)
class Metrics:
    """Binary classification counts and the rates derived from them."""

    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float


def evaluate(predictions: np.ndarray, labels: np.ndarray) -> Metrics:
    """Standard binary metrics with class 1 as the positive class."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must have equal length")
    if predictions.size == 0:
        raise ValueError("cannot evaluate an empty prediction set")
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    accuracy = (tp + tn) / predictions.size
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Metrics(tp, fp, tn, fn, accuracy, precision, recall, f1)


def _score(metrics: Metrics, criterion: str) -> float:
    return metrics.f1 if criterion == "f1" else metrics.accuracy


@dataclass(frozen=True)
class CvPlan:
    """Fold layout, candidate grids, and selection options."""

    grid_lambda: tuple[float, ...] = ()
    grid_kappa_or_sigma: tuple[float, ...] = ()
    n_folds: int = 5
    seed: int = 0
    noise_budget: float | None = None
    criterion: Literal["accuracy", "f1"] = "accuracy"

    def __post_init__(self):
        for name in ("grid_lambda", "grid_kappa_or_sigma"):
            g = tuple(float(v) for v in getattr(self, name))
            if any(v <= 0 for v in g):
                raise ValueError(f"{name} must contain positive values")
            if any(b > a for a, b in zip(g, g[1:])):
                raise ValueError(f"{name} must be descending")
            object.__setattr__(self, name, g)
        if self.n_folds < 2:
            raise ValueError("n_folds must be at least 2")
        if self.noise_budget is not None and not 0.0 <= self.noise_budget <= 1.0:
            raise ValueError("noise_budget must lie in [0, 1]")
        if self.criterion not in ("accuracy", "f1"):
            raise ValueError("criterion must be 'accuracy' or 'f1'")


def make_folds(n: int, n_folds: int, seed: int) -> list[np.ndarray]:
    """Deterministic partition of row indices into near-equal held-out folds."""
    if n < n_folds:
        raise ValueError(f"cannot split {n} rows into {n_folds} nonempty folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, n_folds)]


# fold-table record: (fold index, candidate value, held-out score)
FoldRecord = tuple[int, float, float]


def format_fold_table(records: Sequence[FoldRecord]) -> str:
    lines = ["fold\tcandidate\tscore"]
    for fold, cand, score in records:
        lines.append(f"{fold}\t{cand:.17g}\t{score:.17g}")
    return "\n".join(lines) + "\n"


class BudgetExhaustedError(ValueError):
    """Every candidate shift penalty breaks the noise budget."""

    def __init__(self, budget: float, fractions: dict[float, float]):
        self.budget = budget
        self.fractions = fractions
        listing = ", ".join(f"{lam:g}: {frac:.4f}" for lam, frac in fractions.items())
        super().__init__(
            f"no candidate satisfies noise budget {budget}: nonzero-shift fractions {listing}"
        )


@dataclass(frozen=True)
class LambdaSelection:
    lambda_: float
    fold_table: list[FoldRecord] = field(repr=False)
    mean_scores: dict[float, float] = field(repr=False)
    gamma_fractions: dict[float, float] | None = field(repr=False, default=None)
    excluded: tuple[float, ...] = ()


def _cv_scores_for_lambdas(
    d: SparseDataset,
    lambdas: Sequence[float],
    folds: list[np.ndarray],
    criterion: str,
    theta_l1: float,
    theta_sigma2: float | None,
    options: FitOptions,
) -> tuple[list[FoldRecord], dict[float, float]]:
    all_rows = np.arange(d.n_rows)
    table: list[FoldRecord] = []
    sums = {lam: 0.0 for lam in lambdas}
    for fold_idx, heldout in enumerate(folds):
        train = d.subset(np.setdiff1d(all_rows, heldout))
        test = d.subset(heldout)
        fits = fit_robust_path(
            train, lambdas, theta_l1=theta_l1, theta_sigma2=theta_sigma2, options=options
        )
        for lam, fit in zip(lambdas, fits):
            score = _score(evaluate(fit.predict(test.X), test.labels), criterion)
            table.append((fold_idx, float(lam), score))
            sums[lam] += score
    means = {lam: s / len(folds) for lam, s in sums.items()}
    return table, means


def _argmax_first(candidates: Sequence[float], scores: dict[float, float]) -> float:
    """Best-scoring candidate; on ties the earliest (largest, grids being
    descending) wins."""
    best = None
    for cand in candidates:
        s = scores[cand]
        if best is None or s > best[1]:
            best = (cand, s)
    assert best is not None
    return best[0]


def _argmax_last(candidates: Sequence[float], scores: dict[float, float]) -> float:
    """Best-scoring candidate; on ties the latest (smallest) wins."""
    best = None
    for cand in candidates:
        s = scores[cand]
        if best is None or s >= best[1]:
            best = (cand, s)
    assert best is not None
    return best[0]


def cv_select_lambda(
    d: SparseDataset,
    plan: CvPlan,
    *,
    theta_l1: float = 0.0,
    theta_sigma2: float | None = None,
    options: FitOptions = FitOptions(),
) -> LambdaSelection:
    """Cross-validate the shift penalty over ``plan.grid_lambda``.

    With a noise budget, candidates whose full-training-set fit gives a
    nonzero-shift fraction above the budget are excluded before scoring.
    """
    if not plan.grid_lambda:
        raise ValueError("grid_lambda is empty")
    lambdas = plan.grid_lambda
    gamma_fractions = None
    excluded: tuple[float, ...] = ()
    allowed = lambdas
    if plan.noise_budget is not None:
        full = fit_robust_path(
            d, lambdas, theta_l1=theta_l1, theta_sigma2=theta_sigma2, options=options
        )
        gamma_fractions = {
            lam: fit.n_nonzero_shifts / d.n_rows for lam, fit in zip(lambdas, full)
        }
        allowed = tuple(
            lam for lam in lambdas if gamma_fractions[lam] <= plan.noise_budget
        )
        excluded = tuple(lam for lam in lambdas if lam not in allowed)
        if not allowed:
            raise BudgetExhaustedError(plan.noise_budget, gamma_fractions)

    folds = make_folds(d.n_rows, plan.n_folds, plan.seed)
    table, means = _cv_scores_for_lambdas(
        d, lambdas, folds, plan.criterion, theta_l1, theta_sigma2, options
    )
    chosen = _argmax_first(allowed, means)
    return LambdaSelection(chosen, table, means, gamma_fractions, excluded)


@dataclass(frozen=True)
class TwoStageSelection:
    kappa: float
    lambda_: float
    lambda_by_kappa: dict[float, float] = field(repr=False)
    train_scores: dict[float, float] = field(repr=False)
    fold_table: list[FoldRecord] = field(repr=False)


def cv_two_stage_family(
    d: SparseDataset,
    plan: CvPlan,
    *,
    stage1_ties: Literal["larger", "smaller"] = "larger",
    options: FitOptions = FitOptions(),
) -> TwoStageSelection:
    """Two-stage search over the L1 feature-penalty family.

    Stage one pairs every kappa with the shift penalty whose robust fit
    scores best on the full training set; stage two cross-validates kappa
    using its paired shift penalty. Stage-one accuracy is integer-valued on
    the training set, so plateaus of tied shift penalties are wide;
    ``stage1_ties`` picks which end of a plateau wins. The default keeps
    the stronger penalty, the convention used everywhere else; "smaller"
    prefers the weaker penalty, whose fit actually exercises the shifts
    (at the plateau's strong end the shifts are all zero, making the
    "robust" fit indistinguishable from the plain one).
    """
    if not plan.grid_lambda or not plan.grid_kappa_or_sigma:
        raise ValueError("two-stage selection needs both grids")
    kappas = plan.grid_kappa_or_sigma
    lambdas = plan.grid_lambda

    pick = _argmax_first if stage1_ties == "larger" else _argmax_last
    lambda_by_kappa: dict[float, float] = {}
    train_scores: dict[float, float] = {}
    for kappa in kappas:
        fits = fit_robust_path(d, lambdas, theta_l1=kappa, options=options)
        scores = {
            lam: _score(evaluate(fit.predict(d.X), d.labels), plan.criterion)
            for lam, fit in zip(lambdas, fits)
        }
        best_lam = pick(lambdas, scores)
        lambda_by_kappa[kappa] = best_lam
        train_scores[kappa] = scores[best_lam]

    folds = make_folds(d.n_rows, plan.n_folds, plan.seed)
    all_rows = np.arange(d.n_rows)
    table: list[FoldRecord] = []
    sums = {kappa: 0.0 for kappa in kappas}
    for fold_idx, heldout in enumerate(folds):
        train = d.subset(np.setdiff1d(all_rows, heldout))
        test = d.subset(heldout)
        for kappa in kappas:
            fit = fit_robust_path(
                train, [lambda_by_kappa[kappa]], theta_l1=kappa, options=options
            )[0]
            score = _score(evaluate(fit.predict(test.X), test.labels), plan.criterion)
            table.append((fold_idx, float(kappa), score))
            sums[kappa] += score
    means = {kappa: s / len(folds) for kappa, s in sums.items()}
    chosen = _argmax_first(kappas, means)
    return TwoStageSelection(chosen, lambda_by_kappa[chosen], lambda_by_kappa, train_scores, table)


@dataclass(frozen=True)
class SequentialSelection:
    theta_value: float
    lambda_: float
    theta_fold_table: list[FoldRecord] = field(repr=False)
    lambda_selection: LambdaSelection = field(repr=False)


def cv_sequential(
    d: SparseDataset,
    plan: CvPlan,
    *,
    theta_mode: Literal["l1", "sigma2"] = "sigma2",
    options: FitOptions = FitOptions(),
) -> SequentialSelection:
    """Tune the feature penalty with plain fits, then the shift penalty.

    Stage one cross-validates ``plan.grid_kappa_or_sigma`` (interpreted per
    ``theta_mode``) using the standard model only; stage two fixes the
    winner and cross-validates the shift penalty with the robust model.
    """
    if not plan.grid_kappa_or_sigma:
        raise ValueError("grid_kappa_or_sigma is empty")
    folds = make_folds(d.n_rows, plan.n_folds, plan.seed)
    all_rows = np.arange(d.n_rows)
    table: list[FoldRecord] = []
    sums = {v: 0.0 for v in plan.grid_kappa_or_sigma}
    for fold_idx, heldout in enumerate(folds):
        train = d.subset(np.setdiff1d(all_rows, heldout))
        test = d.subset(heldout)
        for value in plan.grid_kappa_or_sigma:
            if theta_mode == "l1":
                penalty = PenaltySpec(l1=value)
            else:
                penalty = PenaltySpec(l2=1.0 / (2.0 * value))
            fit = fit_penalized(train, penalty, options)
            score = _score(evaluate(predict_labels(test.X, fit), test.labels), plan.criterion)
            table.append((fold_idx, float(value), score))
            sums[value] += score
    means = {v: s / len(folds) for v, s in sums.items()}
    theta_value = _argmax_first(plan.grid_kappa_or_sigma, means)

    kwargs = (
        {"theta_l1": theta_value} if theta_mode == "l1" else {"theta_sigma2": theta_value}
    )
    lam_sel = cv_select_lambda(d, plan, options=options, **kwargs)
    return SequentialSelection(theta_value, lam_sel.lambda_, table, lam_sel)


def default_lambda_grid(
    d: SparseDataset,
    *,
    theta_l1: float = 0.0,
    theta_sigma2: float | None = None,
    n_points: int = 20,
    decades: float = 4.0,
    options: FitOptions = FitOptions(),
) -> tuple[float, ...]:
    """Descending shift-penalty grid from the data-derived path maximum.

    The top value is the smallest penalty at which every shift is zero in
    the robust fit (the largest per-row loss gradient at the shift-free
    solution), so the grid always contains the baseline-equivalent model.
    """
    penalty = PenaltySpec(
        l1=theta_l1,
        l2=0.0 if theta_sigma2 is None else 1.0 / (2.0 * theta_sigma2),
    )
    base = fit_penalized(d, penalty, options)
    resid = np.abs(expit(base.intercept + np.asarray(d.X @ base.coefficients).ravel()) - d.labels)
    lam_max = float(np.max(d.weights * resid)) if d.n_rows else 0.0
    if lam_max <= 0.0:
        lam_max = 1e-3
    return tuple(np.geomspace(lam_max, lam_max * 10.0 ** (-decades), n_points))


def default_kappa_grid(
    d: SparseDataset, *, n_points: int = 7, decades: float = 3.0
) -> tuple[float, ...]:
    """Descending feature-L1 grid from the null-model gradient maximum.

    At the intercept-only solution the fitted probability is the weighted
    label mean everywhere, so the largest coordinate of the loss gradient
    is the smallest penalty zeroing every feature weight.
    """
    mean = float(np.average(d.labels, weights=d.weights)) if d.n_rows else 0.5
    grad = np.abs(np.asarray(d.X.T @ (d.weights * (mean - d.labels))).ravel())
    kappa_max = float(np.max(grad)) if grad.size else 0.0
    if kappa_max <= 0.0:
        kappa_max = 1e-3
    return tuple(np.geomspace(kappa_max, kappa_max * 10.0 ** (-decades), n_points))


def default_sigma2_grid(*, n_points: int = 7, decades: float = 4.0) -> tuple[float, ...]:
    """Descending Gaussian-prior-variance grid centered on 1."""
    return tuple(10.0 ** np.linspace(decades / 2.0, -decades / 2.0, n_points))
