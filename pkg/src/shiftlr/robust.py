"""Logistic regression made label-noise-robust by per-example shift parameters.

Each training row i gets its own coefficient gamma_i added to that row's
linear score, L1-penalized with strength ``shift_penalty`` so that most
shifts are exactly zero. A row whose observed label contradicts its features
can only be fit by a large shift, so nonzero shifts flag suspected label
errors, and because the shifts absorb those rows' pull on the decision
boundary, the feature coefficients stay close to what clean data would give.
Prediction uses the feature coefficients alone; shifts are training-only.

Internally this is one penalized fit on the design ``[X | s*I]`` where the
identity block carries one column per training row. Two equivalent routes
are provided: ``factors`` keeps ``s = 1`` and gives the two blocks different
per-coefficient penalty multipliers, while ``rescaled`` folds the penalty
ratio into the column scale ``s`` so a single uniform L1 strength applies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from .data import SparseDataset, augment_with_identity
from .solver import (
    FitOptions,
    GlmFit,
    PenaltySpec,
    fit_penalized,
    predict_labels,
    predict_proba,
)

ROUTES = ("factors", "rescaled")


@dataclass(frozen=True)
class RobustFit:
    """Feature coefficients plus one fitted shift per training row."""

    intercept: float
    theta: np.ndarray
    gamma: np.ndarray
    shift_penalty: float
    theta_l1: float
    theta_sigma2: float | None
    route: str
    objective_value: float
    converged: bool
    n_iterations: int
    kkt_violation: float

    def theta_fit(self) -> GlmFit:
        """The feature-only model used for prediction."""
        return GlmFit(
            intercept=self.intercept,
            coefficients=self.theta,
            objective_value=self.objective_value,
            n_iterations=self.n_iterations,
            converged=self.converged,
            kkt_violation=self.kkt_violation,
            objective_trace=np.empty(0),
        )

    def decision_values(self, X: sparse.spmatrix | np.ndarray) -> np.ndarray:
        return np.asarray(X @ self.theta).ravel() + self.intercept

    def predict_proba(self, X: sparse.spmatrix | np.ndarray) -> np.ndarray:
        return predict_proba(X, self.theta_fit())

    def predict(self, X: sparse.spmatrix | np.ndarray) -> np.ndarray:
        """Predicted labels from features alone; shifts are not applied."""
        return predict_labels(X, self.theta_fit())

    @property
    def n_nonzero_shifts(self) -> int:
        return int(np.count_nonzero(self.gamma))


def fit_robust(
    data: SparseDataset,
    shift_penalty: float,
    *,
    theta_l1: float = 0.0,
    theta_sigma2: float | None = None,
    options: FitOptions = FitOptions(),
    route: str = "factors",
    warm_start: "RobustFit | None" = None,
) -> RobustFit:
    """Fit the shift-parameter model.

    Parameters
    ----------
    shift_penalty : float
        L1 strength on the per-row shifts; must be positive. Larger values
        zero out more shifts (values >= 1 zero all of them on unit-weight
        data, since the loss gradient of a shift is bounded by 1).
    theta_l1 : float
        Optional L1 strength on the feature coefficients (sparse variant).
    theta_sigma2 : float, optional
        Optional Gaussian prior variance on the feature coefficients,
        contributing ``1/(2*sigma2) * sum theta_j**2`` to the objective.
    route : {"factors", "rescaled"}
        Equivalent formulations (see module docstring). ``rescaled``
        requires ``theta_l1 > 0``.
    warm_start : RobustFit, optional
        Previous solution on the same rows to start descent from; must come
        from the same route.
    """
    if shift_penalty <= 0:
        raise ValueError("shift_penalty must be positive")
    if theta_l1 < 0:
        raise ValueError("theta_l1 must be nonnegative")
    if route not in ROUTES:
        raise ValueError(f"route must be one of {ROUTES}, got {route!r}")

    m, n = data.n_features, data.n_rows
    l2 = 0.0
    l2_factors = None
    if theta_sigma2 is not None:
        if theta_sigma2 <= 0:
            raise ValueError("theta_sigma2 must be positive")
        l2 = 1.0 / (2.0 * theta_sigma2)
        l2_factors = np.concatenate([np.ones(m), np.zeros(n)])

    if route == "factors":
        scale = 1.0
        l1 = shift_penalty
        l1_factors = np.concatenate(
            [np.full(m, theta_l1 / shift_penalty), np.ones(n)]
        )
    else:
        if theta_l1 <= 0:
            raise ValueError("route='rescaled' requires theta_l1 > 0")
        scale = theta_l1 / shift_penalty
        l1 = theta_l1
        l1_factors = None

    aug = augment_with_identity(data, scale).to_dataset()
    penalty = PenaltySpec(l1=l1, l2=l2, l1_factors=l1_factors, l2_factors=l2_factors)

    opts = options
    if warm_start is not None:
        if warm_start.route != route:
            raise ValueError("warm start must come from the same route")
        if warm_start.gamma.shape != (n,) or warm_start.theta.shape != (m,):
            raise ValueError("warm start shape does not match the data")
        prev = GlmFit(
            intercept=warm_start.intercept,
            coefficients=np.concatenate([warm_start.theta, warm_start.gamma / scale]),
            objective_value=warm_start.objective_value,
            n_iterations=warm_start.n_iterations,
            converged=warm_start.converged,
            kkt_violation=warm_start.kkt_violation,
            objective_trace=np.empty(0),
        )
        opts = FitOptions(options.tolerance, options.max_iterations, prev)

    fit = fit_penalized(aug, penalty, opts)
    return RobustFit(
        intercept=fit.intercept,
        theta=fit.coefficients[:m].copy(),
        gamma=scale * fit.coefficients[m:],
        shift_penalty=float(shift_penalty),
        theta_l1=float(theta_l1),
        theta_sigma2=theta_sigma2,
        route=route,
        objective_value=fit.objective_value,
        converged=fit.converged,
        n_iterations=fit.n_iterations,
        kkt_violation=fit.kkt_violation,
    )


def fit_robust_path(
    data: SparseDataset,
    shift_penalties: Sequence[float],
    *,
    theta_l1: float = 0.0,
    theta_sigma2: float | None = None,
    options: FitOptions = FitOptions(),
    route: str = "factors",
) -> list[RobustFit]:
    """One robust fit per shift penalty, warm-started along the path.

    Penalties must be non-ascending (sparse shifts first).
    """
    lams = np.asarray(shift_penalties, dtype=np.float64)
    if np.any(np.diff(lams) > 0):
        raise ValueError("shift penalties must be non-ascending")
    fits: list[RobustFit] = []
    prev: RobustFit | None = None
    for lam in lams:
        prev = fit_robust(
            data,
            float(lam),
            theta_l1=theta_l1,
            theta_sigma2=theta_sigma2,
            options=options,
            route=route,
            warm_start=prev,
        )
        fits.append(prev)
    return fits


@dataclass(frozen=True)
class SuspectRow:
    """One training row flagged as a suspected label error."""

    index: int
    gamma: float
    observed_label: int
    suspected_label: int


def suspect_report(fit: RobustFit, data: SparseDataset) -> list[SuspectRow]:
    """Rows with nonzero shifts, strongest suspicion first.

    A positive shift means the model had to push the row's score up to
    accommodate an observed 1 its features argue against, so the suspected
    true label is always the opposite of the observed one. Sorted by |gamma|
    descending, ties broken by row index.
    """
    if fit.gamma.shape != (data.n_rows,):
        raise ValueError("fit does not match the dataset's rows")
    rows = []
    for i in np.flatnonzero(fit.gamma):
        obs = int(data.labels[i])
        rows.append(SuspectRow(int(i), float(fit.gamma[i]), obs, 1 - obs))
    rows.sort(key=lambda r: (-abs(r.gamma), r.index))
    return rows


def format_suspects(rows: Sequence[SuspectRow]) -> str:
    """TSV serialization of a suspect report, header included."""
    lines = ["index\tgamma\tobserved_label\tsuspected_label"]
    for r in rows:
        lines.append(f"{r.index}\t{r.gamma:.17g}\t{r.observed_label}\t{r.suspected_label}")
    return "\n".join(lines) + "\n"
