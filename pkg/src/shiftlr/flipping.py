"""EM-trained logistic regression with an explicit label-flipping model.

The observed label is modeled as the true label passed through a 2x2
confusion matrix ``flip[c, z] = P(observed z | true c)``, with the true
label following a logistic model on the features. EM alternates a closed
posterior over true labels (E-step) with closed-form flip-rate updates and a
weighted logistic refit in which every row contributes once per candidate
true label, weighted by its posterior (M-step). The observed-data
log-likelihood never decreases across iterations.

Prediction uses the fitted logistic model for the *true* label; the flip
matrix only explains the training labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import expit

from .data import SparseDataset
from .solver import (
    FitOptions,
    GlmFit,
    PenaltySpec,
    fit_penalized,
    predict_labels,
    predict_proba,
)

_DEFAULT_INIT_FLIP = np.array([[0.9, 0.1], [0.1, 0.9]])


@dataclass(frozen=True)
class FlippingFit:
    """Logistic model for the true label plus estimated flip rates."""

    intercept: float
    theta: np.ndarray
    flip_matrix: np.ndarray  # flip_matrix[c, z] = P(observed z | true c)
    loglik_trace: np.ndarray
    n_iterations: int
    converged: bool

    def theta_fit(self) -> GlmFit:
        return GlmFit(
            intercept=self.intercept,
            coefficients=self.theta,
            objective_value=float(-self.loglik_trace[-1]),
            n_iterations=self.n_iterations,
            converged=self.converged,
            kkt_violation=0.0,
            objective_trace=np.empty(0),
        )

    def predict_proba(self, X: sparse.spmatrix | np.ndarray) -> np.ndarray:
        return predict_proba(X, self.theta_fit())

    def predict(self, X: sparse.spmatrix | np.ndarray) -> np.ndarray:
        return predict_labels(X, self.theta_fit())


def _class_probs(data: SparseDataset, intercept: float, theta: np.ndarray) -> np.ndarray:
    """(n, 2) matrix of P(true label = c | x) under the logistic model."""
    g1 = expit(np.asarray(data.X @ theta).ravel() + intercept)
    return np.column_stack([1.0 - g1, g1])


def e_step(
    data: SparseDataset, intercept: float, theta: np.ndarray, flip: np.ndarray
) -> np.ndarray:
    """Posterior over the true label given features and observed label.

    Returns an (n, 2) array whose row i is ``P(true = c | x_i, y_i)``,
    proportional to ``flip[c, y_i] * P(true = c | x_i)``. A row whose joint
    mass underflows to zero falls back to the feature-only class
    probabilities.
    """
    probs = _class_probs(data, intercept, theta)
    joint = flip[:, data.labels].T * probs
    denom = joint.sum(axis=1)
    bad = denom == 0.0
    if np.any(bad):
        joint[bad] = probs[bad]
        denom = joint.sum(axis=1)
    return joint / denom[:, None]


def m_step_flip(
    data: SparseDataset, posteriors: np.ndarray, previous: np.ndarray
) -> np.ndarray:
    """Reestimated flip matrix from posterior true-label mass.

    Row c is the weighted share of observed labels among rows believed to be
    truly c. A class with no posterior mass keeps its previous row.
    """
    w = data.weights
    flip = np.empty((2, 2))
    for c in (0, 1):
        mass = w * posteriors[:, c]
        obs0 = mass[data.labels == 0].sum()
        obs1 = mass[data.labels == 1].sum()
        if obs0 + obs1 == 0.0:
            flip[c] = previous[c]
            continue
        flip[c, 0] = obs0 / (obs0 + obs1)
        flip[c, 1] = obs1 / (obs0 + obs1)
    return flip


def _posterior_weighted_dataset(data: SparseDataset, posteriors: np.ndarray) -> SparseDataset:
    """Each row duplicated with candidate labels 1 and 0, posterior-weighted."""
    X2 = sparse.vstack([data.X, data.X], format="csr")
    n = data.n_rows
    labels = np.concatenate([np.ones(n, dtype=np.int64), np.zeros(n, dtype=np.int64)])
    weights = np.concatenate(
        [data.weights * posteriors[:, 1], data.weights * posteriors[:, 0]]
    )
    return SparseDataset(X2, labels, weights)


def m_step_theta(
    data: SparseDataset,
    posteriors: np.ndarray,
    *,
    sigma2: float | None = None,
    options: FitOptions = FitOptions(),
    warm_start: GlmFit | None = None,
) -> GlmFit:
    """Refit the logistic model against posterior-weighted candidate labels."""
    penalty = PenaltySpec(l2=0.0 if sigma2 is None else 1.0 / (2.0 * sigma2))
    opts = FitOptions(options.tolerance, options.max_iterations, warm_start)
    return fit_penalized(_posterior_weighted_dataset(data, posteriors), penalty, opts)


def observed_loglik(
    data: SparseDataset,
    intercept: float,
    theta: np.ndarray,
    flip: np.ndarray,
    sigma2: float | None = None,
) -> float:
    """Weighted log-likelihood of the observed labels, marginalizing the
    true label; includes the Gaussian prior term when ``sigma2`` is set."""
    probs = _class_probs(data, intercept, theta)
    mix = (flip[:, data.labels].T * probs).sum(axis=1)
    ll = float(np.sum(data.weights * np.log(np.maximum(mix, 1e-300))))
    if sigma2 is not None:
        ll -= float(np.sum(theta**2)) / (2.0 * sigma2)
    return ll


def fit_flipping(
    data: SparseDataset,
    *,
    sigma2: float | None = None,
    init_flip: np.ndarray | None = None,
    loglik_tol: float = 1e-6,
    max_em_iterations: int = 200,
    m_step_sweep_cap: int = 150,
    options: FitOptions = FitOptions(),
) -> FlippingFit:
    """Run EM to convergence of the observed-data log-likelihood.

    The logistic model is initialized by a plain fit against the observed
    labels and the flip matrix near identity (0.9 on the diagonal), which
    anchors the label semantics; EM stops once the log-likelihood improves
    by less than ``loglik_tol`` or after ``max_em_iterations`` iterations.

    Intermediate refits are capped at ``m_step_sweep_cap`` descent sweeps
    (a partial M-step still increases the likelihood since it warm-starts
    from the previous coefficients); one final EM iteration then runs with
    the full sweep budget.
    """
    if sigma2 is not None and sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    flip = _DEFAULT_INIT_FLIP.copy() if init_flip is None else np.asarray(init_flip, dtype=np.float64).copy()
    if flip.shape != (2, 2) or np.any(flip < 0) or not np.allclose(flip.sum(axis=1), 1.0):
        raise ValueError("init_flip must be a 2x2 row-stochastic matrix")

    penalty = PenaltySpec(l2=0.0 if sigma2 is None else 1.0 / (2.0 * sigma2))
    inner = FitOptions(
        options.tolerance, min(m_step_sweep_cap, options.max_iterations)
    )
    theta_fit = fit_penalized(data, penalty, options)

    trace = [observed_loglik(data, theta_fit.intercept, theta_fit.coefficients, flip, sigma2)]
    converged = False
    iterations = 0
    for _ in range(max_em_iterations):
        iterations += 1
        post = e_step(data, theta_fit.intercept, theta_fit.coefficients, flip)
        flip = m_step_flip(data, post, flip)
        theta_fit = m_step_theta(
            data, post, sigma2=sigma2, options=inner, warm_start=theta_fit
        )
        trace.append(
            observed_loglik(data, theta_fit.intercept, theta_fit.coefficients, flip, sigma2)
        )
        if abs(trace[-1] - trace[-2]) <= loglik_tol:
            converged = True
            break

    # one last iteration at the caller's full sweep budget
    iterations += 1
    post = e_step(data, theta_fit.intercept, theta_fit.coefficients, flip)
    flip = m_step_flip(data, post, flip)
    theta_fit = m_step_theta(
        data, post, sigma2=sigma2, options=options, warm_start=theta_fit
    )
    trace.append(
        observed_loglik(data, theta_fit.intercept, theta_fit.coefficients, flip, sigma2)
    )

    return FlippingFit(
        intercept=theta_fit.intercept,
        theta=theta_fit.coefficients,
        flip_matrix=flip,
        loglik_trace=np.asarray(trace),
        n_iterations=iterations,
        converged=converged,
    )
