"""Synthetic data generators and Monte Carlo comparison experiments.

Generators cover logistic data with uniform or normal features, label noise
injected uniformly or in a feature interval (with the flips recorded for
oracle checks), two-Gaussian mixtures, and a quadratic-boundary variant
where labels follow the posterior of two unequal-covariance Gaussians so
the data is deliberately not quite logistic. The experiment driver runs
named protocols over many replications, tuning each method the way the
protocol prescribes, and reports mean accuracy with its standard error.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np
from scipy.special import expit

from .data import SparseDataset
from .flipping import fit_flipping
from .prefilter import DEFAULT_K_GRID, select_k
from .robust import RobustFit, fit_robust, fit_robust_path
from .selection import (
    CvPlan,
    cv_two_stage_family,
    default_kappa_grid,
    default_lambda_grid,
)
from .solver import FitOptions, PenaltySpec, fit_penalized, predict_labels

# ---------------------------------------------------------------------------
# generators


@dataclass(frozen=True)
class GenSpec:
    """Recipe for logistic data with a planted coefficient vector."""

    n_features: int
    n_train: int
    n_dev: int
    n_test: int
    seed: int = 0
    relevant_features: int | None = None
    coefficient_value: float = 2.0
    intercept: float = 0.0
    feature_dist: Literal["uniform", "normal"] = "uniform"

    def __post_init__(self):
        if self.n_features < 0 or min(self.n_train, self.n_dev, self.n_test) < 0:
            raise ValueError("sizes must be nonnegative")
        if self.relevant_features is not None and not (
            0 <= self.relevant_features <= self.n_features
        ):
            raise ValueError("relevant_features must lie in [0, n_features]")
        if self.feature_dist not in ("uniform", "normal"):
            raise ValueError("feature_dist must be 'uniform' or 'normal'")

    def coefficient_vector(self) -> np.ndarray:
        theta = np.zeros(self.n_features)
        relevant = (
            self.n_features if self.relevant_features is None else self.relevant_features
        )
        theta[:relevant] = self.coefficient_value
        return theta


@dataclass(frozen=True)
class SimulatedSplits:
    train: SparseDataset
    dev: SparseDataset
    test: SparseDataset


@dataclass(frozen=True)
class PlantedTruth:
    """Which rows of a dataset had their labels flipped, and from what."""

    flipped: np.ndarray
    original_labels: np.ndarray

    @property
    def flipped_indices(self) -> np.ndarray:
        return np.flatnonzero(self.flipped)

    @property
    def n_flipped(self) -> int:
        return int(np.sum(self.flipped))


def _sample_features(rng: np.random.Generator, n: int, m: int, dist: str) -> np.ndarray:
    if dist == "uniform":
        return rng.uniform(-5.0, 5.0, size=(n, m))
    return rng.standard_normal(size=(n, m))


def generate_logistic(spec: GenSpec) -> SimulatedSplits:
    """Draw train/dev/test splits from the planted logistic model."""
    rng = np.random.default_rng(spec.seed)
    theta = spec.coefficient_vector()

    def split(n: int) -> SparseDataset:
        X = _sample_features(rng, n, spec.n_features, spec.feature_dist)
        p = expit(X @ theta + spec.intercept)
        labels = (rng.random(n) < p).astype(np.int64)
        return SparseDataset.from_dense(X, labels)

    return SimulatedSplits(split(spec.n_train), split(spec.n_dev), split(spec.n_test))


@dataclass(frozen=True)
class NoiseSpec:
    """How observed labels are corrupted.

    In uniform mode each 0-label flips to 1 with probability ``p0`` and
    each 1-label to 0 with probability ``p1``, independently. In interval
    mode exactly the 0-labeled rows whose first feature lies in
    ``interval`` are switched to 1.
    """

    p0: float = 0.0
    p1: float = 0.0
    mode: Literal["uniform", "interval"] = "uniform"
    interval: tuple[float, float] | None = None

    def __post_init__(self):
        if not (0.0 <= self.p0 <= 1.0 and 0.0 <= self.p1 <= 1.0):
            raise ValueError("flip probabilities must lie in [0, 1]")
        if self.mode == "interval":
            if self.interval is None:
                raise ValueError("interval mode needs an (a, b) interval")
            a, b = self.interval
            if not a <= b:
                raise ValueError("interval bounds must satisfy a <= b")
        elif self.mode != "uniform":
            raise ValueError("mode must be 'uniform' or 'interval'")

    @property
    def is_clean(self) -> bool:
        return self.mode == "uniform" and self.p0 == 0.0 and self.p1 == 0.0


def inject_noise(
    d: SparseDataset, noise: NoiseSpec, seed: int
) -> tuple[SparseDataset, PlantedTruth]:
    """Corrupt labels per the noise recipe, keeping a record of every flip."""
    labels = d.labels.copy()
    if noise.mode == "interval":
        if d.n_features == 0:
            raise ValueError("interval noise needs at least one feature")
        a, b = noise.interval  # type: ignore[misc]
        first = np.asarray(d.X[:, 0].todense()).ravel()
        flips = (labels == 0) & (first >= a) & (first <= b)
    else:
        rng = np.random.default_rng(seed)
        u = rng.random(d.n_rows)
        flips = ((labels == 0) & (u < noise.p0)) | ((labels == 1) & (u < noise.p1))
    noisy = np.where(flips, 1 - labels, labels)
    truth = PlantedTruth(flipped=flips, original_labels=d.labels.copy())
    return d.with_labels(noisy), truth


@dataclass(frozen=True)
class MixtureSpec:
    """Two-class data with Gaussian class-conditional features."""

    mean_positive: tuple[float, ...]
    mean_negative: tuple[float, ...]
    cov_scale_positive: float
    cov_scale_negative: float
    n_train: int
    n_dev: int
    n_test: int
    seed: int = 0

    def __post_init__(self):
        if len(self.mean_positive) != len(self.mean_negative):
            raise ValueError("class means must have equal dimension")
        if self.cov_scale_positive <= 0 or self.cov_scale_negative <= 0:
            raise ValueError("covariance scales must be positive")


def generate_gaussian_mixture(spec: MixtureSpec) -> SimulatedSplits:
    """Equal-prior sampling from the two spherical Gaussians."""
    rng = np.random.default_rng(spec.seed)
    m = len(spec.mean_positive)
    mu1 = np.asarray(spec.mean_positive, dtype=np.float64)
    mu0 = np.asarray(spec.mean_negative, dtype=np.float64)

    def split(n: int) -> SparseDataset:
        labels = (rng.random(n) < 0.5).astype(np.int64)
        X = rng.standard_normal(size=(n, m))
        scale = np.where(
            labels == 1,
            np.sqrt(spec.cov_scale_positive),
            np.sqrt(spec.cov_scale_negative),
        )
        X = X * scale[:, None] + np.where(labels[:, None] == 1, mu1, mu0)
        return SparseDataset.from_dense(X, labels)

    return SimulatedSplits(split(spec.n_train), split(spec.n_dev), split(spec.n_test))


@dataclass(frozen=True)
class QuadraticSpec:
    """Uniform features with labels from an unequal-covariance posterior.

    The label probability is the positive-class posterior of two spherical
    Gaussians with different covariance scales, which is quadratic rather
    than linear in the features — close to logistic, but not quite.
    """

    n_features: int
    mean_positive: float
    mean_negative: float
    cov_scale_positive: float
    cov_scale_negative: float
    n_train: int
    n_dev: int
    n_test: int
    seed: int = 0

    def __post_init__(self):
        if self.cov_scale_positive <= 0 or self.cov_scale_negative <= 0:
            raise ValueError("covariance scales must be positive")


def generate_quadratic(spec: QuadraticSpec) -> SimulatedSplits:
    rng = np.random.default_rng(spec.seed)
    m = spec.n_features
    s1, s0 = spec.cov_scale_positive, spec.cov_scale_negative

    def log_odds(X: np.ndarray) -> np.ndarray:
        q1 = np.sum((X - spec.mean_positive) ** 2, axis=1) / (2.0 * s1)
        q0 = np.sum((X - spec.mean_negative) ** 2, axis=1) / (2.0 * s0)
        return q0 - q1 + 0.5 * m * (np.log(s0) - np.log(s1))

    def split(n: int) -> SparseDataset:
        X = rng.uniform(-5.0, 5.0, size=(n, m))
        labels = (rng.random(n) < expit(log_odds(X))).astype(np.int64)
        return SparseDataset.from_dense(X, labels)

    return SimulatedSplits(split(spec.n_train), split(spec.n_dev), split(spec.n_test))


# ---------------------------------------------------------------------------
# protocols


@dataclass(frozen=True)
class Protocol:
    """A named experiment setup: generator, noise, and tuning policy."""

    name: str
    make_splits: Callable[[int, float], SimulatedSplits] = field(repr=False)
    noise: NoiseSpec = NoiseSpec()
    selection: Literal["dev", "two_stage"] = "dev"
    default_replications: int = 50


def _scaled(n: int, scale: float) -> int:
    return max(10, int(round(n * scale)))


def _scaled_m(m: int, scale: float) -> int:
    # Feature counts shrink with the split sizes so a reduced run keeps the
    # same rows-per-feature regime; otherwise small runs drift into a
    # qualitatively different (feature-rich) problem than the full protocol.
    return max(1, int(round(m * scale)))


def _logistic_protocol(name, m, n, noise, *, relevant=None, dist="uniform",
                       selection="dev", reps=50):
    def make(seed: int, scale: float) -> SimulatedSplits:
        ns = _scaled(n, scale)
        ms = _scaled_m(m, scale)
        rel = None if relevant is None else min(ms, _scaled_m(relevant, scale))
        return generate_logistic(
            GenSpec(
                n_features=ms,
                relevant_features=rel,
                n_train=ns,
                n_dev=ns,
                n_test=ns,
                seed=seed,
                feature_dist=dist,
            )
        )

    return Protocol(name, make, noise, selection, reps)


def _mixture_protocol(name, noise, *, n=500, reps=50):
    def make(seed: int, scale: float) -> SimulatedSplits:
        ns = _scaled(n, scale)
        return generate_gaussian_mixture(
            MixtureSpec(
                mean_positive=(0.0, 0.0),
                mean_negative=(1.0, 1.0),
                cov_scale_positive=1.0,
                cov_scale_negative=1.5,
                n_train=ns,
                n_dev=ns,
                n_test=ns,
                seed=seed,
            )
        )

    return Protocol(name, make, noise, "dev", reps)


def _quadratic_protocol(name, noise, *, m=50, n=500, reps=50):
    def make(seed: int, scale: float) -> SimulatedSplits:
        ns = _scaled(n, scale)
        return generate_quadratic(
            QuadraticSpec(
                n_features=_scaled_m(m, scale),
                mean_positive=2.0,
                mean_negative=-2.0,
                cov_scale_positive=1.0,
                cov_scale_negative=2.0,
                n_train=ns,
                n_dev=ns,
                n_test=ns,
                seed=seed,
            )
        )

    return Protocol(name, make, noise, "dev", reps)


def _build_protocols() -> dict[str, Protocol]:
    protocols = [
        _logistic_protocol("table1-clean", 10, 500, NoiseSpec()),
        _logistic_protocol("table1-p10", 10, 500, NoiseSpec(p0=0.1)),
        _logistic_protocol("table1-p20", 10, 500, NoiseSpec(p0=0.2)),
        _logistic_protocol("table1-p30", 10, 500, NoiseSpec(p0=0.3)),
        _logistic_protocol("table1-p30-p10", 10, 500, NoiseSpec(p0=0.3, p1=0.1)),
        _logistic_protocol(
            "table1-reg-p30", 20, 100, NoiseSpec(p0=0.3),
            relevant=5, selection="two_stage", reps=100,
        ),
        _logistic_protocol(
            "table1-reg-p30-p10", 20, 100, NoiseSpec(p0=0.3, p1=0.1),
            relevant=5, selection="two_stage", reps=100,
        ),
        _logistic_protocol("expB1", 50, 500, NoiseSpec(p0=0.3)),
        _logistic_protocol("expB2", 50, 500, NoiseSpec(p0=0.3), dist="normal"),
        _logistic_protocol(
            "expB3", 1, 500, NoiseSpec(mode="interval", interval=(-5.0, -4.0))
        ),
        _quadratic_protocol("expB4", NoiseSpec(p0=0.3)),
        _mixture_protocol("gauss6-clean", NoiseSpec()),
        _mixture_protocol("gauss6-noisy", NoiseSpec(p0=0.3)),
    ]
    return {p.name: p for p in protocols}


PROTOCOLS: dict[str, Protocol] = _build_protocols()

METHODS = ("standard", "robust", "flipping", "prefilter")

# Near-separable draws (clean data with strong planted coefficients) have no
# finite loss minimizer, so exact convergence is unreachable; the decision
# boundary stabilizes within a few hundred sweeps and the cap keeps batch
# experiments fast without changing any reported accuracy materially.
_FIT_OPTIONS = FitOptions(tolerance=1e-6, max_iterations=600)


# ---------------------------------------------------------------------------
# per-method training under a protocol's tuning policy


def _dev_accuracy(predictions: np.ndarray, dev: SparseDataset) -> float:
    return float(np.mean(predictions == dev.labels))


def _reg_kappa_grid(train):
    # A finer, wider grid than the selection default: with only ~100 rows the
    # useful feature penalties span four decades and the comparison is
    # sensitive to grid resolution.
    return default_kappa_grid(train, n_points=15, decades=4.0)


def _train_standard(train, dev, selection):
    if selection == "two_stage":
        # the baseline tunes its own L1 strength on the development split
        best = None
        for kappa in _reg_kappa_grid(train):
            fit = fit_penalized(train, PenaltySpec(l1=kappa), _FIT_OPTIONS)
            acc = _dev_accuracy(predict_labels(dev.X, fit), dev)
            if best is None or acc > best[0]:
                best = (acc, fit)
        return best[1], {}
    return fit_penalized(train, PenaltySpec(), _FIT_OPTIONS), {}


def _train_robust(train, dev, selection):
    if selection == "two_stage":
        kappas = _reg_kappa_grid(train)
        # The shift-penalty grid is shared across the whole kappa family, so
        # it is derived at the most-penalized kappa, where residuals (and
        # hence the path maximum) are largest; smaller kappas need only
        # smaller penalties, which the four-decade span still covers.
        plan = CvPlan(
            grid_lambda=default_lambda_grid(
                train, theta_l1=kappas[0], options=_FIT_OPTIONS
            ),
            grid_kappa_or_sigma=kappas,
            n_folds=10,
            seed=0,
        )
        # Training accuracy against 30%-flipped labels plateaus over long
        # stretches of the shift-penalty path; resolving those plateaus
        # toward the strong end parks most replications at the zero-shift
        # boundary, where the robust fit degenerates into the plain one.
        sel = cv_two_stage_family(
            train, plan, stage1_ties="smaller", options=_FIT_OPTIONS
        )
        fit = fit_robust(train, sel.lambda_, theta_l1=sel.kappa, options=_FIT_OPTIONS)
        return fit, {"lambda": sel.lambda_, "kappa": sel.kappa}
    grid = default_lambda_grid(train, options=_FIT_OPTIONS)
    fits = fit_robust_path(train, grid, options=_FIT_OPTIONS)
    best = None
    for lam, fit in zip(grid, fits):
        acc = _dev_accuracy(fit.predict(dev.X), dev)
        # >= so ties resolve to the smaller penalty: dev accuracy on a noisy
        # split is coarse, and among equals the fit that absorbed more
        # training noise generalizes better to the clean test split.
        if best is None or acc >= best[0]:
            best = (acc, lam, fit)
    return best[2], {"lambda": best[1]}


# Diverse starts for the EM baseline: the likelihood is nonconvex and the
# near-identity start can stall in a label-memorizing optimum, so several
# flip-matrix inits are run and the best final observed-data likelihood kept.
_FLIP_INITS = (
    ((0.9, 0.1), (0.1, 0.9)),
    ((0.7, 0.3), (0.1, 0.9)),
    ((0.9, 0.1), (0.3, 0.7)),
    ((0.6, 0.4), (0.4, 0.6)),
)


def _train_flipping(train, dev, selection):
    best = None
    for init in _FLIP_INITS:
        fit = fit_flipping(train, sigma2=1.0, init_flip=init, options=_FIT_OPTIONS)
        if best is None or fit.loglik_trace[-1] > best.loglik_trace[-1]:
            best = fit
    return best, {}


def _train_prefilter(train, dev, selection):
    k, fit, discarded = select_k(train, dev, DEFAULT_K_GRID, options=_FIT_OPTIONS)
    return fit, {"k": k, "n_discarded": len(discarded)}


_TRAINERS = {
    "standard": _train_standard,
    "robust": _train_robust,
    "flipping": _train_flipping,
    "prefilter": _train_prefilter,
}


def _test_accuracy(fit, test: SparseDataset) -> float:
    if isinstance(fit, RobustFit) or hasattr(fit, "flip_matrix"):
        preds = fit.predict(test.X)
    else:
        preds = predict_labels(test.X, fit)
    return float(np.mean(preds == test.labels))


# ---------------------------------------------------------------------------
# the comparison driver


@dataclass(frozen=True)
class MethodResult:
    method: str
    mean_accuracy: float
    sem: float
    n_success: int
    n_failed: int
    accuracies: tuple[float, ...] = field(repr=False)
    selected: tuple[dict, ...] = field(repr=False, default=())


@dataclass(frozen=True)
class ExperimentReport:
    protocol: str
    seed: int
    scale: float
    replications: int
    methods: tuple[str, ...]
    results: dict[str, MethodResult]
    failures: tuple[tuple[int, str, str], ...] = ()

    @property
    def all_succeeded(self) -> bool:
        return not self.failures

    def selected_k_fraction(self, k: int) -> float:
        """Fraction of successful prefilter replications that chose ``k``."""
        result = self.results["prefilter"]
        if not result.selected:
            return 0.0
        hits = sum(1 for s in result.selected if s.get("k") == k)
        return hits / len(result.selected)


def run_comparison(
    protocol: str,
    methods: Sequence[str] = ("standard", "robust"),
    *,
    replications: int | None = None,
    seed: int = 0,
    scale: float = 1.0,
) -> ExperimentReport:
    """Run a named protocol and compare methods on the clean test split.

    Noise touches only the train and dev splits. Each replication uses
    seed+index, so any report is reproducible from (protocol, seed,
    replications, scale); failures are excluded from the means and counted.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(
            f"unknown protocol {protocol!r}; available: {', '.join(sorted(PROTOCOLS))}"
        )
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown methods: {', '.join(bad)}")
    if not methods:
        raise ValueError("no methods requested")
    proto = PROTOCOLS[protocol]
    if scale <= 0:
        raise ValueError("scale must be positive")
    if replications is None:
        replications = max(2, int(round(proto.default_replications * scale)))
    if replications < 2:
        raise ValueError("need at least 2 replications for a standard error")

    accuracies: dict[str, list[float]] = {m: [] for m in methods}
    selected: dict[str, list[dict]] = {m: [] for m in methods}
    failures: list[tuple[int, str, str]] = []

    for rep in range(replications):
        rep_seed = seed + rep
        splits = proto.make_splits(rep_seed, scale)
        train, dev = splits.train, splits.dev
        if not proto.noise.is_clean:
            train, _ = inject_noise(train, proto.noise, rep_seed + 1_000_000_007)
            dev, _ = inject_noise(dev, proto.noise, rep_seed + 2_000_000_014)
        for method in methods:
            try:
                fit, info = _TRAINERS[method](train, dev, proto.selection)
                accuracies[method].append(_test_accuracy(fit, splits.test))
                selected[method].append(info)
            except Exception as exc:  # noqa: BLE001 - recorded, not swallowed
                failures.append((rep, method, f"{type(exc).__name__}: {exc}"))

    results = {}
    for method in methods:
        accs = np.asarray(accuracies[method])
        n_ok = accs.size
        mean = float(np.mean(accs)) if n_ok else float("nan")
        sem = float(np.std(accs, ddof=1) / np.sqrt(n_ok)) if n_ok > 1 else float("nan")
        results[method] = MethodResult(
            method=method,
            mean_accuracy=100.0 * mean,
            sem=100.0 * sem,
            n_success=n_ok,
            n_failed=replications - n_ok,
            accuracies=tuple(accs),
            selected=tuple(selected[method]),
        )
    return ExperimentReport(
        protocol=protocol,
        seed=seed,
        scale=scale,
        replications=replications,
        methods=tuple(methods),
        results=results,
        failures=tuple(failures),
    )


def format_report(report: ExperimentReport) -> str:
    """Tab-separated accuracy table under a commented run manifest."""
    lines = [
        f"# protocol={report.protocol}",
        f"# seed={report.seed}",
        f"# scale={report.scale:g}",
        f"# replications={report.replications}",
        f"# methods={','.join(report.methods)}",
        f"# failures={len(report.failures)}",
    ]
    for rep, method, err in report.failures:
        lines.append(f"# failure\t{rep}\t{method}\t{err}")
    lines.append("method\tmean_accuracy\tsem\tn_success\tn_failed\tnotes")
    for method in report.methods:
        r = report.results[method]
        notes = ""
        if method == "prefilter" and r.selected:
            ks = sorted({s.get("k") for s in r.selected})
            counts = ";".join(
                f"k={k}:{sum(1 for s in r.selected if s.get('k') == k)}" for k in ks
            )
            notes = counts
        lines.append(
            f"{method}\t{r.mean_accuracy:.4f}\t{r.sem:.4f}"
            f"\t{r.n_success}\t{r.n_failed}\t{notes}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# fixture for the error-identification check


def make_audit_fixture(
    seed: int = 0, *, n_rows: int = 60, n_features: int = 200, n_flips: int = 9
) -> tuple[SparseDataset, PlantedTruth]:
    """Small high-dimensional dataset with a handful of planted label flips.

    Mimics expression-style data: sparse features, far more columns than
    rows, a few informative columns, and flips planted on rows the true
    model is confident about so that they are genuinely mislabeled-looking.
    """
    rng = np.random.default_rng(seed)
    density = 0.15
    X = rng.standard_normal(size=(n_rows, n_features))
    X *= rng.random(size=X.shape) < density
    n_informative = 10
    theta = np.zeros(n_features)
    theta[:n_informative] = 3.0
    # boost informative columns so most rows get a confident score
    X[:, :n_informative] += rng.choice([-1.0, 1.0], size=(n_rows, 1))
    scores = X @ theta
    labels = (scores > 0).astype(np.int64)
    confident = np.flatnonzero(np.abs(scores) > np.quantile(np.abs(scores), 0.4))
    flip_rows = rng.choice(confident, size=n_flips, replace=False)
    clean = SparseDataset.from_dense(X, labels)
    noisy_labels = labels.copy()
    noisy_labels[flip_rows] = 1 - noisy_labels[flip_rows]
    flipped = np.zeros(n_rows, dtype=bool)
    flipped[flip_rows] = True
    return clean.with_labels(noisy_labels), PlantedTruth(flipped, labels)
