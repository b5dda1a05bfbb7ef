"""Command-line interface: train, predict, audit, and simulate.

Every command is a pure function of its inputs and flags — randomness flows
from explicit seeds, output files are written atomically (temp + rename),
and each written artifact gets a JSON manifest sufficient to reproduce it.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import __version__
from .data import SparseDataset, load_sparse
from .flipping import fit_flipping
from .prefilter import FilterConfig, fit_prefiltered
from .robust import fit_robust, format_suspects, suspect_report
from .selection import (
    CvPlan,
    cv_select_lambda,
    cv_two_stage_family,
    default_kappa_grid,
    default_lambda_grid,
    evaluate,
)
from .simulate import METHODS, PROTOCOLS, format_report, run_comparison
from .solver import FitOptions, PenaltySpec, fit_penalized

MODEL_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# atomic IO and manifests


def _write_atomic(path: str | os.PathLike, text: str) -> None:
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=target.parent or ".", prefix=target.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out: str, command: str, options: dict, **extra) -> None:
    manifest = {
        "tool_version": __version__,
        "command": command,
        "options": options,
        **extra,
    }
    _write_atomic(str(out) + ".manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _flag_options(args: argparse.Namespace, names: tuple[str, ...]) -> dict:
    return {name: getattr(args, name) for name in names}


# ---------------------------------------------------------------------------
# model files


def _save_model(out: str, kind: str, n_features: int, intercept: float,
                theta: np.ndarray, extras: dict) -> None:
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "model_kind": kind,
        "n_features": int(n_features),
        "intercept": float(intercept),
        "theta": [float(v) for v in theta],
        "extras": extras,
    }
    _write_atomic(out, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _load_model(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        model = json.load(fh)
    version = model.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version {version!r}")
    return model


def _theta_penalty(args: argparse.Namespace) -> PenaltySpec:
    l1 = args.kappa or 0.0
    l2 = 1.0 / (2.0 * args.sigma2) if args.sigma2 else 0.0
    return PenaltySpec(l1=l1, l2=l2)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args: argparse.Namespace) -> int:
    d = load_sparse(args.data)
    options = FitOptions()
    if args.model == "standard":
        fit = fit_penalized(d, _theta_penalty(args), options)
        model = (fit.intercept, fit.coefficients, {})
    elif args.model == "robust":
        fit = fit_robust(
            d,
            args.lambda_,
            theta_l1=args.kappa or 0.0,
            theta_sigma2=args.sigma2,
            options=options,
        )
        extras = {
            "shift_penalty": args.lambda_,
            "kappa": args.kappa,
            "sigma2": args.sigma2,
            "gamma": [float(v) for v in fit.gamma],
        }
        model = (fit.intercept, fit.theta, extras)
    elif args.model == "flipping":
        fit = fit_flipping(d, sigma2=args.sigma2, options=options)
        extras = {
            "sigma2": args.sigma2,
            "flip_matrix": [[float(v) for v in row] for row in fit.flip_matrix],
        }
        model = (fit.intercept, fit.theta, extras)
    else:  # prefilter
        fit, discarded = fit_prefiltered(
            d, FilterConfig(k=args.k), _theta_penalty(args), options
        )
        model = (fit.intercept, fit.coefficients, {"k": args.k, "discarded": discarded})

    intercept, theta, extras = model
    _save_model(args.out, args.model, d.n_features, intercept, theta, extras)
    opts = _flag_options(args, ("model", "data", "out", "lambda_", "kappa", "sigma2", "k"))
    _write_manifest(args.out, "train", opts, dataset_digest=_digest(args.data))
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    model = _load_model(args.model_file)
    d = load_sparse(args.data)
    m = model["n_features"]
    theta = np.asarray(model["theta"], dtype=np.float64)
    for i in range(d.n_rows):
        idx, _ = d.row(i)
        if idx.size and idx[-1] >= m:
            raise ValueError(
                f"row {i}: feature index {int(idx[-1]) + 1} exceeds the "
                f"model's {m} features"
            )
    scores = model["intercept"] + np.asarray(d.X @ theta[: d.n_features]).ravel()
    probs = expit(scores)
    predictions = (probs > 0.5).astype(np.int64)

    lines = [f"{int(c)}\t{p:.6f}" for c, p in zip(predictions, probs)]
    metrics = evaluate(predictions, d.labels)
    lines += [
        f"# accuracy\t{metrics.accuracy:.6f}",
        f"# precision\t{metrics.precision:.6f}",
        f"# recall\t{metrics.recall:.6f}",
        f"# f1\t{metrics.f1:.6f}",
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_atomic(args.out, text)
        opts = _flag_options(args, ("model_file", "data", "out"))
        _write_manifest(args.out, "predict", opts,
                        dataset_digest=_digest(args.data),
                        model_digest=_digest(args.model_file))
    else:
        sys.stdout.write(text)
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    d = load_sparse(args.data)
    options = FitOptions()
    kappa = args.kappa or 0.0
    sigma2 = args.sigma2
    lambda_ = args.lambda_
    grids: dict[str, list[float]] = {}

    if lambda_ is None:
        if kappa == 0.0 and sigma2 is None:
            # nothing fixed: two-stage search over the (kappa, lambda) family
            kappas = default_kappa_grid(d)
            lambdas = default_lambda_grid(d, theta_l1=kappas[0], options=options)
            plan = CvPlan(grid_lambda=lambdas, grid_kappa_or_sigma=kappas,
                          n_folds=args.folds, seed=args.seed)
            stage = cv_two_stage_family(d, plan, options=options)
            kappa, lambda_ = stage.kappa, stage.lambda_
            grids = {"kappa": list(kappas), "lambda": list(lambdas)}
            reselect = args.noise_budget is not None
        else:
            lambdas = default_lambda_grid(
                d, theta_l1=kappa, theta_sigma2=sigma2, options=options
            )
            grids = {"lambda": list(lambdas)}
            reselect = True
        if reselect:
            # cross-validate the shift penalty at the (now fixed) feature
            # penalty, honoring the noise budget when one was given
            plan = CvPlan(grid_lambda=tuple(lambdas), n_folds=args.folds,
                          seed=args.seed, noise_budget=args.noise_budget)
            chosen = cv_select_lambda(
                d, plan, theta_l1=kappa, theta_sigma2=sigma2, options=options
            )
            lambda_ = chosen.lambda_

    fit = fit_robust(d, lambda_, theta_l1=kappa, theta_sigma2=sigma2, options=options)
    suspects = suspect_report(fit, d)
    nonzero_fraction = float(np.count_nonzero(fit.gamma)) / max(d.n_rows, 1)

    header = [
        f"# kappa={kappa:.17g}",
        f"# lambda={lambda_:.17g}",
        f"# sigma2={'' if sigma2 is None else format(sigma2, '.17g')}",
        f"# nonzero_gamma_fraction={nonzero_fraction:.17g}",
        f"# n_suspects={len(suspects)}",
    ]
    text = "\n".join(header) + "\n" + format_suspects(suspects)
    _write_atomic(args.out, text)
    opts = _flag_options(
        args, ("data", "out", "lambda_", "kappa", "sigma2", "noise_budget", "folds", "seed")
    )
    _write_manifest(args.out, "audit", opts, dataset_digest=_digest(args.data),
                    grids=grids, selected={"kappa": kappa, "lambda": lambda_,
                                           "sigma2": sigma2})
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    report = run_comparison(
        args.protocol,
        methods,
        replications=args.replications,
        seed=args.seed,
        scale=args.scale,
    )
    _write_atomic(args.out, format_report(report))
    opts = _flag_options(args, ("protocol", "methods", "replications", "seed", "scale", "out"))
    _write_manifest(args.out, "simulate", opts, failures=len(report.failures))
    return 0 if report.all_succeeded else 1


# ---------------------------------------------------------------------------
# parser


def _add_penalty_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lambda_", type=float, default=None,
                   help="L1 strength on the per-row shifts")
    p.add_argument("--kappa", type=float, default=None,
                   help="L1 strength on the feature coefficients")
    p.add_argument("--sigma2", type=float, default=None,
                   help="Gaussian prior variance on the feature coefficients")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftlr",
        description="Robust logistic regression with per-example shift parameters.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fit a model and write a model file")
    train.add_argument("--model", required=True,
                       choices=("standard", "robust", "flipping", "prefilter"))
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)
    _add_penalty_flags(train)
    train.add_argument("--k", type=int, default=None,
                       help="neighborhood size for the prefilter model")
    train.set_defaults(func=cmd_train)

    predict = sub.add_parser("predict", help="score rows with a saved model")
    predict.add_argument("--model-file", required=True)
    predict.add_argument("--data", required=True)
    predict.add_argument("--out", default=None,
                         help="write here instead of stdout")
    predict.set_defaults(func=cmd_predict)

    audit = sub.add_parser("audit", help="flag suspected label errors in a dataset")
    audit.add_argument("--data", required=True)
    audit.add_argument("--out", required=True)
    _add_penalty_flags(audit)
    audit.add_argument("--noise-budget", type=float, default=None,
                       help="max fraction of rows allowed a nonzero shift")
    audit.add_argument("--folds", type=int, default=5)
    audit.add_argument("--seed", type=int, default=0)
    audit.set_defaults(func=cmd_audit)

    simulate = sub.add_parser("simulate", help="run a named comparison protocol")
    simulate.add_argument("--protocol", required=True)
    simulate.add_argument("--methods", default="standard,robust")
    simulate.add_argument("--replications", type=int, default=None)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--scale", type=float, default=1.0)
    simulate.add_argument("--out", required=True)
    simulate.set_defaults(func=cmd_simulate)

    return parser


def _validate(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    if args.command == "train":
        if args.model == "robust" and args.lambda_ is None:
            parser.error("--model robust requires --lambda")
        if args.model == "prefilter" and args.k is None:
            parser.error("--model prefilter requires --k")
    if args.command == "simulate":
        if args.protocol not in PROTOCOLS:
            parser.error(
                f"unknown protocol {args.protocol!r}; "
                f"choose from: {', '.join(sorted(PROTOCOLS))}"
            )
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        bad = [m for m in methods if m not in METHODS]
        if bad:
            parser.error(f"unknown methods: {', '.join(bad)}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate(parser, args)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
