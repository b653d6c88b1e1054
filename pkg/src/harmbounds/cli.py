"""Command-line interface: bound estimation on CSV trial data and the
Monte-Carlo simulation harness. All commands are deterministic given --seed,
independent of --threads."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .classifiers import ClassifierSpec, cv_misclassification
from .crossfit import crossfit_estimate, estimate_fixed_partition
from .dataset import ColumnSchema, load_csv
from .errors import HarmboundsError
from .partitioning import naive_partition
from .simulation import Scenario, run_monte_carlo, run_sigma_sweep

CLASSIFIERS = ("naive", "logit", "gnb", "knn", "forest")


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--alpha", type=float, default=0.25)
    parser.add_argument("--ci-draws", type=int, default=10_000)
    parser.add_argument("--output", type=str, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="harmbounds",
        description="Partition-based interval estimation of the treatment harm rate.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate bounds from a trial CSV")
    est.add_argument("--input", required=True)
    est.add_argument("--outcome-col", default="y")
    est.add_argument("--arm-col", default="a")
    est.add_argument("--covariate-cols", default=None,
                     help="comma list or glob of covariate columns (default: all others)")
    est.add_argument("--favorable-value", default=None,
                     help="raw outcome value mapped to +1")
    est.add_argument("--classifier", choices=CLASSIFIERS, default="forest")
    est.add_argument("--calibrate", choices=("none", "isotonic", "platt"), default="none")
    est.add_argument("--k", type=int, default=2, help="cross-fitting folds")
    est.add_argument("--ci-seed", type=int, default=None,
                     help="override the seed of the interval simulation only")
    est.add_argument("--mcr-folds", type=int, default=5)
    _add_common(est)

    sim = sub.add_parser("simulate", help="run the Monte-Carlo study")
    sim.add_argument("--scenario", type=int, choices=(1, 2), default=1)
    sim.add_argument("--n", type=int, default=500)
    sim.add_argument("--sigma", type=float, default=1.0)
    sim.add_argument("--reps", type=int, default=200)
    sim.add_argument("--classifier", choices=CLASSIFIERS, default="forest",
                     help="classifier evaluated next to the naive/oracle references")
    sim.add_argument("--calibrate", choices=("none", "isotonic", "platt"), default="none")
    sim.add_argument("--k", type=int, default=2)
    sim.add_argument("--sweep-sigma", default=None, metavar="LO:HI:STEPS",
                     help="emit per-sigma bound curves instead of a single table")
    sim.add_argument("--no-ci", action="store_true", help="skip interval simulation")
    _add_common(sim)
    return parser


def _json_dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write(text: str, path: str | None):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def cmd_estimate(args) -> int:
    schema = ColumnSchema(
        outcome=args.outcome_col,
        arm=args.arm_col,
        covariates=args.covariate_cols,
        favorable=args.favorable_value,
    )
    data = load_csv(args.input, schema)
    data.require_both_arms()
    rng = np.random.default_rng(args.seed)
    mcr = None
    if args.classifier == "naive":
        result = estimate_fixed_partition(
            data, naive_partition(), args.alpha, rng, args.ci_draws,
            ci_seed=args.ci_seed,
        )
    else:
        spec = ClassifierSpec(args.classifier)
        result = crossfit_estimate(
            data, args.k, spec, calibrate=args.calibrate, alpha=args.alpha,
            rng=rng, ci_draws=args.ci_draws, ci_seed=args.ci_seed,
        )
        mcr_rngs = np.random.default_rng(args.seed + 1).spawn(2)
        mcr = {
            "treated": cv_misclassification(data.restrict(1), spec, args.mcr_folds, mcr_rngs[0]),
            "control": cv_misclassification(data.restrict(0), spec, args.mcr_folds, mcr_rngs[1]),
        }
    payload = {
        "command": "estimate",
        "version": __version__,
        "seed": args.seed,
        "config": {
            "input": args.input,
            "classifier": args.classifier,
            "calibrate": args.calibrate,
            "k_folds": args.k,
            "alpha": args.alpha,
            "ci_draws": args.ci_draws,
        },
        "n": data.n,
        "p": data.p,
        "result": result.to_json(),
        "mcr": mcr,
    }
    _write(_json_dump(payload), args.output)
    return 0


SIM_CSV_COLUMNS = (
    "method", "theta", "plug_lower", "plug_upper", "plug_bias", "plug_width",
    "plug_covr", "part_lower", "part_upper", "part_bias", "part_width",
    "part_covr", "tmcr", "cmcr",
)


def _simulation_csv(results) -> str:
    lines = ["sigma," + ",".join(SIM_CSV_COLUMNS)]
    for res in results:
        for row in res.rows:
            cells = [_fmt(res.sigma_eps)] + [_fmt(getattr(row, c)) for c in SIM_CSV_COLUMNS]
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


SWEEP_COLUMNS = (
    "sigma", "theta", "naive_lower", "naive_upper", "oracle_lower", "oracle_upper",
    "plugin_lower", "plugin_upper", "partition_lower", "partition_upper",
    "partition_band_lower", "partition_band_upper",
)


def _sweep_csv(results, classifier: str, alpha: float) -> str:
    lines = [",".join(SWEEP_COLUMNS)]
    for res in results:
        cells = {c: None for c in SWEEP_COLUMNS}
        cells["sigma"] = res.sigma_eps
        cells["theta"] = res.truths["theta"]
        for row in res.rows:
            if row.method == "naive":
                cells["naive_lower"], cells["naive_upper"] = row.part_lower, row.part_upper
            elif row.method == "oracle":
                cells["oracle_lower"], cells["oracle_upper"] = row.part_lower, row.part_upper
            elif row.method == classifier:
                cells["plugin_lower"], cells["plugin_upper"] = row.plug_lower, row.plug_upper
                cells["partition_lower"], cells["partition_upper"] = row.part_lower, row.part_upper
                block = row.ci.get(alpha)
                if block:
                    cells["partition_band_lower"] = block["mean_extended"][0]
                    cells["partition_band_upper"] = block["mean_extended"][1]
        lines.append(",".join(_fmt(cells[c]) for c in SWEEP_COLUMNS))
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    methods = ("naive", "oracle")
    if args.classifier != "naive":
        methods = methods + (args.classifier,)
    common = dict(
        reps=args.reps, K=args.k, alpha=args.alpha, seed=args.seed,
        with_ci=not args.no_ci, ci_draws=args.ci_draws, calibrate=args.calibrate,
        threads=args.threads,
    )
    if args.sweep_sigma:
        try:
            lo, hi, steps = args.sweep_sigma.split(":")
            sigmas = np.linspace(float(lo), float(hi), int(steps))
        except ValueError:
            raise HarmboundsError(
                f"--sweep-sigma expects LO:HI:STEPS, got {args.sweep_sigma!r}"
            ) from None
        results = run_sigma_sweep(
            args.scenario, sigmas, args.n, methods=methods, **common
        )
        csv_text = _sweep_csv(results, args.classifier, args.alpha)
    else:
        scenario = Scenario.from_id(args.scenario, args.sigma)
        results = [run_monte_carlo(scenario, args.n, methods=methods, **common)]
        csv_text = _simulation_csv(results)

    payload = {
        "command": "simulate",
        "version": __version__,
        "config": {
            "scenario": args.scenario,
            "n": args.n,
            "sigma": args.sigma,
            "sweep_sigma": args.sweep_sigma,
            "reps": args.reps,
            "classifier": args.classifier,
            "calibrate": args.calibrate,
            "k_folds": args.k,
            "alpha": args.alpha,
            "ci_draws": args.ci_draws,
            "seed": args.seed,
        },
        "results": [r.to_json() for r in results],
    }
    if args.output:
        _write(_json_dump(payload), args.output + ".json")
        _write(csv_text, args.output + ".csv")
    else:
        sys.stdout.write(_json_dump(payload))
        sys.stdout.write(csv_text)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "estimate":
            return cmd_estimate(args)
        return cmd_simulate(args)
    except HarmboundsError as exc:
        error = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        row = getattr(exc, "row", None)
        if row is not None:
            error["error"]["row"] = row
        sys.stderr.write(_json_dump(error))
        return 1


if __name__ == "__main__":
    sys.exit(main())
