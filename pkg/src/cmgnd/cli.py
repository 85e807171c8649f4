"""Command-line entry point.

Exit codes: 0 success, 1 input error, 2 fit failure, 3 internal error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .ecm import FitConfig, ecm_fit, read_config_file
from .errors import ExperimentError, FitFailure, InputError, ParameterDomainError, SelectionFailure
from .family import as_spec, enumerate_family, select_by_bic
from .mixture import PARAM_KINDS, ConstraintSpec, MixtureModel, marginal_moments, sample_mixture
from .returns import density_curve, describe, load_return_series, read_column_csv
from .simulation import MOMENT_NAMES, ScenarioConfig, run_experiment

EXIT_OK, EXIT_INPUT, EXIT_FIT, EXIT_INTERNAL = 0, 1, 2, 3


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _parse_block(text):
    if text is None:
        return None
    try:
        return tuple(int(t) - 1 for t in text.split(","))
    except ValueError:
        raise InputError(f"--block expects 1-based indices like 2,3, got {text!r}") from None


def _load_config(path) -> FitConfig:
    return FitConfig.from_file(path) if path else FitConfig()


def _load_model(path) -> MixtureModel:
    doc = read_config_file(path)
    try:
        return MixtureModel.from_json(doc.get("model", doc))
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: not a model document ({exc})") from None


def _constraints(arg: str, K: int, block):
    p = Path(arg)
    if p.suffix.lower() in (".json", ".toml") or p.exists():
        return ConstraintSpec.from_json(read_config_file(p), K)
    return ConstraintSpec.from_code(arg, K, block)


def cmd_fit(args):
    _, x = read_column_csv(args.data, args.col)
    spec = _constraints(args.constraints, args.k, _parse_block(args.block))
    res = ecm_fit(x, args.k, spec, _load_config(args.config))
    doc = res.to_json()
    if args.out:
        Path(args.out).write_text(_dump_json(doc))
        print(f"logL {res.log_lik:.6g}  BIC {res.bic:.6g}  p {res.n_params}  "
              f"iterations {res.iterations}  converged {res.converged}")
    else:
        sys.stdout.write(_dump_json(doc))


def cmd_select(args):
    _, x = read_column_csv(args.data, args.col)
    block = _parse_block(args.block)
    if args.family in (None, "default"):
        palette = args.palette.split(",") if args.palette else PARAM_KINDS
        candidates = enumerate_family(args.k, palette, block)
    else:
        listed = read_config_file(args.family)
        if isinstance(listed, dict):
            listed = listed.get("candidates", [])
        candidates = [as_spec(c, args.k, block) for c in listed]
    report = select_by_bic(x, candidates, args.k, _load_config(args.config), block)
    print(report.to_table())
    if args.out:
        Path(args.out).write_text(_dump_json(report.to_json()))


def cmd_simulate(args):
    sc = ScenarioConfig.from_file(args.scenario)
    if args.reps is not None:
        sc.reps = args.reps
    if args.jobs is not None:
        sc.n_jobs = args.jobs
    result = run_experiment(args.experiment, sc)
    _emit(result.to_csv(), args.out)
    if args.json:
        Path(args.json).write_text(_dump_json(result.to_json()))
    if args.out:
        print(result.to_table())


def cmd_sample(args):
    m = _load_model(args.model)
    x = sample_mixture(m, args.n, np.random.default_rng(args.seed))
    _emit("index,x\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(x.tolist())), args.out)


def cmd_moments(args):
    m = _load_model(args.model)
    values = marginal_moments(m)
    _emit("moment,value\n" + "".join(f"{n},{float(v)!r}\n" for n, v in zip(MOMENT_NAMES, values)), args.out)


def cmd_returns(args):
    series = load_return_series(args.prices, args.col, args.ticker)
    csv_text = "date,return\n" + "".join(f"{d},{r!r}\n" for d, r in zip(series.dates, series.returns.tolist()))
    _emit(csv_text, args.out)
    if args.describe:
        table = describe(series.returns).to_table(series.ticker)
        print(table, file=sys.stdout if args.out else sys.stderr)


def cmd_density(args):
    m = _load_model(args.model)
    try:
        lo, hi, pts = args.grid.split(",")
        lo, hi, pts = float(lo), float(hi), int(pts)
    except ValueError:
        raise InputError(f"--grid expects lo,hi,points, got {args.grid!r}") from None
    _emit(density_curve(m, lo, hi, pts).to_csv(), args.out)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cmgnd", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one constrained mixture")
    p.add_argument("data")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--constraints", default="UUU", help="model code (e.g. CCU) or constraints JSON file")
    p.add_argument("--block", help="1-based components tied by C letters, e.g. 2,3 (default: all)")
    p.add_argument("--col", help="data column name or index (default: last)")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="fit a model family and rank by BIC")
    p.add_argument("data")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--family", default="default", help="'default' or a JSON list of codes/constraint dicts")
    p.add_argument("--palette", help="comma list of mu,sigma,nu allowed to be constrained")
    p.add_argument("--block")
    p.add_argument("--col")
    p.add_argument("--config")
    p.add_argument("--out", help="write the selection report JSON here")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="run a simulation experiment")
    p.add_argument("--scenario", required=True)
    p.add_argument("--experiment", required=True, choices=["rmse", "bic", "moments"])
    p.add_argument("--reps", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--json", help="also write JSON here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sample", help="draw from a mixture model")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("moments", help="mean, variance, skewness and kurtosis of a mixture model")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("returns", help="percentage log-returns from a price CSV")
    p.add_argument("prices")
    p.add_argument("--col")
    p.add_argument("--ticker")
    p.add_argument("--describe", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_returns)

    p = sub.add_parser("density", help="mixture density on a grid")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", required=True, help="lo,hi,points (write --grid=-5,5,200 when lo is negative)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_density)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except (InputError, ParameterDomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FitFailure, SelectionFailure, ExperimentError) as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
