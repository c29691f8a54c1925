"""``spice`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

import argparse
import json
import os
import sys
import warnings

import numpy as np

from . import bench, fourier, linear_gaussian, nnet
from .discrete import check_full_column_rank
from .errors import ConfigurationError, SpiceError
from .estimate import ace
from .scm import AdditiveMechanism, manifest
from .spicenet import EstimateConfig


def _json_arg(text):
    """Inline JSON object or the path of a JSON file."""
    if text.lstrip().startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid inline JSON: {exc}")
    try:
        with open(text) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{text} is not valid JSON: {exc}")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"expected comma-separated numbers, got {text!r}")


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _emit(doc, path=None):
    text = json.dumps(doc, indent=2, sort_keys=True, default=_default)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    print(text)


def _run_config(args):
    if args.config:
        doc = _json_arg(args.config)
    else:
        doc = {}
    flags = {"benchmark": args.benchmark, "n_train": args.n, "n_test": args.n_test,
             "repetitions": args.reps, "seed": args.seed}
    if getattr(args, "methods", None):
        flags["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if getattr(args, "data", None):
        flags["data"] = args.data
    if getattr(args, "mechanism", None):
        flags["mechanism"] = args.mechanism
    doc.update({k: v for k, v in flags.items() if v is not None})
    if args.out:
        doc["output_dir"] = args.out
    if getattr(args, "workers", None):
        doc["workers"] = args.workers
    return bench.RunConfig.from_dict(doc)


def cmd_simulate(args):
    cfg = _run_config(args)
    if cfg.output_dir is None:
        raise ConfigurationError("--out is required")
    files = bench.simulate(cfg)
    _emit({"files": files})


def cmd_bench(args):
    cfg = _run_config(args)
    report = bench.run_bench(cfg)
    if cfg.output_dir:
        bench.write_bench_outputs(report, cfg.output_dir)
    for row in report.summary_rows():
        med = "nan" if row["median"] is None else f"{row['median']:.4f}"
        sd = "nan" if row["sd"] is None else f"{row['sd']:.4f}"
        print(f"{row['method']:<26} median {med}  sd {sd}  ok {row['n_ok']}  "
              f"failed {row['n_failed']}")
    for method, res in report.results.items():
        for err in res["errors"]:
            print(f"  {method} rep {err['repetition']}: {err['error']}", file=sys.stderr)


def cmd_estimate(args):
    data = bench.ingest(args.data, _json_arg(args.schema) if args.schema else None,
                        args.treatment_kind)
    mech = bench.load_mechanism(args.mechanism) if args.mechanism else None
    est_cfg = EstimateConfig.from_dict(_json_arg(args.config) if args.config else {})
    est = bench.fit_method(args.method, est_cfg, mech, data, args.seed)
    if args.grid:
        grid = np.array(_floats(args.grid))
    elif est.treatment_kind == "binary":
        grid = np.array([0.0, 1.0])
    else:
        grid = np.linspace(*est.x_hull, 25)
    values, outside = est.evaluate(grid, return_flags=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        effect = ace(est, data)
    doc = {"method": args.method, "grid": grid, "values": values,
           "extrapolated": outside, "ace": effect,
           "warnings": [str(w.message) for w in caught],
           "provenance": {k: v for k, v in est.provenance.items()
                          if not k.startswith("grid")}}
    if args.save_model:
        gen = est.artifacts.get("generator")
        if gen is None:
            raise ConfigurationError(f"method {args.method} has no generator to save")
        nnet.save_model(args.save_model, gen.spec, gen.state,
                        {"noise_head": gen.head.describe(), "seed": args.seed})
        doc["model"] = os.path.abspath(args.save_model)
    _emit(doc, args.out)


def cmd_ingest(args):
    data = bench.ingest(args.path, _json_arg(args.schema) if args.schema else None,
                        args.treatment_kind)
    doc = manifest(data, "external", {"source": data.source["path"]})
    _emit(doc, args.out)


def cmd_report(args):
    rows = bench.merge_reports(args.reports)
    if args.out:
        bench.write_rows(rows, args.out)
    for path in args.reports:
        rep = bench.BenchReport.load(path)
        for row in rep.summary_rows():
            med = "nan" if row["median"] is None else f"{row['median']:.4f}"
            print(f"{os.path.basename(path):<24} {row['method']:<26} median {med}  "
                  f"ok {row['n_ok']}")
    print(f"{len(rows)} per-seed rows", file=sys.stderr)


def cmd_check_mechanism(args):
    if args.mode == "rank":
        if not args.mechanism:
            raise ConfigurationError("--mechanism is required for mode rank")
        mech = bench.load_mechanism(args.mechanism)
        if isinstance(mech, AdditiveMechanism):
            doc = check_full_column_rank(mech.loadings).to_dict()
            doc["note"] = "rank of the loading matrix A"
        else:
            doc = check_full_column_rank(mech).to_dict()
        _emit(doc)
        return
    if not args.density:
        raise ConfigurationError(f"--density is required for mode {args.mode}")
    density = fourier.DensitySpec.from_dict(_json_arg(args.density))
    status, reason = fourier.infinitely_divisible(density.family)
    if args.mode == "fourier":
        lo, hi = _floats(args.t_range)
        scan = fourier.scan_for_zeros(density, (lo, hi), args.step, args.floor)
        doc = {"density": density.to_dict(), "scan": scan.to_dict(),
               "infinitely_divisible": status, "catalog_reason": reason}
    else:
        w_grid = _floats(args.w_grid)
        peak, values = fourier.noninjective_witness(density, w_grid, a=args.a)
        doc = {"density": density.to_dict(), "g": "u**2", "delta": "sign(u)", "a": args.a,
               "w_grid": w_grid, "values": values, "max_abs": peak}
    _emit(doc)


def cmd_linear_gaussian(args):
    params = linear_gaussian.LinearScmParams.from_dict(
        _json_arg(args.params) if args.params else {})
    _emit(linear_gaussian.report(params, args.sigma_e, args.n, args.seed))


def build_parser():
    parser = argparse.ArgumentParser(prog="spice", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p, methods=True):
        p.add_argument("--config", help="JSON run config (file or inline)")
        p.add_argument("--benchmark", help="A, B, C or D")
        p.add_argument("--n", type=int, help="training rows")
        p.add_argument("--n-test", type=int, help="test rows")
        p.add_argument("--reps", type=int, help="repetitions")
        p.add_argument("--seed", type=int, help="seed base")
        p.add_argument("--out", help="output directory")
        if methods:
            p.add_argument("--methods", help="comma-separated method names")
            p.add_argument("--data", help="external CSV instead of a benchmark")
            p.add_argument("--mechanism", help="mechanism JSON for external data")
            p.add_argument("--workers", type=int, help="parallel worker processes")

    p = sub.add_parser("simulate", help="write benchmark train/test CSVs")
    run_flags(p, methods=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run a seeded MSE benchmark grid")
    run_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("estimate", help="fit one method on a CSV and print the estimate")
    p.add_argument("--data", required=True)
    p.add_argument("--method", required=True, choices=bench.METHODS)
    p.add_argument("--mechanism")
    p.add_argument("--config", help="estimator config JSON (file or inline)")
    p.add_argument("--schema", help="column mapping JSON (file or inline)")
    p.add_argument("--treatment-kind", default="continuous", choices=("continuous", "binary"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", help="comma-separated treatment values")
    p.add_argument("--out")
    p.add_argument("--save-model")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("ingest", help="validate a CSV and print its manifest")
    p.add_argument("path")
    p.add_argument("--schema")
    p.add_argument("--treatment-kind", default="continuous", choices=("continuous", "binary"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("report", help="merge bench reports into one per-seed table")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("check-mechanism", help="rank, Fourier or witness checks")
    p.add_argument("--mode", required=True, choices=("rank", "fourier", "witness"))
    p.add_argument("--mechanism")
    p.add_argument("--density")
    p.add_argument("--t-range", default="-10,10")
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--floor", type=float, default=fourier.DEFAULT_FLOOR)
    p.add_argument("--a", type=float, default=2.0)
    p.add_argument("--w-grid", default="-1,0,1,2")
    p.set_defaults(func=cmd_check_mechanism)

    p = sub.add_parser("linear-gaussian", help="closed-form slopes and bias")
    p.add_argument("--params", help="parameter JSON (file or inline); defaults to all ones")
    p.add_argument("--sigma-e", type=float, help="error variance used by the correction")
    p.add_argument("--n", type=int, help="Monte-Carlo draws instead of population moments")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_linear_gaussian)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except SpiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
