"""Benchmark harness: simulation to disk, CSV ingestion, seeded MSE grids and report merging.

Every (method, repetition) cell rebuilds its own data and estimator from
seeds, so cells can run in any order or in parallel without changing the
report.
"""

import csv
import hashlib
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy

from . import __version__
from .discrete import DiscreteMechanism, discrete_estimate
from .errors import ConfigurationError, IngestionError, MergeError, SpiceError
from .estimate import mse_against, mse_eval
from .linear_gaussian import corrected_estimate
from .scm import (AdditiveMechanism, Dataset, benchmark_id, benchmark_spec, manifest,
                  sample_dataset, write_csv, write_manifest)
from .spicenet import METHODS as NEURAL_METHODS
from .spicenet import EstimateConfig, estimate

METHODS = NEURAL_METHODS + ("linear_gaussian_corrected", "discrete_matrix_adjust")
CONFIG_KEYS = {"benchmark", "data", "mechanism", "treatment_kind", "n_train", "n_test",
               "repetitions", "seed", "methods", "overrides", "output_dir", "workers"}


@dataclass
class RunConfig:
    """What to run.

    Exactly one of ``benchmark`` (a built-in model id) and ``data`` (path of
    an external CSV) is set.  ``overrides`` maps a method name, or ``"all"``,
    to keyword overrides of `EstimateConfig`.  ``mechanism`` is the path of
    a mechanism JSON file for external data.
    """

    benchmark: str = None
    methods: tuple = ("adj_u", "adj_w", "no_adj", "spice_net")
    n_train: int = 2000
    n_test: int = 500
    repetitions: int = 20
    seed: int = 0
    overrides: dict = field(default_factory=dict)
    output_dir: str = None
    data: str = None
    mechanism: str = None
    treatment_kind: str = "continuous"
    workers: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if (self.benchmark is None) == (self.data is None):
            raise ConfigurationError("set exactly one of 'benchmark' and 'data'")
        if self.benchmark is not None:
            self.benchmark = benchmark_id(self.benchmark)
        if not self.methods:
            raise ConfigurationError("methods must be non-empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigurationError(f"unknown method(s) {bad}; choose from {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigurationError("methods must not repeat")
        if int(self.repetitions) < 1:
            raise ConfigurationError("repetitions must be at least 1")
        if int(self.n_test) < 1 or int(self.n_train) < 1:
            raise ConfigurationError("n_train and n_test must be at least 1")
        if int(self.workers) < 1:
            raise ConfigurationError("workers must be at least 1")
        for key in self.overrides:
            if key != "all" and key not in METHODS:
                raise ConfigurationError(f"override for unknown method {key!r}")

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - CONFIG_KEYS
        if unknown:
            raise ConfigurationError(f"unknown config key(s) {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            raise ConfigurationError("config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self):
        out = asdict(self)
        out["methods"] = list(self.methods)
        return out

    def result_dict(self):
        """Fields that determine results (no paths to outputs, no parallelism)."""
        out = self.to_dict()
        out.pop("output_dir")
        out.pop("workers")
        return out

    def digest(self):
        blob = json.dumps(self.result_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def estimate_config(self, method):
        merged = {}
        for key in ("all", method):
            for k, v in self.overrides.get(key, {}).items():
                if isinstance(v, dict) and isinstance(merged.get(k), dict):
                    merged[k] = {**merged[k], **v}
                else:
                    merged[k] = v
        return EstimateConfig.from_dict(merged)


def environment():
    return {"python": sys.version.split()[0], "numpy": np.__version__,
            "scipy": scipy.__version__, "platform": platform.platform(),
            "package": __version__}


# ---------------------------------------------------------------- ingestion

def _default_schema(header):
    pick = lambda prefix: [c for c in header if c == prefix or c.startswith(prefix + "_")]
    schema = {"w": pick("w"), "x": pick("x"), "y": "y" if "y" in header else None,
              "u": pick("u")}
    return schema


def ingest(path, schema=None, treatment_kind="continuous"):
    """Read a CSV into a `Dataset`.

    ``schema`` maps ``w``, ``x``, ``u`` to lists of column names and ``y``
    to one name; by default columns are matched by the ``w_1..``, ``x_1..``,
    ``y``, ``u_1..`` naming (bare ``w``, ``x``, ``u`` also work).  Every
    cell must parse as a finite number.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError as exc:
        raise IngestionError(f"{path} is not a text file: {exc}")
    if not rows:
        raise IngestionError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise IngestionError("duplicate column names in header")
    schema = dict(schema or _default_schema(header))
    for key in ("w", "x"):
        cols = schema.get(key) or []
        schema[key] = [cols] if isinstance(cols, str) else list(cols)
        if not schema[key]:
            raise IngestionError(f"no '{key}' column found; header is {header}")
    if not schema.get("y"):
        raise IngestionError(f"no 'y' column found; header is {header}")
    u_cols = schema.get("u") or []
    schema["u"] = [u_cols] if isinstance(u_cols, str) else list(u_cols)
    wanted = schema["w"] + schema["x"] + [schema["y"]] + schema["u"]
    missing = [c for c in wanted if c not in header]
    if missing:
        raise IngestionError(f"columns {missing} are not in the header {header}")
    index = [header.index(c) for c in wanted]
    body = rows[1:]
    if not body:
        raise IngestionError(f"{path} has no data rows")
    table = np.empty((len(body), len(wanted)))
    for r, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise IngestionError(f"expected {len(header)} cells, found {len(row)}", row=r)
        for j, (col, i) in enumerate(zip(wanted, index)):
            try:
                v = float(row[i])
            except ValueError:
                raise IngestionError(f"cell {row[i]!r} is not numeric", row=r, column=col)
            if not np.isfinite(v):
                raise IngestionError(f"cell {row[i]!r} is not finite", row=r, column=col)
            table[r - 1, j] = v
    d, p = len(schema["w"]), len(schema["x"])
    w, x, y = table[:, :d], table[:, d:d + p], table[:, d + p]
    u = table[:, d + p + 1:] if schema["u"] else None
    if treatment_kind == "binary" and not set(np.unique(x).tolist()) <= {0.0, 1.0}:
        raise IngestionError("binary treatment column holds values other than 0 and 1")
    return Dataset(w, x, y, u, None, None, treatment_kind,
                   {"model": "external", "path": os.path.abspath(path), "schema": schema})


def load_mechanism(path):
    """Additive (``{"kind": "additive", "A": .., "noise": ..}``) or discrete (``{"matrix": ..}``)."""
    with open(path) as fh:
        doc = json.load(fh)
    if "matrix" in doc:
        return DiscreteMechanism.from_dict(doc)
    if doc.get("kind", "additive") == "additive":
        return AdditiveMechanism.from_dict(doc)
    raise ConfigurationError(f"unrecognised mechanism kind {doc.get('kind')!r}")


# ---------------------------------------------------------------- simulate

def simulate(cfg, output_dir=None):
    """Write train/test CSVs and manifests for each repetition; returns the file list."""
    if cfg.benchmark is None:
        raise ConfigurationError("simulate needs a built-in benchmark")
    out = output_dir or cfg.output_dir
    if out is None:
        raise ConfigurationError("simulate needs an output directory")
    os.makedirs(out, exist_ok=True)
    spec = benchmark_spec(cfg.benchmark)
    files = []
    for rep in range(int(cfg.repetitions)):
        seed = int(cfg.seed) + rep
        for split, n in (("train", cfg.n_train), ("test", cfg.n_test)):
            data = sample_dataset(spec, int(n), seed, split=split)
            stem = os.path.join(out, f"{cfg.benchmark}_{split}_rep{rep:03d}")
            write_csv(data, stem + ".csv")
            write_manifest(manifest(data, spec.name, {"split": split, "repetition": rep}),
                           stem + ".json")
            files.append(stem + ".csv")
    return files


# ---------------------------------------------------------------- bench

@dataclass
class BenchReport:
    config: dict
    config_hash: str
    results: dict
    cells: list
    environment: dict
    wall_clock: float = 0.0

    def to_dict(self, timing=True):
        out = {"config": self.config, "config_hash": self.config_hash,
               "results": self.results, "cells": self.cells, "environment": self.environment}
        if timing:
            out["wall_clock"] = self.wall_clock
        else:
            out["cells"] = [{k: v for k, v in c.items() if k != "seconds"} for c in self.cells]
        return out

    def canonical_json(self):
        """JSON without timing fields; identical across reruns of the same config."""
        return json.dumps(self.to_dict(timing=False), sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        try:
            return cls(doc["config"], doc["config_hash"], doc["results"], doc["cells"],
                       doc.get("environment", {}), doc.get("wall_clock", 0.0))
        except KeyError as exc:
            raise MergeError(f"{path} is not a bench report (missing {exc})")

    def summary_rows(self):
        rows = []
        for method, r in self.results.items():
            rows.append({"method": method, "median": r["median"], "sd": r["sd"],
                         "n_ok": r["n_ok"], "n_failed": len(r["errors"])})
        return rows

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.DictWriter(fh, ["method", "median", "sd", "n_ok", "n_failed"])
            out.writeheader()
            out.writerows(self.summary_rows())

    def per_seed_rows(self):
        label = self.config.get("benchmark") or self.config.get("data")
        return [{"benchmark": label, "method": c["method"], "repetition": c["repetition"],
                 "seed": c["seed"], "mse": c["mse"]} for c in self.cells]


def aggregate(values):
    """Median and population standard deviation of the finite entries."""
    ok = [v for v in values if v is not None]
    if not ok:
        return None, None
    return float(np.median(ok)), float(np.std(ok))


def _bench_data(cfg, seed):
    if cfg.benchmark is not None:
        spec = benchmark_spec(cfg.benchmark)
        train = sample_dataset(spec, int(cfg.n_train), seed, "train")
        test = sample_dataset(spec, int(cfg.n_test), seed, "test")
        return spec.mechanism, train, test.x[:, 0]
    data = ingest(cfg.data, treatment_kind=cfg.treatment_kind)
    mech = load_mechanism(cfg.mechanism) if cfg.mechanism else None
    return mech, data, data.x[:, 0]


def fit_method(method, est_cfg, mech, train, seed):
    """Fit any bench method on ``train``; ``mech`` is the known error mechanism."""
    if method in NEURAL_METHODS:
        if method == "spice_net" and not isinstance(mech, AdditiveMechanism):
            raise ConfigurationError("spice_net needs an additive error mechanism")
        return estimate(method, train, mech, est_cfg, seed=seed)
    if method == "linear_gaussian_corrected":
        if not isinstance(mech, AdditiveMechanism) or mech.loadings.shape != (1, 1):
            raise ConfigurationError("linear_gaussian_corrected needs a univariate additive mechanism")
        # W = a U + E: the error variance is that of E, whatever the loading
        return corrected_estimate(train, float(np.ravel(mech.noise.variance)[0]))
    if not isinstance(mech, DiscreteMechanism):
        raise ConfigurationError("discrete_matrix_adjust needs a discrete error mechanism")
    if train.d != 1:
        raise ConfigurationError("discrete_matrix_adjust needs a single proxy column")
    return discrete_estimate(train.w[:, 0], train.x[:, 0], train.y, mech,
                             "binary" if train.treatment_kind == "binary" else None)


def run_cell(cfg_dict, method, rep):
    """One (method, repetition) cell; never raises."""
    cfg = RunConfig.from_dict(cfg_dict)
    seed = int(cfg.seed) + rep
    cell = {"method": method, "repetition": rep, "seed": seed, "mse": None, "error": None}
    start = time.perf_counter()
    try:
        mech, train, test_x = _bench_data(cfg, seed)
        est = fit_method(method, cfg.estimate_config(method), mech, train, seed)
        if cfg.benchmark is not None:
            cell["mse"] = float(mse_eval(est, cfg.benchmark, test_x))
        else:
            if train.u_hidden is None:
                raise ConfigurationError(
                    "external data without a u column has no reference for the MSE")
            reference = estimate("adj_u", train, None, cfg.estimate_config("adj_u"), seed=seed)
            cell["mse"] = float(mse_against(est, reference, test_x))
        prov = est.provenance
        cell["provenance"] = {k: prov[k] for k in
                              ("config_hash", "generator_final_loss", "noise_head", "slope")
                              if k in prov}
    except (SpiceError, ValueError, ArithmeticError, OSError) as exc:
        cell["error"] = f"{type(exc).__name__}: {exc}"
    cell["seconds"] = time.perf_counter() - start
    return cell


def run_bench(cfg, workers=None):
    """Run the full (method x repetition) grid and aggregate it."""
    workers = int(workers or cfg.workers)
    start = time.perf_counter()
    cfg_dict = cfg.to_dict()
    grid = [(m, r) for m in cfg.methods for r in range(int(cfg.repetitions))]
    if workers == 1:
        cells = [run_cell(cfg_dict, m, r) for m, r in grid]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_cell, cfg_dict, m, r) for m, r in grid]
            cells = [f.result() for f in futures]
    results = {}
    for method in cfg.methods:
        mine = [c for c in cells if c["method"] == method]
        values = [c["mse"] for c in mine]
        median, sd = aggregate(values)
        results[method] = {"median": median, "sd": sd, "per_seed": values,
                           "n_ok": sum(v is not None for v in values),
                           "errors": [{"repetition": c["repetition"], "error": c["error"]}
                                      for c in mine if c["error"]]}
    return BenchReport(cfg.result_dict(), cfg.digest(), results, cells, environment(),
                       time.perf_counter() - start)


def write_bench_outputs(report, output_dir):
    os.makedirs(output_dir, exist_ok=True)
    report.save(os.path.join(output_dir, "report.json"))
    report.write_csv(os.path.join(output_dir, "summary.csv"))
    write_rows(report.per_seed_rows(), os.path.join(output_dir, "per_seed.csv"))


def write_rows(rows, path):
    fields = ["report", "benchmark", "method", "repetition", "seed", "mse"]
    fields = [f for f in fields if rows and f in rows[0]]
    with open(path, "w", newline="") as fh:
        out = csv.DictWriter(fh, fields)
        out.writeheader()
        out.writerows(rows)


def merge_reports(paths):
    """Stack the per-seed MSEs of compatible reports into one table.

    Reports are compatible when they share the data source and the train
    and test sizes.
    """
    if not paths:
        raise ConfigurationError("no reports given")
    reports = [BenchReport.load(p) for p in paths]
    key = lambda r: (r.config.get("benchmark"), r.config.get("data"),
                     r.config.get("n_train"), r.config.get("n_test"))
    first = key(reports[0])
    for path, rep in zip(paths, reports):
        if key(rep) != first:
            raise MergeError(f"{path} was run on {key(rep)}, expected {first}")
    rows = []
    for path, rep in zip(paths, reports):
        for row in rep.per_seed_rows():
            rows.append({"report": os.path.basename(path), **row})
    return rows
