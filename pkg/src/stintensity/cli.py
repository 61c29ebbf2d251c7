"""Command-line interface.

Subcommands: ``bin``, ``estimate``, ``cv``, ``synth`` and ``baselines``.
Settings come from defaults, then an optional ``--config`` JSON file, then
explicit flags.  Errors are written to stderr as one JSON object; exit code
1 means invalid input, 2 means bad usage.
"""
from __future__ import annotations

import argparse
import csv
import functools
import json
import sys
from dataclasses import dataclass, field, fields
from datetime import date
from pathlib import Path

import numpy as np

from . import datasets
from .cv import CvPlan, default_weight_grid, select_weights
from .graph import build_laplacian, load_adjacency
from .ingest import SlotMapper, bin_events, read_counts, read_events, scale_kind3, write_counts, write_intensity
from .model import DimensionError, SourceGrid, ValidationError
from .optimize import OptimizerConfig, fit, initialize_theta
from .synthetic import ESTIMATORS, run_replicate, sample_counts
from .transition import KindFractions

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a run needs; file paths left as None mean the bundled files."""

    out: str = "."
    seed: int = 0
    regions: str | None = None
    adjacency: str | None = None
    population: str | None = None
    pairs: str | None = None
    counts: str | None = None
    time_slots: int = 24
    slot_mode: str = "hour"
    timezone: str = "UTC"
    start_date: str | None = None
    temporal_wraparound: bool = True
    fractions: tuple = (0.03, 0.47, 0.50)
    kind3_multiplier: float = 1.0
    w_s: float | None = None
    w_t: float | None = None
    holdout_fraction: float = 0.2
    num_splits: int = 5
    grid_lo: float = -3.0
    grid_hi: float = 3.0
    grid_step: float = 0.5
    jobs: int = 1
    optimizer: dict = field(default_factory=dict)

    @classmethod
    def build(cls, config_path, overrides: dict) -> "RunConfig":
        values = {}
        if config_path:
            try:
                with open(config_path) as fh:
                    values = json.load(fh)
            except OSError as err:
                raise ValidationError(f"cannot read config: {err.strerror}", "config") from None
            except json.JSONDecodeError as err:
                raise ValidationError(f"config is not valid JSON: {err}", "config") from None
            if not isinstance(values, dict):
                raise ValidationError("config must be a JSON object", "config")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValidationError(f"unknown config keys {unknown}", unknown[0])
        values.update({k: v for k, v in overrides.items() if v is not None and k in known})
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self):
        for name in ("regions", "adjacency", "population", "pairs", "counts"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ValidationError(f"file not found: {path}", name)
        if not isinstance(self.time_slots, int) or self.time_slots < 1:
            raise ValidationError("time_slots must be a positive integer", "time_slots")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError("seed must be a non-negative integer", "seed")
        if len(self.fractions) != 3:
            raise ValidationError("fractions needs three values", "fractions")
        for name in ("w_s", "w_t"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValidationError(f"{name} must be positive", name)
        if self.jobs < 1:
            raise ValidationError("jobs must be positive", "jobs")
        if self.grid_step <= 0 or self.grid_hi < self.grid_lo:
            raise ValidationError("weight grid bounds are invalid", "grid_step")
        if not isinstance(self.optimizer, dict):
            raise ValidationError("optimizer must be a JSON object", "optimizer")
        self.frac()
        self.plan()
        self.optimizer_config()

    def frac(self) -> KindFractions:
        return KindFractions(*map(float, self.fractions))

    def plan(self) -> CvPlan:
        grid = default_weight_grid(self.grid_lo, self.grid_hi, self.grid_step)
        return CvPlan(self.holdout_fraction, self.num_splits, tuple(grid), self.seed)

    def optimizer_config(self) -> OptimizerConfig:
        try:
            return OptimizerConfig(**self.optimizer)
        except TypeError as err:
            raise ValidationError(str(err), "optimizer") from None

    def out_dir(self) -> Path:
        path = Path(self.out)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def setup(self):
        return datasets.bench_setup(
            self.population, self.pairs, self.regions, self.adjacency, self.time_slots, self.frac()
        )

    def adjacency_spec(self):
        return load_adjacency(self.adjacency or datasets.ADJACENCY_FILE, self.temporal_wraparound)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _observed(cfg: RunConfig, setup):
    x = read_counts(cfg.counts or datasets.COUNTS_FILE, setup.layout)
    return scale_kind3(x, cfg.kind3_multiplier)


def _builder(cfg: RunConfig, setup):
    return functools.partial(build_laplacian, setup.grid, cfg.adjacency_spec())


def _cv(cfg: RunConfig, x, setup, plan=None):
    return select_weights(
        x, setup.population, setup.P, _builder(cfg, setup), plan or cfg.plan(), cfg.optimizer_config(), cfg.jobs
    )


def cmd_bin(cfg: RunConfig, args):
    grid = SourceGrid(datasets.load_regions(cfg.regions)[0], cfg.time_slots)
    start = None
    if cfg.start_date:
        try:
            start = date.fromisoformat(cfg.start_date)
        except ValueError:
            raise ValidationError(f"bad start date {cfg.start_date!r}", "start_date") from None
    mapper = SlotMapper(cfg.slot_mode, cfg.timezone, start, cfg.time_slots)
    try:
        records = read_events(args.events)
        x, report = bin_events(records, grid, filter=args.filter, slot_of=mapper)
    except FileNotFoundError:
        raise ValidationError(f"file not found: {args.events}", "events") from None
    except KeyError as err:
        raise ValidationError(f"events file lacks column {err}", "events") from None
    out = cfg.out_dir()
    kinds = (1,) if args.filter == "all" else (1, 2, 3)
    write_counts(out / args.output, x, kinds)
    _write_json(out / "bin_report.json", report.to_dict())


def cmd_estimate(cfg: RunConfig, args):
    setup = cfg.setup()
    x = _observed(cfg, setup)
    ws, wt = cfg.w_s, cfg.w_t
    source = "given"
    if ws is None or wt is None:
        report = _cv(cfg, x, setup)
        ws = report.selected[0] if ws is None else ws
        wt = report.selected[1] if wt is None else wt
        source = "cross-validation"
    L = build_laplacian(setup.grid, cfg.adjacency_spec(), ws, wt)
    config = cfg.optimizer_config()
    theta0 = initialize_theta(x, setup.P, setup.population.psi, config.init_floor, config.lsqr_iter_lim)
    res = fit(theta0, setup.population.psi, setup.P, x, L, 1.0, config)
    out = cfg.out_dir()
    write_intensity(out / "intensity", setup.grid, res.intensity)
    _write_json(
        out / "fit.json",
        {
            "w_s": ws,
            "w_t": wt,
            "weights_from": source,
            "objective": res.objective,
            "iterations": res.iterations,
            "grad_norm": res.grad_norm,
            "termination": res.reason,
        },
    )


def cmd_cv(cfg: RunConfig, args):
    setup = cfg.setup()
    report = _cv(cfg, _observed(cfg, setup), setup)
    report.to_json(cfg.out_dir() / "cv_report.json")


def cmd_synth(cfg: RunConfig, args):
    if args.count_scale <= 0:
        raise ValidationError("--count-scale must be positive", "count_scale")
    setup = cfg.setup()
    truth = setup.truth * args.count_scale
    x = sample_counts(truth, setup.population, setup.P, cfg.seed, setup.layout)
    out = cfg.out_dir()
    write_counts(out / "counts.csv", x)
    write_intensity(out / "truth", setup.grid, truth)
    _write_json(
        out / "synth.json",
        {
            "seed": cfg.seed,
            "count_scale": args.count_scale,
            "kind_totals": [int(x.kind(k).sum()) for k in (1, 2, 3)],
            "expected_total": float(np.sum(truth * setup.population.g)),
        },
    )


def cmd_baselines(cfg: RunConfig, args):
    if args.seeds < 1:
        raise ValidationError("--seeds must be positive", "seeds")
    if args.count_scale <= 0:
        raise ValidationError("--count-scale must be positive", "count_scale")
    setup = cfg.setup()
    setup.adjacency = cfg.adjacency_spec()
    fixed = (cfg.w_s, cfg.w_t) if cfg.w_s is not None and cfg.w_t is not None else None
    rows, per_seed = [], []
    for seed in range(cfg.seed, cfg.seed + args.seeds):
        res = run_replicate(setup, seed, fixed, cfg.plan(), cfg.optimizer_config(), args.count_scale, cfg.jobs)
        for name in ESTIMATORS:
            rows.append((name, seed, res.errors[name]))
        ws, wt = res.weights
        per_seed.append({"seed": seed, "w_s": ws, "w_t": wt, "kind_totals": list(res.kind_totals), "flags": res.flags})
    out = cfg.out_dir()
    with open(out / "baselines.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["estimator", "seed", "relative_error"])
        for name, seed, err in rows:
            w.writerow([name, seed, repr(float(err))])
    summary = {}
    for name in ESTIMATORS:
        errs = np.array([e for n, _, e in rows if n == name])
        q1, med, q3 = np.percentile(errs, [25, 50, 75])
        summary[name] = {"median": float(med), "iqr": float(q3 - q1)}
    _write_json(out / "baselines_summary.json", {"estimators": summary, "runs": per_seed})


COMMANDS = {
    "bin": cmd_bin,
    "estimate": cmd_estimate,
    "cv": cmd_cv,
    "synth": cmd_synth,
    "baselines": cmd_baselines,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", help="JSON file with run settings; flags override it")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--out", help="output directory (default: current directory)")
    g.add_argument("--regions", help="regions CSV (code,name,lat,lon)")
    g.add_argument("--time-slots", dest="time_slots", type=int, help="number of time slots (default 24)")

    model = _Parser(add_help=False)
    m = model.add_argument_group("model inputs")
    m.add_argument("--adjacency", help="region adjacency file, one pair per line")
    m.add_argument("--population", help="population counts CSV (kind-1 rows)")
    m.add_argument("--pairs", help="declared,actual,count CSV for the mis-declaration matrix")
    m.add_argument("--fractions", type=float, nargs=3, metavar=("E1", "E2", "E3"), help="kind fractions")
    m.add_argument("--no-wraparound", dest="temporal_wraparound", action="store_const", const=False,
                   help="do not link the last time slot to the first")
    m.add_argument("--w-s", dest="w_s", type=float, help="spatial edge weight")
    m.add_argument("--w-t", dest="w_t", type=float, help="temporal edge weight")
    m.add_argument("--holdout-fraction", dest="holdout_fraction", type=float, help="thinning probability (default 0.2)")
    m.add_argument("--splits", dest="num_splits", type=int, help="number of thinning splits (default 5)")
    m.add_argument("--grid", nargs=3, type=float, metavar=("LO", "HI", "STEP"),
                   help="log10 weight grid bounds and step (default -3 3 0.5)")
    m.add_argument("--jobs", type=int, help="worker processes for cross-validation (default 1)")

    observed = _Parser(add_help=False)
    observed.add_argument("--counts", help="counts CSV (kind,region,slot,count); default: bundled synthetic counts")
    observed.add_argument("--kind3-multiplier", dest="kind3_multiplier", type=float,
                          help="scale no-location counts, e.g. a domestic share estimate")

    parser = _Parser(prog="stintensity", description="Spatio-temporal intensity estimation from counted events.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("bin", parents=[common], help="bin an events CSV into detector counts")
    p.add_argument("--events", required=True, help="events CSV: timestamp,location_kind,region,is_target")
    p.add_argument("--filter", choices=("target", "all"), default="target",
                   help="count target posts (x) or all posts as a population profile (z)")
    p.add_argument("--timezone", help="IANA zone used for hour-of-day slots (default UTC)")
    p.add_argument("--slot-mode", dest="slot_mode", choices=("hour", "day"), help="hour of day or day index")
    p.add_argument("--start-date", dest="start_date", help="first day (YYYY-MM-DD) for day slots")
    p.add_argument("--output", default="counts.csv", help="counts file name inside --out")

    sub.add_parser("estimate", parents=[common, model, observed], help="fit the intensity and write maps")
    sub.add_parser("cv", parents=[common, model, observed], help="select graph weights by thinning CV")

    p = sub.add_parser("synth", parents=[common, model], help="generate synthetic counts and truth")
    p.add_argument("--count-scale", dest="count_scale", type=float, default=1.0, help="multiply the truth")

    p = sub.add_parser("baselines", parents=[common, model], help="compare the six estimators")
    p.add_argument("--seeds", type=int, default=10, help="number of replicates, starting at --seed")
    p.add_argument("--count-scale", dest="count_scale", type=float, default=1.0, help="multiply the truth")
    return parser


def _overrides(args) -> dict:
    out = {k: v for k, v in vars(args).items() if v is not None}
    if "grid" in out:
        out["grid_lo"], out["grid_hi"], out["grid_step"] = out.pop("grid")
    if "fractions" in out:
        out["fractions"] = tuple(out["fractions"])
    return out


def _fail(kind: str, message: str, field_name=None) -> None:
    err = {"error": kind, "message": message}
    if field_name is not None:
        err["field"] = field_name
    print(json.dumps(err, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        _fail("usage", str(err))
        return EXIT_USAGE
    try:
        cfg = RunConfig.build(args.config, _overrides(args))
        COMMANDS[args.command](cfg, args)
    except ValidationError as err:
        _fail("validation", str(err), err.field)
        return EXIT_INVALID
    except DimensionError as err:
        _fail("validation", str(err), "dimensions")
        return EXIT_INVALID
    except OSError as err:
        _fail("validation", f"{err.strerror}: {err.filename}", "path")
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
