"""Command-line entry point: ``localiv {fit,sensitivity,simulate,baselines}``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from . import baselines, mcmc, sensitivity, simulation
from .config import ConfigError, RunConfig
from .data import ValidationError, empirical_quantile, read_csv
from .estimands import DEFAULT_GRID, EstimandUnavailable, aggregate
from .output import write_csv, write_manifest

log = logging.getLogger("localiv")

SUMMARY_HEADER = ["parameter", "scale", "mean", "sd", "q2.5", "q50", "q97.5", "rhat"]
BASELINE_HEADER = ["method", "estimate", "se", "ci_lo", "ci_hi", "first_stage_f", "n", "n_clusters"]
SWEEP_HEADER = ["delta", "r_mean", "att_mean", "att_lo", "att_hi", "prte_mean", "prte_lo", "prte_hi"]
STUDY_HEADER = ["method", "estimand", "h", "p", "N", "replicates", "abs_bias", "rmse", "failures"]
REPLICATE_HEADER = ["h", "replicate", "method", "estimand", "estimate", "truth", "error", "status"]


def example_config_path() -> Path:
    return Path(str(resources.files("localiv") / "data" / "example.toml"))


def _load_dataset(rc: RunConfig):
    roles = rc.column_roles()
    return read_csv(rc.input_path(), outcome_spec=rc.outcome_spec(), iv_range=rc.iv_range(), **roles)


def _summary_row(name, scale, arr, rhat=math.nan):
    a = np.asarray(arr, dtype=float).ravel()
    q = empirical_quantile(a, [0.025, 0.5, 0.975])
    return [name, scale, a.mean(), a.std(ddof=1) if a.size > 1 else 0.0, q[0], q[1], q[2], rhat]


def _posterior_rows(fit):
    store, rhat = fit.store, fit.diagnostics.rhat
    rows = [_summary_row(name, "model", arr, rhat.get(name, math.nan))
            for name, arr in store.scalar_names()]
    raw = store.raw_scale()
    for key, arr in raw.items():
        for idx in np.ndindex(*arr.shape[1:]):
            rows.append(_summary_row(mcmc._flat_name(key, idx), "raw", arr[(slice(None),) + idx]))
    return rows


def cmd_fit(rc: RunConfig, args):
    d = _load_dataset(rc)
    opts = rc.section("fit")
    grid = tuple(float(g) for g in opts.get("grid", DEFAULT_GRID))
    fit = mcmc.run(d, rc.outcome_spec(), rc.priors(), rc.chain_config())
    res = aggregate(fit.store, d, rc.iv_range(), grid=grid)
    out = rc.output_dir
    files = [
        write_csv(out / "fit_posterior_summary.csv", SUMMARY_HEADER, _posterior_rows(fit)),
        write_csv(out / "fit_diagnostics.csv", ["parameter", "rhat"],
                  sorted(fit.diagnostics.rhat.items(), key=lambda kv: _order(kv[0], fit.store))),
        write_csv(out / "fit_acceptance.csv", ["chain", "block", "rate"],
                  [[c, b, r] for (c, b), r in sorted(fit.diagnostics.acceptance.items())]),
        write_csv(out / "fit_mte_curve.csv", ["quantile", "stratum", "mte_mean", "mte_lo", "mte_hi"],
                  zip(res.grid, res.mte_strata, res.mte_mean, res.mte_lo, res.mte_hi)),
        write_csv(out / "fit_estimands.csv", ["estimand", "mean", "sd", "lo", "hi", "n_draws", "skipped"],
                  [[name, s.mean, s.sd, s.lo, s.hi, s.n_draws, s.skipped]
                   for name, s in (("att", res.att), ("prte", res.prte))]),
    ]
    if opts.get("dump_draws", False) or args.dump_draws:
        files.append(_dump_draws(out / "fit_draws.csv", fit.store))
    extra = {"warnings": fit.diagnostics.warnings, "max_rhat": fit.diagnostics.max_rhat,
             "prte_population_share": res.prte_population_share,
             "treated_below_zmin_share": res.treated_below_zmin_share}
    return files, extra


def _order(name, store):
    names = [n for n, _ in store.scalar_names()]
    return names.index(name)


def _dump_draws(path, store):
    cols = store.scalar_names(include_strata=True)
    header = ["chain", "iteration"] + [n for n, _ in cols]
    rows = ([c, int(store.iterations[k])] + [a[c, k] for _, a in cols]
            for c in range(store.n_chains) for k in range(store.n_keep))
    return write_csv(path, header, rows)


def cmd_sensitivity(rc: RunConfig, args):
    d = _load_dataset(rc)
    opts = rc.section("sensitivity")
    grid = opts.get("delta_grid")
    if args.delta_grid is not None:
        grid = [float(v) for v in args.delta_grid.split(",") if v.strip()]
    if grid is not None and len(grid) == 0:
        raise ConfigError("sensitivity delta grid is empty")
    res = sensitivity.sensitivity_sweep(
        d, rc.priors(), rc.chain_config(), grid, outcome_spec=rc.outcome_spec(), iv_range=rc.iv_range(),
        r_target=tuple(opts.get("r_target", (-0.5, 0.5))), n_grid=int(opts.get("n_grid", 9)),
        max_widen=int(opts.get("max_widen", 3)))
    if not res.points:
        raise mcmc.SamplingError("every sensitivity grid point failed")
    out = rc.output_dir
    rows = [[p.delta, p.r_mean, p.att.mean, p.att.lo, p.att.hi, p.prte.mean, p.prte.lo, p.prte.hi]
            for p in res.points]
    files = [
        write_csv(out / "sensitivity_sweep.csv", SWEEP_HEADER, rows),
        write_csv(out / "sensitivity_r_draws.csv", ["delta", "draw", "r"],
                  ([p.delta, j, r] for p in res.points for j, r in enumerate(p.r_draws))),
    ]
    extra = {"failures": {format(k, ".17g"): v for k, v in sorted(res.failures.items())},
             "covers_r_target": res.covers_target()}
    return files, extra


def cmd_simulate(rc: RunConfig, args):
    opts = rc.section("simulate")
    h = opts.pop("h", [0.0, 0.4, 0.8])
    h_values = [float(v) for v in (h if isinstance(h, list) else [h])]
    methods = tuple(opts.pop("methods", simulation.METHODS))
    n_clusters = int(opts.pop("n_clusters", 1))
    full = bool(opts.pop("full", False)) or args.full
    if args.replicates is not None:
        opts["replicates"] = args.replicates
    if full:
        opts["replicates"] = 1000
    try:
        cfg = simulation.SimulationConfig(seed=rc.seed, h=max(h_values, key=abs), **opts)
    except TypeError as exc:
        raise ConfigError(f"simulate: {exc}") from None
    cc = rc.chain_config(default={"n_chains": 3, "n_iterations": 5000, "thin": 5})

    def progress(hv, b):
        log.info("h=%g replicate %d done", hv, b)

    res = simulation.run_study(cfg, methods, cc, priors=rc.priors(), n_clusters=n_clusters,
                               h_values=h_values, progress=progress)
    out = rc.output_dir
    files = [write_csv(out / "simulate_results.csv", STUDY_HEADER, res.rows),
             write_csv(out / "simulate_replicates.csv", REPLICATE_HEADER, res.replicate_log)]
    return files, {"failures": {format(k, ".17g"): v for k, v in res.failures.items()}}


def cmd_baselines(rc: RunConfig, args):
    d = _load_dataset(rc)
    methods = rc.section("baselines").get("methods", ["ols", "tsls"])
    unknown = set(methods) - {"ols", "tsls"}
    if unknown:
        raise ConfigError(f"unknown baseline method(s): {sorted(unknown)}")
    # without a cluster column every unit is its own cluster
    clusters = None if rc.column_roles()["cluster"] else np.arange(d.n) + 1
    rows = []
    for m in ("ols", "tsls"):
        if m not in methods:
            continue
        f = baselines.ols_att(d, clusters) if m == "ols" else baselines.tsls_att(d, clusters)
        lo, hi = f.ci()
        rows.append([m, f.estimate, f.se, lo, hi, f.first_stage_f, f.n, f.n_clusters])
    return [write_csv(rc.output_dir / "baselines_summary.csv", BASELINE_HEADER, rows)], {}


COMMANDS = {"fit": cmd_fit, "sensitivity": cmd_sensitivity, "simulate": cmd_simulate,
            "baselines": cmd_baselines}


def build_parser():
    ap = argparse.ArgumentParser(prog="localiv", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", "-c", type=Path, help="TOML run configuration")
    src.add_argument("--example", action="store_true", help="use the bundled example configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. chains.n_iterations=2000 (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--output-dir", "-o", type=Path)
    common.add_argument("--verbose", "-v", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("fit", parents=[common], help="fit the local IV model")
    p.add_argument("--dump-draws", action="store_true", help="also write every retained draw")
    p = sub.add_parser("sensitivity", parents=[common], help="exclusion-restriction sweep")
    p.add_argument("--delta-grid", help="comma-separated delta values (must include 0)")
    p = sub.add_parser("simulate", parents=[common], help="bias/RMSE simulation study")
    p.add_argument("--replicates", type=int)
    p.add_argument("--full", action="store_true", help="run 1000 replicates")
    sub.add_parser("baselines", parents=[common], help="OLS and 2SLS estimates")
    return ap


def _error_line(exc):
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "row", None) is not None:
        doc["row"] = exc.row
    return json.dumps(doc, sort_keys=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg_path = example_config_path() if args.example else args.config
        rc = RunConfig.load(cfg_path, args.overrides, seed=args.seed, output_dir=args.output_dir)
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", RuntimeWarning)
            files, extra = COMMANDS[args.command](rc, args)
        files.append(write_manifest(rc.output_dir / f"{args.command}_manifest.json", args.command, rc,
                                    files, extra))
    except (ConfigError, ValidationError, baselines.WeakInstrumentError, baselines.RankDeficientError,
            EstimandUnavailable, mcmc.SamplingError, ValueError, RuntimeError, OSError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, ValidationError)) else 1
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
