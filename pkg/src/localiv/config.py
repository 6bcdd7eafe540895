"""Run configuration: a TOML file, overridden by environment and command line.

Schema (every table optional unless the command needs it)::

    seed = 1
    output_dir = "out"

    [data]
    path = "example.csv"          # relative paths resolve against the config file
    outcome = "y"
    treatment = "t"
    iv = "z"
    cluster = "cluster"
    covariates = ["x1", "x2"]
    filter = { urban = "1" }      # equality predicates on declared columns

    [outcome]   family = "ordinal" | "gaussian", K = 3
    [iv_range]  min, max
    [chains]    n_chains, n_iterations, burn_in, thin, adaptation_window, n_jobs
    [priors]    coef_variance, half_cauchy_scale
    [fit]       dump_draws = false, grid = [...]
    [sensitivity] delta_grid = [...], r_target = [-0.5, 0.5], n_grid, max_widen
    [simulate]  b00, b01, b10, b11, p, h = [0, 0.4, 0.8], n, replicates, full,
                methods, n_clusters
    [baselines] methods = ["ols", "tsls"]
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import IVRange, OutcomeSpec, PriorConfig
from .mcmc import ChainConfig

OUTPUT_DIR_ENV = "LOCALIV_OUTPUT_DIR"

_KNOWN = {
    "": {"seed", "output_dir", "data", "outcome", "iv_range", "chains", "priors", "fit",
         "sensitivity", "simulate", "baselines"},
    "data": {"path", "outcome", "treatment", "iv", "cluster", "covariates", "filter"},
    "outcome": {"family", "K"},
    "iv_range": {"min", "max"},
    "chains": {"n_chains", "n_iterations", "burn_in", "thin", "adaptation_window", "n_jobs"},
    "priors": {"coef_variance", "half_cauchy_scale"},
    "fit": {"dump_draws", "grid"},
    "sensitivity": {"delta_grid", "r_target", "n_grid", "max_widen"},
    "simulate": {"b00", "b01", "b10", "b11", "p", "h", "n", "replicates", "full", "methods",
                 "n_clusters"},
    "baselines": {"methods"},
}


class ConfigError(ValueError):
    pass


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(cfg: dict, assignment: str):
    """Apply one ``dotted.key=value`` override; values parse as TOML literals."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, text = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-table value")
    node[parts[-1]] = _parse_value(text.strip())


def _check_keys(cfg):
    for k in cfg:
        if k not in _KNOWN[""]:
            raise ConfigError(f"unknown config key {k!r}")
    for table, allowed in _KNOWN.items():
        if table and table in cfg:
            if not isinstance(cfg[table], dict):
                raise ConfigError(f"config entry {table!r} must be a table")
            for k in cfg[table]:
                if k not in allowed:
                    raise ConfigError(f"unknown config key {table}.{k}")


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path=None, overrides=(), *, seed=None, output_dir=None, env=None):
        """Merge file < environment (output directory only) < command line."""
        env = os.environ if env is None else env
        raw, base = {}, Path.cwd()
        if path is not None:
            path = Path(path)
            try:
                with path.open("rb") as fh:
                    raw = tomllib.load(fh)
            except FileNotFoundError:
                raise ConfigError(f"config file {str(path)!r} not found") from None
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"config file {path.name}: {exc}") from None
            base = path.resolve().parent
        raw = copy.deepcopy(raw)
        if env.get(OUTPUT_DIR_ENV):
            raw["output_dir"] = env[OUTPUT_DIR_ENV]
        for a in overrides:
            apply_override(raw, a)
        if seed is not None:
            raw["seed"] = int(seed)
        if output_dir is not None:
            raw["output_dir"] = str(output_dir)
        _check_keys(raw)
        return cls(raw, base)

    def section(self, name):
        return dict(self.raw.get(name, {}))

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def output_dir(self) -> Path:
        return Path(self.raw.get("output_dir", "."))

    def input_path(self) -> Path:
        data = self.section("data")
        if "path" not in data:
            raise ConfigError("data.path is required")
        p = Path(data["path"])
        return p if p.is_absolute() else self.base_dir / p

    def column_roles(self):
        data = self.section("data")
        for k in ("outcome", "treatment", "iv"):
            if k not in data:
                raise ConfigError(f"data.{k} is required")
        filt = data.get("filter", {}) or {}
        if not isinstance(filt, dict):
            raise ConfigError("data.filter must be a table of column = value")
        return {
            "outcome": data["outcome"], "treatment": data["treatment"], "iv": data["iv"],
            "cluster": data.get("cluster"), "covariates": tuple(data.get("covariates", [])),
            "row_filter": {str(k): str(v) for k, v in filt.items()},
        }

    def outcome_spec(self) -> OutcomeSpec:
        o = self.section("outcome")
        fam = o.get("family", "ordinal")
        return OutcomeSpec(fam, int(o["K"]) if "K" in o else None)

    def iv_range(self):
        r = self.section("iv_range")
        if not r:
            return None
        if "min" not in r or "max" not in r:
            raise ConfigError("iv_range needs both min and max")
        return IVRange(float(r["min"]), float(r["max"]))

    def priors(self) -> PriorConfig:
        return PriorConfig(**{k: float(v) for k, v in self.section("priors").items()})

    def chain_config(self, default=None) -> ChainConfig:
        c = self.section("chains")
        base = {} if default is None else dict(default)
        base.update({k: int(v) for k, v in c.items()})
        base["seed"] = self.seed
        try:
            return ChainConfig(**base)
        except ValueError as exc:
            raise ConfigError(f"chains: {exc}") from None

    def canonical(self, exclude=("output_dir",)) -> str:
        """Stable JSON text of the configuration (for hashing and the manifest)."""
        d = {k: v for k, v in self.raw.items() if k not in exclude}
        return json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


__all__ = ["ConfigError", "RunConfig", "apply_override", "OUTPUT_DIR_ENV"]
