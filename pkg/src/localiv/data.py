"""Observed data, configuration records and small shared numeric helpers."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class ValidationError(ValueError):
    """Raised when a dataset violates one of its invariants.

    ``row`` is the 0-based data row index (excluding the header) when the
    problem is tied to a particular unit.
    """

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class IVRange:
    min: float
    max: float

    def __post_init__(self):
        if not self.min < self.max:
            raise ValidationError(f"iv range requires min < max, got [{self.min}, {self.max}]")


@dataclass(frozen=True)
class OutcomeSpec:
    family: str = "ordinal"
    K: int | None = None

    def __post_init__(self):
        if self.family not in ("ordinal", "gaussian"):
            raise ValidationError(f"unknown outcome family {self.family!r}")
        if self.family == "ordinal" and (self.K is None or self.K < 2):
            raise ValidationError("ordinal outcome needs K >= 2 levels")

    @property
    def ordinal(self):
        return self.family == "ordinal"


@dataclass(frozen=True)
class PriorConfig:
    """Prior hyperparameters.

    All regression coefficients and cutpoints get N(0, coef_variance);
    random-effect standard deviations get half-Cauchy(half_cauchy_scale).
    The latent and residual variances always carry the flat 1/sigma^2 prior.
    """

    coef_variance: float = 100.0
    half_cauchy_scale: float = 25.0

    def __post_init__(self):
        if not self.coef_variance > 0:
            raise ValidationError("coef_variance must be positive")
        if not self.half_cauchy_scale > 0:
            raise ValidationError("half_cauchy_scale must be positive")


@dataclass(frozen=True)
class Unit:
    outcome: float
    treatment: int
    iv: float
    cluster: int
    covariates: tuple


@dataclass(eq=False)
class Dataset:
    """Column-oriented observed data.

    ``cluster`` holds integer ids in 1..n_clusters.  ``x`` is the raw
    covariate matrix (N x p).  :func:`validate` records ``x_mean`` and
    ``x_scale``; :func:`standardized_x` applies them to produce the centred,
    unit-scaled matrix the samplers work with.
    """

    y: np.ndarray
    t: np.ndarray
    z: np.ndarray
    cluster: np.ndarray
    x: np.ndarray
    n_clusters: int
    outcome_spec: OutcomeSpec
    iv_range: IVRange | None = None
    covariate_names: tuple = ()
    cluster_labels: tuple = ()
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    validated: bool = False

    @classmethod
    def from_arrays(cls, y, t, z, cluster=None, x=None, *, outcome_spec=None,
                    n_clusters=None, iv_range=None, covariate_names=None):
        y = np.asarray(y, dtype=float)
        n = y.shape[0]
        if cluster is None:
            cluster = np.ones(n, dtype=np.int64)
        cluster = np.asarray(cluster)
        if x is None:
            x = np.empty((n, 0))
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if n_clusters is None:
            n_clusters = int(cluster.max()) if n else 0
        if outcome_spec is None:
            outcome_spec = OutcomeSpec("gaussian")
        if covariate_names is None:
            covariate_names = tuple(f"x{j + 1}" for j in range(x.shape[1]))
        return cls(y=y, t=np.asarray(t), z=np.asarray(z, dtype=float), cluster=cluster, x=x,
                   n_clusters=int(n_clusters), outcome_spec=outcome_spec, iv_range=iv_range,
                   covariate_names=tuple(covariate_names),
                   cluster_labels=tuple(str(g) for g in range(1, int(n_clusters) + 1)))

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    def unit(self, i):
        return Unit(float(self.y[i]), int(self.t[i]), float(self.z[i]), int(self.cluster[i]),
                    tuple(self.x[i]))

    def subset(self, mask):
        mask = np.asarray(mask)
        return replace(self, y=self.y[mask], t=self.t[mask], z=self.z[mask],
                       cluster=self.cluster[mask], x=self.x[mask], x_mean=None,
                       x_scale=None, validated=False)


def validate(dataset: Dataset) -> Dataset:
    """Check every dataset invariant and return a standardized copy."""
    d = dataset
    n = d.y.shape[0]
    if n < 1:
        raise ValidationError("dataset has no units")
    for name in ("t", "z", "cluster"):
        if getattr(d, name).shape != (n,):
            raise ValidationError(f"column {name} has length {getattr(d, name).shape[0]}, expected {n}")
    if d.x.ndim != 2 or d.x.shape[0] != n:
        raise ValidationError(f"covariate matrix must be {n} x p")

    for name, col in (("outcome", d.y), ("iv", d.z)):
        bad = np.flatnonzero(~np.isfinite(col))
        if bad.size:
            raise ValidationError(f"missing or non-finite {name}", row=int(bad[0]))
    if d.x.size:
        bad = np.flatnonzero(~np.isfinite(d.x).all(axis=1))
        if bad.size:
            raise ValidationError("missing or non-finite covariate", row=int(bad[0]))

    t = np.asarray(d.t, dtype=float)
    bad = np.flatnonzero((t != 0) & (t != 1))
    if bad.size:
        raise ValidationError(f"treatment must be 0 or 1, got {d.t[bad[0]]}", row=int(bad[0]))
    t = t.astype(np.int8)

    cl = np.asarray(d.cluster, dtype=float)
    bad = np.flatnonzero((cl != np.round(cl)) | (cl < 1) | (cl > d.n_clusters))
    if bad.size:
        raise ValidationError(f"cluster id {d.cluster[bad[0]]} outside 1..{d.n_clusters}", row=int(bad[0]))
    cl = cl.astype(np.int64)

    spec = d.outcome_spec
    y = d.y
    if spec.ordinal:
        bad = np.flatnonzero((y != np.round(y)) | (y < 1) | (y > spec.K))
        if bad.size:
            raise ValidationError(f"outcome {y[bad[0]]:g} outside levels 1..{spec.K}", row=int(bad[0]))

    iv_range = d.iv_range
    if iv_range is None:
        iv_range = IVRange(float(d.z.min()), float(d.z.max())) if d.z.min() < d.z.max() else None
        if iv_range is None:
            raise ValidationError("instrument is constant; cannot infer iv range")
    else:
        bad = np.flatnonzero((d.z < iv_range.min) | (d.z > iv_range.max))
        if bad.size:
            raise ValidationError(f"iv {d.z[bad[0]]:g} outside declared range "
                                  f"[{iv_range.min:g}, {iv_range.max:g}]", row=int(bad[0]))

    if d.validated:
        x_mean, x_scale = d.x_mean, d.x_scale
    else:
        x_mean = d.x.mean(axis=0) if n else np.zeros(d.p)
        x_scale = d.x.std(axis=0) if n else np.ones(d.p)
        # constant covariates (e.g. after subgroup filtering) are only centred
        x_scale = np.where(x_scale > 0, x_scale, 1.0)
    return replace(d, y=np.asarray(y, dtype=float), t=t, cluster=cl, iv_range=iv_range,
                   x_mean=x_mean, x_scale=x_scale, validated=True)


def standardized_x(dataset: Dataset) -> np.ndarray:
    if not dataset.validated:
        raise ValidationError("dataset must be validated first")
    return (dataset.x - dataset.x_mean) / dataset.x_scale


def empirical_quantile(values, q):
    """Quantile by linear interpolation between the closest order statistics."""
    v = np.sort(np.asarray(values, dtype=float).ravel(), kind="stable")
    if v.size == 0:
        raise ValueError("empirical_quantile of an empty vector")
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q > 1)):
        raise ValueError("quantile probability must lie in [0, 1]")
    h = (v.size - 1) * q
    lo = np.floor(h).astype(np.int64)
    hi = np.minimum(lo + 1, v.size - 1)
    res = v[lo] + (h - lo) * (v[hi] - v[lo])
    return float(res) if res.ndim == 0 else res


def read_csv(path, outcome, treatment, iv, cluster=None, covariates=(), *,
             outcome_spec=None, row_filter=None, iv_range=None):
    """Load a dataset from a headed CSV file.

    ``row_filter`` maps column names to required string values; rows that
    do not match every predicate are dropped before parsing.  Cluster
    labels are mapped to ids 1..G in order of first appearance.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        wanted = [outcome, treatment, iv] + ([cluster] if cluster else []) + list(covariates)
        wanted += list((row_filter or {}).keys())
        for col in wanted:
            if col not in header:
                raise ValidationError(f"column {col!r} not found in {path.name}")
        rows = [r for r in reader
                if all(r[k].strip() == str(v) for k, v in (row_filter or {}).items())]
    if not rows:
        raise ValidationError("no rows selected" + (" by subgroup filter" if row_filter else ""))

    def col(name):
        out = np.empty(len(rows))
        for i, r in enumerate(rows):
            s = r[name].strip()
            try:
                out[i] = float(s) if s else math.nan
            except ValueError:
                raise ValidationError(f"non-numeric value {s!r} in column {name!r}", row=i) from None
        return out

    labels = {}
    if cluster:
        codes = np.array([labels.setdefault(r[cluster].strip(), len(labels) + 1) for r in rows])
    else:
        codes = np.ones(len(rows), dtype=np.int64)
        labels = {"1": 1}
    x = np.column_stack([col(c) for c in covariates]) if covariates else np.empty((len(rows), 0))
    d = Dataset(y=col(outcome), t=col(treatment), z=col(iv), cluster=codes, x=x,
                n_clusters=len(labels), outcome_spec=outcome_spec or OutcomeSpec("gaussian"),
                iv_range=iv_range, covariate_names=tuple(covariates),
                cluster_labels=tuple(labels))
    return validate(d)


__all__ = [
    "ValidationError", "IVRange", "OutcomeSpec", "PriorConfig", "Unit", "Dataset",
    "validate", "standardized_x", "empirical_quantile", "read_csv",
]
