"""Posterior draws of the marginal, treated and policy-relevant effects."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, IVRange, empirical_quantile, standardized_x
from .mcmc import Draw, PosteriorStore
from .outcome import mte_conditional

DEFAULT_GRID = tuple(round(0.01 * k, 2) for k in range(1, 100))


class EstimandUnavailable(ValueError):
    pass


@dataclass
class Summary:
    draws: np.ndarray
    skipped: int = 0

    @property
    def n_draws(self):
        return int(self.draws.size)

    @property
    def mean(self):
        return float(self.draws.mean()) if self.draws.size else math.nan

    @property
    def sd(self):
        return float(self.draws.std(ddof=1)) if self.draws.size > 1 else 0.0

    @property
    def lo(self):
        return empirical_quantile(self.draws, 0.025) if self.draws.size else math.nan

    @property
    def hi(self):
        return empirical_quantile(self.draws, 0.975) if self.draws.size else math.nan

    @property
    def skipped_fraction(self):
        total = self.n_draws + self.skipped
        return self.skipped / total if total else math.nan


@dataclass
class EstimandResult:
    grid: np.ndarray
    mte_strata: np.ndarray
    mte_mean: np.ndarray
    mte_lo: np.ndarray
    mte_hi: np.ndarray
    att: Summary
    prte: Summary
    prte_population_share: float
    treated_below_zmin_share: float


def unit_effects(draw: Draw, dataset: Dataset, x_std=None):
    """Conditional effect of every unit at its own stratum, covariates and clusters."""
    x = standardized_x(dataset) if x_std is None else x_std
    z = dataset.z if draw.extension is not None else None
    return np.asarray(mte_conditional(draw.strata, x, dataset.cluster, draw.outcome, draw.extension, z),
                      dtype=float)


def att_draw(draw: Draw, dataset: Dataset, *, effects=None) -> float:
    treated = dataset.t == 1
    if not treated.any():
        raise EstimandUnavailable("no treated units: ATT undefined")
    eff = unit_effects(draw, dataset) if effects is None else effects
    return float(eff[treated].sum() / treated.sum())


def prte_draw(draw: Draw, dataset: Dataset, iv_range: IVRange | None = None, *, effects=None):
    """Mean effect over units whose stratum lies in the instrument range.

    Returns ``None`` when no stratum of this draw falls in the range.
    """
    rng_ = iv_range or dataset.iv_range
    inside = (draw.strata >= rng_.min) & (draw.strata <= rng_.max)
    if not inside.any():
        return None
    eff = unit_effects(draw, dataset) if effects is None else effects
    return float(eff[inside].sum() / inside.sum())


def _check_grid(grid):
    g = np.asarray(grid, dtype=float)
    if np.any((g <= 0) | (g >= 1)):
        raise ValueError("grid quantiles must lie strictly inside (0, 1)")
    return g


def mte_curve(store: PosteriorStore, dataset: Dataset, grid=DEFAULT_GRID):
    """Pointwise posterior summaries of the MTE along stratum quantiles.

    Each grid quantile is mapped to a stratum value through the pooled
    imputed strata of all draws; covariates sit at their means and random
    effects at zero.  Returns ``(strata, mean, lo, hi)``.
    """
    g = _check_grid(grid)
    if store.n_draws == 0:
        raise ValueError("empty posterior store")
    if g.size == 0:
        empty = np.empty(0)
        return empty, empty, empty, empty
    strata = np.atleast_1d(empirical_quantile(store.stacked("s"), g))
    x_bar = np.zeros((g.size, dataset.p))
    ext = store.extension
    z_bar = np.full(g.size, float(dataset.z.mean())) if ext is not None else None
    vals = np.empty((store.n_draws, g.size))
    for j in range(store.n_draws):
        d = store.draw(j)
        vals[j] = mte_conditional(strata, x_bar, None, d.outcome, ext, z_bar)
    lo = np.array([empirical_quantile(vals[:, i], 0.025) for i in range(g.size)])
    hi = np.array([empirical_quantile(vals[:, i], 0.975) for i in range(g.size)])
    return strata, vals.mean(axis=0), lo, hi


def aggregate(store: PosteriorStore, dataset: Dataset, iv_range: IVRange | None = None,
              grid=DEFAULT_GRID) -> EstimandResult:
    rng_ = iv_range or dataset.iv_range
    if store.n_draws == 0:
        raise ValueError("empty posterior store")
    x = standardized_x(dataset)
    att, prte = [], []
    skipped = 0
    for j in range(store.n_draws):
        d = store.draw(j)
        eff = unit_effects(d, dataset, x)
        att.append(att_draw(d, dataset, effects=eff))
        v = prte_draw(d, dataset, rng_, effects=eff)
        if v is None:
            skipped += 1
        else:
            prte.append(v)
    s_mean = store.stacked("s").mean(axis=0)
    share = float(np.mean((s_mean >= rng_.min) & (s_mean <= rng_.max)))
    treated = dataset.t == 1
    below = float(np.mean(s_mean[treated] < rng_.min)) if treated.any() else math.nan
    strata, mean, lo, hi = mte_curve(store, dataset, grid)
    return EstimandResult(np.asarray(grid, dtype=float), strata, mean, lo, hi,
                          Summary(np.asarray(att)), Summary(np.asarray(prte), skipped),
                          share, below)
