"""Exclusion-restriction sensitivity analysis.

The outcome model gains a direct instrument term ``delta * z``.  For each
fixed ``delta`` the model is refitted and summarised by the ratio ``r`` of
the instrument's direct effect to its total effect, where both compare
``z_max`` against ``z_min``.  Sweeping ``delta`` traces ATT and PRTE as
functions of ``r``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels, mcmc
from .data import Dataset, IVRange, OutcomeSpec, PriorConfig, standardized_x, validate
from .estimands import Summary, aggregate

log = logging.getLogger(__name__)

DENOMINATOR_TOL = 1e-12


class UndefinedRatio(ArithmeticError):
    """Total effect numerically zero, so the ratio has no value."""


def _arm_base(draw, arm, x):
    """Linear predictor without random effects or the instrument term."""
    o = draw.outcome
    eta = (x @ o.beta[arm] if x.shape[1] else np.zeros(x.shape[0])) + o.gamma[arm] * draw.strata
    if o.family == "gaussian":
        eta = eta + o.intercept[arm]
    return eta


def ratio_terms(draw, x, iv_range: IVRange, delta):
    """Numerator (direct) and denominator (total) sums of the ratio."""
    delta = float(delta)
    zmin, zmax = float(iv_range.min), float(iv_range.max)
    e0 = _arm_base(draw, 0, x)
    e1 = _arm_base(draw, 1, x)
    if draw.outcome.family == "gaussian":
        # mean-scale analogue: E[Y(z, t)] is the linear predictor itself
        num = e0.size * delta * (zmax - zmin)
        den = float(np.sum(e1 + delta * zmax - e0 - delta * zmin))
        return num, den
    cuts = draw.outcome.cutpoints
    n = e0.size
    c0_min, c0_max, c1_max = np.empty(n), np.empty(n), np.empty(n)
    kernels.ordinal_cumsum(e0 + delta * zmin, cuts[0], c0_min)
    if delta == 0.0:
        num = 0.0
        c0_max = c0_min
    else:
        kernels.ordinal_cumsum(e0 + delta * zmax, cuts[0], c0_max)
        num = float(np.sum(c0_min - c0_max))
    kernels.ordinal_cumsum(e1 + delta * zmax, cuts[1], c1_max)
    den = float(np.sum(c0_min - c1_max))
    return num, den


def r_from_draw(draw, dataset: Dataset, iv_range: IVRange | None = None, delta=None, *, x_std=None):
    """Direct-to-total effect ratio implied by one posterior draw.

    ``delta`` defaults to the draw's own extension coefficient (0 when the
    draw comes from the unextended model).  Raises ``UndefinedRatio`` when
    the total effect is numerically zero.
    """
    if delta is None:
        delta = draw.extension.delta if draw.extension is not None else 0.0
    rng_ = iv_range or dataset.iv_range
    x = standardized_x(dataset) if x_std is None else x_std
    num, den = ratio_terms(draw, x, rng_, delta)
    if abs(den) < DENOMINATOR_TOL:
        raise UndefinedRatio(f"total effect {den:.3g} is numerically zero")
    if num == 0.0:
        return 0.0
    return num / den


def r_draws(store: mcmc.PosteriorStore, dataset: Dataset, iv_range=None, delta=None):
    """Per-draw ratios; undefined ones are NaN."""
    x = standardized_x(dataset)
    out = np.empty(store.n_draws)
    for j in range(store.n_draws):
        try:
            out[j] = r_from_draw(store.draw(j), dataset, iv_range, delta, x_std=x)
        except UndefinedRatio:
            out[j] = math.nan
    return out


@dataclass
class SensitivityPoint:
    delta: float
    r_draws: np.ndarray
    att: Summary
    prte: Summary
    max_rhat: float = math.nan

    @property
    def r_mean(self):
        ok = self.r_draws[np.isfinite(self.r_draws)]
        return float(ok.mean()) if ok.size else math.nan

    @property
    def r_undefined(self):
        return int(np.sum(~np.isfinite(self.r_draws)))


@dataclass
class SensitivityResult:
    points: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    r_target: tuple = (-0.5, 0.5)

    @property
    def deltas(self):
        return np.array([p.delta for p in self.points])

    @property
    def r_means(self):
        return np.array([p.r_mean for p in self.points])

    def covers_target(self):
        r = self.r_means[np.isfinite(self.r_means)]
        return bool(r.size) and r.min() <= self.r_target[0] and r.max() >= self.r_target[1]

    def at_delta(self, delta):
        for p in self.points:
            if p.delta == delta:
                return p
        raise KeyError(delta)


def _plugin_r(store, dataset, iv_range, deltas, max_draws=200):
    """Posterior-mean ratio at each delta, reusing baseline draws as a proxy."""
    step = max(1, store.n_draws // max_draws)
    x = standardized_x(dataset)
    draws = [store.draw(j) for j in range(0, store.n_draws, step)]
    out = []
    for dl in deltas:
        vals = []
        for d in draws:
            num, den = ratio_terms(d, x, iv_range, dl)
            if abs(den) >= DENOMINATOR_TOL:
                vals.append(num / den)
        out.append(float(np.mean(vals)) if vals else math.nan)
    return np.asarray(out)


def calibrate_delta(store, dataset, iv_range, r_target=(-0.5, 0.5)):
    """Delta range whose plug-in ratio spans ``r_target``.

    Each direction away from zero is scanned until the ratio leaves
    [-1, 1], which also stops the scan before a pole where the total effect
    changes sign.  An end of the target no direction reaches falls back to
    the furthest delta that moved the ratio toward it.
    """
    width = float(iv_range.max - iv_range.min)
    mags = np.geomspace(1e-3, 1e2, 61) / width
    ends = {}
    for sign in (-1.0, 1.0):
        r = _plugin_r(store, dataset, iv_range, sign * mags)
        bad = np.flatnonzero(~np.isfinite(r) | (np.abs(r) > 1.0))
        k = bad[0] if bad.size else r.size
        for target in r_target:
            hit = np.flatnonzero(np.sign(target) * r[:k] >= abs(target))
            if hit.size:
                cand = (0, sign * mags[hit[0]])
            elif k and np.sign(r[k - 1]) == np.sign(target):
                cand = (1, sign * mags[k - 1])
            else:
                continue
            if target not in ends or cand < ends[target]:
                ends[target] = cand
    lo = ends.get(r_target[0], (1, -mags[-1]))[1]
    hi = ends.get(r_target[1], (1, mags[-1]))[1]
    return tuple(sorted((float(lo), float(hi))))


def _fit_point(dataset, spec, priors, chain_config, delta, iv_range):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fit = mcmc.run(dataset, spec, priors, chain_config, fixed_delta=float(delta))
    res = aggregate(fit.store, dataset, iv_range, grid=())
    r = r_draws(fit.store, dataset, iv_range, delta)
    return SensitivityPoint(float(delta), r, res.att, res.prte, fit.diagnostics.max_rhat), fit


def sensitivity_sweep(dataset: Dataset, priors: PriorConfig | None = None,
                      chain_config: mcmc.ChainConfig | None = None, delta_grid=None, *,
                      outcome_spec: OutcomeSpec | None = None, iv_range: IVRange | None = None,
                      r_target=(-0.5, 0.5), n_grid=9, max_widen=3) -> SensitivityResult:
    """Refit the extended model over a delta grid and report estimands against r.

    With an explicit ``delta_grid`` exactly those points are fitted.  Without
    one, the baseline (delta = 0) draws are used to pick a delta range whose
    ratio spans ``r_target``; the range is widened up to ``max_widen`` times
    if the refitted ratios fall short.  A failing grid point is recorded in
    ``failures`` and the sweep continues.  Points are ordered by mean r.
    """
    d = dataset if dataset.validated else validate(dataset)
    spec = outcome_spec or d.outcome_spec
    priors = priors or PriorConfig()
    chain_config = chain_config or mcmc.ChainConfig()
    rng_ = iv_range or d.iv_range
    result = SensitivityResult(r_target=tuple(r_target))
    done = {}

    def fit(delta):
        delta = float(delta)
        if delta in done or delta in result.failures:
            return done.get(delta)
        try:
            point, f = _fit_point(d, spec, priors, chain_config, delta, rng_)
        except (mcmc.SamplingError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("sensitivity point delta=%g failed: %s", delta, exc)
            result.failures[delta] = str(exc)
            return None
        done[delta] = (point, f)
        return done[delta]

    if delta_grid is not None:
        grid = [float(v) for v in delta_grid]
        if not grid:
            raise ValueError("delta grid is empty")
        if not all(math.isfinite(v) for v in grid):
            raise ValueError("delta grid must be finite")
        if 0.0 not in grid:
            raise ValueError("delta grid must include 0")
        for v in grid:
            fit(v)
    else:
        base = fit(0.0)
        if base is None:
            raise mcmc.SamplingError(f"baseline fit failed: {result.failures[0.0]}")
        lo, hi = calibrate_delta(base[1].store, d, rng_, r_target)
        for v in np.linspace(lo, hi, n_grid):
            fit(v)
        for _ in range(max_widen):
            r = np.array([p.r_mean for p, _ in done.values()])
            r = r[np.isfinite(r)]
            if r.size and r.min() <= r_target[0] and r.max() >= r_target[1]:
                break
            span = hi - lo
            moved = False
            for side in (-1, 1):
                end = lo if side < 0 else hi
                if end not in done or not abs(done[end][0].r_mean) <= 1.0:
                    continue  # failed fit, or already past a pole
                target = r_target[0] if done[end][0].r_mean < 0 else r_target[1]
                if (r.min() <= target) if target < 0 else (r.max() >= target):
                    continue
                new_end = end + 0.5 * side * span
                for v in np.linspace(end, new_end, 4)[1:]:
                    fit(v)
                lo, hi = (new_end, hi) if side < 0 else (lo, new_end)
                moved = True
            if not moved:
                break

    result.points = sorted((p for p, _ in done.values()), key=lambda p: (p.r_mean, p.delta))
    return result


__all__ = ["UndefinedRatio", "SensitivityPoint", "SensitivityResult", "calibrate_delta", "r_draws",
           "r_from_draw", "ratio_terms", "sensitivity_sweep"]
