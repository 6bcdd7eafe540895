"""Monte Carlo study comparing local IV with OLS and 2SLS.

Data follow a latent-threshold design with one covariate and a standard
normal instrument; ``p`` sets the correlation between the untreated outcome
error and the threshold error (confounding) and ``h`` the correlation
between the individual gain and the threshold error (heterogeneity).
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, mcmc
from .data import Dataset, OutcomeSpec, PriorConfig, ValidationError, validate
from .estimands import aggregate

log = logging.getLogger(__name__)

METHODS = ("local_iv", "ols", "tsls")
ESTIMANDS = ("att", "prte")


@dataclass
class SimulationConfig:
    b00: float = 0.0
    b01: float = 1.0
    b10: float = 3.0
    b11: float = 2.0
    p: float = 0.5
    h: float = 0.0
    n: int = 1000
    replicates: int = 100
    seed: int = 0

    def __post_init__(self):
        if 1.0 - self.p ** 2 - self.h ** 2 < -1e-12:  # zero is allowed (singular)
            raise ValidationError(
                f"correlation matrix not positive semidefinite: 1 - p^2 - h^2 = "
                f"{1.0 - self.p ** 2 - self.h ** 2:.4g} < 0")
        if self.n < 2:
            raise ValidationError("n must be >= 2")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")

    @property
    def correlation(self):
        return np.array([[1.0, 0.0, self.p], [0.0, 1.0, self.h], [self.p, self.h, 1.0]])


@dataclass
class SimulatedDataset:
    dataset: Dataset
    y0: np.ndarray
    y1: np.ndarray
    s: np.ndarray

    @property
    def effects(self):
        return self.y1 - self.y0


def replicate_rng(seed, replicate):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replicate)])))


def simulate(config: SimulationConfig, rng=None) -> SimulatedDataset:
    if rng is None:
        rng = replicate_rng(config.seed, 0)
    n = config.n
    x = rng.normal(size=n)
    z = rng.normal(size=n)
    # PSD (possibly singular) correlation: factor via eigen decomposition
    w, v = np.linalg.eigh(config.correlation)
    root = v * np.sqrt(np.clip(w, 0.0, None))
    e, l, eps = (rng.normal(size=(n, 3)) @ root.T).T
    s = 0.5 - 0.5 * x + eps
    t = (z >= s).astype(np.int8)
    y0 = config.b00 + config.b01 * x + e
    y1 = config.b10 + config.b11 * x + e + l
    y = np.where(t == 1, y1, y0)
    d = validate(Dataset.from_arrays(y, t, z, x=x[:, None], outcome_spec=OutcomeSpec("gaussian"),
                                     covariate_names=("x",)))
    return SimulatedDataset(d, y0, y1, s)


def finite_sample_estimands(sim: SimulatedDataset, iv_range=None):
    """In-sample ATT and PRTE computed from the hidden potential outcomes."""
    d = sim.dataset
    rng_ = iv_range or d.iv_range
    t = d.t == 1
    if not t.any():
        raise ValueError("no treated units")
    eff = sim.effects
    att = float(eff[t].mean())
    inside = (sim.s >= rng_.min) & (sim.s <= rng_.max)
    if not inside.any():
        raise ValueError("no unit has its stratum inside the instrument range")
    prte = float(eff[inside].mean())
    return att, prte


def simulate_ordinal(n, n_clusters, K, *, beta_s, sigma=1.0, tau_s=0.5, intercept_s=0.0,
                     cutpoints, beta, gamma, tau=(0.3, 0.3), z_scale=1.5, rng=None,
                     return_truth=False):
    """Draw a dataset from the full hierarchical ordinal model.

    ``cutpoints`` is (2, K-1), ``beta`` (2, p); covariates are standard normal
    and the instrument is N(0, z_scale^2), independent of everything else.
    """
    rng = rng or np.random.default_rng()
    beta_s = np.atleast_1d(np.asarray(beta_s, dtype=float))
    beta = np.asarray(beta, dtype=float).reshape(2, -1)
    cut = np.asarray(cutpoints, dtype=float).reshape(2, K - 1)
    p = beta_s.size
    x = rng.normal(size=(n, p))
    c = rng.integers(0, n_clusters, size=n)
    c[:n_clusters] = np.arange(n_clusters)  # every cluster non-empty
    z = z_scale * rng.normal(size=n)
    r = tau_s * rng.normal(size=n_clusters)
    nu = np.asarray(tau, dtype=float)[:, None] * rng.normal(size=(2, n_clusters))
    s = intercept_s + x @ beta_s + r[c] + sigma * rng.normal(size=n)
    t = (z >= s).astype(np.int8)
    ys = []
    for arm in (0, 1):
        eta = x @ beta[arm] + gamma[arm] * s + nu[arm][c]
        cum = 1.0 / (1.0 + np.exp(-(cut[arm][None, :] + eta[:, None])))
        u = rng.random(n)
        ys.append(1 + (u[:, None] > cum).sum(axis=1))
    y = np.where(t == 1, ys[1], ys[0]).astype(float)
    d = validate(Dataset.from_arrays(y, t, z, c + 1, x, outcome_spec=OutcomeSpec("ordinal", K),
                                     n_clusters=n_clusters))
    if return_truth:
        return d, {"s": s, "y0": ys[0], "y1": ys[1], "r": r, "nu": nu}
    return d


@dataclass
class StudyResult:
    rows: list = field(default_factory=list)
    replicate_log: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)

    def table(self, method, estimand, h=None):
        for r in self.rows:
            if r["method"] == method and r["estimand"] == estimand and (h is None or r["h"] == h):
                return r
        raise KeyError((method, estimand, h))


def _fit_replicate(sim: SimulatedDataset, methods, chain_config, priors, n_clusters):
    d = sim.dataset
    est = {}
    if "local_iv" in methods:
        if n_clusters > 1:
            cl = np.arange(d.n) % n_clusters + 1
            d = replace(d, cluster=cl, n_clusters=n_clusters,
                        cluster_labels=tuple(str(g) for g in range(1, n_clusters + 1)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = mcmc.run(d, d.outcome_spec, priors, chain_config)
        res = aggregate(fit.store, d, d.iv_range, grid=())
        est["local_iv"] = (res.att.mean, res.prte.mean)
    unit_clusters = np.arange(sim.dataset.n) + 1
    if "ols" in methods:
        f = baselines.ols_att(sim.dataset, clusters=unit_clusters)
        est["ols"] = (f.estimate, f.estimate)
    if "tsls" in methods:
        f = baselines.tsls_att(sim.dataset, clusters=unit_clusters)
        est["tsls"] = (f.estimate, f.estimate)
    return est


def run_study(config: SimulationConfig, methods=METHODS, chain_config=None, *, priors=None,
              n_clusters=1, h_values=None, progress=None) -> StudyResult:
    """Bias and RMSE of each method for ATT and PRTE over replicates.

    ``h_values`` sweeps the heterogeneity correlation (default: just
    ``config.h``).  Replicate ``b`` of setting ``h`` uses a stream derived
    from ``(seed, b)``, so settings share their random draws.
    """
    chain_config = chain_config or mcmc.ChainConfig(n_chains=3, n_iterations=5000, thin=5,
                                                    seed=config.seed)
    priors = priors or PriorConfig()
    methods = tuple(m for m in METHODS if m in methods)
    result = StudyResult()
    for h in (h_values if h_values is not None else [config.h]):
        cfg = replace(config, h=float(h))
        errors = {(m, e): [] for m in methods for e in ESTIMANDS}
        failed = 0
        for b in range(cfg.replicates):
            sim = simulate(cfg, replicate_rng(cfg.seed, b))
            try:
                att_b, prte_b = finite_sample_estimands(sim)
                cc = replace(chain_config, seed=int(np.random.SeedSequence([cfg.seed, b, 7]).generate_state(1)[0]))
                est = _fit_replicate(sim, methods, cc, priors, n_clusters)
            except (ValueError, mcmc.SamplingError, np.linalg.LinAlgError) as exc:
                failed += 1
                log.warning("replicate %d (h=%g) failed: %s", b, h, exc)
                result.replicate_log.append({"h": cfg.h, "replicate": b, "method": "", "estimand": "",
                                             "estimate": math.nan, "truth": math.nan,
                                             "error": math.nan, "status": f"failed: {exc}"})
                if failed > 0.05 * cfg.replicates:
                    raise RuntimeError(f"more than 5% of replicates failed at h={h}") from exc
                continue
            for m in methods:
                for e, est_v, truth in zip(ESTIMANDS, est[m], (att_b, prte_b)):
                    errors[(m, e)].append(est_v - truth)
                    result.replicate_log.append({"h": cfg.h, "replicate": b, "method": m, "estimand": e,
                                                 "estimate": est_v, "truth": truth,
                                                 "error": est_v - truth, "status": "ok"})
            if progress:
                progress(h, b)
        result.failures[cfg.h] = failed
        for (m, e), errs in errors.items():
            errs = np.asarray(errs)
            result.rows.append({
                "method": m, "estimand": e, "h": cfg.h, "p": cfg.p, "N": cfg.n,
                "replicates": cfg.replicates,
                "abs_bias": abs(float(errs.mean())) if errs.size else math.nan,
                "rmse": math.sqrt(float((errs ** 2).mean())) if errs.size else math.nan,
                "failures": failed,
            })
    return result
