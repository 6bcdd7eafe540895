"""Metropolis-within-Gibbs posterior simulation.

One sweep updates, in order:

1. latent strata (independence Metropolis from the truncated selection
   prior for ordinal outcomes; exact truncated-normal draw for gaussian
   outcomes),
2. selection intercept and coefficients, latent variance and cluster
   effects (conjugate Gibbs), then ``tau_s`` (log-scale random walk),
3. per arm: cutpoints, coefficients and stratum slope (adaptive random
   walk, ordinal) or a conjugate regression draw (gaussian), cluster
   effects and ``tau[t]``; for ordinal outcomes two more random-walk moves
   per arm, one scaling the whole predictor and one trading the stratum
   slope against the latent mean, cross the ridge where these are weakly
   identified.

Proposal scales adapt only during burn-in and are frozen afterwards.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import kernels
from .data import Dataset, OutcomeSpec, PriorConfig, standardized_x, validate
from .outcome import OutcomeParams, SensitivityExtension, cutpoints_to_free, free_to_cutpoints
from .selection import SelectionParams, strata_consistent

RHAT_THRESHOLD = 1.1
SCALAR_TARGET = 0.44
VECTOR_TARGET = 0.23
SCALAR_BAND = (0.15, 0.75)
VECTOR_BAND = (0.08, 0.5)


class SamplingError(RuntimeError):
    pass


@dataclass
class ChainConfig:
    n_chains: int = 3
    n_iterations: int = 50000
    burn_in: int | None = None
    thin: int = 25
    seed: int = 0
    adaptation_window: int = 100
    n_jobs: int = 1

    def __post_init__(self):
        if self.burn_in is None:
            self.burn_in = self.n_iterations // 2
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("burn_in must be in [0, n_iterations)")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.adaptation_window < 1:
            raise ValueError("adaptation_window must be >= 1")

    @property
    def n_keep(self):
        return (self.n_iterations - self.burn_in) // self.thin


@dataclass
class Draw:
    """One retained posterior draw, in the samplers' standardized covariate scale."""

    selection: SelectionParams
    outcome: OutcomeParams
    strata: np.ndarray
    extension: SensitivityExtension | None = None


@dataclass(eq=False)
class PosteriorStore:
    """Retained draws, each array shaped (n_chains, n_keep, ...)."""

    family: str
    draws: dict
    iterations: np.ndarray
    delta: float | None = None
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    covariate_names: tuple = ()

    @property
    def n_chains(self):
        return self.draws["sigma"].shape[0]

    @property
    def n_keep(self):
        return self.draws["sigma"].shape[1]

    @property
    def n_draws(self):
        return self.n_chains * self.n_keep

    def stacked(self, name):
        a = self.draws[name]
        return a.reshape((a.shape[0] * a.shape[1],) + a.shape[2:])

    @property
    def extension(self):
        return None if self.delta is None else SensitivityExtension(self.delta)

    def draw(self, j) -> Draw:
        g = {k: self.stacked(k)[j] for k in self.draws}
        sel = SelectionParams(g["beta_s"], float(g["sigma"]), float(g["tau_s"]), g["r"],
                              intercept=float(g["intercept_s"]))
        if self.family == "ordinal":
            out = OutcomeParams("ordinal", g["beta"], g["gamma"], g["tau"], g["nu"],
                                cutpoints=g["alpha"])
        else:
            out = OutcomeParams("gaussian", g["beta"], g["gamma"], g["tau"], g["nu"],
                                intercept=g["intercept"], residual_sd=g["resid_sd"])
        return Draw(sel, out, g["s"], self.extension)

    def subsample(self, n_keep):
        """First ``n_keep`` retained draws of every chain."""
        return PosteriorStore(self.family, {k: v[:, :n_keep] for k, v in self.draws.items()},
                              self.iterations[:n_keep], self.delta, self.x_mean, self.x_scale,
                              self.covariate_names)

    def scalar_names(self, include_strata=False):
        """Flat names and (n_chains, n_keep) arrays of every scalar component."""
        out = []
        for name in _PARAM_ORDER:
            if name not in self.draws or (name == "s" and not include_strata):
                continue
            a = self.draws[name]
            for idx in np.ndindex(*a.shape[2:]):
                out.append((_flat_name(name, idx), a[(slice(None), slice(None)) + idx]))
        return out

    def raw_scale(self):
        """Coefficient draws mapped back to the raw covariate scale.

        Returns a dict with ``intercept_s``, ``beta_s``, ``beta`` and either
        ``alpha`` (ordinal) or ``intercept`` (gaussian), each stacked over
        chains.
        """
        sc = self.x_scale if self.x_scale is not None else 1.0
        mu = self.x_mean if self.x_mean is not None else 0.0
        bs = self.stacked("beta_s") / sc
        b = self.stacked("beta") / sc
        res = {"beta_s": bs, "beta": b,
               "intercept_s": self.stacked("intercept_s") - (bs * mu).sum(axis=-1)}
        shift = (b * mu).sum(axis=-1)
        if self.family == "ordinal":
            res["alpha"] = self.stacked("alpha") - shift[..., None]
        else:
            res["intercept"] = self.stacked("intercept") - shift
        return res


_PARAM_ORDER = ("intercept_s", "beta_s", "sigma", "tau_s", "r", "alpha", "intercept",
                "beta", "gamma", "tau", "nu", "resid_sd", "s")


def _flat_name(name, idx):
    if not idx:
        return name
    if name in ("beta_s", "r", "s"):
        return f"{name}[{idx[0] + 1}]"
    if len(idx) == 1:
        return f"{name}[t={idx[0]}]"
    inner = {"alpha": "k", "beta": "j", "nu": "g"}[name]
    return f"{name}[t={idx[0]},{inner}={idx[1] + 1}]"


@dataclass
class Diagnostics:
    rhat: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def max_rhat(self):
        vals = [v for v in self.rhat.values() if np.isfinite(v)]
        return max(vals) if vals else math.nan


class Fit(NamedTuple):
    store: PosteriorStore
    diagnostics: Diagnostics


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor of a (m chains, n draws) array.

    Returns NaN when the within-chain variance is zero.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError("need >= 2 chains with >= 2 draws each")
    n = x.shape[1]
    W = x.var(axis=1, ddof=1).mean()
    if W == 0:
        return math.nan
    B = n * x.mean(axis=1).var(ddof=1)
    V = (n - 1) / n * W + B / n
    return math.sqrt(V / W)


def update_latent_strata(s, t, z, prior_mean, sigma, loglik, rng):
    """One Metropolis transition for every unit's stratum.

    Proposals are drawn from ``N(prior_mean, sigma^2)`` truncated to the
    region implied by ``(t, z)`` and accepted with the ratio of
    ``loglik(proposal) / loglik(current)``, where ``loglik`` maps a strata
    vector to per-unit log-likelihoods of the observed arm.  ``loglik=None``
    means the outcome carries no information and every proposal is kept.
    Returns the new strata and the acceptance mask.
    """
    s = np.asarray(s, dtype=float)
    n = s.shape[0]
    upper = (np.asarray(t) == 0).astype(np.int8)
    u_prop = 1.0 - rng.random(n)
    u_acc = 1.0 - rng.random(n)
    prop = np.empty(n)
    kernels.truncnorm_draw(np.broadcast_to(prior_mean, (n,)), sigma, z, upper, u_prop, prop)
    if loglik is None:
        return prop, np.ones(n, dtype=bool)
    with np.errstate(invalid="ignore"):
        acc = np.log(u_acc) < loglik(prop) - loglik(s)
    return np.where(acc, prop, s), acc


class _Problem:
    """Data arrays shared by every chain."""

    def __init__(self, dataset: Dataset, spec: OutcomeSpec, priors: PriorConfig, delta):
        d = dataset
        self.family = spec.family
        self.K = spec.K
        self.N = d.n
        self.p = d.p
        self.G = d.n_clusters
        self.X = standardized_x(d)
        self.W = np.column_stack([np.ones(self.N), self.X])
        self.WtW = self.W.T @ self.W
        self.c = d.cluster - 1
        self.n_g = np.bincount(self.c, minlength=self.G).astype(float)
        self.z = d.z
        self.t = d.t
        self.y = d.y
        self.upper = (d.t == 0).astype(np.int8)
        self.V0 = priors.coef_variance
        self.A = priors.half_cauchy_scale
        self.delta = None if delta is None else float(delta)
        self.z_sd = float(d.z.std()) or 1.0
        self.z_median = float(np.median(d.z))
        self.arms = []
        for arm in (0, 1):
            idx = np.flatnonzero(d.t == arm)
            a = {
                "idx": idx,
                "X": self.X[idx],
                "c": self.c[idx],
                "z": d.z[idx],
                "y": d.y[idx].astype(np.int_) if spec.ordinal else d.y[idx],
                "upper": self.upper[idx],
                "n": idx.size,
                "n_g": np.bincount(self.c[idx], minlength=self.G).astype(float),
            }
            a["offset"] = (self.delta * a["z"]) if self.delta else np.zeros(idx.size)
            if not spec.ordinal:
                a["D0"] = np.column_stack([np.ones(idx.size), a["X"]])
            self.arms.append(a)


def _log_half_cauchy_post(log_tau, effects, A):
    """Log target for log(tau): half-Cauchy prior, N(0, tau^2) effects, Jacobian."""
    tau = math.exp(log_tau)
    G = effects.shape[0]
    return (-math.log1p((tau / A) ** 2) - G * log_tau
            - 0.5 * float(effects @ effects) / (tau * tau) + log_tau)


class _Chain:
    def __init__(self, prob: _Problem, cfg: ChainConfig, rng, fixed=None,
                 outcome_likelihood=True, init=None):
        self.P = prob
        self.cfg = cfg
        self.rng = rng
        self.fixed = dict(fixed or {})
        self.lik = outcome_likelihood
        self._init(init or {})
        self.acc = {}
        self.tries = {}

    # -- initial state -------------------------------------------------
    def _init(self, init):
        P, rng = self.P, self.rng
        self.intercept_s = P.z_median + rng.normal()
        self.beta_s = rng.normal(size=P.p)
        self.sigma2 = 1.0
        self.tau_s = math.exp(0.5 * rng.normal())
        self.r = np.zeros(P.G)
        self.beta = rng.normal(size=(2, P.p))
        self.gamma = rng.normal(size=2) / P.z_sd
        self.tau = np.exp(0.5 * rng.normal(size=2))
        self.nu = np.zeros((2, P.G))
        if P.family == "ordinal":
            K = P.K
            self.alpha_free = np.empty((2, K - 1))
            for arm in (0, 1):
                y = P.arms[arm]["y"]
                counts = np.bincount(y, minlength=K + 1)[1:] + 0.5
                cum = np.cumsum(counts)[:-1] / counts.sum()
                alpha = np.log(cum / (1 - cum)) + 0.1 * rng.normal(size=K - 1)
                alpha = np.sort(alpha)
                alpha[1:] = np.maximum(alpha[1:], alpha[:-1] + 1e-3)
                alpha = np.maximum.accumulate(alpha)
                self.alpha_free[arm] = cutpoints_to_free(alpha)
        else:
            self.intercept = rng.normal(size=2)
            self.resid_var = np.array([max(np.var(P.arms[a]["y"]), 1e-6) if P.arms[a]["n"] > 1 else 1.0
                                       for a in (0, 1)])
        for k, v in init.items():
            setattr(self, k, np.array(v, dtype=float) if np.ndim(v) else float(v))
        for k, v in self.fixed.items():
            setattr(self, k, np.array(v, dtype=float) if np.ndim(v) else float(v))
        if "s" not in self.fixed and "s" not in init:
            m = self._latent_mean()
            self.s = np.empty(P.N)
            kernels.truncnorm_draw(m, math.sqrt(self.sigma2), P.z, P.upper,
                                   1.0 - rng.random(P.N), self.s)
        if not np.all(strata_consistent(self.s, P.t, P.z)):
            raise SamplingError("initial strata violate the treatment threshold rule")
        if P.family == "ordinal" and self.lik:
            for arm in (0, 1):
                ll = self._arm_loglik(arm, self.alpha_free[arm], self.beta[arm], self.gamma[arm],
                                      self.nu[arm])
                if not np.all(np.isfinite(ll)):
                    raise SamplingError("non-finite outcome likelihood at initialization")

        # proposal state
        d = (P.K + P.p) if P.family == "ordinal" else 0
        self.theta_dim = d
        self.theta_cov = [np.eye(d) * 0.01 for _ in (0, 1)]
        self.theta_chol = [np.linalg.cholesky(c) for c in self.theta_cov]
        self.theta_logscale = np.full(2, math.log(2.38 / math.sqrt(max(d, 1))))
        self.theta_hist = [[], []]
        self.nu_logstep = np.full((2, P.G), math.log(0.5))
        self.logstep = {}  # scalar random-walk blocks, keyed by block name
        self.window_acc = {}

    def _latent_mean(self):
        P = self.P
        return self.intercept_s + (P.X @ self.beta_s if P.p else 0.0) + self.r[P.c]

    def _arm_eta(self, arm, beta, gamma, nu, s=None):
        a = self.P.arms[arm]
        s = self.s[a["idx"]] if s is None else s
        eta = (a["X"] @ beta if self.P.p else 0.0) + gamma * s + nu[a["c"]] + a["offset"]
        return eta

    def _arm_loglik(self, arm, free, beta, gamma, nu):
        a = self.P.arms[arm]
        out = np.empty(a["n"])
        kernels.ordinal_loglik(a["y"], self._arm_eta(arm, beta, gamma, nu), free_to_cutpoints(free), out)
        return out

    def _count(self, block, accepted, tries=1):
        self.acc[block] = self.acc.get(block, 0) + accepted
        self.tries[block] = self.tries.get(block, 0) + tries

    # -- blocks --------------------------------------------------------
    def update_strata(self):
        P, rng = self.P, self.rng
        m = self._latent_mean()
        sigma = math.sqrt(self.sigma2)
        acc_total = 0
        for arm in (0, 1):
            a = P.arms[arm]
            n = a["n"]
            if n == 0:
                continue
            idx = a["idx"]
            mi = m[idx]
            if P.family == "ordinal":
                u_prop = 1.0 - rng.random(n)
                u_acc = 1.0 - rng.random(n)
                s_arm = self.s[idx].copy()
                if self.lik:
                    eta = self._arm_eta(arm, self.beta[arm], 0.0, self.nu[arm], s=np.zeros(n))
                    acc_total += kernels.stratum_mh_ordinal(
                        s_arm, a["y"], eta, float(self.gamma[arm]),
                        free_to_cutpoints(self.alpha_free[arm]), mi, sigma, a["z"], a["upper"],
                        u_prop, u_acc)
                else:
                    kernels.truncnorm_draw(mi, sigma, a["z"], a["upper"], u_prop, s_arm)
                    acc_total += n
            else:
                u = 1.0 - rng.random(n)
                s_arm = np.empty(n)
                if self.lik:
                    g = self.gamma[arm]
                    w2 = self.resid_var[arm]
                    mu = self.intercept[arm] + (a["X"] @ self.beta[arm] if P.p else 0.0) \
                        + self.nu[arm][a["c"]] + a["offset"]
                    prec = 1.0 / self.sigma2 + g * g / w2
                    mean = (mi / self.sigma2 + g * (a["y"] - mu) / w2) / prec
                    kernels.truncnorm_draw(mean, 1.0 / math.sqrt(prec), a["z"], a["upper"], u, s_arm)
                else:
                    kernels.truncnorm_draw(mi, sigma, a["z"], a["upper"], u, s_arm)
                acc_total += n
            self.s[idx] = s_arm
        self._count("strata", acc_total, P.N)

    def update_selection(self):
        P, rng = self.P, self.rng
        q = P.p + 1
        if "beta_s" not in self.fixed:
            e = self.s - self.r[P.c]
            Q = P.WtW / self.sigma2 + np.eye(q) / P.V0
            L = np.linalg.cholesky(Q)
            mean = cho_solve((L, True), P.W.T @ e / self.sigma2)
            coef = mean + solve_triangular(L.T, rng.normal(size=q), lower=False)
            self.intercept_s = float(coef[0])
            self.beta_s = coef[1:]
        lin = self.intercept_s + (P.X @ self.beta_s if P.p else 0.0)
        if "sigma2" not in self.fixed:
            resid = self.s - lin - self.r[P.c]
            self.sigma2 = 0.5 * float(resid @ resid) / rng.standard_gamma(0.5 * P.N)
        if "r" not in self.fixed:
            sums = np.bincount(P.c, self.s - lin, minlength=P.G)
            prec = P.n_g / self.sigma2 + 1.0 / self.tau_s ** 2
            self.r = sums / self.sigma2 / prec + rng.normal(size=P.G) / np.sqrt(prec)
        if "tau_s" not in self.fixed:
            self.tau_s = self._update_tau(self.tau_s, self.r, "tau_s")
            if "r" not in self.fixed:
                sums = np.bincount(P.c, self.s - lin, minlength=P.G)
                self.tau_s, self.r = self._rescale(
                    self.tau_s, self.r, "scale_s",
                    lambda r: -0.5 * float(P.n_g @ (r * r) - 2.0 * (r @ sums)) / self.sigma2)

    def _update_tau(self, tau, effects, block):
        rng = self.rng
        step = math.exp(self.logstep.setdefault(block, math.log(0.5)))
        cur = math.log(tau)
        prop = cur + step * rng.normal()
        la = _log_half_cauchy_post(prop, effects, self.P.A) - _log_half_cauchy_post(cur, effects, self.P.A)
        ok = math.log(1.0 - rng.random()) < la
        self._count(block, int(ok))
        self._adapt_scalar(block, ok)
        return math.exp(prop) if ok else tau

    def _rescale(self, tau, effects, block, loglik):
        """Joint move (tau, effects) -> (c tau, c effects) with log c symmetric.

        The effects' Normal prior and the Jacobian cancel, leaving the
        half-Cauchy prior of tau (on the log scale) and the likelihood of the
        effects.  Without data this samples tau's prior directly, which
        removes the funnel between tau and the effects.
        """
        rng = self.rng
        step = math.exp(self.logstep.setdefault(block, math.log(0.5)))
        eps = step * rng.normal()
        new_tau = tau * math.exp(eps)
        new_eff = effects * math.exp(eps)
        A = self.P.A
        la = (-math.log1p((new_tau / A) ** 2) + math.log1p((tau / A) ** 2) + eps
              + loglik(new_eff) - loglik(effects))
        ok = math.log(1.0 - rng.random()) < la
        self._count(block, int(ok))
        self._adapt_scalar(block, ok)
        return (new_tau, new_eff) if ok else (tau, effects)

    def _theta_logprior(self, free, beta, gamma):
        alpha = free_to_cutpoints(free)
        V0 = self.P.V0
        return (-0.5 * (float(alpha @ alpha) + float(beta @ beta) + gamma * gamma) / V0
                + float(free[1:].sum()))

    def update_arm_ordinal(self, arm):
        P, rng = self.P, self.rng
        K = P.K
        a = P.arms[arm]
        theta = np.concatenate([self.alpha_free[arm], self.beta[arm], [self.gamma[arm]]])
        prop = theta + math.exp(self.theta_logscale[arm]) * (self.theta_chol[arm] @ rng.normal(size=theta.size))
        u = 1.0 - rng.random()

        def split(th):
            return th[:K - 1], th[K - 1:K - 1 + P.p], float(th[-1])

        f0, b0, g0 = split(theta)
        f1, b1, g1 = split(prop)
        if self.lik and a["n"]:
            ll_cur = self._arm_loglik(arm, f0, b0, g0, self.nu[arm])
            ll_prop = self._arm_loglik(arm, f1, b1, g1, self.nu[arm])
            dl = float(ll_prop.sum() - ll_cur.sum())
        else:
            ll_cur = ll_prop = None
            dl = 0.0
        la = dl + self._theta_logprior(f1, b1, g1) - self._theta_logprior(f0, b0, g0)
        ok = math.log(u) < la
        if ok:
            self.alpha_free[arm], self.beta[arm], self.gamma[arm] = f1, b1, g1
            ll_cur = ll_prop
        self._count(f"theta[t={arm}]", int(ok))
        self._adapt_theta(arm, ok)

        # cluster effects, one independent random-walk move per cluster
        tau2 = self.tau[arm] ** 2
        if self.lik and a["n"]:
            steps = np.exp(self.nu_logstep[arm])
            nu_prop = self.nu[arm] + steps * rng.normal(size=P.G)
            u_g = 1.0 - rng.random(P.G)
            ll_new = self._arm_loglik(arm, self.alpha_free[arm], self.beta[arm], self.gamma[arm], nu_prop)
            d_g = np.bincount(a["c"], ll_new - ll_cur, minlength=P.G)
            d_g += -0.5 * (nu_prop ** 2 - self.nu[arm] ** 2) / tau2
            with np.errstate(invalid="ignore"):
                acc = np.log(u_g) < d_g
            self.nu[arm] = np.where(acc, nu_prop, self.nu[arm])
            self._count(f"nu[t={arm}]", int(acc.sum()), P.G)
            self._adapt_nu(arm, acc)
        elif "nu" not in self.fixed:
            self.nu[arm] = math.sqrt(tau2) * rng.normal(size=P.G)
        if "tau" not in self.fixed:
            self.tau[arm] = self._update_tau(self.tau[arm], self.nu[arm], f"tau[t={arm}]")
            if "nu" not in self.fixed:
                if self.lik and a["n"]:
                    th = (self.alpha_free[arm], self.beta[arm], self.gamma[arm])
                    ll = lambda nu: float(self._arm_loglik(arm, *th, nu).sum())
                else:
                    ll = lambda nu: 0.0
                self.tau[arm], self.nu[arm] = self._rescale(self.tau[arm], self.nu[arm],
                                                            f"scale[t={arm}]", ll)
        if self.lik and a["n"] and "nu" not in self.fixed:
            if "tau" not in self.fixed:
                self._scale_arm(arm)
            self._shift_arm(arm)

    def _ridge_step(self, arm, block, cur, new, log_ratio):
        """Metropolis step between two coefficient sets of one arm, strata held fixed."""
        la = (float(self._arm_loglik(arm, *new).sum() - self._arm_loglik(arm, *cur).sum())
              + log_ratio)
        ok = math.log(1.0 - self.rng.random()) < la
        self._count(block, int(ok))
        self._adapt_scalar(block, ok)
        return ok

    def _shift_arm(self, arm):
        """Move gamma by d while beta, nu and the first cutpoint absorb d times the latent mean.

        The predictor then changes by d (s_i - mean_i), the part of the
        stratum the covariates and cluster effects do not explain.  The map
        is a translation, so there is no Jacobian.
        """
        block = f"arm_shift[t={arm}]"
        d = math.exp(self.logstep.setdefault(block, math.log(0.1))) * self.rng.normal()
        f0, b0, g0, nu0 = self.alpha_free[arm], self.beta[arm], self.gamma[arm], self.nu[arm]
        f1 = f0.copy()
        f1[0] += d * self.intercept_s
        b1, g1, nu1 = b0 - d * self.beta_s, g0 + d, nu0 - d * self.r
        tau2 = self.tau[arm] ** 2
        lr = (self._theta_logprior(f1, b1, g1) - self._theta_logprior(f0, b0, g0)
              - 0.5 * float(nu1 @ nu1 - nu0 @ nu0) / tau2)
        if self._ridge_step(arm, block, (f0, b0, g0, nu0), (f1, b1, g1, nu1), lr):
            self.alpha_free[arm], self.beta[arm], self.gamma[arm], self.nu[arm] = f1, b1, g1, nu1

    def _scale_arm(self, arm):
        """Multiply the whole predictor of one arm (cutpoints, beta, gamma, nu, tau) by c.

        Logit models with latent unit heterogeneity have a ridge along which
        every coefficient grows together.  On (alpha_1, log gaps, beta, gamma,
        nu, log tau) the move is linear with log Jacobian (2 + p + G) log c.
        """
        P = self.P
        block = f"arm_scale[t={arm}]"
        eps = math.exp(self.logstep.setdefault(block, math.log(0.1))) * self.rng.normal()
        c = math.exp(eps)
        f0, b0, g0, nu0, tau0 = self.alpha_free[arm], self.beta[arm], self.gamma[arm], self.nu[arm], self.tau[arm]
        f1 = np.concatenate([f0[:1] * c, f0[1:] + eps])
        b1, g1, nu1, tau1 = b0 * c, g0 * c, nu0 * c, tau0 * c
        A = P.A

        def lp(f, b, g, nu, tau):
            return (self._theta_logprior(f, b, g) - P.G * math.log(tau) - 0.5 * float(nu @ nu) / (tau * tau)
                    - math.log1p((tau / A) ** 2) + math.log(tau))

        lr = lp(f1, b1, g1, nu1, tau1) - lp(f0, b0, g0, nu0, tau0) + (2 + P.p + P.G) * eps
        if self._ridge_step(arm, block, (f0, b0, g0, nu0), (f1, b1, g1, nu1), lr):
            self.alpha_free[arm], self.beta[arm], self.gamma[arm], self.nu[arm], self.tau[arm] = f1, b1, g1, nu1, tau1

    def update_arm_gaussian(self, arm):
        P, rng = self.P, self.rng
        a = P.arms[arm]
        q = P.p + 2
        V0 = P.V0
        if self.lik and a["n"]:
            s_arm = self.s[a["idx"]]
            D = np.column_stack([a["D0"], s_arm])
            target = a["y"] - self.nu[arm][a["c"]] - a["offset"]
            w2 = self.resid_var[arm]
            Q = D.T @ D / w2 + np.eye(q) / V0
            L = np.linalg.cholesky(Q)
            mean = cho_solve((L, True), D.T @ target / w2)
            coef = mean + solve_triangular(L.T, rng.normal(size=q), lower=False)
            fit = D @ coef
            resid = target - fit
            self.resid_var[arm] = 0.5 * float(resid @ resid) / rng.standard_gamma(0.5 * a["n"])
            sums = np.bincount(a["c"], a["y"] - a["offset"] - fit, minlength=P.G)
            prec = a["n_g"] / self.resid_var[arm] + 1.0 / self.tau[arm] ** 2
            self.nu[arm] = sums / self.resid_var[arm] / prec + rng.normal(size=P.G) / np.sqrt(prec)
        else:
            coef = math.sqrt(V0) * rng.normal(size=q)
            self.nu[arm] = self.tau[arm] * rng.normal(size=P.G)
        self.intercept[arm] = coef[0]
        self.beta[arm] = coef[1:1 + P.p]
        self.gamma[arm] = coef[-1]
        if "tau" not in self.fixed:
            self.tau[arm] = self._update_tau(self.tau[arm], self.nu[arm], f"tau[t={arm}]")
            if "nu" not in self.fixed:
                if self.lik and a["n"]:
                    sums = np.bincount(a["c"], a["y"] - a["offset"] - fit, minlength=P.G)
                    w2 = self.resid_var[arm]
                    ll = lambda nu: -0.5 * float(a["n_g"] @ (nu * nu) - 2.0 * (nu @ sums)) / w2
                else:
                    ll = lambda nu: 0.0
                self.tau[arm], self.nu[arm] = self._rescale(self.tau[arm], self.nu[arm],
                                                            f"scale[t={arm}]", ll)

    # -- adaptation ----------------------------------------------------
    def _gain(self):
        return (self.it + 1) ** -0.6

    def _track(self, block, ok):
        w = self.window_acc.setdefault(block, [0.0, 0])
        w[0] += ok
        w[1] += 1 if np.ndim(ok) == 0 else np.size(ok)

    def _adapt_scalar(self, block, ok):
        if not self.adapting:
            return
        self._track(block, ok)
        self.logstep[block] += self._gain() * (float(ok) - SCALAR_TARGET)

    def _adapt_nu(self, arm, acc):
        if not self.adapting:
            return
        self._track(f"nu[t={arm}]", int(acc.sum()) / acc.size)
        self.nu_logstep[arm] += self._gain() * (acc.astype(float) - SCALAR_TARGET)

    def _adapt_theta(self, arm, ok):
        if not self.adapting:
            return
        self._track(f"theta[t={arm}]", ok)
        self.theta_logscale[arm] += self._gain() * (float(ok) - VECTOR_TARGET)
        self.theta_hist[arm].append(np.concatenate([self.alpha_free[arm], self.beta[arm], [self.gamma[arm]]]))
        w = self.cfg.adaptation_window
        hist = self.theta_hist[arm]
        if (self.it + 1) % w == 0 and len(hist) >= 4 * self.theta_dim:
            h = np.asarray(hist[len(hist) // 2:])
            if h.shape[0] > self.theta_dim:
                cov = np.cov(h, rowvar=False) + 1e-8 * np.eye(self.theta_dim)
                try:
                    chol = np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    return
                # rescale so the composite step keeps the tuned magnitude
                old = np.sqrt(np.mean(np.diag(self.theta_cov[arm])))
                new = np.sqrt(np.mean(np.diag(cov)))
                self.theta_logscale[arm] += math.log(old / new) if new > 0 else 0.0
                self.theta_cov[arm], self.theta_chol[arm] = cov, chol

    # -- driver --------------------------------------------------------
    def run(self):
        P, cfg = self.P, self.cfg
        n_keep = cfg.n_keep
        G, p, N = P.G, P.p, P.N
        shapes = {"intercept_s": (), "beta_s": (p,), "sigma": (), "tau_s": (), "r": (G,),
                  "beta": (2, p), "gamma": (2,), "tau": (2,), "nu": (2, G), "s": (N,)}
        if P.family == "ordinal":
            shapes["alpha"] = (2, P.K - 1)
        else:
            shapes["intercept"] = (2,)
            shapes["resid_sd"] = (2,)
        out = {k: np.empty((n_keep,) + v) for k, v in shapes.items()}
        kept = []
        j = 0
        for it in range(cfg.n_iterations):
            self.it = it
            self.adapting = it < cfg.burn_in
            if it == cfg.burn_in:
                self._check_adaptation()
                self.acc.clear()
                self.tries.clear()
            if "s" not in self.fixed:
                self.update_strata()
            self.update_selection()
            for arm in (0, 1):
                if P.family == "ordinal":
                    self.update_arm_ordinal(arm)
                else:
                    self.update_arm_gaussian(arm)
            if self.adapting and (it + 1) % cfg.adaptation_window == 0 and it + 1 < cfg.burn_in:
                self.window_acc = {}
            if it >= cfg.burn_in and (it - cfg.burn_in + 1) % cfg.thin == 0:
                self._store(out, j)
                kept.append(it)
                j += 1
        rates = {b: self.acc[b] / self.tries[b] for b in sorted(self.acc) if self.tries[b]}
        return out, np.asarray(kept), rates, list(self.adapt_warnings)

    adapt_warnings = ()

    def _check_adaptation(self):
        msgs = []
        for block, (a, n) in sorted(self.window_acc.items()):
            if not n:
                continue
            rate = a / n
            lo, hi = VECTOR_BAND if block.startswith("theta") else SCALAR_BAND
            if not lo <= rate <= hi:
                msgs.append(f"block {block} acceptance {rate:.3f} outside [{lo}, {hi}] at end of adaptation")
        self.adapt_warnings = msgs

    def _store(self, out, j):
        P = self.P
        out["intercept_s"][j] = self.intercept_s
        out["beta_s"][j] = self.beta_s
        out["sigma"][j] = math.sqrt(self.sigma2)
        out["tau_s"][j] = self.tau_s
        out["r"][j] = self.r
        out["beta"][j] = self.beta
        out["gamma"][j] = self.gamma
        out["tau"][j] = self.tau
        out["nu"][j] = self.nu
        out["s"][j] = self.s
        if P.family == "ordinal":
            out["alpha"][j] = free_to_cutpoints(self.alpha_free)
        else:
            out["intercept"][j] = self.intercept
            out["resid_sd"][j] = np.sqrt(self.resid_var)


def _chain_worker(args):
    prob, cfg, seed_seq, fixed, lik, init = args
    rng = np.random.Generator(np.random.Philox(seed_seq))
    return _Chain(prob, cfg, rng, fixed=fixed, outcome_likelihood=lik, init=init).run()


def chain_seeds(seed, n_chains):
    return np.random.SeedSequence(seed).spawn(n_chains)


def run(dataset: Dataset, outcome_spec: OutcomeSpec | None = None, priors: PriorConfig | None = None,
        chain_config: ChainConfig | None = None, fixed_delta=None, *, fixed=None,
        outcome_likelihood=True, init=None) -> Fit:
    """Simulate the joint posterior of selection, outcome and strata.

    ``fixed_delta`` switches on the direct-instrument outcome term with the
    given coefficient held fixed; ``fixed_delta=0`` gives the same chain as
    the unextended model.  ``fixed`` pins named state components (e.g.
    ``{"s": strata, "tau_s": 0.5}``) and ``outcome_likelihood=False``
    drops the outcome likelihood; both exist for validation runs.
    """
    d = dataset if dataset.validated else validate(dataset)
    spec = outcome_spec or d.outcome_spec
    priors = priors or PriorConfig()
    cfg = chain_config or ChainConfig()
    if spec.ordinal and spec.K != d.outcome_spec.K and d.outcome_spec.ordinal:
        raise ValueError("outcome spec disagrees with dataset")
    prob = _Problem(d, spec, priors, fixed_delta)
    seeds = chain_seeds(cfg.seed, cfg.n_chains)
    jobs = [(prob, cfg, ss, fixed, outcome_likelihood, init) for ss in seeds]
    if cfg.n_jobs > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.n_jobs, cfg.n_chains)) as ex:
            results = list(ex.map(_chain_worker, jobs))
    else:
        results = [_chain_worker(j) for j in jobs]

    draws = {k: np.stack([r[0][k] for r in results]) for k in results[0][0]}
    store = PosteriorStore(spec.family, draws, results[0][1], fixed_delta, d.x_mean, d.x_scale,
                           d.covariate_names)
    diag = Diagnostics()
    for c, r in enumerate(results):
        for block, rate in r[2].items():
            diag.acceptance[(c, block)] = rate
        for msg in r[3]:
            diag.warnings.append(f"chain {c}: {msg}")
    if store.n_chains >= 2 and store.n_keep >= 2:
        for name, arr in store.scalar_names():
            diag.rhat[name] = gelman_rubin(arr)
        bad = [k for k, v in diag.rhat.items() if np.isfinite(v) and v > RHAT_THRESHOLD]
        if bad:
            diag.warnings.append(f"R-hat above {RHAT_THRESHOLD} for {len(bad)} parameter(s): "
                                 + ", ".join(bad[:8]))
    for msg in diag.warnings:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return Fit(store, diag)
