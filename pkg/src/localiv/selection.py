"""Latent-threshold selection model.

Each unit carries a latent stratum ``s`` drawn from
``N(intercept + beta_s . x + r[cluster], sigma^2)`` and takes the treatment
whenever the instrument reaches the threshold, ``T = 1{z >= s}``.  The
instrument's coefficient is fixed at one, so ``sigma`` is free.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr


@dataclass
class SelectionParams:
    beta_s: np.ndarray
    sigma: float
    tau_s: float
    rand_effects: np.ndarray
    intercept: float = 0.0

    def __post_init__(self):
        self.beta_s = np.atleast_1d(np.asarray(self.beta_s, dtype=float))
        self.rand_effects = np.atleast_1d(np.asarray(self.rand_effects, dtype=float))
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.tau_s >= 0:
            raise ValueError("tau_s must be non-negative")


class HalfLine(NamedTuple):
    """Support of the stratum consistent with an observed (T, Z) pair.

    ``(-inf, upper]`` when treated, ``(lower, inf)`` when untreated.
    """

    lower: float
    upper: float
    closed_upper: bool

    def __contains__(self, s):
        if self.closed_upper:
            return s <= self.upper
        return s > self.lower


def _effect(cluster, rand_effects):
    if cluster is None:
        return 0.0
    return rand_effects[np.asarray(cluster) - 1]


def latent_mean(x, cluster, params: SelectionParams):
    """Prior mean of the stratum; ``cluster=None`` zeroes the random effect."""
    x = np.asarray(x, dtype=float)
    lin = x @ params.beta_s if params.beta_s.size else np.zeros(x.shape[:-1])
    return params.intercept + lin + _effect(cluster, params.rand_effects)


def selection_prob(z, x, cluster, params: SelectionParams):
    """Pr(T = 1 | z, x, cluster) = Phi((z - mean) / sigma)."""
    return ndtr((np.asarray(z, dtype=float) - latent_mean(x, cluster, params)) / params.sigma)


def latent_log_prior(s, x, cluster, params: SelectionParams):
    m = latent_mean(x, cluster, params)
    u = (np.asarray(s, dtype=float) - m) / params.sigma
    return -0.5 * u * u - math.log(params.sigma) - 0.5 * math.log(2 * math.pi)


def truncation_region(treatment, z) -> HalfLine:
    z = float(z)
    if int(treatment) == 1:
        return HalfLine(-math.inf, z, True)
    return HalfLine(z, math.inf, False)


def strata_consistent(s, t, z) -> np.ndarray:
    """Elementwise check of the threshold rule for imputed strata."""
    s = np.asarray(s)
    t = np.asarray(t)
    return np.where(t == 1, s <= z, s > z)
