"""Per-arm outcome models and the analytic conditional treatment effect.

Ordinal outcomes follow a proportional-odds model with

    logit Pr(Y(t) <= k | x, s, g) = alpha[t, k] + beta[t] . x + gamma[t] s + nu[t, g]

and gaussian outcomes a linear model with the same predictor plus an
arm-specific intercept.  Arrays in :class:`OutcomeParams` are stacked by
arm, so ``beta[1]`` holds the treated-arm coefficients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass
class OutcomeParams:
    family: str
    beta: np.ndarray
    gamma: np.ndarray
    tau: np.ndarray
    rand_effects: np.ndarray
    cutpoints: np.ndarray | None = None
    intercept: np.ndarray | None = None
    residual_sd: np.ndarray | None = None

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).reshape(2, -1)
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(2)
        self.tau = np.asarray(self.tau, dtype=float).reshape(2)
        self.rand_effects = np.asarray(self.rand_effects, dtype=float).reshape(2, -1)
        if np.any(self.tau < 0):
            raise ValueError("random-effect sd must be non-negative")
        if self.family == "ordinal":
            self.cutpoints = np.asarray(self.cutpoints, dtype=float).reshape(2, -1)
            if np.any(np.diff(self.cutpoints, axis=1) <= 0):
                raise ValueError("cutpoints must be strictly increasing")
        elif self.family == "gaussian":
            self.intercept = np.asarray(self.intercept, dtype=float).reshape(2)
            self.residual_sd = np.asarray(self.residual_sd, dtype=float).reshape(2)
            if np.any(self.residual_sd <= 0):
                raise ValueError("residual sd must be positive")
        else:
            raise ValueError(f"unknown family {self.family!r}")

    @property
    def K(self):
        return self.cutpoints.shape[1] + 1 if self.family == "ordinal" else None


@dataclass(frozen=True)
class SensitivityExtension:
    """Direct instrument effect ``delta`` shared by both arms."""

    delta: float = 0.0


def cutpoints_to_free(alpha):
    """Map increasing cutpoints to (first cutpoint, log gaps)."""
    alpha = np.asarray(alpha, dtype=float)
    return np.concatenate((alpha[..., :1], np.log(np.diff(alpha, axis=-1))), axis=-1)


def free_to_cutpoints(free):
    free = np.asarray(free, dtype=float)
    return np.cumsum(np.concatenate((free[..., :1], np.exp(free[..., 1:])), axis=-1), axis=-1)


def linear_predictor(arm, x, s, cluster, params: OutcomeParams, extension=None, z=None):
    """Arm predictor without cutpoints.

    ``cluster=None`` sets the random effect to zero.  For the gaussian
    family the arm intercept is included.
    """
    if (extension is None) != (z is None):
        raise ValueError("z must be supplied exactly when an extension is given")
    x = np.asarray(x, dtype=float)
    b = params.beta[arm]
    eta = (x @ b if b.size else np.zeros(x.shape[:-1])) + params.gamma[arm] * np.asarray(s, dtype=float)
    if cluster is not None:
        eta = eta + params.rand_effects[arm][np.asarray(cluster) - 1]
    if extension is not None and extension.delta != 0.0:
        eta = eta + extension.delta * np.asarray(z, dtype=float)
    if params.family == "gaussian":
        eta = eta + params.intercept[arm]
    return eta


def cumulative_prob(k, arm, x, s, cluster, params: OutcomeParams, extension=None, z=None):
    """Pr(Y(arm) <= k | x, s, cluster) for the ordinal family."""
    K = params.K
    if not 1 <= k <= K - 1:
        raise ValueError(f"level k={k} outside 1..{K - 1}")
    eta = linear_predictor(arm, x, s, cluster, params, extension, z)
    return kernels.sigmoid(params.cutpoints[arm, k - 1] + np.asarray(eta, dtype=float))


def outcome_log_likelihood(y, arm, x, s, cluster, params: OutcomeParams, extension=None, z=None):
    """Log density (gaussian) or log probability (ordinal) of outcome ``y``."""
    eta = np.atleast_1d(np.asarray(linear_predictor(arm, x, s, cluster, params, extension, z), dtype=float))
    y = np.atleast_1d(y)
    if params.family == "ordinal":
        K = params.K
        if np.any((y < 1) | (y > K)):
            raise ValueError(f"outcome outside 1..{K}")
        out = np.empty(eta.shape[0])
        kernels.ordinal_loglik(y.astype(np.int_), eta, params.cutpoints[arm], out)
    else:
        sd = params.residual_sd[arm]
        r = (y - eta) / sd
        out = -0.5 * r * r - math.log(sd) - 0.5 * math.log(2 * math.pi)
    return out[0] if out.shape == (1,) and np.ndim(s) == 0 else out


def expected_outcome(arm, x, s, cluster, params: OutcomeParams, extension=None, z=None):
    """E[Y(arm) | x, s, cluster]; for ordinal levels 1..K this is K - sum_k Pr(Y <= k)."""
    eta = linear_predictor(arm, x, s, cluster, params, extension, z)
    if params.family == "gaussian":
        return eta
    e = np.atleast_1d(np.asarray(eta, dtype=float)).ravel()
    out = np.empty(e.shape[0])
    kernels.ordinal_cumsum(e, params.cutpoints[arm], out)
    res = params.K - out.reshape(np.shape(eta))
    return float(res) if np.ndim(res) == 0 else res


def mte_conditional(s, x, cluster, params: OutcomeParams, extension=None, z=None):
    """E[Y(1) - Y(0) | S = s, X = x, cluster].

    Ordinal: sum over k of sig(alpha0k + eta0) - sig(alpha1k + eta1).
    Gaussian: difference of the two arm means.
    """
    if params.family == "gaussian":
        return (linear_predictor(1, x, s, cluster, params, extension, z)
                - linear_predictor(0, x, s, cluster, params, extension, z))
    sums = []
    for arm in (0, 1):
        eta = linear_predictor(arm, x, s, cluster, params, extension, z)
        e = np.atleast_1d(np.asarray(eta, dtype=float)).ravel()
        out = np.empty(e.shape[0])
        kernels.ordinal_cumsum(e, params.cutpoints[arm], out)
        sums.append(out.reshape(np.shape(eta)))
    res = sums[0] - sums[1]
    return float(res) if np.ndim(res) == 0 else res
