"""OLS regression adjustment and two-stage least squares with cluster-robust errors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm


class RankDeficientError(ValueError):
    pass


class WeakInstrumentError(ValueError):
    pass


@dataclass
class RegressionFit:
    coefficients: np.ndarray
    vcov: np.ndarray
    target_coef_index: int
    names: tuple
    n: int
    n_clusters: int
    residuals: np.ndarray
    first_stage_f: float | None = None

    @property
    def estimate(self):
        return float(self.coefficients[self.target_coef_index])

    @property
    def se(self):
        return float(np.sqrt(self.vcov[self.target_coef_index, self.target_coef_index]))

    def ci(self, level=0.95):
        q = norm.ppf(0.5 + level / 2)
        return self.estimate - q * self.se, self.estimate + q * self.se


def _lstsq(X, y):
    Q, R = np.linalg.qr(X)
    d = np.abs(np.diag(R))
    if d.size and d.min() <= 1e-10 * max(d.max(), 1.0):
        raise RankDeficientError("design matrix is rank deficient")
    return np.linalg.solve(R, Q.T @ y)


def _cluster_codes(clusters):
    _, codes = np.unique(np.asarray(clusters), return_inverse=True)
    return codes.ravel(), int(codes.max()) + 1 if codes.size else 0


def cluster_robust_vcov(design, residuals, clusters, bread=None):
    """Sandwich covariance with the G/(G-1) * (N-1)/(N-k) small-sample factor."""
    X = np.asarray(design, dtype=float)
    e = np.asarray(residuals, dtype=float)
    codes, G = _cluster_codes(clusters)
    if G < 2:
        raise ValueError("cluster-robust covariance needs at least 2 clusters")
    n, k = X.shape
    if bread is None:
        bread = np.linalg.inv(X.T @ X)
    scores = np.zeros((G, k))
    np.add.at(scores, codes, X * e[:, None])
    meat = scores.T @ scores
    factor = G / (G - 1) * (n - 1) / (n - k)
    v = factor * bread @ meat @ bread
    return 0.5 * (v + v.T)


def ols_att(dataset, clusters=None) -> RegressionFit:
    """Regress Y on (1, T, Xc, T*Xc) with covariates centred at their overall mean."""
    y = np.asarray(dataset.y, dtype=float)
    t = np.asarray(dataset.t, dtype=float)
    xc = dataset.x - dataset.x.mean(axis=0)
    X = np.column_stack([np.ones_like(y), t, xc, t[:, None] * xc])
    if X.shape[0] <= X.shape[1]:
        raise RankDeficientError("need more units than regressors")
    beta = _lstsq(X, y)
    resid = y - X @ beta
    cl = dataset.cluster if clusters is None else clusters
    vcov = cluster_robust_vcov(X, resid, cl)
    names = ("const", "T") + tuple(dataset.covariate_names) + tuple(f"T:{c}" for c in dataset.covariate_names)
    return RegressionFit(beta, vcov, 1, names, X.shape[0], _cluster_codes(cl)[1], resid)


def tsls_att(dataset, clusters=None) -> RegressionFit:
    """Two-stage least squares with the instrument excluded from the outcome equation.

    Stage 1 fits T on (1, X, Z); stage 2 fits Y on (1, X, fitted T).  The
    covariance uses structural residuals Y - (1, X, T) beta.
    """
    y = np.asarray(dataset.y, dtype=float)
    t = np.asarray(dataset.t, dtype=float)
    x = np.asarray(dataset.x, dtype=float)
    cl = dataset.cluster if clusters is None else clusters
    one = np.ones_like(y)
    Z1 = np.column_stack([one, x, dataset.z])
    if Z1.shape[0] <= Z1.shape[1]:
        raise RankDeficientError("need more units than regressors")
    pi = _lstsq(Z1, t)
    r1 = t - Z1 @ pi
    v1 = cluster_robust_vcov(Z1, r1, cl)
    se_z = np.sqrt(v1[-1, -1])
    sd_z = float(np.std(dataset.z))
    if sd_z == 0 or abs(pi[-1]) * sd_z <= 1e-10 * max(float(np.std(t)), 1e-300):
        t_z = 0.0  # round-off sized coefficient: no first stage at all
    elif se_z > 0:
        t_z = pi[-1] / se_z
    else:
        t_z = 0.0 if pi[-1] == 0 else np.inf
    if abs(t_z) < 1e-6:
        raise WeakInstrumentError(f"first-stage instrument coefficient is indistinguishable from zero (t={t_z:.3g})")
    t_hat = Z1 @ pi
    Xh = np.column_stack([one, x, t_hat])
    beta = _lstsq(Xh, y)
    X = np.column_stack([one, x, t])
    resid = y - X @ beta
    vcov = cluster_robust_vcov(Xh, resid, cl)
    names = ("const",) + tuple(dataset.covariate_names) + ("T",)
    return RegressionFit(beta, vcov, Xh.shape[1] - 1, names, X.shape[0], _cluster_codes(cl)[1], resid,
                         first_stage_f=float(t_z ** 2))
