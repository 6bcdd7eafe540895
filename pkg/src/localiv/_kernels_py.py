"""Pure numpy implementations of the sampler's inner kernels.

These mirror ``_kernels.pyx`` one to one and are used when the compiled
extension is unavailable or ``LOCALIV_PURE_PYTHON=1`` is set.
"""
import numpy as np
from scipy.special import log_ndtr, ndtri_exp


def log_sigmoid(u):
    return -np.logaddexp(0.0, -u)


def sigmoid(u):
    return np.exp(log_sigmoid(u))


def truncnorm_draw(mean, sd, bound, upper, u, out):
    """Inverse-CDF draw from N(mean, sd^2) restricted to a half line.

    ``upper[i] == 1`` restricts to (bound, inf), otherwise to (-inf, bound].
    ``u`` holds uniforms on (0, 1).
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    up = np.asarray(upper) != 0
    b = (bound - mean) / sd
    # reflect the upper region onto a lower tail so both use log_ndtr
    b = np.where(up, -b, b)
    x = ndtri_exp(np.log(u) + log_ndtr(b))
    x = np.where(up, -x, x)
    res = mean + sd * x
    res = np.where(up, np.maximum(res, np.nextafter(bound, np.inf)), np.minimum(res, bound))
    out[...] = res
    return out


def ordinal_loglik(y, eta, cuts, out):
    """log Pr(Y = y) under logit Pr(Y <= k) = cuts[k-1] + eta."""
    y = np.asarray(y)
    K = cuts.shape[0] + 1
    ext = np.concatenate(([-np.inf], cuts, [np.inf]))
    hi = ext[y] + eta
    lo = ext[y - 1] + eta
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        res = log_sigmoid(hi) + log_sigmoid(-lo) + np.log1p(-np.exp(lo - hi))
        first = log_sigmoid(hi)
        last = log_sigmoid(-lo)
    res = np.where(y == 1, first, np.where(y == K, last, res))
    res = np.where(np.isnan(res), -np.inf, res)
    out[...] = res
    return out


def ordinal_cumsum(eta, cuts, out):
    """Sum over k of sigmoid(cuts[k] + eta), i.e. K - E[Y]."""
    out[...] = sigmoid(cuts[None, :] + np.asarray(eta)[:, None]).sum(axis=1)
    return out


def stratum_mh_ordinal(s, y, eta_base, gamma, cuts, mean, sd, bound, upper,
                       u_prop, u_acc):
    """Independence Metropolis update of each unit's stratum.

    Proposals come from the truncated selection prior, so the acceptance
    ratio is the outcome likelihood ratio of the observed arm.  Updates
    ``s`` in place and returns the number of accepted moves.
    """
    n = s.shape[0]
    prop = np.empty(n)
    truncnorm_draw(mean, sd, bound, upper, u_prop, prop)
    ll_new = np.empty(n)
    ll_old = np.empty(n)
    ordinal_loglik(y, eta_base + gamma * prop, cuts, ll_new)
    ordinal_loglik(y, eta_base + gamma * s, cuts, ll_old)
    with np.errstate(invalid="ignore"):
        acc = np.log(u_acc) < ll_new - ll_old
    s[acc] = prop[acc]
    return int(acc.sum())
