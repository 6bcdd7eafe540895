"""Hand-built posterior stores for tests that need exact control over draws."""
import numpy as np

from localiv.mcmc import PosteriorStore


def store_from(family, strata, *, gamma, beta=None, intercept=None, cutpoints=None, nu=None,
               delta=None, n_chains=1):
    """Store whose draws are given directly; leading axis of each array is the draw index."""
    strata = np.atleast_2d(np.asarray(strata, dtype=float))
    D, N = strata.shape
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (D, 2)).copy()
    beta = np.zeros((D, 2, 0)) if beta is None else np.broadcast_to(beta, (D,) + np.shape(beta)[-2:]).copy()
    G = 1 if nu is None else np.shape(nu)[-1]
    nu = np.zeros((D, 2, G)) if nu is None else np.broadcast_to(nu, (D, 2, G)).copy()
    draws = {
        "intercept_s": np.zeros(D), "beta_s": np.zeros((D, beta.shape[-1])), "sigma": np.ones(D),
        "tau_s": np.ones(D), "r": np.zeros((D, G)), "beta": beta, "gamma": gamma,
        "tau": np.ones((D, 2)), "nu": nu, "s": strata,
    }
    if family == "gaussian":
        draws["intercept"] = np.broadcast_to(np.asarray(intercept, dtype=float), (D, 2)).copy()
        draws["resid_sd"] = np.ones((D, 2))
    else:
        cut = np.asarray(cutpoints, dtype=float)
        draws["alpha"] = np.broadcast_to(cut, (D,) + cut.shape[-2:]).copy()
    C = n_chains
    draws = {k: v.reshape((C, D // C) + v.shape[1:]) for k, v in draws.items()}
    return PosteriorStore(family, draws, np.arange(D // C), delta)
