import math
import warnings

import numpy as np
import pytest
from scipy.stats import norm

from localiv import mcmc, simulation
from localiv.mcmc import ChainConfig, gelman_rubin, update_latent_strata
from localiv.selection import strata_consistent


def quiet_run(*args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return mcmc.run(*args, **kw)


def test_chain_config_defaults_and_invariants():
    c = ChainConfig()
    assert (c.n_chains, c.n_iterations, c.burn_in, c.thin) == (3, 50000, 25000, 25)
    assert c.n_keep == 1000
    assert ChainConfig(n_iterations=103, burn_in=0, thin=10).n_keep == 10
    for bad in (dict(n_chains=0), dict(n_iterations=10, burn_in=10), dict(thin=0)):
        with pytest.raises(ValueError):
            ChainConfig(**bad)


def test_gelman_rubin_examples():
    # B = 0, W = 1, n = 3: sqrt((n - 1) / n)
    assert gelman_rubin([[1, 2, 3], [1, 2, 3]]) == pytest.approx(math.sqrt(2 / 3), abs=1e-15)
    assert math.isnan(gelman_rubin([[2.0, 2.0], [2.0, 2.0]]))
    rng = np.random.default_rng(1)
    assert 0.99 <= gelman_rubin(rng.normal(size=(3, 10_000))) <= 1.01
    with pytest.raises(ValueError):
        gelman_rubin([[1.0, 2.0]])


def test_gelman_rubin_detects_separated_chains():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 500)) + np.array([[0.0], [3.0], [6.0]])
    assert gelman_rubin(x) > 1.1


def test_stratum_update_with_flat_likelihood_is_truncated_normal():
    rng = np.random.Generator(np.random.Philox(4))
    n = 100_000
    t = np.ones(n, dtype=np.int8)
    z = np.full(n, 0.3)
    s = np.full(n, -1.0)
    mean, sigma = 0.8, 1.5
    s_new, acc = update_latent_strata(s, t, z, mean, sigma, lambda v: np.zeros_like(v), rng)
    assert np.all(s_new <= 0.3)
    b = (0.3 - mean) / sigma
    exact = mean - sigma * norm.pdf(b) / norm.cdf(b)
    # variance of a normal truncated above at b
    var = sigma ** 2 * (1 - b * norm.pdf(b) / norm.cdf(b) - (norm.pdf(b) / norm.cdf(b)) ** 2)
    assert abs(s_new.mean() - exact) < 3 * math.sqrt(var / n)
    s0, _ = update_latent_strata(np.full(n, 1.0), np.zeros(n, np.int8), z, mean, sigma, None, rng)
    assert np.all(s0 > 0.3)


def test_determinism_and_parallel_equivalence(small_ordinal):
    cfg = ChainConfig(n_chains=2, n_iterations=200, thin=2, seed=9)
    a = quiet_run(small_ordinal, chain_config=cfg).store
    b = quiet_run(small_ordinal, chain_config=cfg).store
    c = quiet_run(small_ordinal, chain_config=ChainConfig(n_chains=2, n_iterations=200, thin=2, seed=9,
                                                          n_jobs=2)).store
    for k in a.draws:
        assert np.array_equal(a.draws[k], b.draws[k])
        assert np.array_equal(a.draws[k], c.draws[k])
    d = quiet_run(small_ordinal, chain_config=ChainConfig(n_chains=2, n_iterations=200, thin=2, seed=10)).store
    assert not np.array_equal(a.draws["gamma"], d.draws["gamma"])


def test_fixed_delta_zero_identical(small_ordinal):
    cfg = ChainConfig(n_chains=2, n_iterations=150, thin=3, seed=4)
    a = quiet_run(small_ordinal, chain_config=cfg).store
    b = quiet_run(small_ordinal, chain_config=cfg, fixed_delta=0.0).store
    for k in a.draws:
        assert np.array_equal(a.draws[k], b.draws[k])
    assert b.delta == 0.0 and a.delta is None


def test_retained_draws_satisfy_invariants(small_fit, small_ordinal):
    st = small_fit.store
    assert st.n_keep == (600 - 300) // 3
    s = st.stacked("s")
    for row in s:
        assert np.all(strata_consistent(row, small_ordinal.t, small_ordinal.z))
    assert np.all(np.diff(st.stacked("alpha"), axis=-1) > 0)
    assert np.all(st.stacked("sigma") > 0) and np.all(st.stacked("tau") > 0) and np.all(st.stacked("tau_s") > 0)


def test_diagnostics_content(small_fit):
    diag = small_fit.diagnostics
    assert "gamma[t=0]" in diag.rhat and "alpha[t=1,k=2]" in diag.rhat and "beta_s[1]" in diag.rhat
    assert all(v >= 0 for v in diag.rhat.values() if np.isfinite(v))
    assert not any(k.startswith("s[") for k in diag.rhat)
    blocks = {b for _, b in diag.acceptance}
    assert {"strata", "theta[t=0]", "nu[t=1]", "tau_s", "tau[t=0]"} <= blocks
    assert all(0 <= r <= 1 for r in diag.acceptance.values())


def test_flat_names_and_draw_view(small_fit):
    st = small_fit.store
    names = [n for n, _ in st.scalar_names(include_strata=True)]
    assert names[0] == "intercept_s" and "s[17]" in names and "nu[t=1,g=4]" in names
    d = st.draw(st.n_draws - 1)
    assert d.outcome.cutpoints.shape == (2, 2) and d.strata.shape == (120,)
    sub = st.subsample(10)
    assert sub.n_keep == 10 and sub.n_chains == st.n_chains


def test_single_cluster_binary_recovery():
    """One cluster, no covariates, K = 2: identified combinations near the truth."""
    rng = np.random.Generator(np.random.Philox(77))
    d, truth = simulation.simulate_ordinal(200, 1, 2, beta_s=[], sigma=1.0, tau_s=0.0, intercept_s=0.2,
                                           cutpoints=[[0.3], [-0.6]], beta=np.zeros((2, 0)), gamma=[1.0, -0.8],
                                           tau=(0.0, 0.0), rng=rng, return_truth=True)
    st = quiet_run(d, chain_config=ChainConfig(n_chains=3, n_iterations=4000, thin=4, seed=3)).store
    assert st.draw(0).outcome.beta.shape == (2, 0)
    checks = {
        "latent mean": (st.stacked("intercept_s") + st.stacked("r")[:, 0], 0.2),
        "sigma": (st.stacked("sigma"), 1.0),
        "gamma0": (st.stacked("gamma")[:, 0], 1.0),
        "gamma1": (st.stacked("gamma")[:, 1], -0.8),
        "alpha0": (st.stacked("alpha")[:, 0, 0] + st.stacked("nu")[:, 0, 0], 0.3),
        "alpha1": (st.stacked("alpha")[:, 1, 0] + st.stacked("nu")[:, 1, 0], -0.6),
    }
    for name, (draws, true) in checks.items():
        assert abs(draws.mean() - true) < 3 * draws.std(), name


@pytest.mark.slow
def test_prior_only_run_reproduces_priors():
    # long run: the 5% bands must sit well outside the Monte Carlo error of a variance
    rng = np.random.default_rng(0)
    d = simulation.simulate_ordinal(50, 3, 3, beta_s=[0.5], cutpoints=[[-1, 1], [-1, 1]], beta=[[0.3], [0.3]],
                                    gamma=[0.2, 0.2], rng=rng)
    st = quiet_run(d, chain_config=ChainConfig(n_chains=4, n_iterations=60000, thin=10, seed=2),
                   outcome_likelihood=False).store
    for name, v in (("beta", st.stacked("beta")[:, :, 0]), ("gamma", st.stacked("gamma"))):
        for arm in (0, 1):
            assert abs(v[:, arm].var() / 100.0 - 1) < 0.05, (name, arm)
    hc = 25.0 * np.tan(np.pi * np.array([0.25, 0.5, 0.75]) / 2)
    for arm in (0, 1):
        q = np.quantile(st.stacked("tau")[:, arm], [0.25, 0.5, 0.75])
        np.testing.assert_allclose(q, hc, rtol=0.05)


def test_sampling_error_for_inconsistent_fixed_strata(small_ordinal):
    bad = np.where(small_ordinal.t == 1, small_ordinal.z + 1.0, small_ordinal.z - 1.0)
    with pytest.raises(mcmc.SamplingError):
        mcmc.run(small_ordinal, chain_config=ChainConfig(n_chains=1, n_iterations=10, thin=1),
                 fixed={"s": bad})


def _arm_logpost(P, arm, cuts, beta, gamma, nu, tau, s):
    """Arm outcome likelihood plus priors, in cutpoints, beta, gamma, nu and tau themselves."""
    from scipy.special import expit
    from scipy.stats import halfcauchy
    a = P.arms[arm]
    eta = a["X"] @ beta + gamma * s[a["idx"]] + nu[a["c"]]
    ext = np.concatenate(([-np.inf], cuts, [np.inf]))
    with np.errstate(divide="ignore"):
        ll = np.log(expit(ext[a["y"]] + eta) - expit(ext[a["y"] - 1] + eta)).sum()
    coef = np.concatenate([cuts, beta, [gamma]])
    return (ll + norm.logpdf(coef, scale=math.sqrt(P.V0)).sum() + norm.logpdf(nu, scale=tau).sum()
            + halfcauchy.logpdf(tau, scale=P.A))


def _orbit_moments(logw, grid):
    w = np.exp(logw - logw.max())
    w /= w.sum()
    mean = float(w @ grid)
    return mean, math.sqrt(float(w @ (grid - mean) ** 2))


def _batch_z(x, target_mean, target_sd, n_batches=50):
    b = x.reshape(n_batches, -1)
    se_m = b.mean(axis=1).std(ddof=1) / math.sqrt(n_batches)
    sq = (x - target_mean) ** 2
    se_v = sq.reshape(n_batches, -1).mean(axis=1).std(ddof=1) / math.sqrt(n_batches)
    return abs(x.mean() - target_mean) / se_m, abs(sq.mean() - target_sd ** 2) / se_v


@pytest.mark.parametrize("move", ["scale", "shift"])
def test_ridge_move_targets_posterior_along_its_orbit(small_ordinal, move):
    # repeating one move explores the line through the start; there the
    # stationary law is the posterior times the move's Jacobian
    from localiv.data import OutcomeSpec, PriorConfig
    from localiv.outcome import free_to_cutpoints
    P = mcmc._Problem(small_ordinal, OutcomeSpec("ordinal", 3), PriorConfig(), None)
    ch = mcmc._Chain(P, ChainConfig(n_chains=1, n_iterations=2, seed=0), np.random.default_rng(11))
    ch.adapting, ch.it = False, 0
    ch.beta_s, ch.intercept_s = np.array([0.6]), 0.3
    ch.r = np.array([0.2, -0.1, 0.3, -0.4])
    ch.nu[0] = np.array([0.1, -0.2, 0.05, 0.15])
    ch.tau[0], ch.gamma[0] = 0.4, 0.8
    ch.logstep["arm_scale[t=0]"] = ch.logstep["arm_shift[t=0]"] = math.log(0.3)
    cuts0, b0, g0, nu0, tau0 = (free_to_cutpoints(ch.alpha_free[0]), ch.beta[0].copy(), float(ch.gamma[0]),
                                ch.nu[0].copy(), float(ch.tau[0]))
    n = 40000
    u = np.empty(n)
    for i in range(n):
        if move == "scale":
            ch._scale_arm(0)
            u[i] = math.log(ch.tau[0] / tau0)
        else:
            ch._shift_arm(0)
            u[i] = ch.gamma[0] - g0
    grid = np.linspace(-3.0, 3.0, 12001)
    if move == "scale":
        dim = cuts0.size + b0.size + 1 + nu0.size + 1
        logw = np.array([_arm_logpost(P, 0, c * cuts0, c * b0, c * g0, c * nu0, c * tau0, ch.s) + dim * v
                         for v, c in zip(grid, np.exp(grid))])
    else:
        logw = np.array([_arm_logpost(P, 0, cuts0 + d * ch.intercept_s, b0 - d * ch.beta_s, g0 + d,
                                      nu0 - d * ch.r, tau0, ch.s) for d in grid])
    assert logw[0] < logw.max() - 30 and logw[-1] < logw.max() - 30
    mean, sd = _orbit_moments(logw, grid)
    z_mean, z_var = _batch_z(u, mean, sd)
    assert z_mean < 4 and z_var < 4, (move, u.mean(), mean, u.std(), sd)
