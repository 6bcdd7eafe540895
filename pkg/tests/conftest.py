import numpy as np
import pytest
from hypothesis import settings

from localiv import mcmc, simulation
from localiv.data import Dataset, OutcomeSpec, validate

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_ordinal():
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(7)))
    return simulation.simulate_ordinal(120, 4, 3, beta_s=[0.7], cutpoints=[[-0.5, 1.0], [-1.0, 0.5]],
                                       beta=[[0.4], [0.1]], gamma=[0.5, -0.3], tau=(0.3, 0.3), rng=rng)


@pytest.fixture(scope="session")
def small_fit(small_ordinal):
    cfg = mcmc.ChainConfig(n_chains=2, n_iterations=600, thin=3, seed=5)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return mcmc.run(small_ordinal, chain_config=cfg)


def make_dataset(y, t, z, cluster=None, x=None, family="gaussian", K=None, **kw):
    spec = OutcomeSpec(family, K)
    return validate(Dataset.from_arrays(y, t, z, cluster, x, outcome_spec=spec, **kw))


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
