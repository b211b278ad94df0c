import warnings

import numpy as np
import pytest

from mortjump.model import McmcSettings, ModelSpec, ParameterState
from mortjump.synth import default_truth, simulate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ar1_data():
    return simulate_dataset(default_truth("ar1"), seed=7)


@pytest.fixture(scope="session")
def quick_settings():
    return McmcSettings(n_chains=2, burn_in=1500, n_samples=2000, thin=10, seed=11)


@pytest.fixture(scope="session")
def ar1_fit(ar1_data, quick_settings):
    from mortjump.samplers import run_mcmc

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return run_mcmc(ModelSpec("ar1"), ar1_data.Z["pop"], quick_settings)


def small_state(structure="ar1", A=3, T=6, **kw) -> ParameterState:
    fields = dict(
        beta=np.full(A, 1.0 / A), betaJ=np.full(A, 1.0 / A), d=-0.1, dkappa=np.full(T - 1, -0.1),
        sigma_xi=0.1, sigma_r=0.05, p=0.05, N=np.zeros(T), Y=np.zeros(T), coeff=0.0,
        muY=1.0, sigmaY=0.5, structure=structure,
    )
    fields.update(kw)
    return ParameterState(**fields)
