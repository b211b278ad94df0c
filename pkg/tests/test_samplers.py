import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import small_state
from mortjump.diagnostics import diagnostics_table
from mortjump.errors import CoeffUnidentified, InvalidSettings, InvalidStart, PinnedIndex
from mortjump.kernels import rw_metropolis, slice_sample
from mortjump.model import LOG_ZERO, McmcSettings, ModelSpec, PriorConfig
from mortjump.samplers import (
    PosteriorDraws,
    binary_probability,
    drift_conditional,
    gibbs_binary_N,
    gibbs_drift,
    gibbs_p,
    run_mcmc,
    sample_simplex_block,
)
from mortjump.synth import default_truth, simulate_dataset


def std_normal(x):
    return -0.5 * x * x


# ---------------------------------------------------------------- kernels

def test_slice_standard_normal_moments(rng):
    x, out = 0.0, np.empty(10_000)
    for i in range(out.size):
        x = slice_sample(std_normal, x, 1.0, 50, rng)
        out[i] = x
    assert abs(out.mean()) < 0.05
    assert abs(out.var() - 1.0) < 0.1


def test_slice_flat_unit_interval(rng):
    x, out = 0.5, np.empty(10_000)
    for i in range(out.size):
        x = slice_sample(lambda v: 0.0, x, 1.0, 50, rng, lower=0.0, upper=1.0)
        out[i] = x
    assert stats.kstest(out, "uniform").statistic < 0.02


def test_slice_refuses_invalid_start(rng):
    with pytest.raises(InvalidStart):
        slice_sample(lambda v: LOG_ZERO if v < 0 else 0.0, -1.0, rng=rng)


def test_rwm_equal_density_always_accepts(rng):
    accepted = [rw_metropolis(lambda v: 0.0, 0.0, 1.0, rng)[1] for _ in range(200)]
    assert all(accepted)


def test_rwm_standard_normal_acceptance(rng):
    x, acc, out = 0.0, 0, np.empty(10_000)
    for i in range(out.size):
        x, a = rw_metropolis(std_normal, x, 2.4, rng)
        acc += a
        out[i] = x
    assert 0.3 <= acc / out.size <= 0.6
    assert abs(out.mean()) < 0.1 and abs(out.var() - 1.0) < 0.15


def test_rwm_rejects_impossible_proposals(rng):
    for _ in range(200):
        x, a = rw_metropolis(lambda v: 0.0 if v == 0.0 else LOG_ZERO, 0.0, 1.0, rng)
        assert x == 0.0 and not a


# ---------------------------------------------------------------- conjugate updates

def _drift_state(T=6):
    s = small_state(A=2, T=T, beta=np.array([0.4, 0.6]), betaJ=np.array([0.5, 0.5]),
                    dkappa=np.array([-0.1, -0.3, -0.2, -0.25, -0.15][: T - 1]), sigma_xi=0.1, sigma_r=0.05)
    Z = s.fitted_means() + 0.01
    return s, Z


def test_drift_shrinks_toward_data(rng):
    s, Z = _drift_state()
    draws = np.array([gibbs_drift(s, Z, PriorConfig(d_prior=(0.0, 5.0)), rng) for _ in range(4000)])
    mean, _ = drift_conditional(s, Z, PriorConfig(d_prior=(0.0, 5.0)))
    data_value = s.dkappa[1:].mean()
    assert 0.0 > mean > data_value - 0.1 and abs(mean - data_value) < abs(mean)
    assert abs(draws.mean() - mean) < 4 * draws.std() / np.sqrt(draws.size)


def test_drift_tight_prior_returns_prior_mean(rng):
    s, Z = _drift_state()
    v = gibbs_drift(s, Z, PriorConfig(d_prior=(0.7, 1e-8)), rng)
    assert abs(v - 0.7) < 1e-6


def test_drift_three_year_symbolic():
    # T = 3: one free increment plus the pinned first column
    s = small_state(A=2, T=3, beta=np.array([0.25, 0.75]), dkappa=np.array([-0.1, 0.2]),
                    sigma_xi=0.3, sigma_r=0.1)
    Z = np.array([[0.05, 0.0], [-0.02, 0.0]])
    pri = PriorConfig(d_prior=(0.1, 2.0))
    prec = 1 / 4 + 1 / 0.09 + (0.25**2 + 0.75**2) / 0.01
    lin = 0.1 / 4 + 0.2 / 0.09 + (0.25 * 0.05 + 0.75 * -0.02) / 0.01
    mean, var = drift_conditional(s, Z, pri)
    assert abs(mean - lin / prec) < 1e-12 and abs(var - 1 / prec) < 1e-12
    rng = np.random.default_rng(3)
    draws = np.array([gibbs_drift(s, Z, pri, rng) for _ in range(5000)])
    assert abs(draws.mean() - mean) < 4 * np.sqrt(var / draws.size)
    assert abs(draws.var() / var - 1) < 0.1


def test_p_conjugate_update():
    N = np.zeros(33)
    N[[10, 20]] = 1.0
    pinned = ModelSpec().pins(33)
    assert (~pinned).sum() == 30
    draws = np.array([gibbs_p(N, PriorConfig(), np.random.default_rng(i), pinned) for i in range(4000)])
    ref = stats.beta(3, 48)
    assert stats.kstest(draws, ref.cdf).pvalue > 1e-3


def test_p_without_shocks():
    N = np.zeros(33)
    draws = np.array([gibbs_p(N, PriorConfig(), np.random.default_rng(i)) for i in range(4000)])
    assert stats.kstest(draws, stats.beta(1, 50).cdf).pvalue > 1e-3


def test_zero_severity_leaves_prior_probability():
    s = small_state(T=8, p=0.07)
    Z = s.fitted_means() + 0.01
    assert abs(binary_probability(s, Z, 4) - 0.07) < 1e-12


def test_huge_manufactured_shock_is_detected(rng):
    T = 8
    s = small_state(T=T, N=np.zeros(T), Y=np.full(T, 2.0), coeff=0.5, sigma_r=0.05)
    truth = s.copy()
    truth.N = np.zeros(T)
    truth.N[4] = 1.0
    truth.refresh_jumps()
    Z = truth.fitted_means()
    assert binary_probability(s, Z, 5) > 0.999
    assert gibbs_binary_N(s, Z, 5, rng) == 1


def test_pinned_occurrence_update():
    s = small_state(T=8)
    with pytest.raises(PinnedIndex):
        binary_probability(s, s.fitted_means(), 8)


def test_simplex_symmetry_point():
    from mortjump.samplers import core_from_state

    s = small_state(A=5)
    core = core_from_state(s, gamma_total=(3.0, 3.0))
    assert np.allclose(core.gb[0] / core.gb[0].sum(), 0.2, atol=1e-15)


def test_simplex_updates_stay_normalised(rng):
    s = small_state(A=4, T=6, beta=np.array([0.1, 0.2, 0.3, 0.4]))
    Z = s.fitted_means() + rng.normal(0, 0.05, (4, 5))
    for _ in range(2000):
        s.beta = sample_simplex_block(s, Z, "beta", rng)
        assert abs(s.beta.sum() - 1) < 1e-12 and np.all(s.beta > 0)


def test_simplex_stationary_at_truth():
    # all other parameters fixed at the truth of a simulated panel
    truth = default_truth("ar1")
    sim = simulate_dataset(truth, seed=4)
    s = sim.truth.copy()
    rng = np.random.default_rng(8)
    out = []
    for i in range(1500):
        s.beta = sample_simplex_block(s, sim.Z["pop"], "beta", rng)
        if i >= 300:
            out.append(s.beta)
    out = np.array(out)
    mc_sd = out.std(axis=0) * np.sqrt(20 / out.shape[0]) + 1e-12
    # posterior means sit within sampling error of the truth (posterior sd) and the chain is stable
    assert np.all(np.abs(out.mean(axis=0) - truth.beta) < 3 * out.std(axis=0) + 2 * mc_sd)


# ---------------------------------------------------------------- full sampler

def test_draw_count_and_invariants(ar1_fit, quick_settings):
    d = ar1_fit
    assert d.n_draws == quick_settings.n_chains * quick_settings.kept_per_chain
    assert d.loglik.shape == (d.n_draws, 10 * 32)
    assert d.draws is d.values and d.chain_ids is d.chain
    for i in range(0, d.n_draws, 37):
        assert d.state(i).invariant_violations(d.pinned, tol=1e-9) == []


def test_recovers_ar_coefficient(ar1_fit):
    a = ar1_fit.column("a")
    lo, hi = np.quantile(a, [0.1, 0.9])
    assert lo <= 0.4 <= hi
    assert lo <= a.mean() <= hi


def test_two_seeds_converge(ar1_data, quick_settings):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        d = run_mcmc(ModelSpec("ar1"), ar1_data.Z["pop"], McmcSettings(2, 1500, 2000, 10, seed=99))
    assert diagnostics_table(d)["rhat"].max() < 1.05


def test_bit_identical_reruns(ar1_data):
    st_ = McmcSettings(2, 100, 200, 10, seed=5)
    a = run_mcmc(ModelSpec("ar1"), ar1_data.Z["pop"], st_)
    b = run_mcmc(ModelSpec("ar1"), ar1_data.Z["pop"], st_, threads=1)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.loglik, b.loglik)


def test_zero_coefficient_matches_independent(ar1_data):
    st_ = McmcSettings(2, 100, 200, 10, seed=5)
    a = run_mcmc(ModelSpec("ar1"), ar1_data.Z["pop"], st_, fix_coeff=0.0)
    b = run_mcmc(ModelSpec("independent"), ar1_data.Z["pop"], st_)
    assert np.array_equal(a.loglik, b.loglik)


def test_lee_carter_recovers_beta():
    truth = default_truth("none")
    sim = simulate_dataset(truth, seed=2)
    d = run_mcmc(ModelSpec("none"), sim.Z["pop"], McmcSettings(2, 1000, 2000, 10, seed=3))
    beta = d.block("beta")
    assert np.all(np.abs(beta.mean(axis=0) - truth.beta) < 4 * beta.std(axis=0) + 1e-3)
    assert "p" not in d.summary_names()


def test_all_pinned_warns():
    Z = np.random.default_rng(0).normal(-0.01, 0.02, (3, 3))
    with pytest.warns(CoeffUnidentified):
        run_mcmc(ModelSpec("ar1", no_jump_years=(3, 4)), Z, McmcSettings(2, 20, 20, 10))


def test_settings_type_checked(ar1_data):
    with pytest.raises(InvalidSettings):
        run_mcmc(ModelSpec("ar1"), ar1_data.Z["pop"], settings={"burn_in": 10})


def test_csv_round_trip(ar1_fit, tmp_path):
    ar1_fit.to_csv(tmp_path)
    back = PosteriorDraws.from_csv(tmp_path)
    assert back.names == ar1_fit.names
    assert np.array_equal(back.values, ar1_fit.values)
    assert np.array_equal(back.loglik, ar1_fit.loglik)
    assert back.structure == ar1_fit.structure and back.settings == ar1_fit.settings


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32))
def test_short_runs_preserve_constraints(seed):
    sim = simulate_dataset(default_truth("ma1", A=4, T=12, shock_years=(6, 7)), seed=seed % 1000)
    d = run_mcmc(ModelSpec("ma1"), sim.Z["pop"], McmcSettings(2, 20, 40, 10, seed=seed))
    for i in range(d.n_draws):
        assert d.state(i).invariant_violations(d.pinned, tol=1e-9) == []
