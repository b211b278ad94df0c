import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import small_state
from mortjump.errors import ConfigError, InvalidCoefficient, InvalidSettings, ShapeError
from mortjump.model import (
    LOG_ZERO,
    JumpStructure,
    McmcSettings,
    ModelSpec,
    PriorConfig,
    config_hash,
    dump_config,
    jump_path,
    load_config,
    log_likelihood,
    log_posterior_kernel,
    log_prior,
)

shock_vectors = st.integers(4, 30).flatmap(
    lambda T: st.tuples(
        st.lists(st.sampled_from([0.0, 1.0]), min_size=T, max_size=T),
        st.lists(st.floats(0.01, 5.0), min_size=T, max_size=T),
    )
)


def test_ar1_path():
    J = jump_path("ar1", [0, 0, 1, 0, 0], [0, 0, 2.0, 0, 0], 0.5)
    assert np.array_equal(J, [0, 0, 2.0, 1.0, 0.5])


def test_ma1_path():
    J = jump_path("ma1", [0, 1, 1, 0], [0, 1.0, 2.0, 0], 0.5)
    assert np.array_equal(J, [0, 1.0, 2.5, 1.0])


@pytest.mark.parametrize("structure", list(JumpStructure))
def test_no_shocks_no_jumps(structure):
    assert np.array_equal(jump_path(structure, np.zeros(7), np.full(7, 3.0), 0.3), np.zeros(7))


@pytest.mark.parametrize("coeff", [-0.1, 1.0, 1.5])
def test_coefficient_outside_unit_interval(coeff):
    with pytest.raises(InvalidCoefficient):
        jump_path("ar1", [0, 1], [0, 1], coeff)


@settings(max_examples=100, deadline=None)
@given(shock_vectors)
def test_zero_coefficient_nests_independent_jumps(nv):
    N, Y = nv
    ind = jump_path("independent", N, Y)
    assert np.array_equal(jump_path("ar1", N, Y, 0.0), ind)
    assert np.array_equal(jump_path("ma1", N, Y, 0.0), ind)


@settings(max_examples=100, deadline=None)
@given(shock_vectors, st.floats(0.0, 0.95))
def test_ar1_recursion_and_ma1_definition(nv, c):
    N, Y = (np.asarray(v) for v in nv)
    ar = jump_path("ar1", N, Y, c)
    ma = jump_path("ma1", N, Y, c)
    assert ar[0] == N[0] * Y[0] and ma[0] == N[0] * Y[0]
    assert np.allclose(ar[1:], c * ar[:-1] + N[1:] * Y[1:], rtol=0, atol=1e-12)
    assert np.allclose(ma[1:], N[1:] * Y[1:] + c * N[:-1] * Y[:-1], rtol=0, atol=1e-12)


def test_zero_residuals_unit_scale():
    s = small_state(sigma_r=1.0)
    _, pw = log_likelihood(s, s.fitted_means())
    assert np.allclose(pw, -0.5 * math.log(2 * math.pi), rtol=0, atol=1e-15)
    assert round(pw[0, 0], 6) == -0.918939


def test_doubling_scale_lowers_each_entry_by_log2():
    s = small_state(sigma_r=0.3)
    Z = s.fitted_means()
    _, a = log_likelihood(s, Z)
    s.sigma_r = 0.6
    _, b = log_likelihood(s, Z)
    assert np.allclose(a - b, math.log(2.0), rtol=0, atol=1e-14)


def test_two_by_two_brute_force():
    s = small_state(A=2, T=3, beta=np.array([0.3, 0.7]), betaJ=np.array([0.6, 0.4]),
                    dkappa=np.array([-0.1, 0.05]), N=np.array([0, 0, 1.0]), Y=np.array([0, 0, 0.8]),
                    coeff=0.5, sigma_r=0.2)
    Z = np.array([[0.01, 0.2], [-0.05, 0.3]])
    total, _ = log_likelihood(s, Z)
    ref = 0.0
    for x in range(2):
        for t in range(2):
            mean = s.beta[x] * s.dkappa[t] + s.betaJ[x] * (s.J[t + 1] - s.J[t])
            ref += stats.norm.logpdf(Z[x, t], mean, 0.2)
    assert abs(total - ref) < 1e-12


def test_likelihood_shape_mismatch():
    with pytest.raises(ShapeError):
        log_likelihood(small_state(A=3, T=6), np.zeros((3, 6)))


def _prior_without_bernoulli(s, pri, pinned):
    free = ~pinned
    lp = stats.dirichlet.logpdf(s.beta, np.ones(s.n_ages)) + stats.dirichlet.logpdf(s.betaJ, np.ones(s.n_ages))
    lp += stats.norm.logpdf(s.d, *pri.d_prior) + stats.norm.logpdf(s.dkappa[1:], s.d, s.sigma_xi).sum()
    for v, sd in ((s.sigma_xi, 2.0), (s.sigma_r, 2.0), (s.muY, 4.0), (s.sigmaY, 2.0)):
        lp += stats.halfnorm.logpdf(v, scale=sd)
    lp += stats.beta.logpdf(s.p, 1, 20)
    lp += (stats.truncnorm.logpdf(s.Y[free], -s.muY / s.sigmaY, np.inf, s.muY, s.sigmaY)).sum()
    lp += stats.truncnorm.logpdf(s.coeff, 0, 1 / 0.4, 0, 0.4)
    return lp


def test_bernoulli_block_with_no_shocks():
    T = 10
    s = small_state(T=T, Y=np.full(T, 0.7), coeff=0.3)
    pri = PriorConfig()
    pinned = ModelSpec("ar1").pins(T)
    m = int((~pinned).sum())
    block = log_prior(s, pri) - _prior_without_bernoulli(s, pri, pinned)
    assert abs(block - m * math.log(0.95)) < 1e-10


def test_uniform_dirichlet_density():
    A = 6
    assert abs(stats.dirichlet.logpdf(np.full(A, 1 / A), np.ones(A)) - math.lgamma(A)) < 1e-12
    s = small_state(A=A)
    base = log_prior(s, PriorConfig())
    s2 = small_state(A=A, beta=np.array([0.1, 0.1, 0.2, 0.2, 0.2, 0.2]))
    # a flat Dirichlet is constant on the simplex
    assert abs(log_prior(s2, PriorConfig()) - base) < 1e-12


def test_half_normal_at_zero():
    from mortjump.model import _log_halfnormal

    assert abs(_log_halfnormal(0.0, 2.0) - math.log(2 / (2 * math.sqrt(2 * math.pi)))) < 1e-14


def test_negative_severity_is_off_support():
    T = 6
    s = small_state(T=T, Y=np.array([0, 0, -0.5, 0, 0, 0]))
    assert log_prior(s, PriorConfig()) == LOG_ZERO
    assert log_prior(s, PriorConfig(Y_support="gaussian")) > LOG_ZERO


def test_pinned_occurrence_is_off_support():
    s = small_state(T=6, N=np.array([0, 0, 0, 0, 0, 1.0]), Y=np.full(6, 1.0))
    assert log_prior(s, PriorConfig()) == LOG_ZERO
    assert log_posterior_kernel(s, s.fitted_means(), PriorConfig()) == LOG_ZERO


def test_posterior_kernel_finite_on_support():
    s = small_state(T=6, N=np.array([0, 0, 1.0, 0, 0, 0]), Y=np.full(6, 1.0), coeff=0.2)
    assert np.isfinite(log_posterior_kernel(s, s.fitted_means(), PriorConfig()))


@settings(max_examples=50, deadline=None)
@given(st.floats(-3.0, 3.0).filter(lambda e: abs(e) > 1e-3))
def test_mixing_the_two_factors_changes_the_constrained_parameters(e):
    # [beta betaJ] A with A = [[1, e], [0, 1]] keeps the fitted means but,
    # after renormalisation, moves betaJ off its identified value
    s = small_state(T=8, beta=np.array([0.2, 0.3, 0.5]), betaJ=np.array([0.6, 0.3, 0.1]),
                    N=np.array([0, 0, 0, 1.0, 0, 0, 0, 0]), Y=np.full(8, 1.0), coeff=0.4)
    before = s.fitted_means()
    betaJ_mixed = s.betaJ + e * s.beta
    dJ = np.diff(s.J)
    after = np.outer(s.beta, s.dkappa - e * dJ) + np.outer(betaJ_mixed, dJ)
    assert np.allclose(before, after, atol=1e-12)
    if betaJ_mixed.sum() > 0:
        assert not np.allclose(betaJ_mixed / betaJ_mixed.sum(), s.betaJ, atol=1e-9)


def test_state_invariants_hold_for_valid_state():
    s = small_state(T=6, N=np.array([0, 0, 1.0, 0, 0, 0]), Y=np.full(6, 1.0), coeff=0.2)
    assert s.invariant_violations(ModelSpec().pins(6)) == []
    s.beta = np.array([0.5, 0.5, 0.5])
    assert "beta is not on the simplex" in s.invariant_violations()


def test_pins_default_and_configured():
    assert ModelSpec().pins(6).tolist() == [True, True, False, False, False, True]
    assert ModelSpec(no_jump_years=(4,)).pins(6).tolist() == [True, True, False, True, False, False]
    with pytest.raises(ConfigError):
        ModelSpec(no_jump_years=(9,)).pins(6)


def test_settings_defaults_and_validation():
    s = McmcSettings()
    assert (s.n_chains, s.burn_in, s.n_samples, s.thin) == (2, 7500, 10000, 10)
    assert s.kept_per_chain == 1000
    for bad in (dict(n_chains=1), dict(thin=0), dict(n_samples=15, thin=10), dict(burn_in=-1)):
        with pytest.raises(InvalidSettings):
            McmcSettings(**bad)


def test_england_wales_priors():
    pri = PriorConfig.england_wales()
    assert pri.Y_support == "gaussian" and pri.coeff_prior == ("beta", 1.0, 5.0)
    assert PriorConfig.covid() == PriorConfig()


def test_config_round_trip(tmp_path):
    spec = ModelSpec("ma1", PriorConfig.england_wales(), no_jump_years=(20,))
    path = tmp_path / "config.yaml"
    path.write_text(dump_config(spec, McmcSettings(seed=5)))
    spec2, settings2 = load_config(path)
    assert spec2 == spec and settings2 == McmcSettings(seed=5)
    assert config_hash(spec2, settings2) == config_hash(spec, McmcSettings(seed=5))


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("structure: ar1\npriorz: {}\n")
    with pytest.raises(ConfigError):
        load_config(path)


@pytest.mark.parametrize("alias,expected", [("lc", "none"), ("liuli", "independent"), ("ar", "ar1"), ("MA", "ma1")])
def test_structure_aliases(alias, expected):
    assert JumpStructure.parse(alias).value == expected
