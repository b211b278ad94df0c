import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import small_state
from mortjump.errors import AmbiguousRoot, DegenerateScale, InconsistentPath, NoAdmissibleRoot, NoJump
from mortjump.identify import (
    apply_constraints,
    check_round_trip,
    ma_quadratic_roots,
    recover,
    recover_ar_coefficient,
    recover_jump_schedule,
    recover_ma_coefficient,
)
from mortjump.model import ModelSpec, jump_path


def test_normalised_state_is_unchanged():
    s = small_state(T=6, beta=np.array([0.2, 0.3, 0.5]), N=np.array([0, 0, 1.0, 0, 0, 0]), Y=np.full(6, 1.0))
    out = apply_constraints(s)
    for name in ("beta", "betaJ", "dkappa", "Y", "N", "J"):
        assert np.array_equal(getattr(out, name), getattr(s, name))
    assert (out.d, out.sigma_xi, out.muY) == (s.d, s.sigma_xi, s.muY)


def test_rescaling_keeps_fitted_improvements():
    s = small_state(T=6, beta=np.array([0.2, 0.3, 0.5]), N=np.array([0, 0, 1.0, 0, 0, 0]), Y=np.full(6, 1.0),
                    coeff=0.3)
    raw = s.copy()
    raw.beta = s.beta * 2
    raw.dkappa = s.dkappa / 2
    raw.d = s.d / 2
    out = apply_constraints(raw)
    assert np.allclose(out.fitted_means(), s.fitted_means(), atol=1e-15)
    assert abs(out.beta.sum() - 1) < 1e-15


def test_zero_sum_is_degenerate():
    s = small_state()
    s.beta = np.zeros(3)
    with pytest.raises(DegenerateScale):
        apply_constraints(s)


def test_ar_ratio():
    assert recover_ar_coefficient([0, 0, 2.0, 1.0, 0.5], 5) == 0.5


def test_ar_zero_when_path_returns_to_zero():
    assert recover_ar_coefficient([0, 0, 2.0, 0, 0], 5) == 0.0


def test_ar_no_jump():
    with pytest.raises(NoJump):
        recover_ar_coefficient(np.zeros(5), 5)


def test_ar_inconsistent():
    with pytest.raises(InconsistentPath):
        recover_ar_coefficient([0, 0, 2.0, 1.0, 0.0, 0.3], 6)


def test_ma_quadratic_selects_admissible_root():
    J = [1.0, 1.9, 0.6]
    assert np.allclose(ma_quadratic_roots(*J), (0.4, 1.5), atol=1e-12)
    assert abs(recover_ma_coefficient(J, 3) - 0.4) < 1e-12


def test_ma_isolated_shock_echo_ratio():
    assert abs(recover_ma_coefficient([2.0, 0.8, 0, 0], 4) - 0.4) < 1e-12


def test_ma_no_admissible_root():
    with pytest.raises(NoAdmissibleRoot):
        recover_ma_coefficient([1.0, 0.5, 2.0], 3)


def test_ma_shrinking_consecutive_shocks_are_ambiguous():
    # shocks 1.0 then 0.5 with b = 0.4: b' = 0.5 with shocks 1.0 then 0.4 gives the same path
    N = np.array([0, 0, 1.0, 1.0, 0, 0, 0])
    J = jump_path("ma1", N, np.array([0, 0, 1.0, 0.5, 0, 0, 0]), 0.4)
    assert np.allclose(J, jump_path("ma1", N, np.array([0, 0, 1.0, 0.4, 0, 0, 0]), 0.5), atol=1e-15)
    with pytest.raises(AmbiguousRoot) as info:
        recover_ma_coefficient(J)
    assert np.allclose(sorted(info.value.roots), [0.4, 0.5], atol=1e-9)


def test_schedule_inversions():
    N, Y = recover_jump_schedule([0, 0, 2.0, 1.0, 0.5], "ar1", 0.5)
    assert N.tolist() == [0, 0, 1, 0, 0] and Y[2] == 2.0
    N, Y = recover_jump_schedule([0, 1.0, 2.5, 1.0], "ma1", 0.5)
    assert N.tolist() == [0, 1, 1, 0] and np.allclose(Y[1:3], [1.0, 2.0])


def test_schedule_negative_severity():
    with pytest.raises(InconsistentPath):
        recover_jump_schedule([0, 0, 1.0, -0.2, 0.0], "ar1", 0.5)


@st.composite
def jump_instances(draw):
    T = draw(st.integers(5, 40))
    N = np.array(draw(st.lists(st.sampled_from([0.0, 1.0]), min_size=T, max_size=T)))
    N[:2] = 0.0
    N[-1] = 0.0
    assume(N.sum() > 0)
    Y = np.array(draw(st.lists(st.floats(0.05, 5.0), min_size=T, max_size=T))) * N
    coeff = draw(st.floats(0.0, 0.95))
    return N, Y, coeff


@settings(max_examples=300, deadline=None)
@given(jump_instances())
def test_ar_round_trip(inst):
    N, Y, a = inst
    assert check_round_trip("ar1", N, Y, a)


@settings(max_examples=300, deadline=None)
@given(jump_instances())
def test_ma_recovery_is_exact_or_reports_ambiguity(inst):
    N, Y, b = inst
    assume(b > 1e-6)
    J = jump_path("ma1", N, Y, b)
    try:
        assert check_round_trip("ma1", N, Y, b)
    except AmbiguousRoot as err:
        # the truth is among the reported roots and every root explains J
        assert min(abs(r - b) for r in err.roots) < 1e-9
        for r in err.roots:
            N2, Y2 = recover_jump_schedule(J, "ma1", r)
            assert np.allclose(jump_path("ma1", N2, Y2, r), J, rtol=0, atol=1e-9)


@settings(max_examples=300, deadline=None)
@given(st.integers(3, 30), st.integers(1, 8), st.floats(0.05, 5.0), st.floats(1.0, 3.0), st.floats(0.01, 0.95),
       st.booleans())
def test_ma_single_episode_round_trip(tstar, gap, y1, ratio, b, pair):
    # one isolated shock, or two consecutive shocks with a non-shrinking second severity
    T = tstar + int(pair) + gap
    N = np.zeros(T)
    Y = np.zeros(T)
    N[tstar - 1], Y[tstar - 1] = 1.0, y1
    if pair:
        N[tstar], Y[tstar] = 1.0, y1 * ratio
    assume(ratio > 1.0 + 1e-9 or not pair)
    assert check_round_trip("ma1", N, Y, b)


@settings(max_examples=100, deadline=None)
@given(jump_instances())
def test_recovered_path_regenerates_itself(inst):
    N, Y, a = inst
    J = jump_path("ar1", N, Y, a)
    c, N2, Y2 = recover(J, "ar1")
    assert np.allclose(jump_path("ar1", N2, Y2, c), J, rtol=0, atol=1e-9)


def test_custom_pin_year():
    N = np.array([0, 0, 1.0, 0, 0, 0, 1.0, 0])
    Y = np.array([0, 0, 2.0, 0, 0, 0, 1.0, 0])
    J = jump_path("ar1", N, Y, 0.5)
    assert abs(recover_ar_coefficient(J, pin=4) - 0.5) < 1e-12
    assert ModelSpec(no_jump_years=(4,)).pins(8)[3]
