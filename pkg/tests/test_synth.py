import numpy as np
import pytest

from mortjump.data import central_death_rates, improvement_rates, load_mortality_table
from mortjump.identify import recover
from mortjump.model import McmcSettings
from mortjump.synth import (
    coverage_study,
    default_truth,
    draw_truth,
    ordering_study,
    read_truth,
    recovery_study,
    simulate_dataset,
)

TINY = McmcSettings(2, 100, 100, 10, seed=1)


def test_noiseless_jump_free_panel_declines_linearly():
    truth = default_truth("none", sigma_r=0.0, sigma_xi=0.0)
    sim = simulate_dataset(truth, seed=3)
    lm = sim.log_rates["pop"]
    expected = lm[:, [0]] + np.outer(truth.beta * truth.d, np.arange(truth.n_years))
    assert np.allclose(lm, expected, rtol=0, atol=1e-12)


def test_noiseless_ar1_shock_identified_exactly():
    truth = default_truth("ar1", sigma_r=0.0, shock_years=(12,), severity=(1.3,), coeff=0.6)
    sim = simulate_dataset(truth, seed=4)
    s = sim.truth
    # with zero observation noise the shock component is the betaJ-direction of Z
    Z = sim.Z["pop"]
    dJ = np.linalg.lstsq(np.column_stack([s.beta, s.betaJ]), Z, rcond=None)[0][1]
    J = np.concatenate([[0.0], np.cumsum(dJ)])
    coeff, N, Y = recover(J, "ar1")
    assert abs(coeff - 0.6) < 1e-9
    assert np.array_equal(N, s.N)
    assert abs(Y[11] - 1.3) < 1e-9


def test_same_seed_same_panel():
    t = default_truth("ma1")
    a, b = simulate_dataset(t, seed=9), simulate_dataset(t, seed=9)
    assert np.array_equal(a.log_rates["pop"], b.log_rates["pop"])
    assert not np.array_equal(a.log_rates["pop"], simulate_dataset(t, seed=10).log_rates["pop"])


def test_written_panel_reproduces_truth_improvements(tmp_path):
    sim = simulate_dataset(default_truth("ar1"), seed=2)
    sidecar = sim.write(tmp_path / "data.csv")
    table = load_mortality_table(tmp_path / "data.csv")
    z = improvement_rates(central_death_rates(table)).values
    # deaths = exp(log m) * E rounds once; the differences agree to a few ulps of the log rates
    assert np.max(np.abs(z - sim.Z["pop"])) < 1e-12
    truth = read_truth(sidecar)
    assert truth["structure"] == "ar1" and truth["populations"]["pop"]["coeff"] == 0.4


def test_truth_defaults():
    t = default_truth("ar1")
    assert t.invariant_violations() == []
    assert (t.n_ages, t.n_years, t.coeff) == (10, 33, 0.4)
    assert np.flatnonzero(t.N).tolist() == [23, 24]
    assert default_truth("none").N.sum() == 0


def test_drawn_truth_is_valid():
    t = draw_truth(np.random.default_rng(0), "ma1")
    assert t.invariant_violations() == [] and np.all(t.Y[t.N == 1] > 0)


def test_recovery_needs_twenty_replications():
    with pytest.raises(ValueError):
        recovery_study(default_truth("ar1"), 5, TINY)


def test_recovery_report_layout():
    rep = recovery_study(default_truth("ar1", A=4, T=12, shock_years=(6, 7)), 20, TINY, seed=1)
    assert set(rep.summary["parameter"]) == {"a", "d", "p", "muY"}
    assert (rep.summary["n"] == 20).all()
    assert rep.summary["coverage"].between(0, 1).all()
    assert len(rep.records) == 80


def test_ordering_and_coverage_layout():
    truth = default_truth("ma1", A=4, T=12, shock_years=(6, 7))
    rep = ordering_study(truth, ["independent", "ma1"], 2, TINY, seed=3)
    assert len(rep.records) == 4 and rep.wins.sum() == pytest.approx(1.0)
    best = rep.records.groupby("replication")["delta"].min()
    assert (best == 0).all() and (rep.records["delta"] >= 0).all() and (rep.records["se_delta"] >= 0).all()
    cov = coverage_study(default_truth("none", A=4, T=20), 5, 2, TINY, seed=3)
    assert (cov.records["cells"] == 20).all() and 0 <= cov.pooled <= 1
