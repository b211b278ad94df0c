"""Synthetic panels from known parameters and a simulation-based recovery harness."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import MortalityTable, RateMatrix, write_mortality_tables
from .diagnostics import diagnostics_table
from .model import JumpStructure, McmcSettings, ModelSpec, ParameterState, jump_path
from .multipop import MultiPopState

DEFAULT_EXPOSURE = 1e6
# log central death rates of ten broad age groups, roughly a western population
DEFAULT_BASE = np.log([0.0004, 0.0006, 0.0009, 0.0015, 0.003, 0.006, 0.012, 0.025, 0.06, 0.15])


@dataclass
class SyntheticData:
    """Simulated log rates (A x T per population) with the latent truth."""

    log_rates: dict
    Z: dict
    truth: object
    years: list
    ages: list
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def populations(self) -> list:
        return list(self.log_rates)

    def rates(self, population: str | None = None) -> RateMatrix:
        pop = population or self.populations[0]
        return RateMatrix(np.exp(self.log_rates[pop]), list(self.ages), list(self.years))

    def tables(self, exposure: float = DEFAULT_EXPOSURE) -> list:
        return [
            MortalityTable(self.ages, self.years, np.exp(lm) * exposure,
                           np.full(lm.shape, float(exposure)), pop)
            for pop, lm in self.log_rates.items()
        ]

    def truth_dict(self) -> dict:
        t = self.truth
        if isinstance(t, ParameterState):
            states = {self.populations[0]: t}
            shared = {"N": t.N.tolist(), "p": t.p, "sigma_xi": t.sigma_xi}
        else:
            states = {c: t.country(k) for k, c in enumerate(t.countries)}
            shared = {"N": t.N.tolist(), "p": t.p, "Sigma": t.Sigma.tolist()}
        per = {}
        for pop, s in states.items():
            per[pop] = {
                "beta": s.beta.tolist(), "betaJ": s.betaJ.tolist(), "d": s.d,
                "dkappa": s.dkappa.tolist(), "sigma_r": s.sigma_r, "coeff": s.coeff,
                "muY": s.muY, "sigmaY": s.sigmaY, "Y": s.Y.tolist(), "J": s.J.tolist(),
            }
        return {"structure": t.structure.value, "seed": self.seed, "years": self.years,
                "ages": self.ages, "shared": shared, "populations": per, **self.meta}

    def write(self, path, exposure: float = DEFAULT_EXPOSURE) -> Path:
        """Write the long-format CSV and a ``<stem>.truth.json`` sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_mortality_tables(self.tables(exposure), path)
        sidecar = path.with_suffix(".truth.json")
        sidecar.write_text(json.dumps(self.truth_dict(), indent=2))
        return sidecar


def _as_multi(truth):
    if isinstance(truth, MultiPopState):
        return truth
    return MultiPopState(
        countries=["pop"], beta=[truth.beta], betaJ=[truth.betaJ], dkappa=[truth.dkappa],
        Y=[truth.Y], coeff=[truth.coeff], sigma_r=[truth.sigma_r], muY=[truth.muY],
        sigmaY=[truth.sigmaY], N=truth.N, p=truth.p, d=[truth.d],
        Sigma=[[truth.sigma_xi ** 2]], structure=truth.structure,
    )


def simulate_dataset(truth, base_log_rates=None, seed: int = 0, first_year: int = 1991,
                     ages=None) -> SyntheticData:
    """Generate log rates from ``truth`` (ParameterState or MultiPopState).

    The period increments after the pinned first one are redrawn as
    d + innovations with covariance Sigma (sigma_xi^2 for one population),
    Gaussian observation noise with sd sigma_r is added, and log rates are
    accumulated from ``base_log_rates`` (the first year).  The returned truth
    carries the realised increments.
    """
    multi = _as_multi(truth)
    C, A = multi.beta.shape
    T = multi.N.size
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    # a zero covariance gives a noiseless period effect
    L = np.zeros_like(multi.Sigma) if not np.any(multi.Sigma) else np.linalg.cholesky(multi.Sigma)
    innov = rng.standard_normal((T - 2, C)) @ L.T
    eps = rng.standard_normal((C, A, T - 1))
    dkappa = np.empty((C, T - 1))
    dkappa[:, 0] = multi.d
    dkappa[:, 1:] = multi.d[:, None] + innov.T
    if base_log_rates is None:
        base = {c: DEFAULT_BASE[:A] if A <= DEFAULT_BASE.size else np.linspace(-8, -2, A) for c in multi.countries}
    elif isinstance(base_log_rates, dict):
        base = {c: np.asarray(base_log_rates[c], dtype=float) for c in multi.countries}
    else:
        base = {c: np.asarray(base_log_rates, dtype=float) for c in multi.countries}
    log_rates, Zs = {}, {}
    for k, c in enumerate(multi.countries):
        dJ = np.diff(multi.J[k])
        Z = np.outer(multi.beta[k], dkappa[k]) + np.outer(multi.betaJ[k], dJ) + multi.sigma_r[k] * eps[k]
        lm = np.empty((A, T))
        lm[:, 0] = base[c]
        lm[:, 1:] = base[c][:, None] + np.cumsum(Z, axis=1)
        log_rates[c] = lm
        Zs[c] = Z
    realised = MultiPopState(
        countries=multi.countries, beta=multi.beta, betaJ=multi.betaJ, dkappa=dkappa, Y=multi.Y,
        coeff=multi.coeff, sigma_r=multi.sigma_r, muY=multi.muY, sigmaY=multi.sigmaY, N=multi.N,
        p=multi.p, d=multi.d, Sigma=multi.Sigma, structure=multi.structure,
    )
    out_truth = realised.country(0) if isinstance(truth, ParameterState) else realised
    ages = list(ages) if ages is not None else [f"{10 * x}-{10 * x + 9}" for x in range(A)]
    return SyntheticData(log_rates, Zs, out_truth, list(range(first_year, first_year + T)), ages, int(seed))


def bundled_dataset(name: str = "synthetic_ar1") -> Path:
    """Path of a dataset shipped with the package.

    ``synthetic_ar1`` is ``mortjump simulate --model ar --seed 0``: the default
    AR1 truth (A = 10, T = 33, shocks in 2014 and 2015, a = 0.4) with its
    truth sidecar next to it.
    """
    from importlib import resources

    path = Path(str(resources.files("mortjump.datasets") / f"{name}.csv"))
    if not path.exists():
        raise FileNotFoundError(f"no bundled dataset named {name!r}")
    return path


def read_truth(path) -> dict:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------- default truths

def default_truth(structure="ar1", A: int = 10, T: int = 33, shock_years=(24, 25), coeff: float = 0.4,
                  severity=(1.0, 1.5), d: float = -0.1, sigma_xi: float = 0.1,
                  sigma_r: float = 0.02, p: float | None = None, muY: float = 1.0,
                  sigmaY: float = 0.5) -> ParameterState:
    """A realistic single-population truth with shocks at 1-based ``shock_years``.

    Age patterns are fixed smooth shapes: the period effect rises gently
    with age, the shock loads on the older half.  The default severities
    grow from the first shock year to the second; for MA1 with consecutive
    shocks a shrinking second severity Y2 / Y1 < 1 would make Y2 / Y1 a
    second admissible root, so the MA coefficient would not be identified.
    """
    structure = JumpStructure.parse(structure)
    x = np.arange(A)
    beta = 1.0 + 0.5 * x / max(A - 1, 1)
    beta /= beta.sum()
    betaJ = np.exp(-0.5 * ((x - 0.7 * (A - 1)) / (0.25 * A)) ** 2) + 0.05
    betaJ /= betaJ.sum()
    N = np.zeros(T)
    Y = np.zeros(T)
    if structure.has_jumps:
        for t, y in zip(shock_years, severity):
            if not 3 <= t <= T - 1:
                raise ValueError(f"shock year {t} outside the free positions 3..{T - 1}")
            N[t - 1] = 1.0
            Y[t - 1] = y
    if p is None:
        p = max(N.sum(), 1.0) / (T - 3)
    return ParameterState(
        beta=beta, betaJ=betaJ, d=d, dkappa=np.full(T - 1, d), sigma_xi=sigma_xi, sigma_r=sigma_r,
        p=p, N=N, Y=Y, coeff=coeff if structure.has_coeff else 0.0, muY=muY, sigmaY=sigmaY,
        structure=structure,
    )


def multipop_truth(structure="ar1", countries=("P1", "P2"), Sigma=None, **kw) -> MultiPopState:
    """Populations sharing ``default_truth`` parameters and occurrences.

    ``Sigma`` defaults to independent period effects with sd ``sigma_xi``;
    remaining keywords go to ``default_truth``.
    """
    t = default_truth(structure, **kw)
    C = len(countries)
    Sigma = np.eye(C) * t.sigma_xi ** 2 if Sigma is None else np.asarray(Sigma, dtype=float)
    return MultiPopState(
        countries=list(countries), beta=[t.beta] * C, betaJ=[t.betaJ] * C, dkappa=[t.dkappa] * C,
        Y=[t.Y] * C, coeff=[t.coeff] * C, sigma_r=[t.sigma_r] * C, muY=[t.muY] * C, sigmaY=[t.sigmaY] * C,
        N=t.N, p=t.p, d=[t.d] * C, Sigma=Sigma, structure=t.structure,
    )


def draw_truth(rng, structure="ar1", A: int = 10, T: int = 33, shock_years=(24, 25), coeff: float = 0.4,
               spec: ModelSpec | None = None, **fixed) -> ParameterState:
    """Truth with the jump hyperparameters drawn from their priors.

    The occurrence pattern is fixed, so p is drawn from its prior conditioned
    on that pattern, Beta(a + k, b + m - k) over the m free years; mu_Y and
    sigma_Y come from their half-normal priors and the shock severities from
    the severity distribution.  Remaining parameters take ``default_truth``
    values unless overridden.
    """
    from .forecast import severity_from_uniform

    spec = spec or ModelSpec(structure)
    pri = spec.priors
    pins = spec.pins(T)
    k = len(shock_years)
    a, b = pri.p_prior
    p = rng.beta(a + k, b + (~pins).sum() - k)
    muY = abs(rng.normal(0.0, pri.muY_prior))
    sigmaY = abs(rng.normal(0.0, pri.sigmaY_prior))
    sev = [float(severity_from_uniform(rng.random(), muY, sigmaY, pri.positive_severity)) for _ in shock_years]
    return default_truth(structure, A, T, shock_years, coeff, severity=sev, p=p, muY=muY, sigmaY=sigmaY, **fixed)


# ---------------------------------------------------------------- recovery study

@dataclass
class RecoveryReport:
    """Per-replication records and the per-parameter coverage summary."""

    records: pd.DataFrame
    summary: pd.DataFrame
    level: float


def posterior_interval(values, level: float = 0.8) -> tuple[float, float]:
    lo, hi = np.quantile(values, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def _truth_value(truth: ParameterState, name: str) -> float:
    coeff_name = truth.structure.coeff_name
    if name == coeff_name:
        return truth.coeff
    return float(getattr(truth, name))


def recovery_study(truth, n_replications: int, settings: McmcSettings, *, spec: ModelSpec | None = None,
                   params=("a", "d", "p", "muY"), level: float = 0.8, seed: int = 0,
                   threads: int | None = None, progress=None) -> RecoveryReport:
    """Simulate and refit ``n_replications`` times.

    ``truth`` is a ParameterState or a callable ``rng -> ParameterState``
    (fresh truth per replication).  Reports, per parameter, the fraction of
    replications whose central ``level`` interval covers the truth and the
    mean bias of the posterior mean; ``max_rhat`` records the largest split
    R-hat over the summary parameters of each fit.
    """
    from .samplers import run_mcmc

    if n_replications < 20:
        raise ValueError("a recovery study needs at least 20 replications")
    master = np.random.SeedSequence(int(seed))
    rows = []
    for r, ss in enumerate(master.spawn(n_replications)):
        rng = np.random.Generator(np.random.PCG64(ss))
        tr = truth(rng) if callable(truth) else truth
        data_seed, fit_seed = (int(v) for v in rng.integers(0, 2**63, size=2))
        sim = simulate_dataset(tr, seed=data_seed)
        model = spec or ModelSpec(tr.structure)
        fit_settings = McmcSettings(settings.n_chains, settings.burn_in, settings.n_samples, settings.thin, fit_seed)
        draws = run_mcmc(model, sim.Z[sim.populations[0]], fit_settings, threads=threads)
        table = diagnostics_table(draws)
        max_rhat = float(np.nanmax(table["rhat"].to_numpy(dtype=float)))
        for name in params:
            v = draws.column(name)
            lo, hi = posterior_interval(v, level)
            true = _truth_value(sim.truth, name)
            rows.append({"replication": r, "parameter": name, "truth": true, "mean": float(v.mean()),
                         "lower": lo, "upper": hi, "covered": bool(lo <= true <= hi), "max_rhat": max_rhat})
        if progress is not None:
            progress(r, rows[-len(params):])
    records = pd.DataFrame(rows)
    records["error"] = records["mean"] - records["truth"]
    summary = records.groupby("parameter", sort=False).agg(
        coverage=("covered", "mean"), bias=("error", "mean"),
        max_rhat=("max_rhat", "max"), n=("covered", "size"),
    ).reset_index()
    return RecoveryReport(records, summary, level)


# ---------------------------------------------------------------- model ordering

@dataclass
class OrderingReport:
    """Per-replication WAIC of each fitted structure and the share of wins."""

    records: pd.DataFrame
    wins: pd.Series


def ordering_study(truth, structures, n_replications: int, settings: McmcSettings, *, seed: int = 0,
                   threads: int | None = None, progress=None) -> OrderingReport:
    """Fit each structure to the same simulated panels and rank them by WAIC.

    ``truth`` is a ParameterState or a callable ``rng -> ParameterState``.
    ``wins`` gives, per structure, the fraction of replications in which it
    attains the lowest WAIC.  Records hold each fit's WAIC excess over the
    replication's best (``delta``) and the standard error of that excess
    from the pointwise differences (``se_delta``).
    """
    from .compare import waic, waic_pointwise
    from .samplers import run_mcmc

    structures = [JumpStructure.parse(s) for s in structures]
    master = np.random.SeedSequence(int(seed))
    rows = []
    for r, ss in enumerate(master.spawn(n_replications)):
        rng = np.random.Generator(np.random.PCG64(ss))
        tr = truth(rng) if callable(truth) else truth
        data_seed, fit_seed = (int(v) for v in rng.integers(0, 2**63, size=2))
        sim = simulate_dataset(tr, seed=data_seed)
        Z = sim.Z[sim.populations[0]]
        rep, pointwise = [], []
        for st in structures:
            fit_settings = McmcSettings(settings.n_chains, settings.burn_in, settings.n_samples, settings.thin, fit_seed)
            draws = run_mcmc(ModelSpec(st), Z, fit_settings, threads=threads)
            table = diagnostics_table(draws)
            lpd, pw = waic_pointwise(draws.loglik)
            pointwise.append(-2.0 * (lpd - pw))
            rep.append({"replication": r, "structure": st.value, "waic": waic(draws.loglik).waic,
                        "max_rhat": float(np.nanmax(table["rhat"].to_numpy(dtype=float)))})
        best = int(np.argmin([row["waic"] for row in rep]))
        for row, pt in zip(rep, pointwise):
            diff = pt - pointwise[best]
            row["delta"] = float(diff.sum())
            row["se_delta"] = float(math.sqrt(diff.size) * diff.std(ddof=1))
        rows += rep
        if progress is not None:
            progress(r, rows[-len(structures):])
    records = pd.DataFrame(rows)
    best = records.loc[records.groupby("replication")["waic"].idxmin(), "structure"]
    wins = best.value_counts(normalize=True).reindex([s.value for s in structures], fill_value=0.0)
    return OrderingReport(records, wins)


# ---------------------------------------------------------------- forecast coverage

@dataclass
class CoverageReport:
    """Per-replication interval coverage of held-out log rates."""

    records: pd.DataFrame
    level: float

    @property
    def pooled(self) -> float:
        """Coverage over all (replication, age, horizon) cells."""
        return float(self.records["covered"].sum() / self.records["cells"].sum())


def coverage_study(truth, H: int, n_replications: int, settings: McmcSettings, *, level: float = 0.8,
                   seed: int = 0, threads: int | None = None, progress=None) -> CoverageReport:
    """Simulate T + H years, fit the first T and score the H-year fan.

    ``truth`` is a ParameterState over the full T + H years whose occurrences
    after year T are what the held-out panel experiences; the fit sees only
    the first T years with its structure.
    """
    from .forecast import forecast
    from .samplers import run_mcmc

    T = truth.n_years - H
    if T < 4:
        raise ValueError("truth must cover at least four fitted years before the horizon")
    master = np.random.SeedSequence(int(seed))
    rows = []
    for r, ss in enumerate(master.spawn(n_replications)):
        rng = np.random.Generator(np.random.PCG64(ss))
        data_seed, fit_seed, fc_seed = (int(v) for v in rng.integers(0, 2**63, size=3))
        sim = simulate_dataset(truth, seed=data_seed)
        pop = sim.populations[0]
        lm = sim.log_rates[pop]
        fit_settings = McmcSettings(settings.n_chains, settings.burn_in, settings.n_samples, settings.thin, fit_seed)
        draws = run_mcmc(ModelSpec(truth.structure), sim.Z[pop][:, : T - 1], fit_settings, threads=threads)
        fan = forecast(draws, lm[:, T - 1], H, rng=fc_seed)
        lo, hi = np.quantile(fan.draws, [(1 - level) / 2, (1 + level) / 2], axis=0)
        held = lm[:, T:]
        inside = (held >= lo) & (held <= hi)
        rows.append({"replication": r, "covered": int(inside.sum()), "cells": int(inside.size),
                     "coverage": float(inside.mean())})
        if progress is not None:
            progress(r, rows[-1])
    return CoverageReport(pd.DataFrame(rows), level)
