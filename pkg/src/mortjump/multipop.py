"""Multi-population model: shared jump occurrences, correlated period effects.

Each population c has its own age patterns, severities, persistence and
observation scale; the occurrence vector N and its probability p are shared,
and the period increments follow a multivariate random walk with drift
vector d and innovation covariance Sigma.  With one population the model and
its sampler reduce to the single-population ones exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from .errors import DegenerateScale, ShapeError, YearRangeMismatch
from .model import JumpStructure, McmcSettings, ModelSpec, ParameterState, jump_path, log_likelihood
from .samplers import PosteriorDraws, build_model, parameter_names, run_engine


@dataclass
class MultiPopState:
    """Joint parameter point; per-population arrays have a leading axis of length C."""

    countries: list
    beta: np.ndarray
    betaJ: np.ndarray
    dkappa: np.ndarray
    Y: np.ndarray
    coeff: np.ndarray
    sigma_r: np.ndarray
    muY: np.ndarray
    sigmaY: np.ndarray
    N: np.ndarray
    p: float
    d: np.ndarray
    Sigma: np.ndarray
    structure: JumpStructure = JumpStructure.AR1
    J: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.structure = JumpStructure.parse(self.structure)
        for name in ("beta", "betaJ", "dkappa", "Y", "coeff", "sigma_r", "muY", "sigmaY", "N", "d", "Sigma"):
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        self.countries = list(self.countries)
        self.p = float(self.p)
        self.refresh_jumps()

    @property
    def n_countries(self) -> int:
        return len(self.countries)

    def refresh_jumps(self):
        self.J = np.stack([jump_path(self.structure, self.N, self.Y[c], self.coeff[c])
                           for c in range(self.n_countries)])
        return self

    def country(self, c) -> ParameterState:
        """Single-population view of population ``c`` (index or label)."""
        k = self.countries.index(c) if not isinstance(c, (int, np.integer)) else int(c)
        return ParameterState(
            beta=self.beta[k], betaJ=self.betaJ[k], d=self.d[k], dkappa=self.dkappa[k],
            sigma_xi=float(np.sqrt(self.Sigma[k, k])), sigma_r=self.sigma_r[k], p=self.p,
            N=self.N, Y=self.Y[k], coeff=self.coeff[k], muY=self.muY[k], sigmaY=self.sigmaY[k],
            structure=self.structure,
        )

    def invariant_violations(self, pinned=None, tol: float = 1e-12) -> list[str]:
        out = []
        for k in range(self.n_countries):
            out += [f"{self.countries[k]}: {v}" for v in self.country(k).invariant_violations(pinned, tol)]
        if not np.allclose(self.Sigma, self.Sigma.T):
            out.append("Sigma is not symmetric")
        else:
            try:
                np.linalg.cholesky(self.Sigma)
            except np.linalg.LinAlgError:
                out.append("Sigma is not positive definite")
        return out

    @classmethod
    def from_draw(cls, draws: PosteriorDraws, i: int) -> "MultiPopState":
        views = [draws.state(i, None if len(draws.countries) == 1 else c) for c in draws.countries]
        C = len(views)
        if C == 1:
            Sigma = np.array([[views[0].sigma_xi ** 2]])
        else:
            Sigma = np.empty((C, C))
            for a, ca in enumerate(draws.countries):
                for b in range(a, C):
                    Sigma[a, b] = Sigma[b, a] = draws.column(f"Sigma[{ca},{draws.countries[b]}]")[i]
        return cls(
            countries=list(draws.countries),
            beta=[v.beta for v in views], betaJ=[v.betaJ for v in views],
            dkappa=[v.dkappa for v in views], Y=[v.Y for v in views],
            coeff=[v.coeff for v in views], sigma_r=[v.sigma_r for v in views],
            muY=[v.muY for v in views], sigmaY=[v.sigmaY for v in views],
            N=views[0].N, p=views[0].p, d=[v.d for v in views], Sigma=Sigma,
            structure=draws.structure,
        )


class MultiPopLikelihood(NamedTuple):
    total: float
    pointwise: dict
    innovations: float


def _panel(Z_by_country, countries=None):
    countries = list(countries or Z_by_country.keys())
    mats, years = [], None
    for c in countries:
        Z = Z_by_country[c]
        yrs = list(getattr(Z, "years", []) or [])
        vals = np.asarray(getattr(Z, "values", Z), dtype=float)
        if mats and vals.shape[1] != mats[0].shape[1]:
            raise YearRangeMismatch(f"population {c!r} has {vals.shape[1]} transitions, expected {mats[0].shape[1]}")
        if mats and vals.shape[0] != mats[0].shape[0]:
            raise ShapeError(f"population {c!r} has {vals.shape[0]} age groups, expected {mats[0].shape[0]}")
        if yrs:
            if years is not None and yrs != years:
                raise YearRangeMismatch(f"population {c!r} covers years {yrs[0]}..{yrs[-1]}, "
                                        f"expected {years[0]}..{years[-1]}")
            years = yrs
        mats.append(vals)
    return countries, np.stack(mats), years


def multipop_log_likelihood(state: MultiPopState, Z_by_country, include_innovations: bool = True):
    """Observation log-likelihood per population plus the innovation density.

    ``pointwise`` maps each population to its A x (T-1) matrix.  With
    ``include_innovations`` the total adds the multivariate-normal density of
    the free period increments dkappa[:, 1:] under N(d, Sigma).
    """
    countries, Z, _ = _panel(Z_by_country, state.countries)
    C, A, n_col = Z.shape
    if state.beta.shape != (C, A) or state.dkappa.shape != (C, n_col):
        raise ShapeError("state dimensions do not match the improvement panels")
    pointwise = {}
    total = 0.0
    for k, c in enumerate(countries):
        sub, ll = log_likelihood(state.country(k), Z[k])
        pointwise[c] = ll
        total += sub
    innov = 0.0
    if include_innovations and n_col > 1:
        innov = float(stats.multivariate_normal(state.d, state.Sigma).logpdf(state.dkappa[:, 1:].T).sum())
        total += innov
    return MultiPopLikelihood(float(total), pointwise, innov)


def rescale_country_params(state: MultiPopState) -> MultiPopState:
    """Normalise every population's age patterns without changing fitted rates.

    beta_c is divided by its sum s_c and the period increments, drift and
    covariance rows/columns are multiplied by s_c; betaJ_c likewise rescales
    the severities and their hyperparameters.  N is passed through untouched.
    """
    sb = state.beta.sum(axis=1)
    sbJ = state.betaJ.sum(axis=1)
    if np.any(~(sb > 0)) or np.any(~(sbJ > 0)):
        raise DegenerateScale("age-pattern sums must be positive in every population")
    return MultiPopState(
        countries=list(state.countries),
        beta=state.beta / sb[:, None],
        betaJ=state.betaJ / sbJ[:, None],
        dkappa=state.dkappa * sb[:, None],
        Y=state.Y * sbJ[:, None],
        coeff=state.coeff.copy(),
        sigma_r=state.sigma_r.copy(),
        muY=state.muY * sbJ,
        sigmaY=state.sigmaY * sbJ,
        N=state.N,
        p=state.p,
        d=state.d * sb,
        Sigma=state.Sigma * np.outer(sb, sb),
        structure=state.structure,
    )


def run_mcmc_multipop(spec: ModelSpec, Z_by_country, settings: McmcSettings | None = None, *,
                      threads: int | None = None) -> PosteriorDraws:
    """Joint fit; the occurrence update multiplies the populations' likelihoods.

    A single population is fitted with the single-population sampler and
    priors (half-normal sigma_xi), so results coincide with ``run_mcmc``.
    """
    settings = settings or McmcSettings()
    countries, Z, years = _panel(Z_by_country)
    C, A, n_col = Z.shape
    T = n_col + 1
    m = build_model(Z, spec, multipop=C > 1)
    values, chain, iteration, loglik = run_engine(m, settings, threads=threads)
    first = Z_by_country[countries[0]]
    ages = list(getattr(first, "ages", []) or [str(x) for x in range(1, A + 1)])
    all_years = [int(y) for y in years] + [int(years[-1]) + 1] if years else list(range(1, T + 1))
    return PosteriorDraws(
        names=parameter_names(spec.structure, countries, A, T),
        values=values, chain=chain, iteration=iteration, loglik=loglik,
        settings=settings, structure=spec.structure, countries=countries,
        ages=ages, years=all_years, pinned=spec.pins(T),
        meta={"model": spec.to_dict()},
    )
