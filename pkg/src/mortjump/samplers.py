"""Gibbs-style MCMC for the jump-extended Lee-Carter model on improvement rates.

Per sweep the sampler updates, in order: every free occurrence N_t (binary
Gibbs), the jump probability p (conjugate Beta), the severity hyperparameters
and severities (slice), the persistence coefficient (slice), sigma_r and
sigma_xi with the period increments integrated out (random-walk Metropolis on
the log scale), the period increments (exact Gaussian draw), the drift d
(conjugate Gaussian), sigma_xi or Sigma and sigma_r again given the
increments, and both age patterns (coordinate-wise slice sampling of their
Gamma representation).

Chains use independent PCG64 streams spawned from ``numpy.random.SeedSequence(seed)``.
"""
from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import _core
from .errors import CoeffUnidentified, InvalidSettings, PinnedIndex, ShapeError
from .kernels import slice_step
from .model import (
    JumpStructure,
    McmcSettings,
    ModelSpec,
    ParameterState,
    PriorConfig,
    log_likelihood,
)


@dataclass
class PosteriorDraws:
    """Thinned post-burn-in draws of all chains, stacked chain after chain.

    ``values`` is S x P with column names ``names``; ``loglik`` is the S x n
    matrix of pointwise log-likelihoods, observations ordered country, age,
    then transition year.
    """

    names: list
    values: np.ndarray
    chain: np.ndarray
    iteration: np.ndarray
    loglik: np.ndarray
    settings: McmcSettings
    structure: JumpStructure
    countries: list
    ages: list
    years: list
    pinned: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._index = {n: i for i, n in enumerate(self.names)}

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    @property
    def n_chains(self) -> int:
        return int(np.unique(self.chain).size)

    @property
    def draws(self) -> np.ndarray:
        return self.values

    @property
    def chain_ids(self) -> np.ndarray:
        return self.chain

    @property
    def loglik_pointwise(self) -> np.ndarray:
        return self.loglik

    @property
    def n_ages(self) -> int:
        return len(self.ages)

    @property
    def n_years(self) -> int:
        return len(self.years)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self._index[name]]

    def block(self, prefix: str, country: str | None = None) -> np.ndarray:
        """All columns ``prefix[...]`` of one country as an S x k matrix."""
        tag = self._tag(country)
        cols = [i for n, i in self._index.items() if n.startswith(f"{tag}{prefix}[")]
        return self.values[:, cols]

    def scalar(self, name: str, country: str | None = None) -> np.ndarray:
        return self.column(f"{self._tag(country)}{name}")

    def _tag(self, country):
        if len(self.countries) == 1:
            return ""
        if country is None:
            raise ValueError("country required for multi-population draws")
        return f"{country}:"

    def chains(self, name: str) -> np.ndarray:
        """Draws of one column reshaped to (n_chains, draws per chain)."""
        col = self.column(name)
        ids = np.unique(self.chain)
        return np.stack([col[self.chain == k] for k in ids])

    def state(self, i: int, country: str | None = None) -> ParameterState:
        tag = self._tag(country)
        coeff = self.structure.coeff_name or "coeff"
        sigma_xi = (self.column("sigma_xi")[i] if len(self.countries) == 1
                    else np.sqrt(self.column(f"Sigma[{country},{country}]")[i]))
        return ParameterState(
            beta=self.block("beta", country)[i],
            betaJ=self.block("betaJ", country)[i],
            d=self.column(f"{tag}d")[i],
            dkappa=self.block("dkappa", country)[i],
            sigma_xi=sigma_xi,
            sigma_r=self.column(f"{tag}sigma_r")[i],
            p=self.column("p")[i],
            N=self.block("N")[i] if len(self.countries) == 1 else self.values[i, self._shared_N()],
            Y=self.block("Y", country)[i],
            coeff=self.column(f"{tag}{coeff}")[i],
            muY=self.column(f"{tag}muY")[i],
            sigmaY=self.column(f"{tag}sigmaY")[i],
            J=self.block("J", country)[i],
            structure=self.structure,
        )

    def _shared_N(self):
        return [self._index[f"N[{t}]"] for t in range(1, self.n_years + 1)]

    def loglik_block(self, country: str) -> np.ndarray:
        k = self.countries.index(country)
        n = self.n_ages * (self.n_years - 1)
        return self.loglik[:, k * n:(k + 1) * n]

    def summary_names(self) -> list:
        """Parameters reported in posterior tables and convergence checks."""
        out = []
        for cid in self.countries:
            tag = "" if len(self.countries) == 1 else f"{cid}:"
            out += [f"{tag}beta[{x}]" for x in range(1, self.n_ages + 1)]
            if self.structure.has_jumps:
                out += [f"{tag}betaJ[{x}]" for x in range(1, self.n_ages + 1)]
            out += [f"{tag}d", f"{tag}sigma_r"]
            if self.structure.has_coeff:
                out.append(f"{tag}{self.structure.coeff_name}")
            if self.structure.has_jumps:
                out += [f"{tag}muY", f"{tag}sigmaY"]
        if len(self.countries) == 1:
            out.insert(out.index("sigma_r"), "sigma_xi")
        else:
            out += [n for n in self.names if n.startswith("Sigma[")]
        if self.structure.has_jumps:
            out.append("p")
        return out

    def to_csv(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(self.values, columns=self.names)
        frame.insert(0, "iteration", self.iteration)
        frame.insert(0, "chain", self.chain)
        frame.to_csv(directory / "draws.csv", index=False)
        obs = [f"ll[{c}|{a}|{y}]" for c in self.countries for a in self.ages for y in self.years[:-1]]
        ll = pd.DataFrame(self.loglik, columns=obs)
        ll.insert(0, "iteration", self.iteration)
        ll.insert(0, "chain", self.chain)
        ll.to_csv(directory / "loglik.csv", index=False)
        meta = {
            "structure": self.structure.value,
            "countries": list(self.countries),
            "ages": list(self.ages),
            "years": [int(y) for y in self.years],
            "pinned": [bool(v) for v in self.pinned],
            "settings": {k: int(v) for k, v in vars(self.settings).items()},
            **self.meta,
        }
        (directory / "draws_meta.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def from_csv(cls, directory) -> "PosteriorDraws":
        directory = Path(directory)
        meta = json.loads((directory / "draws_meta.json").read_text())
        frame = pd.read_csv(directory / "draws.csv", float_precision="round_trip")
        ll = pd.read_csv(directory / "loglik.csv", float_precision="round_trip")
        extra = {k: v for k, v in meta.items()
                 if k not in ("structure", "countries", "ages", "years", "pinned", "settings")}
        return cls(
            names=list(frame.columns[2:]),
            values=frame.iloc[:, 2:].to_numpy(dtype=float),
            chain=frame["chain"].to_numpy(),
            iteration=frame["iteration"].to_numpy(),
            loglik=ll.iloc[:, 2:].to_numpy(dtype=float),
            settings=McmcSettings(**meta["settings"]),
            structure=JumpStructure.parse(meta["structure"]),
            countries=meta["countries"],
            ages=meta["ages"],
            years=meta["years"],
            pinned=np.asarray(meta["pinned"], dtype=bool),
            meta=extra,
        )


# ---------------------------------------------------------------- engine plumbing

def parameter_names(structure: JumpStructure, countries, n_ages: int, n_years: int) -> list:
    """Column names in the order written by the compiled ``flatten``."""
    coeff = structure.coeff_name or "coeff"
    single = len(countries) == 1
    names = []
    for cid in countries:
        tag = "" if single else f"{cid}:"
        names += [f"{tag}beta[{x}]" for x in range(1, n_ages + 1)]
        names += [f"{tag}betaJ[{x}]" for x in range(1, n_ages + 1)]
        names += [f"{tag}dkappa[{t}]" for t in range(2, n_years + 1)]
        names += [f"{tag}Y[{t}]" for t in range(1, n_years + 1)]
        names += [f"{tag}J[{t}]" for t in range(1, n_years + 1)]
        names += [f"{tag}d", f"{tag}sigma_r", f"{tag}{coeff}", f"{tag}muY", f"{tag}sigmaY"]
    names += [f"N[{t}]" for t in range(1, n_years + 1)]
    names.append("p")
    if single:
        names.append("sigma_xi")
    else:
        names += [f"Sigma[{a},{b}]" for i, a in enumerate(countries) for b in countries[i:]]
    return names


def _as_panel(Z) -> np.ndarray:
    Z = np.asarray(getattr(Z, "values", Z), dtype=float)
    if Z.ndim == 2:
        Z = Z[None]
    if Z.ndim != 3 or Z.shape[2] < 2:
        raise ShapeError(f"improvement panel must be A x (T-1) with T >= 3, got {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise ShapeError("improvement panel contains non-finite values")
    return np.ascontiguousarray(Z)


def build_model(Z, spec: ModelSpec, *, multipop: bool = False, sample_coeff: bool | None = None):
    Z = _as_panel(Z)
    C, A, n_col = Z.shape
    T = n_col + 1
    pri = spec.priors
    alpha_b, alpha_bJ = pri.concentrations(A)
    structure = spec.structure
    if sample_coeff is None:
        sample_coeff = structure.has_coeff
    return _core.Model(
        Z=Z,
        kind=structure.code,
        free=~spec.pins(T),
        alpha_b=np.tile(alpha_b, (C, 1)),
        alpha_bJ=np.tile(alpha_bJ, (C, 1)),
        d_mean=float(pri.d_prior[0]),
        d_sd=float(pri.d_prior[1]),
        sxi_sd=float(pri.sigma_xi_prior),
        sr_sd=float(pri.sigma_r_prior),
        muY_sd=float(pri.muY_prior),
        sY_sd=float(pri.sigmaY_prior),
        p_a=float(pri.p_prior[0]),
        p_b=float(pri.p_prior[1]),
        coeff_kind=0 if pri.coeff_prior[0] == "truncnorm" else 1,
        coeff_p1=float(pri.coeff_prior[1]),
        coeff_p2=float(pri.coeff_prior[2]),
        y_pos=pri.positive_severity,
        cov_kind=_core.COV_IWISHART if multipop else _core.COV_HALFNORMAL,
        iw_df=float(pri.covariance_df if pri.covariance_df is not None else C + 2),
        iw_scale=float(pri.covariance_scale),
        sample_coeff=bool(sample_coeff and structure.has_coeff),
    )


def empty_core(C: int, A: int, T: int) -> _core.Core:
    return _core.Core(
        beta=np.full((C, A), 1.0 / A), betaJ=np.full((C, A), 1.0 / A),
        gb=np.ones((C, A)), gbJ=np.ones((C, A)),
        dk=np.zeros((C, T - 1)), N=np.zeros(T), Y=np.zeros((C, T)), J=np.zeros((C, T)),
        d=np.zeros(C), sr=np.ones(C), coeff=np.zeros(C), muY=np.ones(C), sY=np.ones(C),
        p=np.full(1, 0.05), Sigma=np.eye(C),
    )


OUTLIER_Z = 3.5


def _robust_z(col: np.ndarray) -> np.ndarray:
    med = float(np.median(col))
    mad = 1.4826 * float(np.median(np.abs(col - med)))
    return (col - med) / max(mad, 1e-12)


def _seed_jumps(m: _core.Model, s: _core.Core, excess: np.ndarray, flagged: np.ndarray) -> None:
    """Switch on occurrences at flagged transitions so the jump path absorbs the excess.

    Transition j moves year j to year j + 1, so its jump increment is
    J[j + 1] - J[j].  Each flagged, free year gets the severity that makes
    the increment equal the column excess given the structure's carried part.
    """
    C, T = s.Y.shape
    if m.kind == _core.KIND_NONE:
        return
    for j in np.flatnonzero(flagged):
        t = j + 1
        if not m.free[t]:
            continue
        ok = True
        for c in range(C):
            _core.refresh_jumps(m, s)
            prev = s.J[c, t - 1]
            if m.kind == _core.KIND_AR1:
                carried = s.coeff[c] * prev
            elif m.kind == _core.KIND_MA1:
                carried = s.coeff[c] * s.N[t - 1] * s.Y[c, t - 1]
            else:
                carried = 0.0
            y = prev + excess[c, j] - carried
            if m.y_pos and y <= 0.0:
                ok = False
        if not ok:
            continue
        s.N[t] = 1.0
        for c in range(C):
            _core.refresh_jumps(m, s)
            prev = s.J[c, t - 1]
            if m.kind == _core.KIND_AR1:
                carried = s.coeff[c] * prev
            elif m.kind == _core.KIND_MA1:
                carried = s.coeff[c] * s.N[t - 1] * s.Y[c, t - 1]
            else:
                carried = 0.0
            s.Y[c, t] = prev + excess[c, j] - carried
    _core.refresh_jumps(m, s)


def initial_core(m: _core.Model, rng, coeff_init: float = 0.2) -> _core.Core:
    """Data-driven starting point with chain-specific jitter.

    The age-summed improvement column approximates dkappa + dJ because both
    age patterns sum to one.  Columns that are robust outliers (|z| > 3.5
    against the median and MAD) seed the jump occurrences, so the chain does
    not start in the mode where shocks are absorbed by an inflated sigma_xi.
    """
    C, A, n_col = m.Z.shape
    T = n_col + 1
    s = empty_core(C, A, T)
    jit = lambda scale=0.2: float(np.exp(scale * rng.standard_normal()))
    cols = m.Z.sum(axis=1)
    z = np.stack([_robust_z(col) for col in cols])
    flagged = np.zeros(n_col, dtype=bool)
    if m.kind != _core.KIND_NONE:
        flagged = np.abs(z).max(axis=0) > OUTLIER_Z
        flagged[0] = False
    med = np.median(cols, axis=1)
    excess = np.where(flagged[None, :], cols - med[:, None], 0.0)
    for c in range(C):
        s.coeff[c] = coeff_init if m.sample_coeff else 0.0
    _seed_jumps(m, s, excess, flagged)
    dJ = np.diff(s.J, axis=1)
    for c in range(C):
        col = cols[c] - dJ[c]
        spread = max(float(np.std(col)), 1e-3)
        s.d[c] = float(np.median(col)) + 0.1 * spread * rng.standard_normal()
        s.dk[c, 1:] = col[1:]
        s.dk[c, 0] = s.d[c]
        ls = m.Z[c] @ s.dk[c] / max(float(s.dk[c] @ s.dk[c]), 1e-12)
        ls = np.clip(ls, 1e-3, None)
        beta = 0.5 * ls / ls.sum() + 0.5 / A
        beta *= rng.gamma(20.0, 1.0 / 20.0, size=A)
        beta /= beta.sum()
        s.gb[c] = beta * rng.gamma(m.alpha_b[c].sum())
        s.beta[c] = beta
        resid = m.Z[c] - np.outer(beta, s.dk[c])
        if np.any(dJ[c] != 0.0):
            lsJ = np.clip(resid @ dJ[c] / float(dJ[c] @ dJ[c]), 1e-3, None)
            betaJ = 0.5 * lsJ / lsJ.sum() + 0.5 / A
        else:
            betaJ = np.full(A, 1.0 / A)
        betaJ *= rng.gamma(20.0, 1.0 / 20.0, size=A)
        betaJ /= betaJ.sum()
        s.gbJ[c] = betaJ * rng.gamma(m.alpha_bJ[c].sum())
        s.betaJ[c] = betaJ
        resid -= np.outer(betaJ, dJ[c])
        s.sr[c] = max(float(np.std(resid)), 1e-3) * jit()
        active = s.Y[c][(s.N == 1.0) & m.free]
        if active.size:
            s.muY[c] = max(float(np.mean(np.abs(active))), 1e-2) * jit()
            s.sY[c] = max(float(np.std(active)), 0.1 * s.muY[c]) * jit()
        else:
            s.muY[c] = 1.0 * jit()
            s.sY[c] = 1.0 * jit()
        for t in range(T):
            if m.free[t] and s.N[t] == 0.0:
                s.Y[c, t] = _core.draw_severity(rng, s.muY[c], s.sY[c], m.y_pos)
        if m.kind == _core.KIND_NONE:
            s.betaJ[c] = 1.0 / A
            s.gbJ[c] = 1.0
    # robust scale of the increments, ignoring columns left unexplained by the seeded jumps
    innov = s.dk[:, 1:] - s.d[:, None]
    calm = np.all(np.abs(np.stack([_robust_z(row) for row in innov])) <= OUTLIER_Z, axis=0)
    if calm.sum() < 3:
        calm[:] = True
    scale = np.array([max(1.4826 * float(np.median(np.abs(row - np.median(row)))), 1e-3) for row in innov])
    if C == 1:
        s.Sigma[0, 0] = (scale[0] * jit()) ** 2
    else:
        corr = np.corrcoef(innov[:, calm]) if calm.sum() > C else np.eye(C)
        corr = np.nan_to_num(corr, nan=0.0)
        np.fill_diagonal(corr, 1.0)
        s.Sigma[:, :] = 0.9 * corr * np.outer(scale, scale) + 0.1 * np.diag(scale**2)
    n_free = max(int(m.free.sum()), 1)
    s.p[0] = min(max(float(s.N[m.free].sum()), 1.0) / n_free, 0.5) * jit()
    _core.refresh_jumps(m, s)
    return s


def initial_tune(C: int, A: int, T: int) -> _core.Tune:
    return _core.Tune(
        w_coeff=np.full(C, 0.2), w_Y=np.ones((C, T)), w_muY=np.ones(C), w_sY=np.ones(C),
        w_gb=np.ones((C, A)), w_gbJ=np.ones((C, A)),
        step_sr=np.full(C, np.log(0.2)), step_sxi=np.full(1, np.log(0.2)),
        acc_sr=np.zeros(C, dtype=np.int64), acc_sxi=np.zeros(1, dtype=np.int64),
        step_src=np.full(C, np.log(0.2)), step_sxic=np.full(1, np.log(0.2)),
        acc_src=np.zeros(C, dtype=np.int64), acc_sxic=np.zeros(1, dtype=np.int64),
    )


def chain_generators(seed: int, n_chains: int) -> list:
    return [np.random.Generator(np.random.PCG64(ss)) for ss in np.random.SeedSequence(int(seed)).spawn(n_chains)]


def run_engine(m: _core.Model, settings: McmcSettings, *, threads: int | None = None,
               init=None, coeff_init: float = 0.2):
    """Run all chains; returns (values, chain ids, iteration numbers, loglik)."""
    C, A, n_col = m.Z.shape
    T = n_col + 1
    kept = settings.kept_per_chain
    P = _core.flat_size(C, A, T)
    n_obs = C * A * n_col
    rngs = chain_generators(settings.seed, settings.n_chains)

    def one(k):
        rng = rngs[k]
        s = init(m, rng, k) if init is not None else initial_core(m, rng, coeff_init)
        tune = initial_tune(C, A, T)
        draws = np.empty((kept, P))
        ll = np.empty((kept, n_obs))
        _core.run_chain(m, s, tune, rng, settings.burn_in, settings.n_samples, settings.thin, draws, ll)
        return draws, ll

    workers = max(1, min(threads or settings.n_chains, settings.n_chains))
    if workers == 1:
        results = [one(k) for k in range(settings.n_chains)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(settings.n_chains)))
    values = np.concatenate([r[0] for r in results])
    loglik = np.concatenate([r[1] for r in results])
    chain = np.repeat(np.arange(settings.n_chains), kept)
    iteration = np.tile(settings.burn_in + settings.thin * np.arange(1, kept + 1), settings.n_chains)
    return values, chain, iteration, loglik


def _labels(Z, n_ages, n_years):
    ages = list(getattr(Z, "ages", []) or [str(x) for x in range(1, n_ages + 1)])
    years = list(getattr(Z, "years", []) or [])
    years = [int(y) for y in years] + ([int(years[-1]) + 1] if years else [])
    if not years:
        years = list(range(1, n_years + 1))
    return ages, years


def run_mcmc(spec: ModelSpec, Z, settings: McmcSettings | None = None, *, threads: int | None = None,
             fix_coeff: float | None = None, init=None) -> PosteriorDraws:
    """Fit the single-population model to an A x (T-1) improvement matrix.

    ``fix_coeff`` holds the persistence coefficient at a constant instead of
    sampling it (0 reproduces the independent-jump model).
    """
    settings = settings or McmcSettings()
    if not isinstance(settings, McmcSettings):
        raise InvalidSettings("settings must be McmcSettings")
    panel = _as_panel(Z)
    if panel.shape[0] != 1:
        raise ShapeError("run_mcmc expects a single population; use run_mcmc_multipop")
    _, A, n_col = panel.shape
    T = n_col + 1
    m = build_model(panel, spec, sample_coeff=fix_coeff is None)
    if spec.structure.has_coeff and not m.free.any():
        warnings.warn("every occurrence is pinned; the persistence coefficient is prior-dominated",
                      CoeffUnidentified, stacklevel=2)
    coeff_init = 0.2 if fix_coeff is None else float(fix_coeff)
    values, chain, iteration, loglik = run_engine(m, settings, threads=threads, init=init, coeff_init=coeff_init)
    ages, years = _labels(Z, A, T)
    return PosteriorDraws(
        names=parameter_names(spec.structure, ["pop"], A, T),
        values=values, chain=chain, iteration=iteration, loglik=loglik,
        settings=settings, structure=spec.structure, countries=["pop"],
        ages=ages, years=years, pinned=spec.pins(T),
        meta={"model": spec.to_dict()},
    )


# ---------------------------------------------------------------- single-step operations

def core_from_state(state: ParameterState, gamma_total: tuple[float, float] = (1.0, 1.0)) -> _core.Core:
    A, T = state.n_ages, state.n_years
    s = empty_core(1, A, T)
    s.beta[0] = state.beta
    s.betaJ[0] = state.betaJ
    s.gb[0] = state.beta * gamma_total[0]
    s.gbJ[0] = state.betaJ * gamma_total[1]
    s.dk[0] = state.dkappa
    s.N[:] = state.N
    s.Y[0] = state.Y
    s.J[0] = state.J
    s.d[0] = state.d
    s.sr[0] = state.sigma_r
    s.coeff[0] = state.coeff
    s.muY[0] = state.muY
    s.sY[0] = state.sigmaY
    s.p[0] = state.p
    s.Sigma[0, 0] = state.sigma_xi ** 2
    return s


def gibbs_drift(state: ParameterState, Z, priors: PriorConfig, rng) -> float:
    """Exact draw of d from its Gaussian full conditional.

    The conditional combines the N(d_mean, d_sd^2) prior, the free period
    increments ``dkappa[3..T] ~ N(d, sigma_xi^2)`` and the first improvement
    column, whose period increment is pinned to d.
    """
    m = build_model(Z, ModelSpec(state.structure, priors))
    s = core_from_state(state)
    _core.draw_drift(m, s, rng)
    return float(s.d[0])


def drift_conditional(state: ParameterState, Z, priors: PriorConfig) -> tuple[float, float]:
    """Mean and variance of the drift's full conditional (closed form)."""
    Z = np.asarray(getattr(Z, "values", Z), dtype=float)
    mu0, sd0 = priors.d_prior
    free = state.dkappa[1:]
    prec = 1 / sd0**2 + free.size / state.sigma_xi**2 + state.beta @ state.beta / state.sigma_r**2
    dJ = state.J[1] - state.J[0]
    lin = mu0 / sd0**2 + free.sum() / state.sigma_xi**2 + state.beta @ (Z[:, 0] - state.betaJ * dJ) / state.sigma_r**2
    return lin / prec, 1 / prec


def gibbs_p(N, priors: PriorConfig, rng, pinned=None) -> float:
    """Conjugate Beta draw of the jump probability from the free occurrences."""
    N = np.asarray(N, dtype=float)
    if pinned is None:
        pinned = ModelSpec().pins(N.size)
    free = ~np.asarray(pinned, dtype=bool)
    k = float(N[free].sum())
    n_free = int(free.sum())
    a, b = priors.p_prior
    return float(rng.beta(a + k, b + n_free - k))


def binary_probability(state: ParameterState, Z, t: int, pinned=None) -> float:
    """P(N_t = 1 | everything else) for 1-based year position ``t``."""
    if pinned is None:
        pinned = ModelSpec(state.structure).pins(state.n_years)
    if not 1 <= t <= state.n_years:
        raise IndexError(f"year position {t} outside 1..{state.n_years}")
    if pinned[t - 1]:
        raise PinnedIndex(f"occurrence at year position {t} is pinned to 0")
    lls = []
    for value in (0.0, 1.0):
        trial = state.copy()
        trial.N[t - 1] = value
        trial.refresh_jumps()
        lls.append(log_likelihood(trial, Z)[0])
    logodds = np.log(state.p) - np.log1p(-state.p) + lls[1] - lls[0]
    return float(1.0 / (1.0 + np.exp(-logodds)))


def gibbs_binary_N(state: ParameterState, Z, t: int, rng, pinned=None) -> int:
    """Draw N_t from its Bernoulli full conditional (J recomputed for both values)."""
    prob = binary_probability(state, Z, t, pinned)
    return int(rng.random() < prob)


def sample_simplex_block(state: ParameterState, Z, which: str, rng, priors: PriorConfig | None = None,
                         width: float = 1.0) -> np.ndarray:
    """Update ``beta`` or ``betaJ`` through its Gamma representation.

    The simplex vector is written as b / sum(b) with independent
    Gamma(alpha_x, 1) coordinates b; the total is drawn from its
    Gamma(sum alpha, 1) conditional, then each coordinate is slice-sampled.
    """
    if which not in ("beta", "betaJ"):
        raise ValueError("which must be 'beta' or 'betaJ'")
    priors = priors or PriorConfig()
    m = build_model(Z, ModelSpec(state.structure, priors))
    k = 0 if which == "beta" else 1
    alpha = (m.alpha_b if k == 0 else m.alpha_bJ)[0]
    s = core_from_state(state)
    total = rng.gamma(alpha.sum())
    g = s.gb if k == 0 else s.gbJ
    g[0] = getattr(state, which) * total
    for i in range(state.n_ages):
        new = slice_step(_core.lp_gamma_coord, (m, s, 0, i, k), g[0, i], width, _core.MAX_STEPS, rng, 0.0, np.inf)
        _core.lp_gamma_coord(new, (m, s, 0, i, k))
    out = (s.beta if k == 0 else s.betaJ)[0].copy()
    return out / out.sum()
