"""Posterior-predictive forecasting, shock-increase quantiles and forecast scores.

For every retained posterior draw s and horizon h the recursion is

1. N ~ Bernoulli(p), Y from the severity distribution (mu_Y, sigma_Y);
2. J carried forward from its last in-sample value with the draw's a or b;
3. dkappa = d + sigma_xi * xi, eps_x ~ N(0, sigma_r^2);
4. Z_x = beta_x dkappa + betaJ_x dJ + eps_x and ln m_{x,T+h} = ln m_{x,T+h-1} + Z_x.

Each draw uses its own random stream spawned from the seed, so results do
not depend on how draws are scheduled.  Per draw and horizon the stream is
consumed in a fixed order (occurrence uniform, one severity uniform per
population, then the period and observation normals) whatever the jump
structure, so structures that imply the same jump path give identical fans.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import integrate, special

from .errors import InvalidHorizon, ShapeError
from .model import JumpStructure

DEFAULT_LEVELS = (0.1, 0.9)
SHOCK_LEVELS = (0.9, 0.95, 0.99)


@dataclass
class ForecastFan:
    """Predictive draws: ``draws`` (log rates) and ``z_draws`` are S x A x H.

    ``z_means`` holds the conditional means of the improvements before the
    observation noise, so the predictive density of an improvement is the
    Gaussian mixture of N(z_means[s], sigma_r[s]^2).
    """

    draws: np.ndarray
    z_draws: np.ndarray
    z_means: np.ndarray
    sigma_r: np.ndarray
    base_log_rates: np.ndarray
    base_year: int
    ages: list = field(default_factory=list)
    population: str = "pop"

    @property
    def horizon(self) -> int:
        return self.draws.shape[2]

    @property
    def years(self) -> list:
        return [self.base_year + h for h in range(1, self.horizon + 1)]

    def quantiles(self, levels=DEFAULT_LEVELS) -> np.ndarray:
        """Type-7 quantiles over draws, shape len(levels) x A x H."""
        return np.quantile(self.draws, levels, axis=0)

    def summary(self, levels=DEFAULT_LEVELS) -> pd.DataFrame:
        q = self.quantiles(levels)
        mean = self.draws.mean(axis=0)
        rows = []
        for x, age in enumerate(self.ages):
            for h in range(self.horizon):
                row = {"population": self.population, "age": age, "horizon": h + 1,
                       "year": self.base_year + h + 1, "mean": mean[x, h]}
                for k, lev in enumerate(levels):
                    row[f"q{lev:g}"] = q[k, x, h]
                rows.append(row)
        return pd.DataFrame(rows)

    def to_frame(self) -> pd.DataFrame:
        S, A, H = self.draws.shape
        return pd.DataFrame({
            "population": self.population,
            "draw": np.repeat(np.arange(S), A * H),
            "age": np.tile(np.repeat(np.asarray(self.ages, dtype=object), H), S),
            "horizon": np.tile(np.arange(1, H + 1), S * A),
            "log_rate": self.draws.reshape(-1),
        })

    def coverage(self, observed_log_rates, level: float = 0.8) -> float:
        """Share of (age, horizon) cells whose central interval holds the observation."""
        obs = np.asarray(observed_log_rates, dtype=float)
        if obs.shape != self.draws.shape[1:]:
            raise ShapeError(f"observed shape {obs.shape} does not match fan {self.draws.shape[1:]}")
        lo, hi = np.quantile(self.draws, [(1 - level) / 2, (1 + level) / 2], axis=0)
        return float(np.mean((obs >= lo) & (obs <= hi)))


def _seed_from(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63))
    return int(rng)


def severity_from_uniform(u, mu, sd, positive: bool):
    """Inverse-CDF severity draw: N(mu, sd^2), truncated to (0, inf) when ``positive``."""
    if not positive:
        return mu + sd * special.ndtri(u)
    lo = special.ndtr(-mu / sd)
    v = lo + u * (1.0 - lo)
    return np.maximum(mu + sd * special.ndtri(np.minimum(v, 1.0 - 1e-16)), 0.0)


def _draw_params(draws, country):
    tag = "" if len(draws.countries) == 1 else f"{country}:"
    coeff = draws.structure.coeff_name or "coeff"
    T = draws.n_years
    J = draws.block("J", country if tag else None)
    Y = draws.block("Y", country if tag else None)
    N = np.stack([draws.column(f"N[{t}]") for t in range(1, T + 1)], axis=1)
    return {
        "beta": draws.block("beta", country if tag else None),
        "betaJ": draws.block("betaJ", country if tag else None),
        "d": draws.column(f"{tag}d"),
        "sigma_r": draws.column(f"{tag}sigma_r"),
        "coeff": draws.column(f"{tag}{coeff}"),
        "muY": draws.column(f"{tag}muY"),
        "sigmaY": draws.column(f"{tag}sigmaY"),
        "J_T": J[:, -1],
        "shock_T": N[:, -1] * Y[:, -1],
    }


def _chol_sigma(draws):
    S = draws.n_draws
    if len(draws.countries) == 1:
        return draws.column("sigma_xi")[:, None, None]
    C = len(draws.countries)
    L = np.empty((S, C, C))
    for s in range(S):
        Sig = np.empty((C, C))
        for i, a in enumerate(draws.countries):
            for j, b in enumerate(draws.countries[i:], start=i):
                Sig[i, j] = Sig[j, i] = draws.column(f"Sigma[{a},{b}]")[s]
        L[s] = np.linalg.cholesky(Sig)
    return L


def simulate_paths(structure, params: list, p, chol, base, H: int, seed: int, positive: bool):
    """Core recursion for C populations sharing the occurrence process.

    ``params`` holds one dict of per-draw arrays per population, ``chol``
    the S x C x C Cholesky factors of the period-innovation covariance and
    ``base`` the C x A terminal log rates.
    """
    structure = JumpStructure.parse(structure)
    C = len(params)
    S, A = params[0]["beta"].shape
    logm = np.empty((C, S, A, H))
    z = np.empty((C, S, A, H))
    zmean = np.empty((C, S, A, H))
    streams = np.random.SeedSequence(seed).spawn(S)
    for s in range(S):
        g = np.random.Generator(np.random.PCG64(streams[s]))
        u = g.random((H, 1 + C))
        normals = g.standard_normal((H, C + C * A))
        occur = (u[:, 0] < p[s]).astype(float)
        xi = normals[:, :C] @ chol[s].T
        eps = normals[:, C:].reshape(H, C, A)
        for c, par in enumerate(params):
            Y = severity_from_uniform(u[:, 1 + c], par["muY"][s], par["sigmaY"][s], positive)
            shock = occur * Y
            J_prev, shock_prev, coeff = par["J_T"][s], par["shock_T"][s], par["coeff"][s]
            J = np.empty(H)
            for h in range(H):
                if structure is JumpStructure.AR1:
                    J[h] = coeff * (J[h - 1] if h else J_prev) + shock[h]
                elif structure is JumpStructure.MA1:
                    J[h] = shock[h] + coeff * (shock[h - 1] if h else shock_prev)
                elif structure is JumpStructure.INDEPENDENT:
                    J[h] = shock[h]
                else:
                    J[h] = 0.0
            dJ = np.diff(np.concatenate(([J_prev], J)))
            dk = par["d"][s] + xi[:, c]
            m = np.outer(par["beta"][s], dk) + np.outer(par["betaJ"][s], dJ)
            zz = m + par["sigma_r"][s] * eps[:, c, :].T
            zmean[c, s] = m
            z[c, s] = zz
            logm[c, s] = base[c][:, None] + np.cumsum(zz, axis=1)
    return logm, z, zmean


def forecast(draws, base_log_rates, H: int, rng=0, base_year: int | None = None,
             positive: bool | None = None):
    """Posterior-predictive fan over ``H`` years past the last fitted year.

    For multi-population draws ``base_log_rates`` maps population to its
    terminal log rates and a dict of fans is returned.
    """
    if not isinstance(H, (int, np.integer)) or H < 1:
        raise InvalidHorizon(f"horizon must be a positive integer, got {H!r}")
    if draws.n_draws == 0:
        raise ShapeError("no posterior draws")
    if positive is None:
        positive = draws.meta.get("model", {}).get("priors", {}).get("Y_support", "positive-half-normal") \
            == "positive-half-normal"
    countries = list(draws.countries)
    multi = len(countries) > 1
    if multi:
        base = [np.asarray(base_log_rates[c], dtype=float) for c in countries]
    else:
        base = [np.asarray(base_log_rates, dtype=float)]
    for b in base:
        if b.shape != (draws.n_ages,):
            raise ShapeError(f"base log rates have shape {b.shape}, expected ({draws.n_ages},)")
    params = [_draw_params(draws, c) for c in countries]
    if not draws.structure.has_jumps:
        p = np.zeros(draws.n_draws)
    else:
        p = draws.column("p")
    base_year = int(draws.years[-1]) if base_year is None else int(base_year)
    logm, z, zmean = simulate_paths(draws.structure, params, p, _chol_sigma(draws), base, H,
                                    _seed_from(rng), positive)
    fans = {
        c: ForecastFan(draws=logm[k], z_draws=z[k], z_means=zmean[k], sigma_r=params[k]["sigma_r"],
                       base_log_rates=base[k], base_year=base_year, ages=list(draws.ages), population=c)
        for k, c in enumerate(countries)
    }
    return fans if multi else fans[countries[0]]


# ---------------------------------------------------------------- shock increases

def shock_increase(betaJ, J) -> np.ndarray:
    """Time-averaged increase (1/T) sum_t [exp(betaJ_x J_t) - 1]; S x A."""
    betaJ = np.atleast_2d(np.asarray(betaJ, dtype=float))
    J = np.atleast_2d(np.asarray(J, dtype=float))
    return np.expm1(betaJ[:, :, None] * J[:, None, :]).mean(axis=2)


def shock_increase_quantiles(draws, levels=SHOCK_LEVELS, country: str | None = None) -> pd.DataFrame:
    """Per-age quantiles (type 7) across draws of the time-averaged shock increase."""
    key = None if len(draws.countries) == 1 else country
    c = shock_increase(draws.block("betaJ", key), draws.block("J", key))
    q = np.quantile(c, levels, axis=0)
    table = pd.DataFrame({"age": list(draws.ages)})
    for k, lev in enumerate(levels):
        table[f"q{lev:g}"] = q[k]
    return table


# ---------------------------------------------------------------- scores

def crps_samples(samples, y) -> float:
    """CRPS = mean|X - y| - (1/2) mean|X - X'| over all S^2 ordered pairs."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    S = x.size
    i = np.arange(1, S + 1)
    return float(np.mean(np.abs(x - y)) - np.sum((2 * i - S - 1) * x) / S**2)


def crps_gaussian(mu, sigma, y) -> float:
    """Closed form CRPS of N(mu, sigma^2)."""
    w = (y - mu) / sigma
    return float(sigma * (w * (2 * special.ndtr(w) - 1) + 2 * np.exp(-0.5 * w * w) / np.sqrt(2 * np.pi)
                          - 1 / np.sqrt(np.pi)))


def crps_integral(cdf, y, lower: float, upper: float) -> float:
    """Integral of (F(z) - 1{z >= y})^2 dz by adaptive quadrature."""
    left, _ = integrate.quad(lambda z: cdf(z) ** 2, lower, y, limit=200)
    right, _ = integrate.quad(lambda z: (1 - cdf(z)) ** 2, y, upper, limit=200)
    return left + right


def log_score_mixture(y, means, sds) -> float:
    """-log of (1/S) sum_s N(y; means_s, sds_s^2)."""
    means = np.asarray(means, dtype=float)
    sds = np.broadcast_to(np.asarray(sds, dtype=float), means.shape)
    logd = -0.5 * np.log(2 * np.pi) - np.log(sds) - 0.5 * ((y - means) / sds) ** 2
    return float(-(special.logsumexp(logd) - np.log(means.size)))


def forecast_scores(fan: ForecastFan, observed, kind: str = "log_rate") -> tuple[pd.DataFrame, dict]:
    """Cell-level LogS, CRPS and errors plus totals.

    ``observed`` is A x H, either log rates (``kind='log_rate'``) or
    improvements (``kind='improvement'``).  LogS uses the exact Gaussian
    mixture predictive of the improvements; CRPS is computed on the
    observed quantity from the predictive samples; squared and absolute
    errors compare the posterior-mean log-rate forecast with the observed
    log rates.  Totals sum LogS and CRPS over cells and average the errors.
    """
    obs = np.asarray(observed, dtype=float)
    S, A, H = fan.draws.shape
    if obs.shape != (A, H):
        raise ShapeError(f"observed shape {obs.shape} does not match fan ({A}, {H})")
    if kind == "log_rate":
        obs_log = obs
        obs_z = np.diff(np.concatenate([fan.base_log_rates[:, None], obs], axis=1), axis=1)
        samples = fan.draws
    elif kind == "improvement":
        obs_z = obs
        obs_log = fan.base_log_rates[:, None] + np.cumsum(obs, axis=1)
        samples = fan.z_draws
    else:
        raise ValueError("kind must be 'log_rate' or 'improvement'")
    point = fan.draws.mean(axis=0)
    rows = []
    for x in range(A):
        for h in range(H):
            rows.append({
                "age": fan.ages[x] if fan.ages else x + 1,
                "horizon": h + 1,
                "logS": log_score_mixture(obs_z[x, h], fan.z_means[:, x, h], fan.sigma_r),
                "crps": crps_samples(samples[:, x, h], obs[x, h]),
                "sq_err": (point[x, h] - obs_log[x, h]) ** 2,
                "abs_err": abs(point[x, h] - obs_log[x, h]),
            })
    table = pd.DataFrame(rows)
    totals = {
        "logS": float(table["logS"].sum()),
        "crps": float(table["crps"].sum()),
        "mse": float(table["sq_err"].mean()),
        "mae": float(table["abs_err"].mean()),
    }
    return table, totals
