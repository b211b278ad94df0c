"""Parameter state, jump structures, priors and the improvement-rate likelihood.

The model for improvement rates is

    Z[x, t] = beta[x] * dkappa[t+1] + betaJ[x] * (J[t+1] - J[t]) + eps[x, t],
    eps ~ N(0, sigma_r^2),  dkappa[t] ~ N(d, sigma_xi^2),

with the period increment of the first transition pinned to the drift
(``dkappa[2] = d``) and the jump effect J generated from occurrences N and
severities Y by one of the structures in :class:`JumpStructure`.  Indices in
docstrings are 1-based calendar positions; arrays are 0-based.

``sigma_r`` is the scale of the differenced error, ``sigma_r**2 = 2 * sigma_e**2``
in terms of the error of the log-rate level equation.
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy import special, stats

from .errors import ConfigError, InvalidCoefficient, InvalidSettings, ShapeError

LOG_ZERO = -np.inf
"""Sentinel returned by log densities outside their support."""


class JumpStructure(enum.Enum):
    NONE = "none"
    INDEPENDENT = "independent"
    AR1 = "ar1"
    MA1 = "ma1"

    @property
    def code(self) -> int:
        return _STRUCTURE_CODES[self]

    @property
    def has_jumps(self) -> bool:
        return self is not JumpStructure.NONE

    @property
    def has_coeff(self) -> bool:
        return self in (JumpStructure.AR1, JumpStructure.MA1)

    @property
    def coeff_name(self) -> str | None:
        return {JumpStructure.AR1: "a", JumpStructure.MA1: "b"}.get(self)

    @classmethod
    def parse(cls, value) -> "JumpStructure":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        if key in MODEL_ALIASES:
            return MODEL_ALIASES[key]
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown jump structure {value!r}") from None


_STRUCTURE_CODES = {
    JumpStructure.NONE: 0,
    JumpStructure.INDEPENDENT: 1,
    JumpStructure.AR1: 2,
    JumpStructure.MA1: 3,
}

# CLI model names.
MODEL_ALIASES = {
    "lc": JumpStructure.NONE,
    "liuli": JumpStructure.INDEPENDENT,
    "ar": JumpStructure.AR1,
    "ma": JumpStructure.MA1,
}


@dataclass(frozen=True)
class PriorConfig:
    """Prior hyperparameters.

    Defaults reproduce the setting used for the COVID-era fits: flat
    Dirichlet age patterns, ``d ~ N(0, 5^2)``, half-normal scales with sd 2,
    ``p ~ Beta(1, 20)``, ``muY ~ N+(0, 4^2)``, positive truncated-normal
    severities and ``coeff ~ N(0, 0.4^2)`` truncated to [0, 1).
    ``dirichlet_beta``/``dirichlet_betaJ`` of ``None`` mean all-ones of the
    data's age dimension.
    """

    dirichlet_beta: tuple | None = None
    dirichlet_betaJ: tuple | None = None
    d_prior: tuple = (0.0, 5.0)
    sigma_xi_prior: float = 2.0
    sigma_r_prior: float = 2.0
    p_prior: tuple = (1.0, 20.0)
    muY_prior: float = 4.0
    sigmaY_prior: float = 2.0
    coeff_prior: tuple = ("truncnorm", 0.0, 0.4)
    Y_support: str = "positive-half-normal"
    # inverse-Wishart for the multi-population innovation covariance;
    # df None means C + 2
    covariance_df: float | None = None
    covariance_scale: float = 1.0

    def __post_init__(self):
        for name in ("sigma_xi_prior", "sigma_r_prior", "muY_prior", "sigmaY_prior", "covariance_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.d_prior[1] > 0:
            raise ConfigError("d_prior sd must be positive")
        if not (self.p_prior[0] > 0 and self.p_prior[1] > 0):
            raise ConfigError("p_prior parameters must be positive")
        for name in ("dirichlet_beta", "dirichlet_betaJ"):
            val = getattr(self, name)
            if val is not None:
                val = tuple(float(v) for v in val)
                if any(v <= 0 for v in val):
                    raise ConfigError(f"{name} concentrations must be positive")
                object.__setattr__(self, name, val)
        if self.Y_support not in ("positive-half-normal", "gaussian"):
            raise ConfigError(f"Y_support must be 'positive-half-normal' or 'gaussian', got {self.Y_support!r}")
        tag = self.coeff_prior[0]
        if tag not in ("truncnorm", "beta"):
            raise ConfigError(f"coeff_prior tag must be 'truncnorm' or 'beta', got {tag!r}")
        if not self.coeff_prior[2] > 0 or (tag == "beta" and not self.coeff_prior[1] > 0):
            raise ConfigError("coeff_prior parameters must be positive")
        object.__setattr__(self, "coeff_prior", (tag, float(self.coeff_prior[1]), float(self.coeff_prior[2])))

    @classmethod
    def covid(cls) -> "PriorConfig":
        return cls()

    @classmethod
    def england_wales(cls) -> "PriorConfig":
        return cls(
            dirichlet_betaJ=(0.5, 0.5, 0.5, 5, 5, 5, 5, 0.5, 0.5, 0.5),
            muY_prior=5.0,
            sigmaY_prior=5.0,
            coeff_prior=("beta", 1.0, 5.0),
            Y_support="gaussian",
        )

    @property
    def positive_severity(self) -> bool:
        return self.Y_support == "positive-half-normal"

    def concentrations(self, n_ages: int) -> tuple[np.ndarray, np.ndarray]:
        out = []
        for val in (self.dirichlet_beta, self.dirichlet_betaJ):
            arr = np.ones(n_ages) if val is None else np.asarray(val, dtype=float)
            if arr.shape != (n_ages,):
                raise ConfigError(f"Dirichlet concentrations have length {arr.size}, data has {n_ages} ages")
            out.append(arr)
        return out[0], out[1]


@dataclass(frozen=True)
class ModelSpec:
    """Model choice plus identification pins.

    ``no_jump_years`` lists 1-based year positions whose occurrence is pinned
    to 0 in addition to the first two years; ``None`` pins the last year.
    """

    structure: JumpStructure = JumpStructure.AR1
    priors: PriorConfig = field(default_factory=PriorConfig)
    no_jump_years: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "structure", JumpStructure.parse(self.structure))
        if self.no_jump_years is not None:
            object.__setattr__(self, "no_jump_years", tuple(int(t) for t in self.no_jump_years))

    def pins(self, n_years: int) -> np.ndarray:
        """Boolean mask of pinned occurrence positions (True = pinned to 0)."""
        pinned = np.zeros(n_years, dtype=bool)
        pinned[: min(2, n_years)] = True
        extra = (n_years,) if self.no_jump_years is None else self.no_jump_years
        for t in extra:
            if not 1 <= t <= n_years:
                raise ConfigError(f"pinned year position {t} outside 1..{n_years}")
            pinned[t - 1] = True
        return pinned

    def to_dict(self) -> dict:
        pri = dataclasses.asdict(self.priors)
        pri["coeff_prior"] = list(pri["coeff_prior"])
        for key in ("d_prior", "p_prior", "dirichlet_beta", "dirichlet_betaJ"):
            if pri[key] is not None:
                pri[key] = list(pri[key])
        return {
            "structure": self.structure.value,
            "no_jump_years": None if self.no_jump_years is None else list(self.no_jump_years),
            "priors": pri,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelSpec":
        raw = dict(raw or {})
        unknown = set(raw) - {"structure", "no_jump_years", "priors", "mcmc"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        pri = dict(raw.get("priors") or {})
        known = {f.name for f in dataclasses.fields(PriorConfig)}
        bad = set(pri) - known
        if bad:
            raise ConfigError(f"unknown prior keys {sorted(bad)}")
        for key in ("d_prior", "p_prior", "coeff_prior"):
            if key in pri:
                pri[key] = tuple(pri[key])
        return cls(
            structure=raw.get("structure", "ar1"),
            priors=PriorConfig(**pri),
            no_jump_years=raw.get("no_jump_years"),
        )


@dataclass(frozen=True)
class McmcSettings:
    n_chains: int = 2
    burn_in: int = 7500
    n_samples: int = 10000
    thin: int = 10
    seed: int = 20240101

    def __post_init__(self):
        if self.n_chains < 2:
            raise InvalidSettings("n_chains must be at least 2")
        if self.burn_in < 0 or self.n_samples < 1 or self.thin < 1:
            raise InvalidSettings("burn_in >= 0, n_samples >= 1 and thin >= 1 required")
        if self.n_samples % self.thin:
            raise InvalidSettings("n_samples must be a multiple of thin")
        if not 0 <= int(self.seed) < 2**63:
            raise InvalidSettings("seed must be a nonnegative 63-bit integer")

    @property
    def kept_per_chain(self) -> int:
        return self.n_samples // self.thin


def load_config(path) -> tuple[ModelSpec, McmcSettings | None]:
    """Read a YAML config holding ``structure``, ``priors`` and optional ``mcmc``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    spec = ModelSpec.from_dict(raw)
    mcmc = raw.get("mcmc")
    settings = McmcSettings(**mcmc) if mcmc else None
    return spec, settings


def dump_config(spec: ModelSpec, settings: McmcSettings | None = None) -> str:
    raw = spec.to_dict()
    if settings is not None:
        raw["mcmc"] = dataclasses.asdict(settings)
    return yaml.safe_dump(raw, sort_keys=False)


def config_hash(spec: ModelSpec, settings: McmcSettings | None = None) -> str:
    raw = spec.to_dict()
    if settings is not None:
        raw["mcmc"] = dataclasses.asdict(settings)
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()


def jump_path(structure, N, Y, coeff: float = 0.0) -> np.ndarray:
    """Jump effect J generated by occurrences ``N`` and severities ``Y``.

    AR1: ``J[t] = coeff * J[t-1] + N[t] * Y[t]``; MA1:
    ``J[t] = N[t] * Y[t] + coeff * N[t-1] * Y[t-1]``; independent jumps are
    ``N[t] * Y[t]``; no structure gives zeros.  ``J[0]`` starts from zero.
    """
    structure = JumpStructure.parse(structure)
    N = np.asarray(N, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if N.shape != Y.shape or N.ndim != 1:
        raise ShapeError("N and Y must be vectors of equal length")
    coeff = float(coeff)
    if not 0.0 <= coeff < 1.0:
        raise InvalidCoefficient(f"coefficient must lie in [0, 1), got {coeff}")
    shock = N * Y
    if structure is JumpStructure.NONE:
        return np.zeros_like(shock)
    if structure is JumpStructure.INDEPENDENT:
        return shock.copy()
    if structure is JumpStructure.MA1:
        J = shock.copy()
        J[1:] += coeff * shock[:-1]
        return J
    J = np.empty_like(shock)
    prev = 0.0
    for t, s in enumerate(shock):
        prev = coeff * prev + s
        J[t] = prev
    return J


@dataclass
class ParameterState:
    """One point of the single-population parameter space.

    ``dkappa`` has length T-1 and holds the period increments for years
    2..T; its first entry equals ``d``.  ``N``, ``Y`` and ``J`` have length T.
    ``coeff`` is the persistence coefficient (``a`` for AR1, ``b`` for MA1)
    and is 0 for the other structures.
    """

    beta: np.ndarray
    betaJ: np.ndarray
    d: float
    dkappa: np.ndarray
    sigma_xi: float
    sigma_r: float
    p: float
    N: np.ndarray
    Y: np.ndarray
    coeff: float
    muY: float
    sigmaY: float
    J: np.ndarray | None = None
    structure: JumpStructure = JumpStructure.AR1

    def __post_init__(self):
        self.structure = JumpStructure.parse(self.structure)
        for name in ("beta", "betaJ", "dkappa", "N", "Y"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).copy())
        for name in ("d", "sigma_xi", "sigma_r", "p", "coeff", "muY", "sigmaY"):
            setattr(self, name, float(getattr(self, name)))
        if self.J is None:
            self.J = jump_path(self.structure, self.N, self.Y, self.coeff)
        else:
            self.J = np.asarray(self.J, dtype=float).copy()

    @property
    def n_ages(self) -> int:
        return self.beta.size

    @property
    def n_years(self) -> int:
        return self.N.size

    def copy(self) -> "ParameterState":
        return dataclasses.replace(self)

    def refresh_jumps(self) -> "ParameterState":
        self.J = jump_path(self.structure, self.N, self.Y, self.coeff)
        return self

    def fitted_means(self) -> np.ndarray:
        dJ = np.diff(self.J)
        return np.outer(self.beta, self.dkappa) + np.outer(self.betaJ, dJ)

    def invariant_violations(self, pinned=None, tol: float = 1e-12) -> list[str]:
        """Human-readable list of violated state invariants (empty when valid)."""
        out = []
        T = self.n_years
        if self.dkappa.shape != (T - 1,) or self.Y.shape != (T,):
            out.append("dimension mismatch between dkappa/N/Y")
            return out
        if self.beta.shape != self.betaJ.shape:
            out.append("beta and betaJ lengths differ")
        if abs(self.beta.sum() - 1) > tol or np.any(self.beta < 0):
            out.append("beta is not on the simplex")
        if abs(self.betaJ.sum() - 1) > tol or np.any(self.betaJ < 0):
            out.append("betaJ is not on the simplex")
        if self.dkappa[0] != self.d:
            out.append("dkappa[2] differs from d")
        if not np.all((self.N == 0) | (self.N == 1)):
            out.append("N is not binary")
        if pinned is not None and np.any(self.N[np.asarray(pinned)] != 0):
            out.append("pinned occurrence is nonzero")
        if self.J.size >= 2 and (self.J[0] != 0 or self.J[1] != 0):
            out.append("J_1 or J_2 nonzero")
        if not 0 <= self.coeff < 1:
            out.append("coeff outside [0, 1)")
        if not (self.sigma_xi > 0 and self.sigma_r > 0 and self.sigmaY > 0):
            out.append("nonpositive scale")
        if not 0 < self.p < 1:
            out.append("p outside (0, 1)")
        if not np.allclose(self.J, jump_path(self.structure, self.N, self.Y, self.coeff), rtol=0, atol=1e-12):
            out.append("J is not the jump path of (N, Y, coeff)")
        return out


def _check_shapes(state: ParameterState, Z) -> np.ndarray:
    Z = np.asarray(getattr(Z, "values", Z), dtype=float)
    expected = (state.n_ages, state.n_years - 1)
    if Z.shape != expected:
        raise ShapeError(f"improvement matrix has shape {Z.shape}, state implies {expected}")
    return Z


def log_likelihood(state: ParameterState, Z) -> tuple[float, np.ndarray]:
    """Gaussian log-likelihood of the improvement matrix.

    Returns the total and the A x (T-1) matrix of pointwise terms.
    """
    Z = _check_shapes(state, Z)
    resid = Z - state.fitted_means()
    sr = state.sigma_r
    pointwise = -0.5 * np.log(2 * np.pi) - np.log(sr) - 0.5 * (resid / sr) ** 2
    return float(pointwise.sum()), pointwise


def _log_dirichlet(x, alpha) -> float:
    if np.any(x <= 0) or abs(x.sum() - 1) > 1e-9:
        return LOG_ZERO
    return float(stats.dirichlet.logpdf(x, alpha))


def _log_halfnormal(x, sd) -> float:
    if x < 0:
        return LOG_ZERO
    return float(stats.halfnorm.logpdf(x, scale=sd))


def log_severity_density(y, mu, sd, positive: bool) -> np.ndarray:
    """Log density of severities: Gaussian, or Gaussian truncated to (0, inf)."""
    y = np.asarray(y, dtype=float)
    if positive:
        out = stats.norm.logpdf(y, mu, sd) - stats.norm.logcdf(mu / sd)
        return np.where(y >= 0, out, LOG_ZERO)
    return stats.norm.logpdf(y, mu, sd)


def log_coeff_prior(coeff: float, prior: tuple) -> float:
    tag, p1, p2 = prior
    if not 0 <= coeff < 1:
        return LOG_ZERO
    if tag == "beta":
        return float(stats.beta.logpdf(coeff, p1, p2))
    mass = stats.norm.cdf(1.0, p1, p2) - stats.norm.cdf(0.0, p1, p2)
    return float(stats.norm.logpdf(coeff, p1, p2) - np.log(mass))


def log_prior(state: ParameterState, priors: PriorConfig, pinned=None) -> float:
    """Joint log prior density of a state; ``-inf`` outside the support.

    ``pinned`` is the mask of occurrence positions held at zero (defaults to
    the first two years and the last).  Pinned occurrences and their
    severities contribute nothing.
    """
    T = state.n_years
    if pinned is None:
        pinned = ModelSpec(state.structure).pins(T)
    pinned = np.asarray(pinned, dtype=bool)
    free = ~pinned
    alpha_b, alpha_bJ = priors.concentrations(state.n_ages)
    if state.sigma_xi <= 0 or state.sigma_r <= 0:
        return LOG_ZERO
    total = _log_dirichlet(state.beta, alpha_b)
    total += stats.norm.logpdf(state.d, *priors.d_prior)
    total += stats.norm.logpdf(state.dkappa[1:], state.d, state.sigma_xi).sum()
    total += _log_halfnormal(state.sigma_xi, priors.sigma_xi_prior)
    total += _log_halfnormal(state.sigma_r, priors.sigma_r_prior)
    if not np.isfinite(total) or not state.structure.has_jumps:
        return float(total)
    if not 0 < state.p < 1 or state.sigmaY <= 0 or state.muY < 0:
        return LOG_ZERO
    if not np.all((state.N == 0) | (state.N == 1)) or np.any(state.N[pinned] != 0):
        return LOG_ZERO
    total += _log_dirichlet(state.betaJ, alpha_bJ)
    total += stats.beta.logpdf(state.p, *priors.p_prior)
    k = state.N[free].sum()
    total += k * np.log(state.p) + (free.sum() - k) * np.log1p(-state.p)
    total += _log_halfnormal(state.muY, priors.muY_prior)
    total += _log_halfnormal(state.sigmaY, priors.sigmaY_prior)
    total += log_severity_density(state.Y[free], state.muY, state.sigmaY, priors.positive_severity).sum()
    if state.structure.has_coeff:
        total += log_coeff_prior(state.coeff, priors.coeff_prior)
    return float(total) if np.isfinite(total) else LOG_ZERO


def log_posterior_kernel(state: ParameterState, Z, priors: PriorConfig, pinned=None) -> float:
    lp = log_prior(state, priors, pinned)
    if lp == LOG_ZERO:
        return LOG_ZERO
    return lp + log_likelihood(state, Z)[0]


def dirichlet_log_norm(alpha) -> float:
    """ln Gamma(sum alpha) - sum ln Gamma(alpha)."""
    alpha = np.asarray(alpha, dtype=float)
    return float(special.gammaln(alpha.sum()) - special.gammaln(alpha).sum())
