"""Death/exposure tables, central death rates and mortality improvement rates."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    DuplicateCell,
    GridIncomplete,
    InvalidExposure,
    TooFewYears,
    ZeroDeathCell,
)

DEFAULT_SCHEMA = {
    "age": "age",
    "year": "year",
    "deaths": "deaths",
    "exposure": "exposure",
    "population": "population_id",
}

# Added to zero death counts when imputation is requested.
ZERO_DEATH_FILL = 0.5


@dataclass(frozen=True)
class MortalityTable:
    ages: list
    years: list
    deaths: np.ndarray
    exposures: np.ndarray
    population_id: str = "pop"

    def __post_init__(self):
        deaths = np.asarray(self.deaths, dtype=float)
        exposures = np.asarray(self.exposures, dtype=float)
        object.__setattr__(self, "deaths", deaths)
        object.__setattr__(self, "exposures", exposures)
        object.__setattr__(self, "ages", list(self.ages))
        object.__setattr__(self, "years", [int(y) for y in self.years])
        shape = (len(self.ages), len(self.years))
        if deaths.shape != shape or exposures.shape != shape:
            raise DataError(
                f"deaths {deaths.shape} / exposures {exposures.shape} do not match grid {shape}"
            )
        if np.any(np.diff(self.years) != 1):
            raise DataError("years must be consecutive and strictly increasing")
        if not np.all(np.isfinite(exposures)) or np.any(exposures <= 0):
            raise InvalidExposure("all exposures must be strictly positive")
        if not np.all(np.isfinite(deaths)) or np.any(deaths < 0):
            raise DataError("death counts must be nonnegative")

    @property
    def shape(self):
        return self.deaths.shape


@dataclass(frozen=True)
class RateMatrix:
    values: np.ndarray
    ages: list = field(default_factory=list)
    years: list = field(default_factory=list)

    @property
    def log_values(self) -> np.ndarray:
        return np.log(self.values)


@dataclass(frozen=True)
class ImprovementMatrix:
    """Z[x, t] = ln m[x, t+1] - ln m[x, t].

    ``years`` holds the starting year of each one-year transition.
    """

    values: np.ndarray
    ages: list = field(default_factory=list)
    years: list = field(default_factory=list)

    @property
    def shape(self):
        return self.values.shape


def _age_sort_key(label):
    m = re.match(r"\s*(\d+)", str(label))
    return (0, int(m.group(1)), str(label)) if m else (1, 0, str(label))


def _frame_to_table(frame: pd.DataFrame, schema: dict, population_id: str) -> MortalityTable:
    age, year = schema["age"], schema["year"]
    dup = frame.duplicated(subset=[age, year], keep=False)
    if dup.any():
        first = frame.loc[dup, [age, year]].iloc[0]
        raise DuplicateCell(f"duplicate cell (age={first[age]!r}, year={first[year]})")
    ages = sorted(frame[age].unique(), key=_age_sort_key)
    years = np.sort(frame[year].unique())
    full_years = np.arange(years[0], years[-1] + 1)
    deaths = frame.pivot(index=age, columns=year, values=schema["deaths"])
    deaths = deaths.reindex(index=ages, columns=full_years)
    exposures = frame.pivot(index=age, columns=year, values=schema["exposure"])
    exposures = exposures.reindex(index=ages, columns=full_years)
    missing = deaths.isna().to_numpy() | exposures.isna().to_numpy()
    if missing.any():
        i, j = np.argwhere(missing)[0]
        raise GridIncomplete(
            f"population {population_id!r}: missing cell (age={ages[i]!r}, year={full_years[j]})"
            f"; {int(missing.sum())} cell(s) missing in total"
        )
    exp_values = exposures.to_numpy(dtype=float)
    if np.any(exp_values <= 0):
        i, j = np.argwhere(exp_values <= 0)[0]
        raise InvalidExposure(
            f"non-positive exposure at (age={ages[i]!r}, year={full_years[j]})"
        )
    return MortalityTable(
        ages=[str(a) for a in ages],
        years=[int(y) for y in full_years],
        deaths=deaths.to_numpy(dtype=float),
        exposures=exp_values,
        population_id=str(population_id),
    )


def _read_frame(path, schema):
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    frame = pd.read_csv(path, encoding="utf-8", dtype={schema["age"]: str}, float_precision="round_trip")
    required = [schema["age"], schema["year"], schema["deaths"], schema["exposure"]]
    absent = [c for c in required if c not in frame.columns]
    if absent:
        raise DataError(f"{path}: missing column(s) {absent}")
    for col in (schema["deaths"], schema["exposure"]):
        try:
            frame[col] = pd.to_numeric(frame[col])
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: column {col!r} is not numeric ({exc})") from None
    frame[schema["year"]] = pd.to_numeric(frame[schema["year"]]).astype(int)
    return frame, schema


def load_mortality_tables(path, schema: dict | None = None) -> dict[str, MortalityTable]:
    """Read a long-format CSV holding one or more populations.

    Populations are keyed by the ``population`` column of ``schema``; a file
    without that column yields a single population named after the file stem.
    """
    frame, schema = _read_frame(path, schema)
    pop_col = schema["population"]
    if pop_col not in frame.columns:
        return {Path(path).stem: _frame_to_table(frame, schema, Path(path).stem)}
    tables = {}
    for pop, sub in frame.groupby(pop_col, sort=False):
        tables[str(pop)] = _frame_to_table(sub, schema, str(pop))
    return tables


def load_mortality_table(path, schema: dict | None = None, population: str | None = None) -> MortalityTable:
    tables = load_mortality_tables(path, schema)
    if population is None:
        if len(tables) > 1:
            raise DataError(
                f"{path} holds {len(tables)} populations {sorted(tables)}; choose one"
            )
        return next(iter(tables.values()))
    try:
        return tables[population]
    except KeyError:
        raise DataError(f"population {population!r} not in {sorted(tables)}") from None


def write_mortality_tables(tables, path, schema: dict | None = None) -> None:
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    if isinstance(tables, MortalityTable):
        tables = [tables]
    rows = []
    for tab in tables:
        for i, age in enumerate(tab.ages):
            for j, year in enumerate(tab.years):
                rows.append({
                    schema["population"]: tab.population_id,
                    schema["age"]: age,
                    schema["year"]: year,
                    schema["deaths"]: repr(float(tab.deaths[i, j])),
                    schema["exposure"]: repr(float(tab.exposures[i, j])),
                })
    pd.DataFrame(rows).to_csv(path, index=False, encoding="utf-8")


def central_death_rates(table: MortalityTable, impute_zero: bool = False) -> RateMatrix:
    """Central death rates m = D / E.

    Zero death counts make the log rate undefined and raise ``ZeroDeathCell``
    unless ``impute_zero`` is set, in which case they are replaced by 0.5.
    """
    deaths = table.deaths
    zero = deaths == 0
    if zero.any():
        if not impute_zero:
            cells = [(table.ages[i], table.years[j]) for i, j in np.argwhere(zero)]
            raise ZeroDeathCell(cells)
        deaths = np.where(zero, ZERO_DEATH_FILL, deaths)
    return RateMatrix(values=deaths / table.exposures, ages=list(table.ages), years=list(table.years))


def improvement_rates(rates: RateMatrix) -> ImprovementMatrix:
    values = np.asarray(rates.values, dtype=float)
    if values.ndim != 2 or values.shape[1] < 2:
        raise TooFewYears("improvement rates need at least two years")
    return ImprovementMatrix(
        values=np.diff(np.log(values), axis=1),
        ages=list(rates.ages),
        years=list(rates.years[:-1]),
    )


def improvements_from_log_rates(log_rates) -> np.ndarray:
    log_rates = np.asarray(log_rates, dtype=float)
    if log_rates.shape[-1] < 2:
        raise TooFewYears("improvement rates need at least two years")
    return np.diff(log_rates, axis=-1)


def log_rates_from_improvements(first_log_rates, z) -> np.ndarray:
    """Inverse of differencing: rebuild the log-rate panel from its first column."""
    first = np.asarray(first_log_rates, dtype=float)
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape[:-1] + (z.shape[-1] + 1,))
    out[..., 0] = first
    out[..., 1:] = first[..., None] + np.cumsum(z, axis=-1)
    return out
