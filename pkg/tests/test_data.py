import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mortjump.data import (
    MortalityTable,
    RateMatrix,
    central_death_rates,
    improvement_rates,
    improvements_from_log_rates,
    load_mortality_table,
    load_mortality_tables,
    log_rates_from_improvements,
    write_mortality_tables,
)
from mortjump.errors import (
    DataError,
    DuplicateCell,
    GridIncomplete,
    InvalidExposure,
    TooFewYears,
    ZeroDeathCell,
)


def _frame(ages=10, years=range(1991, 2024), population=None):
    rows = []
    for i in range(ages):
        for y in years:
            row = {"age": f"{10 * i}-{10 * i + 9}", "year": y, "deaths": 50.0 + i + (y - 1991), "exposure": 1e4}
            if population:
                row["population_id"] = population
            rows.append(row)
    return pd.DataFrame(rows)


def test_load_complete_grid(tmp_path):
    path = tmp_path / "us.csv"
    _frame().to_csv(path, index=False)
    table = load_mortality_table(path)
    assert table.shape == (10, 33)
    assert table.years[0] == 1991 and table.years[-1] == 2023
    assert table.ages[0] == "0-9" and table.ages[-1] == "90-99"


def test_missing_cell_raises_grid_incomplete(tmp_path):
    path = tmp_path / "gap.csv"
    _frame().drop(index=5).to_csv(path, index=False)
    with pytest.raises(GridIncomplete, match="missing cell"):
        load_mortality_table(path)


def test_zero_exposure_raises(tmp_path):
    path = tmp_path / "zero.csv"
    frame = _frame()
    frame.loc[3, "exposure"] = 0.0
    frame.to_csv(path, index=False)
    with pytest.raises(InvalidExposure):
        load_mortality_table(path)


def test_duplicate_cell_raises(tmp_path):
    path = tmp_path / "dup.csv"
    frame = _frame()
    pd.concat([frame, frame.iloc[[0]]]).to_csv(path, index=False)
    with pytest.raises(DuplicateCell):
        load_mortality_table(path)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="nothere.csv"):
        load_mortality_table(tmp_path / "nothere.csv")


def test_custom_schema(tmp_path):
    path = tmp_path / "renamed.csv"
    _frame(ages=2, years=range(2000, 2003)).rename(columns={"deaths": "D", "exposure": "E"}).to_csv(path, index=False)
    table = load_mortality_table(path, schema={"deaths": "D", "exposure": "E"})
    assert table.shape == (2, 3)


def test_multiple_populations_need_a_choice(tmp_path):
    path = tmp_path / "two.csv"
    pd.concat([_frame(3, range(2000, 2004), "A"), _frame(3, range(2000, 2004), "B")]).to_csv(path, index=False)
    assert sorted(load_mortality_tables(path)) == ["A", "B"]
    with pytest.raises(DataError, match="choose one"):
        load_mortality_table(path)
    assert load_mortality_table(path, population="B").population_id == "B"


def test_write_read_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    table = MortalityTable(["0-9", "10-19"], [2000, 2001, 2002], rng.uniform(1, 100, (2, 3)),
                           rng.uniform(1e3, 1e4, (2, 3)), "X")
    path = tmp_path / "rt.csv"
    write_mortality_tables(table, path)
    back = load_mortality_table(path)
    assert np.array_equal(back.deaths, table.deaths)
    assert np.array_equal(back.exposures, table.exposures)


def test_direct_ratio():
    table = MortalityTable(["0"], [2000], [[5.0]], [[100.0]])
    assert central_death_rates(table).values[0, 0] == 0.05


def test_zero_deaths_raise_with_cell_index():
    table = MortalityTable(["0", "1"], [2000, 2001], [[1.0, 0.0], [2.0, 3.0]], [[100.0] * 2] * 2)
    with pytest.raises(ZeroDeathCell) as info:
        central_death_rates(table)
    assert ("0", 2001) in info.value.cells
    assert central_death_rates(table, impute_zero=True).values[0, 1] == 0.005


def test_deaths_equal_exposure_give_unit_rates():
    e = np.full((3, 4), 250.0)
    rates = central_death_rates(MortalityTable(["a", "b", "c"], range(2000, 2004), e, e))
    assert np.all(rates.values == 1.0)
    assert np.all(rates.log_values == 0.0)


def test_constant_rates_have_zero_improvement():
    z = improvement_rates(RateMatrix(np.full((2, 5), 0.01), ["a", "b"], list(range(5))))
    assert np.all(z.values == 0.0)
    assert z.years == [0, 1, 2, 3]


def test_doubling_rates():
    m = 0.001 * 2.0 ** np.arange(6)
    z = improvement_rates(RateMatrix(m[None, :]))
    assert np.allclose(z.values, math.log(2.0), atol=1e-15)


def test_three_year_example():
    z = improvement_rates(RateMatrix(np.array([[0.05, 0.04, 0.045]])))
    assert np.allclose(z.values[0], [math.log(0.8), math.log(1.125)], atol=1e-15)


def test_one_year_is_too_few():
    with pytest.raises(TooFewYears):
        improvement_rates(RateMatrix(np.array([[0.01]])))


@settings(max_examples=50, deadline=None)
@given(arrays(float, (3, 6), elements=st.floats(-9.0, 0.0)))
def test_improvements_invert_to_log_rates(log_m):
    z = improvements_from_log_rates(log_m)
    back = log_rates_from_improvements(log_m[:, 0], z)
    assert np.allclose(back, log_m, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(float, (2, 5), elements=st.floats(1e-6, 1.0)), st.floats(1e-3, 1e3))
def test_improvements_are_scale_free(m, c):
    z1 = improvement_rates(RateMatrix(m)).values
    z2 = improvement_rates(RateMatrix(m * c)).values
    assert np.allclose(z1, z2, atol=1e-9)
