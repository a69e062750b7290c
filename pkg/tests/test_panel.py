from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cicattrition.panel import (
    CELLS,
    EmptyCellError,
    PanelDataError,
    PanelSample,
    UnitRecord,
    attrition_summary,
    load_csv,
    read_records,
    save_csv,
    subsample,
)


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_two_rows(tmp_path):
    path = write(tmp_path, "id,g,r,y0,y1\na,1,1,1.0,2.0\nb,0,0,0.5,\n")
    s = load_csv(path)
    assert s.n == 2
    assert s.counts[(1, 1)] == 1 and s.counts[(0, 0)] == 1
    assert list(s.ids) == ["a", "b"]
    assert np.isnan(s.y1[1])


def test_y1_present_with_r0_is_rejected(tmp_path):
    path = write(tmp_path, "id,g,r,y0,y1\na,0,0,0.5,3.0\n")
    with pytest.raises(PanelDataError, match="y1 present with r=0") as err:
        load_csv(path)
    assert err.value.row == 2 and err.value.column == "y1"


def test_y1_absent_with_r1_is_rejected(tmp_path):
    with pytest.raises(PanelDataError, match="y1 absent with r=1"):
        load_csv(write(tmp_path, "id,g,r,y0,y1\na,1,1,0.5,\n"))


@pytest.mark.parametrize("row,column", [("a,2,1,0.5,1", "g"), ("a,1,r,0.5,1", "r"), ("a,1,1,,1", "y0"), ("a,1,1,x,1", "y0"), ("a,1,1,1,nan", "y1")])
def test_malformed_rows_report_row_and_column(tmp_path, row, column):
    path = write(tmp_path, "id,g,r,y0,y1\nz,0,1,0,0\n" + row + "\n")
    with pytest.raises(PanelDataError) as err:
        load_csv(path)
    assert err.value.row == 3
    assert err.value.column == column


def test_collect_errors_lists_every_bad_row(tmp_path):
    path = write(tmp_path, "id,g,r,y0,y1\na,0,0,0.5,3.0\nb,1,1,1,2\nc,0,1,1,\n")
    records, errors = read_records(path, collect_errors=True)
    assert len(records) == 1
    assert [e.row for e in errors] == [2, 4]


def test_missing_column(tmp_path):
    with pytest.raises(PanelDataError, match="missing required column"):
        load_csv(write(tmp_path, "id,g,r,y0\na,1,1,1\n"))


def test_custom_column_names(tmp_path):
    path = write(tmp_path, "unit,arm,resp,base,follow,village\na,1,1,1,2,v1\nb,0,0,3,,v2\n")
    s = load_csv(path, {"id": "unit", "g": "arm", "r": "resp", "y0": "base", "y1": "follow", "cluster": "village"})
    assert list(s.cluster) == ["v1", "v2"]
    assert s.counts[(0, 0)] == 1


def test_attrition_rate_matches_share_of_empty_y1(tmp_path):
    rng = np.random.default_rng(3)
    n = 12_299
    r = np.ones(n, dtype=int)
    r[rng.permutation(n)[: round(0.113 * n)]] = 0
    g = rng.integers(0, 2, n)
    y0 = rng.normal(size=n)
    s = PanelSample.from_arrays(g, r, y0, np.where(r == 1, y0 + 1, np.nan))
    path = tmp_path / "big.csv"
    save_csv(s, path)
    loaded = load_csv(path)
    assert attrition_summary(loaded)["overall"] == pytest.approx(0.113, abs=5e-5)


def test_subsample_examples():
    s = PanelSample.from_records([UnitRecord("a", 1, 1, 1.0, 5.0), UnitRecord("b", 1, 0, 2.0, None)])
    assert list(subsample(s, 1, 1, "y1")) == [5.0]
    assert list(subsample(s, 1, 0, "y0")) == [2.0]
    with pytest.raises(EmptyCellError):
        subsample(s, 0, 1, "y1")
    with pytest.raises(PanelDataError):
        subsample(s, 1, 0, "y1")


def test_attrition_summary_examples():
    s = PanelSample.from_arrays([0, 0, 1, 1], [1, 0, 1, 1], [1, 2, 3, 4], [1, 0, 3, 4])
    summ = attrition_summary(s)
    assert summ["control"] == 0.5
    assert summ["overall"] == 0.25
    assert summ["treatment"] == 0.0
    full = PanelSample.from_arrays([0, 1], [1, 1], [1, 2], [1, 2])
    assert attrition_summary(full)["overall"] == 0.0


def test_unit_record_invariants():
    with pytest.raises(PanelDataError):
        UnitRecord("a", 1, 0, 1.0, 2.0)
    with pytest.raises(PanelDataError):
        UnitRecord("a", 1, 1, 1.0, None)
    with pytest.raises(PanelDataError):
        UnitRecord("a", 1, 1, float("inf"), 1.0)


def test_from_arrays_validates():
    with pytest.raises(PanelDataError):
        PanelSample.from_arrays([0, 2], [1, 1], [0, 0], [0, 0])
    with pytest.raises(PanelDataError):
        PanelSample.from_arrays([0, 1], [1, 1], [0, 0], [0, np.nan])


finite = st.floats(allow_nan=False, allow_infinity=False, width=64, min_value=-1e12, max_value=1e12)
unit = st.tuples(st.integers(0, 1), st.integers(0, 1), finite, finite)


@given(st.lists(unit, min_size=1, max_size=30))
def test_round_trip_is_bit_exact(tmp_path_factory, units):
    records = [UnitRecord(str(i), g, r, y0, y1 if r else None, f"c{i % 3}") for i, (g, r, y0, y1) in enumerate(units)]
    s = PanelSample.from_records(records)
    path = tmp_path_factory.mktemp("rt") / "s.csv"
    save_csv(s, path)
    assert load_csv(path).records == records


@given(st.lists(unit, min_size=1, max_size=40))
def test_cells_partition_and_weights_sum_to_one(units):
    s = PanelSample.from_arrays(*zip(*units))
    assert sum(s.weights.values()) == Fraction(1)
    idx = np.concatenate([s._cell_index[c] for c in CELLS])
    assert sorted(idx.tolist()) == list(range(s.n))
    for g, r in CELLS:
        assert np.all(s.g[s._cell_index[(g, r)]] == g)
        assert np.all(s.r[s._cell_index[(g, r)]] == r)
