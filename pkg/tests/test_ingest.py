import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmsae.errors import DataError, DomainError
from dmsae.ingest import (
    CurveSnapshot,
    align_inner,
    build_frame,
    curve_features,
    estimate_slope,
    load_csv,
    load_curve,
    load_prices,
    log_return,
    read_frame,
    short_long_split,
    write_frame,
)


def write(path, text):
    path.write_text(text)
    return path


def test_load_csv_parses_rows(tmp_path):
    f = write(tmp_path / "p.csv", "date,close\n2020-01-02,100\n2020-01-03,101\n")
    frame = load_csv(f, ["close"])
    assert len(frame) == 2
    assert frame["close"].tolist() == [100.0, 101.0]
    assert frame.index.name == "date"


def test_load_csv_sorts_out_of_order_rows(tmp_path):
    f = write(tmp_path / "p.csv", "date,close\n2020-01-03,101\n2020-01-02,100\n")
    frame = load_csv(f)
    assert frame.index.is_monotonic_increasing
    assert frame["close"].tolist() == [100.0, 101.0]


@pytest.mark.parametrize(
    "body, fragment",
    [
        ("2020-01-02,100\n2020-01-02,101\n", ":3: duplicate date"),
        ("2020-13-02,100\n", ":2: malformed date"),
        ("2020-01-02,abc\n", ":2: non-numeric"),
        ("2020-01-02,\n", ":2: empty cell"),
    ],
)
def test_load_csv_errors_name_the_line(tmp_path, body, fragment):
    f = write(tmp_path / "p.csv", "date,close\n" + body)
    with pytest.raises(DataError, match=fragment):
        load_csv(f, ["close"])


def test_load_csv_schema_mismatch(tmp_path):
    f = write(tmp_path / "p.csv", "date,price\n2020-01-02,1\n")
    with pytest.raises(DataError, match="schema"):
        load_csv(f, ["close"])


def test_load_prices_rejects_non_positive(tmp_path):
    f = write(tmp_path / "p.csv", "date,close\n2020-01-02,100\n2020-01-03,0\n")
    with pytest.raises(DataError, match="non-positive"):
        load_prices(f, "X")


def test_load_curve_drops_or_fills_missing_tenors(tmp_path):
    f = write(tmp_path / "c.csv", "date,m1,m2\n2020-01-02,1,2\n2020-01-03,,2.5\n2020-01-06,1.2,2.4\n")
    assert len(load_curve(f)) == 2
    filled = load_curve(f, forward_fill=True)
    assert len(filled) == 3
    assert filled.loc["2020-01-03", "m1"] == 1.0


def test_align_inner():
    d = pd.bdate_range("2020-01-01", periods=5)
    a = pd.DataFrame({"a": range(5)}, index=d)
    b = pd.DataFrame({"b": range(3)}, index=d[1:4])
    out = align_inner([a, b])
    assert len(out) == 3 and list(out.columns) == ["a", "b"]
    same = align_inner([a, pd.DataFrame({"c": range(5)}, index=d)])
    assert same.index.equals(d)
    with pytest.raises(DataError, match="empty intersection"):
        align_inner([a, pd.DataFrame({"z": [1]}, index=[pd.Timestamp("1999-01-01")])])


def test_align_inner_commutative_calendar():
    d = pd.bdate_range("2020-01-01", periods=8)
    a = pd.DataFrame({"a": range(8)}, index=d)
    b = pd.DataFrame({"b": range(4)}, index=d[::2])
    assert align_inner([a, b]).index.equals(align_inner([b, a]).index)
    once = align_inner([a, b])
    assert align_inner([once]).equals(once)


def test_log_return_examples():
    d = pd.bdate_range("2020-01-01", periods=3)
    assert log_return(pd.Series([100.0, 100.0, 100.0], index=d), 1).iloc[1] == 0.0
    assert log_return(pd.Series([100.0, 100.0 * math.e, 1.0], index=d), 1).iloc[1] == pytest.approx(1.0, abs=1e-15)
    r = log_return(pd.Series([100.0, 110.0, 121.0], index=d), 2)
    assert np.isnan(r.iloc[:2]).all()
    assert r.iloc[2] == pytest.approx(0.19062035960864987, rel=1e-12)
    with pytest.raises(DomainError):
        log_return(pd.Series([1.0, -1.0, 2.0], index=d), 1)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0.5, 500.0), min_size=3, max_size=30),
    st.floats(0.01, 100.0),
    st.integers(1, 2),
)
def test_log_return_scale_invariant(prices, c, k):
    s = pd.Series(prices)
    a = log_return(s, k).to_numpy()
    b = log_return(s * c, k).to_numpy()
    np.testing.assert_allclose(a, b, atol=1e-12, equal_nan=True)


def test_estimate_slope_examples():
    assert estimate_slope(CurveSnapshot((1, 2), (10, 12))) == pytest.approx(2.0)
    assert estimate_slope(CurveSnapshot((1, 2, 3), (5, 5, 5))) == 0.0
    assert estimate_slope(CurveSnapshot((1, 2, 3), (10, 12, 17))) == pytest.approx(3.5)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=4, max_size=4),
    st.floats(-10, 10),
    st.floats(0.1, 10),
)
def test_estimate_slope_shift_and_scale(levels, shift, scale):
    m = (1.0, 2.0, 5.0, 9.0)
    base = estimate_slope(CurveSnapshot(m, tuple(levels)))
    assert estimate_slope(CurveSnapshot(m, tuple(x + shift for x in levels))) == pytest.approx(base, abs=1e-9)
    assert estimate_slope(CurveSnapshot(m, tuple(x * scale for x in levels))) == pytest.approx(base * scale, abs=1e-9)


def test_curve_snapshot_invariants():
    with pytest.raises(DataError):
        CurveSnapshot((1,), (1,))
    with pytest.raises(DataError):
        CurveSnapshot((2, 1), (1, 1))


def test_short_long_split_examples():
    vix = CurveSnapshot((0, 1, 3, 4, 5, 6, 7), (20, 20, 20, 25, 25, 25, 25))
    assert short_long_split(vix, "vix") == (20.0, 25.0)
    m = (1, 3, 6, 12, 24, 36, 60, 120, 360)
    yld = CurveSnapshot(m, tuple(1.0 if x <= 24 else 2.0 for x in m))
    assert short_long_split(yld, "yield") == (1.0, 2.0)
    assert short_long_split(CurveSnapshot((1, 3, 5, 7), (18, 20, 24, 26)), "vix") == (19.0, 25.0)
    with pytest.raises(DomainError):
        short_long_split(CurveSnapshot((1, 2), (1, 1)), "vix")


def test_curve_features_match_snapshot_functions(rng):
    d = pd.bdate_range("2020-01-01", periods=6)
    cols = ["m0", "m1", "m2", "m3", "m4", "m6"]
    curve = pd.DataFrame(rng.normal(20, 2, (6, 6)), index=d, columns=cols)
    feats = curve_features(curve, "vix")
    for i in range(6):
        snap = CurveSnapshot((0, 1, 2, 3, 4, 6), tuple(curve.iloc[i]))
        assert feats["vix_slope"].iloc[i] == pytest.approx(estimate_slope(snap), rel=1e-12)
        assert (feats["vix_short"].iloc[i], feats["vix_long"].iloc[i]) == pytest.approx(short_long_split(snap, "vix"))


def test_build_frame_round_trip(tmp_path):
    d = pd.bdate_range("2020-01-01", periods=5).strftime("%Y-%m-%d")
    write(tmp_path / "a.csv", "date,close\n" + "".join(f"{x},{100 + i}\n" for i, x in enumerate(d)))
    write(tmp_path / "v.csv", "date,m1,m4\n" + "".join(f"{x},{20 + i},{22 + i}\n" for i, x in enumerate(d[1:])))
    frame = build_frame({"A": tmp_path / "a.csv"}, {"vix": tmp_path / "v.csv"})
    assert list(frame.columns) == ["A", "vix_slope", "vix_short", "vix_long"]
    assert len(frame) == 4
    write_frame(frame, tmp_path / "frame.csv")
    back = read_frame(tmp_path / "frame.csv")
    pd.testing.assert_frame_equal(back, frame, check_freq=False)
