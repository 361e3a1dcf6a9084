import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenforecast import data as D


def _write(path, rows, header="timestamp,site_id,channel,value"):
    path.write_text(header + "\n" + "\n".join(rows) + ("\n" if rows else ""))
    return path


def _rows(n, res=15, start=dt.datetime(2020, 1, 1), site="s1", channel="power", values=None):
    out = []
    for i in range(n):
        t = start + dt.timedelta(minutes=res * i)
        v = values[i] if values is not None else 0.01 * i
        out.append(f"{t:%Y-%m-%dT%H:%M}:00Z,{site},{channel},{v!r}")
    return out


def test_ingest_96_rows_at_15_minutes(tmp_path):
    series = D.ingest_csv(_write(tmp_path / "a.csv", _rows(96)))
    assert len(series) == 1 and len(series[0]) == 96 and series[0].resolution == 15


def test_ingest_empty_file(tmp_path):
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(D.DataError, match="no rows"):
        D.ingest_csv(tmp_path / "e.csv")


def test_ingest_header_only(tmp_path):
    with pytest.raises(D.DataError, match="no rows"):
        D.ingest_csv(_write(tmp_path / "h.csv", []))


def test_ingest_duplicate_names_line(tmp_path):
    rows = _rows(5)
    rows.insert(3, rows[2])
    with pytest.raises(D.DataError) as exc:
        D.ingest_csv(_write(tmp_path / "d.csv", rows))
    assert exc.value.line == 5 and "duplicated" in str(exc.value)


def test_ingest_non_monotone(tmp_path):
    rows = _rows(5)
    rows[2], rows[3] = rows[3], rows[2]
    with pytest.raises(D.DataError, match="non-monotone") as exc:
        D.ingest_csv(_write(tmp_path / "m.csv", rows))
    assert exc.value.line == 5


def test_ingest_unparsable(tmp_path):
    rows = _rows(4)
    rows[1] = "2020-01-01T00:15:00Z,s1,power,abc"
    with pytest.raises(D.DataError, match="unparsable") as exc:
        D.ingest_csv(_write(tmp_path / "u.csv", rows))
    assert exc.value.line == 3


def test_ingest_mixed_resolution(tmp_path):
    rows = _rows(4, res=15) + _rows(3, res=10, start=dt.datetime(2020, 1, 1, 1, 0))
    with pytest.raises(D.DataError, match="mixed resolutions"):
        D.ingest_csv(_write(tmp_path / "x.csv", rows))


def test_short_gap_forward_filled_and_flagged(tmp_path):
    rows = _rows(10)
    del rows[4:7]
    s = D.ingest_csv(_write(tmp_path / "g.csv", rows))[0]
    assert len(s) == 10
    assert s.filled.tolist() == [False] * 4 + [True] * 3 + [False] * 3
    assert np.all(s.values[4:7] == s.values[3])


def test_long_gap_rejected(tmp_path):
    rows = _rows(12)
    del rows[3:8]
    with pytest.raises(D.DataError, match="gap of 5"):
        D.ingest_csv(_write(tmp_path / "l.csv", rows))


def test_csv_round_trip_bit_exact(tmp_path):
    vals = [float(v) for v in np.random.default_rng(3).random(30)]
    src = D.ingest_csv(_write(tmp_path / "r.csv", _rows(30, values=vals)))
    D.write_csv(src, tmp_path / "r2.csv")
    back = D.ingest_csv(tmp_path / "r2.csv")
    assert np.array_equal(back[0].values, src[0].values)
    assert np.array_equal(back[0].timestamps, src[0].timestamps)
    assert (tmp_path / "r.csv").read_text() == (tmp_path / "r2.csv").read_text()


def test_normalize():
    ts = np.arange(3).astype("datetime64[m]")
    s = D.RawSeries("a", "power", ts, np.array([50.0, 0.0, 55.0]), 1)
    n = D.normalize(s, 50.0)
    assert n.values[0] == 1.0 and n.values[1] == 0.0
    assert n.over_capacity.tolist() == [2] and n.values[2] == 1.1
    with pytest.raises(ValueError):
        D.normalize(s, 0.0)


def test_stamp_features():
    assert D.stamp_features(np.datetime64("2022-01-30T12:00"))[5] == 1
    assert D.stamp_features(np.datetime64("2022-01-31T12:00"))[5] == 0
    assert D.stamp_features(np.datetime64("2022-01-31T12:00"), holidays=("2022-01-31",))[5] == 1
    assert D.stamp_features(np.datetime64("2006-12-31T00:00"))[:5] == (2006, 12, 31, 0, 0)
    ts = np.datetime64("2020-03-01T00:00") + np.arange(20) * np.timedelta64(15, "m")
    assert set(D.stamp_matrix(ts)[:, 4]) <= {0, 15, 30, 45}


@settings(max_examples=50, deadline=None)
@given(st.datetimes(min_value=dt.datetime(1990, 1, 1), max_value=dt.datetime(2040, 1, 1)))
def test_stamp_features_match_calendar(when):
    when = when.replace(second=0, microsecond=0)
    f = D.stamp_features(np.datetime64(when, "m"))
    assert f == (when.year, when.month, when.day, when.hour, when.minute, int(when.weekday() >= 5))


def _aligned(days=10, n_sites=2, seed=0, kind="wind"):
    reg = D.synth_region(kind, days, 60, seed, n_sites=n_sites)
    return D.align(D.region_series(reg), ("point_forecast", "nwp"))


def test_window_exact_length_gives_one_sample():
    al = _aligned(days=2)
    al = D.AlignedData(al.timestamps[:36], al.power[:36], al.info[:36], al.site_ids, al.info_names, 60)
    assert len(D.window_samples(al, 24, 12, stride=1)) == 1
    with pytest.raises(D.DataError, match="shorter"):
        D.window_samples(D.AlignedData(al.timestamps[:35], al.power[:35], al.info[:35], al.site_ids,
                                       al.info_names, 60), 24, 12)


def test_window_lead_length():
    al = _aligned(days=20)
    s = D.window_samples(al, 192, 96, stride=48)[0]
    assert s.lead == 96 and s.target.shape == (96, 2)


def test_window_count_formula_stride_24():
    al = _aligned(days=10)
    n_t, n_known, stride = 48, 24, 24
    oracle = len(range(n_t - 1, 240 - (n_t - n_known), stride))
    assert len(D.window_samples(al, n_t, n_known, stride)) == oracle == D.window_count(240, 48, 24, 24)


def test_window_contents_and_masking():
    al = _aligned(days=6)
    s = D.window_samples(al, 48, 24, stride=5)[3]
    T = s.anchor
    full = np.concatenate([al.power, al.info], axis=1)
    assert np.array_equal(s.enc_window, full[T - 47:T + 1])
    assert np.array_equal(s.target, al.power[T + 1:T + 25])
    assert np.all(s.dec_window[24:, :2] == 0)
    assert np.array_equal(s.dec_window[:24], full[T - 23:T + 1])
    assert np.array_equal(s.dec_window[24:, 2:], al.info[T + 1:T + 25])
    assert s.enc_stamps.shape == (48, 6)


def test_no_target_leakage():
    al = _aligned(days=6)
    marked = D.AlignedData(al.timestamps, al.power.copy(), al.info, al.site_ids, al.info_names, 60)
    for s in D.window_samples(al, 48, 24, stride=7):
        # poison the target span; the inputs of the same window must not change
        marked.power[:] = al.power
        marked.power[s.anchor + 1:s.anchor + 25] = -7.0
        (again,) = [w for w in D.window_samples(marked, 48, 24, stride=7) if w.anchor == s.anchor]
        assert np.array_equal(again.enc_window, s.enc_window)
        assert np.array_equal(again.dec_window, s.dec_window)
        assert np.all(again.target == -7.0)


@pytest.mark.parametrize("n,expected", [(600, (400, 100, 100)), (6, (4, 1, 1)), (7, (5, 1, 1))])
def test_split_411_counts(n, expected):
    sp = D.split_411(list(range(n)), purge=False)
    assert (len(sp.train), len(sp.validation), len(sp.test)) == expected
    assert sp.train + sp.validation + sp.test == list(range(n))


def test_split_411_too_few():
    with pytest.raises(ValueError, match="at least 6"):
        D.split_411(list(range(5)))


def test_split_time_order_and_non_overlap():
    al = _aligned(days=30)
    sp = D.split_411(D.window_samples(al, 48, 24, stride=6))
    assert sp.train[-1].target_times[-1] < sp.validation[0].target_times[0]
    assert sp.validation[-1].target_times[-1] < sp.test[0].target_times[0]
    assert sp.purged > 0


def test_pool_draws_are_historical():
    al = _aligned(days=8)
    pool = D.make_pool(al, 48, end=100)
    rng = np.random.default_rng(0)
    for w in pool.draw(rng, 20):
        assert pool.contains(w)
    assert not pool.contains(al.power[150:198])


def test_synth_determinism_and_night():
    a = D.synth_profile("pv", 3, 15, seed=4)
    b = D.synth_profile("pv", 3, 15, seed=4)
    assert np.array_equal(a.values, b.values)
    midnight = (a.timestamps.astype("datetime64[h]").astype(int) % 24) == 0
    assert np.all(a.values[midnight] == 0.0)
    assert np.all((a.values >= 0) & (a.values <= 1))


def test_synth_wind_autocorrelation():
    w = D.synth_profile("wind", 90, 60, seed=2).values
    assert D.autocorrelation(w, 1) > D.autocorrelation(w, 50)
    assert np.all((w >= 0) & (w <= 1))


def test_align_rejects_mismatch():
    a = D.synth_profile("wind", 2, 60, seed=0)
    b = D.synth_profile("wind", 3, 60, seed=0)
    b = D.RawSeries("b", "power", b.timestamps, b.values, 60)
    with pytest.raises(D.DataError, match="not aligned"):
        D.align([a, b])


def test_non_overlapping():
    al = _aligned(days=10)
    sel = D.non_overlapping(D.window_samples(al, 48, 24, stride=6))
    for x, y in zip(sel, sel[1:]):
        assert x.target_times[-1] < y.target_times[0]
