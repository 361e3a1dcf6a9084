"""Series ingestion, normalisation, calendar features, windowing and synthetic profiles."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

CHANNEL_KINDS = ("power", "point_forecast", "nwp", "weather")
MAX_GAP_NODES = 4


class DataError(ValueError):
    """Malformed or inconsistent input data."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass
class RawSeries:
    site_id: str
    channel: str
    timestamps: np.ndarray          # datetime64[m], strictly increasing, uniform
    values: np.ndarray
    resolution: int                 # minutes
    filled: np.ndarray | None = None
    over_capacity: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.filled is None:
            self.filled = np.zeros(len(self.values), dtype=bool)

    @property
    def channel_kind(self) -> str:
        return self.channel.split(":", 1)[0]

    def __len__(self):
        return len(self.values)


# ---------------------------------------------------------------- CSV I/O

def _parse_ts(text: str) -> np.datetime64:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(dt, "m")


def format_ts(ts: np.datetime64) -> str:
    return str(np.datetime64(ts, "m")) + ":00Z"


def ingest_csv(path, schema_config: dict | None = None) -> list[RawSeries]:
    """Read a ``timestamp,site_id,channel,value`` CSV into one series per (site, channel).

    Gaps of at most ``max_gap`` missing nodes are forward-filled and flagged;
    longer gaps, duplicates, reversals and mixed resolutions raise DataError.
    """
    cfg = {"max_gap": MAX_GAP_NODES, "resolution": None}
    cfg.update(schema_config or {})
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    groups: dict[tuple, list] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError("no rows")
        if [h.strip() for h in header] != ["timestamp", "site_id", "channel", "value"]:
            raise DataError(f"unexpected header {header!r}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataError(f"expected 4 fields, got {len(row)}", line=lineno)
            try:
                ts = _parse_ts(row[0])
                value = float(row[3])
            except ValueError as exc:
                raise DataError(f"unparsable row: {exc}", line=lineno) from None
            if not math.isfinite(value):
                raise DataError("non-finite value", line=lineno)
            site, channel = row[1].strip(), row[2].strip()
            if channel.split(":", 1)[0] not in CHANNEL_KINDS:
                raise DataError(f"unknown channel kind {channel!r}", line=lineno)
            groups.setdefault((site, channel), []).append((ts, value, lineno))
    if not groups:
        raise DataError("no rows")

    resolutions = set()
    for rows in groups.values():
        if len(rows) > 1:
            diffs = [int((b[0] - a[0]) / np.timedelta64(1, "m")) for a, b in zip(rows, rows[1:])]
            pos = [d for d in diffs if d > 0]
            if pos:
                resolutions.add(min(pos))
    res = cfg["resolution"] or (min(resolutions) if resolutions else 60)
    out = []
    for (site, channel), rows in groups.items():
        times, vals, filled = [rows[0][0]], [rows[0][1]], [False]
        for (t0, _, _), (t1, v1, line) in zip(rows, rows[1:]):
            step = int((t1 - t0) / np.timedelta64(1, "m"))
            if step == 0:
                raise DataError(f"duplicated timestamp {t1} for {site}/{channel}", line=line)
            if step < 0:
                raise DataError(f"non-monotone timestamp {t1} for {site}/{channel}", line=line)
            if step % res:
                raise DataError(f"mixed resolutions: step of {step} min vs {res} min", line=line)
            missing = step // res - 1
            if missing > cfg["max_gap"]:
                raise DataError(f"gap of {missing} nodes exceeds {cfg['max_gap']}", line=line)
            for k in range(missing):
                times.append(t0 + np.timedelta64((k + 1) * res, "m"))
                vals.append(vals[-1])
                filled.append(True)
            times.append(t1)
            vals.append(v1)
            filled.append(False)
        out.append(RawSeries(site, channel, np.array(times, dtype="datetime64[m]"),
                             np.array(vals), res, np.array(filled)))
    return out


def _fmt(v: float, precision: int | None) -> str:
    return repr(float(v)) if precision is None else f"{v:.{precision}f}"


def write_csv(series: list[RawSeries], path, precision: int | None = None) -> None:
    rows = []
    for s in series:
        for t, v in zip(s.timestamps, s.values):
            rows.append((format_ts(t), s.site_id, s.channel, _fmt(v, precision)))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "site_id", "channel", "value"])
        w.writerows(rows)


def load_sidecar(path) -> dict:
    """JSON sidecar: ``{"capacities": {site: MW}, "holidays": ["YYYY-MM-DD", ...]}``."""
    with Path(path).open() as fh:
        meta = json.load(fh)
    meta.setdefault("capacities", {})
    meta.setdefault("holidays", [])
    return meta


def normalize(series: RawSeries, installed_capacity: float) -> RawSeries:
    if installed_capacity <= 0:
        raise ValueError(f"installed capacity must be positive, got {installed_capacity}")
    vals = series.values / installed_capacity
    return replace(series, values=vals, over_capacity=np.flatnonzero(vals > 1.0))


# ---------------------------------------------------------------- calendar

def _as_day(d) -> np.datetime64:
    return np.datetime64(d, "D")


def stamp_features(timestamp, holidays=()) -> tuple[int, int, int, int, int, int]:
    """(year, month, day, hour, minute, event) with event = weekend or listed holiday."""
    ts = np.datetime64(timestamp, "m")
    dt = ts.astype(datetime)
    day = _as_day(ts)
    weekend = dt.weekday() >= 5
    holiday = any(day == _as_day(h) for h in holidays)
    return dt.year, dt.month, dt.day, dt.hour, dt.minute, int(weekend or holiday)


def stamp_matrix(timestamps, holidays=()) -> np.ndarray:
    ts = np.asarray(timestamps, dtype="datetime64[m]")
    days = ts.astype("datetime64[D]")
    years = ts.astype("datetime64[Y]").astype(int) + 1970
    months = ts.astype("datetime64[M]").astype(int) % 12 + 1
    dom = (days - days.astype("datetime64[M]")).astype(int) + 1
    mins = (ts - days).astype(int)
    weekday = (days.astype(int) + 3) % 7          # 1970-01-01 was a Thursday
    event = weekday >= 5
    if len(holidays):
        event |= np.isin(days, np.array([_as_day(h) for h in holidays]))
    return np.stack([years, months, dom, mins // 60, mins % 60, event.astype(int)], axis=1)


# ---------------------------------------------------------------- alignment + windows

@dataclass
class AlignedData:
    """Site-aligned matrices: power (L, N_sites) and auxiliary info (L, C_info)."""

    timestamps: np.ndarray
    power: np.ndarray
    info: np.ndarray
    site_ids: list
    info_names: list
    resolution: int
    holidays: tuple = ()

    def __len__(self):
        return len(self.timestamps)


def align(series: list[RawSeries], info_kinds=("point_forecast", "nwp"), holidays=()) -> AlignedData:
    power = [s for s in series if s.channel_kind == "power"]
    info = [s for s in series if s.channel_kind in info_kinds and s.channel_kind != "power"]
    if not power:
        raise DataError("no power channel present")
    ref = power[0]
    for s in power + info:
        if s.resolution != ref.resolution or len(s) != len(ref) or not np.array_equal(s.timestamps, ref.timestamps):
            raise DataError(f"series {s.site_id}/{s.channel} is not aligned with {ref.site_id}/{ref.channel}")
    return AlignedData(
        timestamps=ref.timestamps.copy(),
        power=np.stack([s.values for s in power], axis=1),
        info=np.stack([s.values for s in info], axis=1) if info else np.zeros((len(ref), 0)),
        site_ids=[s.site_id for s in power],
        info_names=[f"{s.site_id}/{s.channel}" for s in info],
        resolution=ref.resolution,
        holidays=tuple(holidays),
    )


@dataclass
class HistoricalPool:
    """Real power windows for the discriminator, drawn at uniformly random start nodes."""

    power: np.ndarray
    n_t: int
    starts: np.ndarray

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        idx = rng.choice(self.starts, size=count, replace=True)
        return np.stack([self.power[i:i + self.n_t] for i in idx])

    def contains(self, window: np.ndarray) -> bool:
        return any(np.array_equal(self.power[i:i + self.n_t], window) for i in self.starts)


def make_pool(data: AlignedData, n_t: int, end: int | None = None) -> HistoricalPool:
    """Pool of windows lying entirely before node ``end`` (exclusive)."""
    end = len(data) if end is None else end
    starts = np.arange(0, end - n_t + 1)
    if len(starts) == 0:
        raise DataError(f"historical pool needs at least {n_t} nodes before node {end}")
    return HistoricalPool(data.power, n_t, starts)


@dataclass
class WindowedSample:
    anchor: int                      # index of the last encoder node (T)
    enc_window: np.ndarray           # (N_T, N_sites + C_info)
    dec_window: np.ndarray           # (N_T, N_sites + C_info), lead power masked to 0
    target: np.ndarray               # (lead, N_sites)
    enc_stamps: np.ndarray           # (N_T, 6)
    dec_stamps: np.ndarray           # (N_T, 6)
    target_times: np.ndarray
    n_known: int                     # lagging length kept in the decoder window
    dis_window: np.ndarray | None = None

    @property
    def lead(self) -> int:
        return self.target.shape[0]

    @property
    def known_power(self) -> np.ndarray:
        return self.dec_window[:self.n_known, :self.target.shape[1]]


def window_samples(data: AlignedData, n_t: int, n_known: int, stride: int = 1,
                   pool: HistoricalPool | None = None, rng: np.random.Generator | None = None,
                   start: int = 0) -> list[WindowedSample]:
    """Slide (encoder, decoder, target) windows over the series.

    The decoder window ends at the last lead node; its final ``n_t - n_known``
    power rows are the unknown realisations and are zero-masked.
    """
    if not 0 < n_known < n_t:
        raise ValueError(f"lagging length must lie in (0, {n_t}), got {n_known}")
    lead = n_t - n_known
    n_sites = data.power.shape[1]
    length = len(data)
    if length - start < n_t + lead:
        raise DataError(f"series of {length - start} nodes is shorter than N_T + lead = {n_t + lead}")
    stamps = stamp_matrix(data.timestamps, data.holidays)
    full = np.concatenate([data.power, data.info], axis=1)
    samples = []
    for T in range(start + n_t - 1, length - lead, stride):
        enc = full[T - n_t + 1:T + 1].copy()
        dec = full[T - n_known + 1:T + lead + 1].copy()
        dec[n_known:, :n_sites] = 0.0
        samples.append(WindowedSample(
            anchor=T,
            enc_window=enc,
            dec_window=dec,
            target=data.power[T + 1:T + lead + 1].copy(),
            enc_stamps=stamps[T - n_t + 1:T + 1],
            dec_stamps=stamps[T - n_known + 1:T + lead + 1],
            target_times=data.timestamps[T + 1:T + lead + 1],
            n_known=n_known,
        ))
    if pool is not None:
        rng = rng or np.random.default_rng(0)
        draws = pool.draw(rng, len(samples))
        for s, w in zip(samples, draws):
            s.dis_window = w
    return samples


def window_count(length: int, n_t: int, lead: int, stride: int) -> int:
    return max(0, (length - n_t - lead) // stride + 1)


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    purged: int = 0
    pool: HistoricalPool | None = None    # real critic windows, redrawn per batch when set


def split_411(samples: list, purge: bool = True) -> DatasetSplit:
    """Chronological 4:1:1 split; validation and test get round(n/6), train the rest.

    With ``purge`` the head of a later split is dropped while its targets
    overlap the targets of the preceding split.
    """
    n = len(samples)
    if n < 6:
        raise ValueError(f"4:1:1 split needs at least 6 samples, got {n}")
    k = int(math.floor(n / 6 + 0.5))
    train, val, test = samples[:n - 2 * k], samples[n - 2 * k:n - k], samples[n - k:]
    dropped = 0
    if purge:
        def trim(prev, nxt):
            nonlocal dropped
            if not prev or not hasattr(prev[-1], "target_times"):
                return nxt
            last = prev[-1].target_times[-1]
            keep = [s for s in nxt if s.target_times[0] > last]
            dropped += len(nxt) - len(keep)
            return keep if keep else nxt[-1:]
        val = trim(train, val)
        test = trim(val, test)
    return DatasetSplit(train, val, test, dropped)


def non_overlapping(samples: list) -> list:
    """Subsequence of samples whose target windows do not overlap."""
    out, last = [], None
    for s in samples:
        if last is None or s.target_times[0] > last:
            out.append(s)
            last = s.target_times[-1]
    return out


# ---------------------------------------------------------------- synthetic profiles

def _timestamps(days: int, resolution: int, start: str) -> np.ndarray:
    n = days * 24 * 60 // resolution
    return np.datetime64(start, "m") + np.arange(n) * np.timedelta64(resolution, "m")


def _ar(rng, n, coeffs, sigma):
    e = rng.normal(0.0, sigma, size=n + 200)
    x = np.zeros(n + 200)
    p = len(coeffs)
    for t in range(p, n + 200):
        x[t] = e[t] + sum(c * x[t - 1 - i] for i, c in enumerate(coeffs))
    return x[200:]


def _ar2_coeffs(res_minutes, tau_fast=3.0, tau_slow=10.0):
    r1 = math.exp(-res_minutes / 60.0 / tau_slow)
    r2 = math.exp(-res_minutes / 60.0 / tau_fast)
    return (r1 + r2, -r1 * r2)


def _wind_component(rng, hours, resolution):
    n = len(hours)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    base = 0.42 + 0.18 * np.sin(2 * np.pi * hours / (24 * 5.3) + phase[0]) \
        + 0.05 * np.sin(2 * np.pi * hours / 24 + phase[1])
    noise = _ar(rng, n, _ar2_coeffs(resolution), 0.012 * math.sqrt(resolution / 60))
    ramps = np.zeros(n)
    n_events = rng.poisson(max(1.0, hours[-1] / 72.0))
    for _ in range(n_events):
        t0 = rng.uniform(0, hours[-1])
        amp = rng.choice([-1.0, 1.0]) * rng.uniform(0.15, 0.35)
        width = rng.uniform(1.0, 4.0)
        decay = rng.uniform(8.0, 24.0)
        rise = 0.5 * (1.0 + np.tanh((hours - t0) / (2.0 * width)))
        ramps += amp * rise * np.exp(-np.clip(hours - t0, 0, None) / decay)
    return base + noise + ramps


def _clear_sky(hours, days_from_start):
    doy = days_from_start % 365.25
    half = 6.0 + 1.5 * np.cos(2 * np.pi * (doy - 172) / 365.25)   # half day length
    hod = hours % 24
    x = (hod - (12.0 - half)) / (2 * half)
    return np.where((x > 0) & (x < 1), np.sin(np.pi * np.clip(x, 0, 1)), 0.0)


def synth_profile(kind: str, days: int, resolution: int = 60, seed: int = 0,
                  start: str = "2012-01-01T00:00", n_sites: int = 1, site: int = 0) -> RawSeries:
    """Synthetic normalised power for one site of an ``n_sites`` region.

    Sites share a regional component (``seed``) and add a local one (``seed``, ``site``).
    """
    return synth_region(kind, days, resolution, seed, start, n_sites)["power"][site]


def synth_region(kind: str, days: int, resolution: int = 60, seed: int = 0,
                 start: str = "2012-01-01T00:00", n_sites: int = 1,
                 forecast_error: float = 0.06) -> dict:
    """Power, point forecasts and an NWP proxy for ``n_sites`` correlated sites."""
    if kind not in ("wind", "pv"):
        raise ValueError(f"profile kind must be 'wind' or 'pv', got {kind!r}")
    if days < 1:
        raise ValueError("days must be >= 1")
    ts = _timestamps(days, resolution, start)
    hours = np.arange(len(ts)) * resolution / 60.0
    regional_rng = np.random.default_rng([seed, 0])
    out = {"power": [], "point_forecast": [], "nwp": []}
    if kind == "wind":
        regional = _wind_component(regional_rng, hours, resolution)
    else:
        sky = _clear_sky(hours, hours / 24.0)
        cloud = _ar(regional_rng, len(ts), (math.exp(-resolution / 60.0 / 5.0),), 0.35 * math.sqrt(resolution / 60))
        regional = 1.0 / (1.0 + np.exp(-(1.2 + cloud)))
    for s in range(n_sites):
        rng = np.random.default_rng([seed, s + 1])
        if kind == "wind":
            local = _ar(rng, len(ts), _ar2_coeffs(resolution, 2.0, 6.0), 0.010 * math.sqrt(resolution / 60))
            speed = regional + local
            power = np.clip(speed, 0.0, 1.0)
        else:
            local = _ar(rng, len(ts), (math.exp(-resolution / 60.0 / 3.0),), 0.05)
            power = np.clip(0.9 * sky * np.clip(regional + local, 0.05, 1.0), 0.0, 1.0)
            speed = sky * np.clip(regional, 0.05, 1.0)
        err = _ar(rng, len(ts), (math.exp(-resolution / 60.0 / 6.0),),
                  forecast_error * math.sqrt(1 - math.exp(-2 * resolution / 60.0 / 6.0)))
        fc = np.clip(power + err, 0.0, 1.0)
        nwp_noise = _ar(rng, len(ts), (math.exp(-resolution / 60.0 / 8.0),), 0.03)
        nwp = np.clip(speed + nwp_noise, 0.0, 1.2)
        if kind == "pv":
            fc = np.where(sky > 0, fc, 0.0)
            nwp = np.where(sky > 0, nwp, 0.0)
        sid = f"{kind}{s + 1:02d}"
        out["power"].append(RawSeries(sid, "power", ts, power, resolution))
        out["point_forecast"].append(RawSeries(sid, "point_forecast", ts, fc, resolution))
        out["nwp"].append(RawSeries(sid, "nwp", ts, nwp, resolution))
    return out


def region_series(region: dict) -> list[RawSeries]:
    return [s for key in ("power", "point_forecast", "nwp") for s in region[key]]


CASE_CHANNELS = {
    "A": ("point_forecast", "nwp"),
    "B": (),
    "C": ("nwp",),
}


def autocorrelation(x: np.ndarray, lag: int) -> float:
    x = np.asarray(x, dtype=float) - np.mean(x)
    return float(np.dot(x[:-lag], x[lag:]) / np.dot(x, x))
