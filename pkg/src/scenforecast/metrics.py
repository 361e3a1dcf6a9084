"""Deterministic and probabilistic forecast verification.

Ensembles are arrays with the member axis first: (M, ...) against observations (...).
Day-structured scores take (M, N, S) scenarios and (N, S) observations where N is
a whole number of days of ``nodes_per_day`` nodes and S the sites.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

DEFAULT_QUANTILES = tuple(np.round(np.arange(0.1, 1.0, 0.1), 10))
DEFAULT_COVERAGES = DEFAULT_QUANTILES


def _ens(scenarios, y):
    X = np.asarray(scenarios, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] < 1:
        raise ValueError("empty ensemble")
    if X.shape[1:] != y.shape:
        raise ValueError(f"ensemble member shape {X.shape[1:]} != observation shape {y.shape}")
    return X, y


def rmse(pred, y) -> float:
    d = np.asarray(pred, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(np.sqrt(np.mean(d * d)))


def mae(pred, y) -> float:
    return float(np.mean(np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(y, dtype=np.float64))))


def _days(a, nodes_per_day):
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[-2] if a.ndim >= 2 else a.shape[-1]
    if nodes_per_day < 1 or n % nodes_per_day:
        raise ValueError(f"{n} nodes do not split into days of {nodes_per_day}")
    return n // nodes_per_day


def _day_slices(n_days, nodes_per_day):
    return [slice(d * nodes_per_day, (d + 1) * nodes_per_day) for d in range(n_days)]


def rmse_avg(track, y, nodes_per_day: int) -> float:
    """Per-day RMSE averaged over days; track and y are (N, S)."""
    n_days = _days(y, nodes_per_day)
    return float(np.mean([rmse(track[s], y[s]) for s in _day_slices(n_days, nodes_per_day)]))


def s_score(track, y, nodes_per_day: int) -> float:
    """Per-day (RMSE + MAE) / 2, averaged over days."""
    n_days = _days(y, nodes_per_day)
    return float(np.mean([(rmse(track[s], y[s]) + mae(track[s], y[s])) / 2
                          for s in _day_slices(n_days, nodes_per_day)]))


# ---------------------------------------------------------------- CRPS family

def crps_ensemble(scenarios, y) -> np.ndarray:
    """Kernel form mean|X - y| - 0.5 mean|X - X'| per observation entry."""
    X, y = _ens(scenarios, y)
    term1 = np.mean(np.abs(X - y), axis=0)
    # mean pairwise distance from sorted gaps: 2/M^2 sum_k k (M - k) (x_(k+1) - x_(k))
    M = X.shape[0]
    gaps = np.diff(np.sort(X, axis=0), axis=0)
    k = np.arange(1, M).reshape((M - 1,) + (1,) * (X.ndim - 1))
    pair = 2.0 * np.sum(k * (M - k) * gaps, axis=0) / (M * M)
    return term1 - 0.5 * pair


def crps_avg(scenarios, y, nodes_per_day: int | None = None) -> float:
    """CRPS averaged over every (day, node, site); day structure only checked when given."""
    if nodes_per_day is not None:
        _days(y, nodes_per_day)
    return float(np.mean(crps_ensemble(scenarios, y)))


def ss_crps(crps: float, mae_point_forecast: float) -> float:
    if mae_point_forecast <= 0:
        raise ValueError("skill score needs a positive reference MAE")
    return 1.0 - crps / mae_point_forecast


def energy_score(scenarios, y) -> float:
    """(1/M) sum ||X_n - y|| - 1/(2M^2) sum sum ||X_n - X_m|| over flattened members."""
    X, y = _ens(scenarios, y)
    M = X.shape[0]
    Xf = X.reshape(M, -1)
    yf = y.reshape(-1)
    t1 = np.mean(np.linalg.norm(Xf - yf, axis=1))
    diff = Xf[:, None, :] - Xf[None, :, :]
    t2 = np.sum(np.linalg.norm(diff, axis=2)) / (2 * M * M)
    return float(t1 - t2)


def variogram_score(Y, scenarios, k: float = 1.0) -> float:
    """Sum over site pairs of | ||Y_i - Y_j||_k - mean_n ||X_n,i - X_n,j||_k |.

    ``Y`` is (S, L) per-site sequences and ``scenarios`` is (M, S, L).
    """
    Y = np.asarray(Y, dtype=np.float64)
    X = np.asarray(scenarios, dtype=np.float64)
    if Y.ndim != 2 or X.ndim != 3:
        raise ValueError("variogram score expects Y (S, L) and scenarios (M, S, L)")
    if X.shape[1:] != Y.shape:
        raise ValueError(f"site/sequence mismatch: scenarios {X.shape[1:]} vs actual {Y.shape}")
    if X.shape[0] < 1:
        raise ValueError("empty ensemble")
    dy = _pairwise_knorm(Y[None], k)[0]
    dx = _pairwise_knorm(X, k)
    return float(np.sum(np.abs(dy - dx.mean(axis=0))))


def _pairwise_knorm(X, k):
    d = np.abs(X[:, :, None, :] - X[:, None, :, :])
    return np.sum(d ** k, axis=-1) ** (1.0 / k)


# ---------------------------------------------------------------- quantile scores

def ensemble_quantiles(scenarios, qs) -> np.ndarray:
    return np.quantile(np.asarray(scenarios, dtype=np.float64), np.asarray(qs, dtype=np.float64), axis=0)


def winkler_score(scenarios, y, alpha: float = 0.1) -> float:
    X, y = _ens(scenarios, y)
    if X.shape[0] < 2:
        raise ValueError("Winkler score needs at least two members")
    lo, hi = ensemble_quantiles(X, [alpha / 2, 1 - alpha / 2])
    s = (hi - lo) + (2 / alpha) * np.maximum(0.0, lo - y) + (2 / alpha) * np.maximum(0.0, y - hi)
    return float(np.mean(s))


def pinball_avg(scenarios, y, quantiles=DEFAULT_QUANTILES) -> float:
    X, y = _ens(scenarios, y)
    qs = np.asarray(quantiles, dtype=np.float64)
    if np.any((qs <= 0) | (qs >= 1)):
        raise ValueError("quantile levels must lie in (0, 1)")
    Q = ensemble_quantiles(X, qs)
    tau = qs.reshape((-1,) + (1,) * y.ndim)
    d = y - Q
    return float(np.mean(np.maximum(tau * d, (tau - 1) * d)))


def brier_avg(scenarios, y, thresholds=None, capacity: float = 1.0) -> float:
    X, y = _ens(scenarios, y)
    th = np.asarray(DEFAULT_QUANTILES if thresholds is None else thresholds, dtype=np.float64) * \
        (capacity if thresholds is None else 1.0)
    if th.size == 0:
        raise ValueError("need at least one threshold")
    tau = th.reshape((-1,) + (1,) * y.ndim)
    p = np.mean(X[None] > tau[:, None], axis=1)
    o = (y[None] > tau).astype(np.float64)
    return float(np.mean((p - o) ** 2))


def apd(scenarios, y, coverages=DEFAULT_COVERAGES) -> float:
    """Mean absolute gap between nominal and empirical central-interval coverage, percent."""
    X, y = _ens(scenarios, y)
    cs = np.asarray(coverages, dtype=np.float64)
    if np.any((cs <= 0) | (cs >= 1)):
        raise ValueError("coverage levels must lie in (0, 1)")
    gaps = []
    for c in cs:
        lo, hi = ensemble_quantiles(X, [(1 - c) / 2, (1 + c) / 2])
        gaps.append(abs(float(np.mean((y >= lo) & (y <= hi))) - c))
    return 100.0 * float(np.mean(gaps))


# ---------------------------------------------------------------- report

@dataclass
class MetricsReport:
    rmse_avg: float
    s_score: float
    pinball_avg: float
    brier_avg: float
    crps_avg: float
    ss_crps: float
    energy: float
    winkler: float
    variogram_k1: float
    variogram_k2: float
    apd_pct: float
    mae_reference: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def per_day(scenarios, y, nodes_per_day: int) -> list:
    X, y = _ens(scenarios, y)
    out = []
    for d, s in enumerate(_day_slices(_days(y, nodes_per_day), nodes_per_day)):
        out.append({"day": d, "rmse": rmse(X[:, s].mean(axis=0), y[s]),
                    "crps": crps_avg(X[:, s], y[s]), "energy": energy_score(X[:, s], y[s])})
    return out


def evaluate(scenarios, y, reference, nodes_per_day: int) -> MetricsReport:
    """Full report for (M, N, S) scenarios, (N, S) actuals and an (N, S) reference point forecast."""
    X, y = _ens(scenarios, y)
    ref = np.asarray(reference, dtype=np.float64)
    n_days = _days(y, nodes_per_day)
    track = X.mean(axis=0)
    crps = crps_avg(X, y, nodes_per_day)
    slices = _day_slices(n_days, nodes_per_day)
    es = np.mean([energy_score(X[:, s], y[s]) for s in slices])
    vs1 = np.mean([variogram_score(y[s].T, np.swapaxes(X[:, s], 1, 2), 1) for s in slices])
    vs2 = np.mean([variogram_score(y[s].T, np.swapaxes(X[:, s], 1, 2), 2) for s in slices])
    m_ref = mae(ref, y)
    return MetricsReport(
        rmse_avg=rmse_avg(track, y, nodes_per_day),
        s_score=s_score(track, y, nodes_per_day),
        pinball_avg=pinball_avg(X, y),
        brier_avg=brier_avg(X, y),
        crps_avg=crps,
        ss_crps=ss_crps(crps, m_ref) if m_ref > 0 else float("nan"),
        energy=float(es),
        winkler=winkler_score(X, y) if X.shape[0] >= 2 else float("nan"),
        variogram_k1=float(vs1),
        variogram_k2=float(vs2),
        apd_pct=apd(X, y),
        mae_reference=m_ref,
    )
