"""Predictive sampling on an N_f x N_n grid of (dropout pattern, latent draw) and variance estimates."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import seed_stream
from .trainer import Batch, make_batch


@dataclass
class ScenarioSet:
    scenarios: np.ndarray        # (N_f, N_n, lead, sites)
    mean_track: np.ndarray       # (lead, sites)
    var_hat: float
    var_tilde: float
    provenance: np.ndarray       # (N_f, N_n, 2) mask seed, z seed

    @property
    def n_f(self) -> int:
        return self.scenarios.shape[0]

    @property
    def n_n(self) -> int:
        return self.scenarios.shape[1]

    @property
    def members(self) -> np.ndarray:
        """Trajectories flattened to (N_f * N_n, lead, sites), pattern-major."""
        return self.scenarios.reshape((-1,) + self.scenarios.shape[2:])


def epistemic_variance(pattern_means, mean_track) -> float:
    """Per-node mean absolute deviation of pattern means around the overall mean."""
    P = np.asarray(pattern_means, dtype=np.float64)
    if P.shape[0] < 1:
        raise ValueError("need at least one pattern")
    return float(np.mean(np.abs(P - np.asarray(mean_track))))


def aleatoric_variance(noise_draws, mean_track) -> float:
    Z = np.asarray(noise_draws, dtype=np.float64)
    if Z.shape[0] < 1:
        raise ValueError("need at least one noise draw")
    return float(np.mean(np.abs(Z - np.asarray(mean_track))))


def _anchored_mean(a: np.ndarray) -> np.ndarray:
    # mean over axis 0 taken as offsets from the first row, exact when all rows coincide
    return a[0] + np.mean(a - a[0], axis=0)


def scenario_set(grid: np.ndarray, provenance: np.ndarray) -> ScenarioSet:
    grid = np.asarray(grid, dtype=np.float64)
    patterns = grid.mean(axis=1)
    mean = _anchored_mean(patterns)
    return ScenarioSet(grid, mean, epistemic_variance(patterns, mean),
                       aleatoric_variance(grid.mean(axis=0), mean), provenance)


def sample_grid(state, batch: Batch, n_f: int, n_n: int, seed: int, p_dropout: float) -> tuple:
    """Forecasts (N_f, N_n, B, lead, sites) and provenance (N_f, N_n, 2).

    Pattern f uses one mask for the whole batch; latent draw n is shared across patterns,
    so with dropout disabled every pattern row is identical.
    """
    if n_f < 1 or n_n < 1:
        raise ValueError("N_f and N_n must be >= 1")
    F = state.forecaster
    rng = seed_stream(seed, "scenarios")
    mask_seeds = rng.integers(2 ** 62, size=n_f)
    z_seeds = rng.integers(2 ** 62, size=n_n)
    attn_seed = int(rng.integers(2 ** 62))
    zs = [np.random.default_rng(int(s)).standard_normal((len(batch), F.config.d_z)) for s in z_seeds]
    out = np.empty((n_f, n_n) + batch.target.shape)
    with T.no_grad():
        for f in range(n_f):
            mask = F.sample_mask(p_dropout, int(mask_seeds[f])) if p_dropout > 0 else None
            for n, z in enumerate(zs):
                out[f, n] = F.forward(batch.enc_x, batch.enc_stamps, batch.dec_x, batch.dec_stamps, z, mask,
                                      attn_seed).data
    prov = np.stack(np.broadcast_arrays(mask_seeds[:, None], z_seeds[None, :]), axis=-1)
    return out, prov


def sample_scenarios(state, sample, n_f: int = 8, n_n: int = 2, seed: int = 0,
                     p_dropout: float = 0.2) -> ScenarioSet:
    grid, prov = sample_grid(state, make_batch([sample]), n_f, n_n, seed, p_dropout)
    return scenario_set(grid[:, :, 0], prov)


def sample_many(state, samples, n_f: int = 8, n_n: int = 2, seed: int = 0, p_dropout: float = 0.2) -> list:
    """One ScenarioSet per sample from a single batched sweep."""
    grid, prov = sample_grid(state, make_batch(samples), n_f, n_n, seed, p_dropout)
    return [scenario_set(grid[:, :, i], prov) for i in range(len(samples))]


def persistence(sample) -> np.ndarray:
    """Repeat the most recent ``lead`` observed nodes."""
    lead, n_sites = sample.target.shape
    if lead > sample.enc_window.shape[0]:
        raise ValueError("lead longer than the encoder history")
    return sample.enc_window[-lead:, :n_sites].copy()


# ---------------------------------------------------------------- files

def _atomic_open(path):
    tmp = f"{path}.tmp"
    return tmp, open(tmp, "w", newline="")


def write_scenarios_csv(sets: list, site_ids: list, path) -> None:
    """Rows pattern_idx,noise_idx,node_idx,site_id,value; node_idx runs over the concatenated windows."""
    tmp, fh = _atomic_open(path)
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pattern_idx", "noise_idx", "node_idx", "site_id", "value"])
        grid = np.concatenate([s.scenarios for s in sets], axis=2)
        n_f, n_n, n_nodes, n_sites = grid.shape
        for f in range(n_f):
            for n in range(n_n):
                for t in range(n_nodes):
                    for k in range(n_sites):
                        w.writerow([f, n, t, site_ids[k], repr(float(grid[f, n, t, k]))])
    os.replace(tmp, path)


def read_scenarios_csv(path) -> tuple:
    """Returns (grid (N_f, N_n, nodes, sites), site_ids)."""
    rows = []
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        need = {"pattern_idx", "noise_idx", "node_idx", "site_id", "value"}
        if r.fieldnames is None or set(r.fieldnames) != need:
            raise ValueError(f"{path}: expected columns {sorted(need)}")
        for row in r:
            rows.append((int(row["pattern_idx"]), int(row["noise_idx"]), int(row["node_idx"]), row["site_id"],
                         float(row["value"])))
    if not rows:
        raise ValueError(f"{path}: no scenario rows")
    sites = list(dict.fromkeys(r[3] for r in rows))
    shape = (max(r[0] for r in rows) + 1, max(r[1] for r in rows) + 1, max(r[2] for r in rows) + 1, len(sites))
    grid = np.full(shape, np.nan)
    idx = {s: i for i, s in enumerate(sites)}
    for f, n, t, s, v in rows:
        grid[f, n, t, idx[s]] = v
    if np.isnan(grid).any():
        raise ValueError(f"{path}: incomplete scenario grid")
    return grid, sites


def write_actuals_csv(samples: list, site_ids: list, path) -> None:
    """Rows node_idx,site_id,value,reference with persistence as the reference forecast."""
    tmp, fh = _atomic_open(path)
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_idx", "site_id", "value", "reference"])
        node = 0
        for s in samples:
            ref = persistence(s)
            for t in range(s.lead):
                for k, sid in enumerate(site_ids):
                    w.writerow([node, sid, repr(float(s.target[t, k])), repr(float(ref[t, k]))])
                node += 1
    os.replace(tmp, path)


def read_actuals_csv(path) -> tuple:
    """Returns (actual (nodes, sites), reference (nodes, sites), site_ids)."""
    with open(path, newline="") as fh:
        rows = [(int(r["node_idx"]), r["site_id"], float(r["value"]), float(r["reference"]))
                for r in csv.DictReader(fh)]
    if not rows:
        raise ValueError(f"{path}: no rows")
    sites = list(dict.fromkeys(r[1] for r in rows))
    idx = {s: i for i, s in enumerate(sites)}
    n = max(r[0] for r in rows) + 1
    y, ref = np.full((n, len(sites)), np.nan), np.full((n, len(sites)), np.nan)
    for t, s, v, p in rows:
        y[t, idx[s]], ref[t, idx[s]] = v, p
    if np.isnan(y).any():
        raise ValueError(f"{path}: incomplete actuals")
    return y, ref, sites


def summary_json(sets: list) -> str:
    return json.dumps({
        "var_hat": [s.var_hat for s in sets],
        "var_tilde": [s.var_tilde for s in sets],
        "mean_track": [s.mean_track.tolist() for s in sets],
        "var_hat_mean": float(np.mean([s.var_hat for s in sets])),
        "var_tilde_mean": float(np.mean([s.var_tilde for s in sets])),
    }, indent=2)
