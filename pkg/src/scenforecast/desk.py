"""Desk-scale experiment helpers shared by the acceptance suite and the scripts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data as D
from . import metrics as M
from . import uc as UC
from .config import ExperimentConfig, desk_config
from .pipeline import Dataset, build_dataset
from .scenarios import persistence, sample_many
from .state import ModelState, build_state
from .trainer import TrainLog, make_batch, mean_track, smoothed, train


@dataclass
class DeskRun:
    cfg: ExperimentConfig
    dataset: Dataset
    untrained: dict              # parameter snapshot before training
    state: ModelState
    log: TrainLog
    seconds: float


def run_desk(seed: int = 0, n_epochs: int = 300, out_dir: str | None = None, progress=None) -> DeskRun:
    import time

    cfg = desk_config(n_epochs=n_epochs, seed=seed)
    ds = build_dataset(cfg.data, seed=seed)
    state = build_state(cfg, ds.n_info)
    untrained = state.snapshot()
    t0 = time.perf_counter()
    state, log = train(ds.split, cfg.train, state, out_dir=out_dir, experiment=cfg, progress=progress)
    return DeskRun(cfg, ds, untrained, state, log, time.perf_counter() - t0)


def loss_deciles(log: TrainLog, window: int = 20) -> tuple:
    """Mean of the smoothed forecaster loss over the first and last tenth of training."""
    s = smoothed(log.column("loss", "F"), window)
    k = max(1, len(s) // 10)
    return float(s[:k].mean()), float(s[-k:].mean())


def deterministic_rmse(state: ModelState, samples, seed: int = 0) -> float:
    """Mean per-window RMSE of one forecast with dropout off and a fixed latent draw."""
    batch = make_batch(samples)
    track = mean_track(state, batch, 1, 1, 0.0, seed)
    return float(np.mean([M.rmse(track[i], batch.target[i]) for i in range(len(batch))]))


def eval_windows(run: DeskRun) -> list:
    return D.non_overlapping(run.dataset.split.test)


def skill_vs_persistence(state: ModelState, samples, n_f: int = 8, n_n: int = 2, seed: int = 0,
                         p_dropout: float = 0.2) -> tuple:
    """(CRPS of the scenarios, MAE of persistence, SS_CRPS)."""
    sets = sample_many(state, samples, n_f, n_n, seed, p_dropout)
    X = np.concatenate([s.members for s in sets], axis=1)
    y = np.concatenate([s.target for s in samples])
    ref = np.concatenate([persistence(s) for s in samples])
    crps = M.crps_avg(X, y)
    m = M.mae(ref, y)
    return crps, m, M.ss_crps(crps, m)


def dropout_sweep(state: ModelState, samples, ps=(0.05, 0.2, 0.4), n_f: int = 8, n_n: int = 2,
                  seed: int = 0) -> dict:
    """p -> list of epistemic variance estimates, one ScenarioSet per sample."""
    return {p: [s.var_hat for s in sample_many(state, samples, n_f, n_n, seed, p)] for p in ps}


def uc_deviation(state: ModelState, days: list, n_f: int, n_n: int, seed: int, capacity: float = 100.0,
                 block: int = 4, p_dropout: float = 0.2) -> float:
    """Mean |expected - actual| cost over consecutive days of 24-node windows on the toy system."""
    sets = sample_many(state, days, n_f, n_n, seed, p_dropout)
    inst = UC.toy_system(horizon=days[0].lead)
    scen = [s.members.sum(axis=-1) * capacity for s in sets]
    obs = [d.target.sum(axis=-1) * capacity for d in days]
    return UC.rolling_evaluation([inst] * len(days), scen, obs, block).mean_deviation
