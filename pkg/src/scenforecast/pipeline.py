"""Dataset assembly from a data config: series -> aligned arrays -> windowed 4:1:1 split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data as D
from .config import DataConfig, seed_stream


@dataclass
class Dataset:
    aligned: D.AlignedData
    split: D.DatasetSplit

    @property
    def n_info(self) -> int:
        return self.aligned.info.shape[1]


def synth_series(cfg: DataConfig) -> list:
    region = D.synth_region(cfg.profile, cfg.days, cfg.resolution, cfg.seed, cfg.start, cfg.n_sites)
    return D.region_series(region)


def build_dataset(cfg: DataConfig, series: list | None = None, seed: int = 0, holidays=()) -> Dataset:
    """Window and split ``series`` (synthesised from ``cfg`` when None).

    Real discriminator windows are drawn from history that ends with the training targets.
    """
    if cfg.case not in D.CASE_CHANNELS:
        raise ValueError(f"unknown case {cfg.case!r}; choose from {sorted(D.CASE_CHANNELS)}")
    series = synth_series(cfg) if series is None else series
    aligned = D.align(series, D.CASE_CHANNELS[cfg.case], holidays)
    samples = D.window_samples(aligned, cfg.n_t, cfg.n_known, cfg.stride)
    split = D.split_411(samples)
    lead = cfg.n_t - cfg.n_known
    pool = D.make_pool(aligned, cfg.n_t, end=split.train[-1].anchor + lead + 1)
    split.pool = pool
    rng = seed_stream(seed, "data")
    for part in (split.train, split.validation, split.test):
        for s, w in zip(part, pool.draw(rng, len(part))):
            s.dis_window = w
    return Dataset(aligned, split)
