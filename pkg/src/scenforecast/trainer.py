"""Alternating adversarial optimisation of the forecaster and the critic.

One outer iteration ("epoch" in iteration mode) is ``n_d`` critic updates on fresh
batches followed by one forecaster update built from ``n_f`` dropout-masked passes
and ``n_n`` latent-only passes.
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as T
from .config import ExperimentConfig, TrainConfig, seed_stream, set_path
from .discriminator import fake_windows
from .metrics import rmse
from .objectives import (ForecasterLossParts, adversarial_loss_F, auxiliary_loss, forecaster_loss,
                         gradient_penalty, hinge_loss_D, remedy_term, variety_loss)
from .state import ModelState, save_checkpoint


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, state: ModelState, checkpoint: str | None):
        super().__init__(message)
        self.state = state
        self.checkpoint = checkpoint


@dataclass
class Batch:
    enc_x: np.ndarray
    enc_stamps: np.ndarray
    dec_x: np.ndarray
    dec_stamps: np.ndarray
    target: np.ndarray      # (B, lead, sites)
    known: np.ndarray       # (B, n_known, sites)
    real: np.ndarray        # (B, N_T, sites) historical windows for the critic

    def __len__(self):
        return self.target.shape[0]


def make_batch(samples) -> Batch:
    if len(samples) == 0:
        raise ValueError("empty batch")
    return Batch(
        enc_x=np.stack([s.enc_window for s in samples]),
        enc_stamps=np.stack([s.enc_stamps for s in samples]),
        dec_x=np.stack([s.dec_window for s in samples]),
        dec_stamps=np.stack([s.dec_stamps for s in samples]),
        target=np.stack([s.target for s in samples]),
        known=np.stack([s.known_power for s in samples]),
        real=np.stack([s.dis_window for s in samples]) if samples[0].dis_window is not None else None,
    )


class BatchSampler:
    """Consecutive chunks of a reshuffled permutation, so batches within a step are fresh."""

    def __init__(self, samples, batch_size: int, rng: np.random.Generator, pool=None):
        if len(samples) == 0:
            raise ValueError("training split is empty")
        self.samples = samples
        self.pool = pool
        self.size = min(batch_size, len(samples))
        self.rng = rng
        self._order = np.empty(0, dtype=int)

    def next(self) -> Batch:
        if len(self._order) < self.size:
            self._order = np.concatenate([self._order, self.rng.permutation(len(self.samples))])
        idx, self._order = self._order[:self.size], self._order[self.size:]
        batch = make_batch([self.samples[i] for i in idx])
        if self.pool is not None:
            batch.real = self.pool.draw(self.rng, len(batch))
        return batch


@dataclass
class LogRecord:
    step: int
    outer: int
    phase: str
    loss: float
    l_va: float = float("nan")
    l_au: float = float("nan")
    l_ad: float = float("nan")
    l_rem: float = float("nan")
    l_plus: float = float("nan")
    l_minus: float = float("nan")
    r1: float = float("nan")
    grad_norm: float = 0.0
    grad_clipped: int = 0
    output_clips: int = 0
    val_rmse: float = float("nan")
    wall_time: float = 0.0


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, rec: LogRecord) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("log steps must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str, phase: str | None = None) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records if phase is None or r.phase == phase])

    def to_csv(self, path) -> None:
        names = [f.name for f in fields(LogRecord)]
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.records:
                w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, n) for n in names)])
        os.replace(tmp, path)

    @classmethod
    def from_csv(cls, path) -> "TrainLog":
        types = {f.name: f.type for f in fields(LogRecord)}
        log = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                kw = {k: (v if types[k] == "str" else int(v) if types[k] == "int" else float(v))
                      for k, v in row.items()}
                log.append(LogRecord(**kw))
        return log


def smoothed(x: np.ndarray, window: int = 20) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if len(x) < window:
        return np.array([x.mean()])
    return np.convolve(x, np.ones(window) / window, mode="valid")


def _clip_grads(grads: dict, max_norm: float) -> tuple:
    norm = T.global_norm(grads)
    if norm > max_norm:
        s = max_norm / norm
        return {k: g * s for k, g in grads.items()}, norm, 1
    return grads, norm, 0


def _attn_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2 ** 63))


def discriminator_step(state: ModelState, batch: Batch, cfg: TrainConfig, rngs: dict, opt: T.AdamState) -> dict:
    F, D = state.forecaster, state.discriminator
    mask = F.sample_mask(cfg.p_dropout, rngs["masks"])
    z = rngs["z"].standard_normal((len(batch), F.config.d_z))
    with T.no_grad():
        fake, n_clip = F.forward_with_stats(batch.enc_x, batch.enc_stamps, batch.dec_x, batch.dec_stamps, z, mask,
                                            _attn_seed(rngs["attn"]))
    fake_w = fake_windows(batch.known, fake.data)
    l_plus, l_minus = hinge_loss_D(D.forward(fake_w), D.forward(batch.real))
    r1 = gradient_penalty(batch.real, D, squared=cfg.r1_squared)
    loss = l_plus + l_minus + r1 * cfg.weights.lambda_gp
    names = list(D.params)
    gs = T.grad(loss, [D.params[n] for n in names])
    grads, norm, clipped = _clip_grads({n: g.data for n, g in zip(names, gs)}, cfg.clip_norm)
    T.adam_step(D.params, grads, opt)
    return dict(loss=loss.item(), l_plus=l_plus.item(), l_minus=l_minus.item(), r1=r1.item(),
                grad_norm=norm, grad_clipped=clipped, output_clips=n_clip)


def forecaster_step(state: ModelState, batch: Batch, cfg: TrainConfig, rngs: dict, opt: T.AdamState,
                    decay_index: float) -> dict:
    F, D = state.forecaster, state.discriminator
    w = cfg.weights
    n_clip = 0
    masked, plain = [], []
    for _ in range(cfg.n_f):
        mask = F.sample_mask(cfg.p_dropout, rngs["masks"])
        z = rngs["z"].standard_normal((len(batch), F.config.d_z))
        out, c = F.forward_with_stats(batch.enc_x, batch.enc_stamps, batch.dec_x, batch.dec_stamps, z, mask,
                                      _attn_seed(rngs["attn"]))
        masked.append(out)
        n_clip += c
    for _ in range(cfg.n_n):
        z = rngs["z"].standard_normal((len(batch), F.config.d_z))
        out, c = F.forward_with_stats(batch.enc_x, batch.enc_stamps, batch.dec_x, batch.dec_stamps, z, None,
                                      _attn_seed(rngs["attn"]))
        plain.append(out)
        n_clip += c
    draws = masked + plain
    Y = batch.target
    scores = T.concat([D.forward(fake_windows(batch.known, x)) for x in draws], axis=0)
    parts = ForecasterLossParts(
        variety=variety_loss(Y, masked),
        auxiliary=auxiliary_loss(Y, draws, decay_index, w.epsilon),
        adversarial=adversarial_loss_F(scores),
        remedy=remedy_term(Y, plain),
    )
    loss = forecaster_loss(parts, w)
    names = list(F.params)
    gs = T.grad(loss, [F.params[n] for n in names])
    grads, norm, clipped = _clip_grads({n: g.data for n, g in zip(names, gs)}, cfg.clip_norm)
    T.adam_step(F.params, grads, opt)
    return dict(loss=loss.item(), l_va=parts.variety.item(), l_au=parts.auxiliary.item(),
                l_ad=parts.adversarial.item(), l_rem=parts.remedy.item(), grad_norm=norm,
                grad_clipped=clipped, output_clips=n_clip)


def mean_track(state: ModelState, batch: Batch, n_f: int, n_n: int, p_dropout: float, seed: int) -> np.ndarray:
    """Mean over an n_f x n_n grid of forecasts; p_dropout=0 and n_f=1 gives the deterministic mode."""
    F = state.forecaster
    rng = seed_stream(seed, "validate")
    zs = [rng.standard_normal((len(batch), F.config.d_z)) for _ in range(n_n)]
    total = np.zeros_like(batch.target)
    with T.no_grad():
        for f in range(n_f):
            mask = F.sample_mask(p_dropout, rng) if p_dropout > 0 else None
            for z in zs:
                total += F.forward(batch.enc_x, batch.enc_stamps, batch.dec_x, batch.dec_stamps, z, mask).data
    return total / (n_f * n_n)


def validate(state: ModelState, samples, n_f: int = 4, n_n: int = 1, p_dropout: float = 0.2,
             seed: int = 0) -> float:
    """Average over windows of the RMSE of the mean track."""
    if len(samples) == 0:
        raise ValueError("validation split is empty")
    batch = make_batch(samples)
    track = mean_track(state, batch, n_f, n_n, p_dropout, seed)
    return float(np.mean([rmse(track[i], batch.target[i]) for i in range(len(batch))]))


def train(dataset, cfg: TrainConfig, state: ModelState, out_dir: str | None = None,
          experiment: ExperimentConfig | None = None, progress=None) -> tuple:
    """Run the alternating schedule; returns (state, TrainLog).

    ``dataset`` is a DatasetSplit (or anything with ``train`` and ``validation`` lists).
    The best validation snapshot is kept on ``state.best``.
    """
    train_set = dataset.train
    if len(train_set) == 0:
        raise ValueError("training split is empty")
    pool = getattr(dataset, "pool", None)
    if pool is None and train_set[0].dis_window is None:
        raise ValueError("training samples carry no discriminator windows")
    rngs = {k: seed_stream(cfg.seed, k) for k in ("batches", "masks", "z", "attn")}
    sampler = BatchSampler(train_set, cfg.batch_size, rngs["batches"], pool)
    per_epoch = 1 if cfg.epoch_mode == "iteration" else math.ceil(len(train_set) / sampler.size)
    opt_d = T.AdamState(lr=cfg.lr)
    opt_f = T.AdamState(lr=cfg.lr)
    log = TrainLog()
    t0 = time.perf_counter()
    last_good, last_path = state.snapshot(), None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    step = 0
    for outer in range(cfg.n_epochs * per_epoch):
        try:
            for _ in range(cfg.n_d):
                rec = discriminator_step(state, sampler.next(), cfg, rngs, opt_d)
                step += 1
                log.append(LogRecord(step, outer, "D", wall_time=time.perf_counter() - t0, **rec))
            rec = forecaster_step(state, sampler.next(), cfg, rngs, opt_f, outer // per_epoch)
            step += 1
        except T.NumericError as exc:
            state.load_snapshot(last_good)
            raise TrainingAborted(f"numeric failure at outer iteration {outer}: {exc}", state, last_path) from exc
        state.step = outer + 1
        val = float("nan")
        if dataset.validation and ((outer + 1) % cfg.validate_every == 0 or outer + 1 == cfg.n_epochs * per_epoch):
            val = validate(state, dataset.validation, cfg.val_n_f, cfg.val_n_n, cfg.p_dropout, cfg.seed)
            if val < state.best_score:
                state.best_score, state.best = val, state.snapshot()
        log.append(LogRecord(step, outer, "F", val_rmse=val, wall_time=time.perf_counter() - t0, **rec))
        if (outer + 1) % cfg.checkpoint_every == 0:
            last_good = state.snapshot()
            if out_dir:
                last_path = os.path.join(out_dir, "last.npz")
                save_checkpoint(state, last_path, experiment, last_good)
                if state.best is not None:
                    save_checkpoint(state, os.path.join(out_dir, "best.npz"), experiment, state.best)
        if progress is not None:
            progress(outer, rec)
    return state, log


# ---------------------------------------------------------------- hyperparameter search

FIXED_KEYS = ("data.n_t", "data.n_known", "model.n_m")


@dataclass
class SearchResult:
    best: ExperimentConfig
    best_score: float
    trials: list            # (assignment dict, score) in draw order


def sample_assignment(space: dict, rng: np.random.Generator) -> dict:
    """Uniform draw: lists are categorical choices, (lo, hi) tuples are ranges (int if both ints)."""
    out = {}
    for key in sorted(space):
        spec = space[key]
        if isinstance(spec, list):
            out[key] = spec[int(rng.integers(len(spec)))]
        else:
            lo, hi = spec
            if isinstance(lo, int) and isinstance(hi, int):
                out[key] = int(rng.integers(lo, hi + 1))
            else:
                out[key] = float(rng.uniform(lo, hi))
    return out


def random_search(space: dict, budget: int, seed: int, base: ExperimentConfig, objective) -> SearchResult:
    """``objective(ExperimentConfig) -> validation score``; returns the argmin over ``budget`` draws."""
    if budget < 1:
        raise ValueError("search budget must be >= 1")
    fixed = [k for k in space if k in FIXED_KEYS]
    if fixed:
        raise ValueError(f"window length, lagging length and model width are fixed; remove {fixed}")
    rng = seed_stream(seed, "search")
    trials, best, best_score = [], None, float("inf")
    for _ in range(budget):
        assignment = sample_assignment(space, rng)
        d = base.to_dict()
        for k, v in assignment.items():
            set_path(d, k, v)
        cfg = ExperimentConfig.from_dict(d)
        score = float(objective(cfg))
        trials.append((assignment, score))
        if best is None or score < best_score:
            best, best_score = cfg, score
    return SearchResult(best, best_score, trials)


def short_run_objective(dataset, n_info: int | None = None):
    """Objective that trains from scratch with the candidate config and returns validation RMSE."""
    from .state import build_state

    def objective(cfg: ExperimentConfig) -> float:
        state = build_state(cfg, n_info)
        state, _ = train(dataset, cfg.train, state)
        return validate(state, dataset.validation, cfg.train.val_n_f, cfg.train.val_n_n, cfg.train.p_dropout,
                        cfg.train.seed)
    return objective

