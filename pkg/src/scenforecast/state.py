"""Model state (forecaster + discriminator) and the versioned checkpoint format."""

from __future__ import annotations

import io
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, seed_stream
from .data import CASE_CHANNELS
from .discriminator import Discriminator, DiscriminatorConfig
from .forecaster import Forecaster, ForecasterConfig

CHECKPOINT_VERSION = 1


@dataclass
class ModelState:
    forecaster: Forecaster
    discriminator: Discriminator
    step: int = 0
    best_score: float = float("inf")
    best: dict | None = field(default=None, repr=False)

    def snapshot(self) -> dict:
        out = {f"F.{k}": v.data.copy() for k, v in self.forecaster.params.items()}
        out.update({f"D.{k}": v.data.copy() for k, v in self.discriminator.params.items()})
        return out

    def load_snapshot(self, snap: dict) -> None:
        for prefix, params in (("F.", self.forecaster.params), ("D.", self.discriminator.params)):
            for k, v in params.items():
                arr = snap[prefix + k]
                if arr.shape != v.shape:
                    raise ValueError(f"checkpoint shape {arr.shape} != {v.shape} for {prefix + k}")
                v.data = np.array(arr, dtype=np.float64)

    def restore_best(self) -> None:
        if self.best is not None:
            self.load_snapshot(self.best)

    def roles(self) -> dict:
        dr = set(self.forecaster.dropout_names)
        out = {f"F.{k}": ("dropout" if k in dr else "fixed") for k in self.forecaster.params}
        out.update({f"D.{k}": "discriminator" for k in self.discriminator.params})
        return out


def forecaster_config(cfg: ExperimentConfig, n_info: int | None = None) -> ForecasterConfig:
    d, m = cfg.data, cfg.model
    if n_info is None:
        n_info = d.n_sites * len(CASE_CHANNELS[d.case])
    return ForecasterConfig(
        n_in=d.n_sites + n_info, n_sites=d.n_sites, n_t=d.n_t, n_known=d.n_known, n_m=m.n_m,
        n_heads=m.n_heads, n_enc=m.n_enc, n_dec=m.n_dec, d_ff=m.d_ff, d_z=m.d_z, style_hidden=m.style_hidden,
        attention=m.attention, use_embedding=m.use_embedding, spatial=m.spatial,
        year0=int(d.start[:4]))


def discriminator_config(cfg: ExperimentConfig) -> DiscriminatorConfig:
    return DiscriminatorConfig(n_sites=cfg.data.n_sites, length=cfg.data.n_t, channels=tuple(cfg.model.d_channels),
                               minibatch_std=cfg.model.minibatch_std)


def build_state(cfg: ExperimentConfig, n_info: int | None = None) -> ModelState:
    rng = seed_stream(cfg.train.seed, "init")
    F = Forecaster(forecaster_config(cfg, n_info), rng)
    D = Discriminator(discriminator_config(cfg), rng)
    return ModelState(F, D)


def _atomic_write_bytes(path, payload: bytes) -> None:
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(state: ModelState, path, experiment: ExperimentConfig | None = None,
                    snapshot: dict | None = None) -> None:
    snap = snapshot if snapshot is not None else state.snapshot()
    roles = state.roles()
    manifest = {
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "forecaster": state.forecaster.config_dict(),
        "discriminator": state.discriminator.config_dict(),
        "experiment": experiment.to_dict() if experiment is not None else None,
        "tensors": [{"name": k, "shape": list(v.shape), "role": roles[k]} for k, v in snap.items()],
    }
    buf = io.BytesIO()
    np.savez(buf, __manifest__=np.array(json.dumps(manifest, default=list)), **snap)
    _atomic_write_bytes(path, buf.getvalue())


def read_manifest(path) -> dict:
    with np.load(path) as z:
        return json.loads(str(z["__manifest__"]))


def load_checkpoint(path) -> tuple:
    """Returns (ModelState, ExperimentConfig or None)."""
    with np.load(path) as z:
        manifest = json.loads(str(z["__manifest__"]))
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
        snap = {t["name"]: z[t["name"]] for t in manifest["tensors"]}
    fc = dict(manifest["forecaster"])
    dc = dict(manifest["discriminator"])
    dc["channels"] = tuple(dc["channels"])
    rng = np.random.default_rng(0)
    state = ModelState(Forecaster(ForecasterConfig(**fc), rng), Discriminator(DiscriminatorConfig(**dc), rng),
                       step=manifest["step"])
    state.load_snapshot(snap)
    exp = manifest.get("experiment")
    return state, (ExperimentConfig.from_dict(exp) if exp else None)
