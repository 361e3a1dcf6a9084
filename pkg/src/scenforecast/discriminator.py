"""Convolutional critic with a mini-batch standard deviation feature."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T


@dataclass
class DiscriminatorConfig:
    n_sites: int
    length: int = 48
    channels: tuple = (16, 32, 32)
    kernel: int = 5
    stride: int = 2
    minibatch_std: bool = True

    @property
    def out_length(self) -> int:
        L = self.length
        for _ in self.channels:
            L = (L + 2 * (self.kernel // 2) - self.kernel) // self.stride + 1
        return L


def minibatch_stddev(batch) -> T.Tensor:
    """Append the batch-std summary channel: (B, L, C) -> (B, L, C+1).

    Population std across the batch per (position, channel), averaged to a scalar.
    """
    x = T.const(batch)
    if x.ndim != 3 or x.shape[0] < 1:
        raise ValueError(f"expected a (B, L, C) batch, got {x.shape}")
    d = x - T.mean(x, axis=0, keepdims=True)
    sd = T.mean(T.sqrt(T.mean(d * d, axis=0)))
    B, L, _ = x.shape
    feat = T.broadcast_to(T.reshape(sd, (1, 1, 1)), (B, L, 1))
    return T.concat([x, feat], axis=-1)


class Discriminator:
    def __init__(self, config: DiscriminatorConfig, rng: np.random.Generator):
        self.config = c = config
        p = {}
        c_in = c.n_sites
        for i, c_out in enumerate(c.channels):
            p[f"conv{i}.K"] = T.Tensor(rng.normal(0, 1.0 / math.sqrt(c_in * c.kernel), (c_out, c_in, c.kernel)),
                                       requires_grad=True)
            p[f"conv{i}.b"] = T.Tensor(np.zeros(c_out), requires_grad=True)
            c_in = c_out
        width = c.out_length * (c_in + int(c.minibatch_std))
        p["head.W"] = T.Tensor(rng.normal(0, 1.0 / math.sqrt(width), (width, 1)), requires_grad=True)
        p["head.b"] = T.Tensor(np.zeros(1), requires_grad=True)
        for name, t in p.items():
            t.name = name
        self.params = p

    def forward(self, windows) -> T.Tensor:
        """Raw scores (B,) for windows (B, length, sites)."""
        c, p = self.config, self.params
        x = T.const(windows)
        if x.ndim != 3 or x.shape[1] != c.length or x.shape[2] != c.n_sites:
            raise ValueError(f"expected windows (B, {c.length}, {c.n_sites}), got {x.shape}")
        h = T.swapaxes(x, -1, -2)
        for i in range(len(c.channels)):
            h = T.lrelu(T.conv1d(h, p[f"conv{i}.K"], p[f"conv{i}.b"], stride=c.stride, padding=c.kernel // 2))
        h = T.swapaxes(h, -1, -2)
        if c.minibatch_std:
            h = minibatch_stddev(h)
        h = T.reshape(h, (h.shape[0], -1))
        return T.reshape(T.matmul(h, p["head.W"]) + p["head.b"], (h.shape[0],))

    def config_dict(self) -> dict:
        return asdict(self.config)


def discriminate(window, model: Discriminator) -> T.Tensor:
    """Score of a single (length, sites) window as a 0-d tensor."""
    w = T.const(window)
    if w.ndim != 2:
        raise ValueError("discriminate expects a single (length, sites) window")
    return T.reshape(model.forward(T.reshape(w, (1,) + w.shape)), ())


def fake_windows(known_power, forecast) -> T.Tensor:
    """Known lagging power followed by the forecast lead, matching real window length."""
    return T.concat([T.const(known_power), T.const(forecast)], axis=-2)
