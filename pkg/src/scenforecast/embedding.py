"""Forecaster/discriminator input assembly: projections, positional and calendar embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

LRELU_SLOPE = 0.2
YEAR_BUCKETS = 8
# rows per calendar table; year is bucketed as offset from the dataset start year
STAMP_SIZES = {"year": YEAR_BUCKETS, "month": 12, "day": 31, "hour": 24, "minute": 60, "event": 2}
STAMP_FIELDS = tuple(STAMP_SIZES)
_STAMP_BASE = np.array([0, 1, 1, 0, 0, 0])


def positional_embedding(t: int, n_m: int) -> np.ndarray:
    """Fixed sine-cosine code of node ``t``: sin on even components, cos on odd."""
    if n_m % 2:
        raise ValueError(f"feature width must be even, got {n_m}")
    if t < 0:
        raise ValueError("node index must be non-negative")
    return positional_matrix(t + 1, n_m)[t]


def positional_matrix(n_t: int, n_m: int) -> np.ndarray:
    if n_m % 2:
        raise ValueError(f"feature width must be even, got {n_m}")
    t = np.arange(n_t, dtype=np.float64)[:, None]
    i = np.arange(n_m)
    expo = np.where(i % 2 == 0, i, i - 1) / n_m
    angle = t / np.power(10000.0, expo)[None, :]
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class EmbeddingParams:
    W1: T.Tensor
    B1: T.Tensor
    W2: T.Tensor
    B2: T.Tensor
    tables: dict            # field name -> (rows, N_m) Tensor, shared by encoder and decoder
    year0: int = 2000

    @property
    def n_m(self) -> int:
        return self.W1.shape[1]

    def tensors(self) -> dict:
        out = {"W1": self.W1, "B1": self.B1, "W2": self.W2, "B2": self.B2}
        out.update({f"se.{k}": v for k, v in self.tables.items()})
        return out

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_m: int, year0: int = 2000) -> "EmbeddingParams":
        scale = 1.0 / np.sqrt(n_in)
        tables = {k: T.Tensor(rng.normal(0, 0.02, size=(n, n_m)), requires_grad=True)
                  for k, n in STAMP_SIZES.items()}
        return cls(
            W1=T.Tensor(rng.normal(0, scale, size=(n_in, n_m)), requires_grad=True),
            B1=T.Tensor(np.zeros(n_m), requires_grad=True),
            W2=T.Tensor(rng.normal(0, scale, size=(n_in, n_m)), requires_grad=True),
            B2=T.Tensor(np.zeros(n_m), requires_grad=True),
            tables=tables,
            year0=year0,
        )


def stamp_indices(stamps: np.ndarray, year0: int) -> np.ndarray:
    """Map (year, month, day, hour, minute, event) rows to per-table row indices."""
    stamps = np.asarray(stamps, dtype=int)
    idx = stamps - _STAMP_BASE
    idx[..., 0] = stamps[..., 0] - year0
    sizes = np.array([STAMP_SIZES[f] for f in STAMP_FIELDS])
    bad = (idx < 0) | (idx >= sizes)
    if bad.any():
        f = STAMP_FIELDS[int(np.argwhere(bad)[0][-1])]
        raise ValueError(f"calendar field '{f}' out of range in {stamps[bad.any(axis=-1)][0].tolist()}")
    return idx


def stamp_embedding(stamps: np.ndarray, params: EmbeddingParams) -> T.Tensor:
    """Sum of one learnable table row per calendar field; shape (..., N_m)."""
    idx = stamp_indices(stamps, params.year0)
    out = None
    for k, f in enumerate(STAMP_FIELDS):
        row = T.getitem(params.tables[f], idx[..., k])
        out = row if out is None else out + row
    return out


def project_info(x, W, B, slope: float = LRELU_SLOPE) -> T.Tensor:
    x = T.const(x)
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"info window has {x.shape[-1]} channels, projection expects {W.shape[0]}")
    return T.lrelu(T.matmul(x, W) + B, slope)


def assemble_encoder_input(enc_window, enc_stamps, params: EmbeddingParams,
                           use_pe: bool = True, use_se: bool = True) -> T.Tensor:
    u = project_info(enc_window, params.W1, params.B1)
    return _add_codes(u, enc_stamps, params, use_pe, use_se)


def assemble_decoder_input(dec_window, dec_stamps, params: EmbeddingParams,
                           use_pe: bool = True, use_se: bool = True) -> T.Tensor:
    v = project_info(dec_window, params.W2, params.B2)
    return _add_codes(v, dec_stamps, params, use_pe, use_se)


def _add_codes(x, stamps, params, use_pe, use_se):
    n_t, n_m = x.shape[-2], x.shape[-1]
    if use_pe:
        x = x + positional_matrix(n_t, n_m)
    if use_se:
        x = x + stamp_embedding(stamps, params)
    return x


def assemble_discriminator_input(sample) -> np.ndarray:
    if getattr(sample, "dis_window", None) is None:
        raise ValueError("sample has no discriminator window")
    return np.asarray(sample.dis_window, dtype=np.float64)
