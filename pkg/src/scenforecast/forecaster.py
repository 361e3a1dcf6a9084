"""Encoder-decoder forecaster with weight-level MC dropout and AdaIN latent noise."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .attention import AttentionParams, distill_layer, multihead
from .embedding import EmbeddingParams, assemble_decoder_input, assemble_encoder_input

LN_EPS = 1e-5
ADAIN_EPS = 1e-5


@dataclass
class ForecasterConfig:
    n_in: int                       # channels per window row (sites + info)
    n_sites: int
    n_t: int = 48
    n_known: int = 24
    n_m: int = 32
    n_heads: int = 4
    n_enc: int = 2
    n_dec: int = 2
    d_ff: int = 64
    d_z: int = 16
    style_hidden: int = 32
    attention: str = "probsparse"
    factor: float = 5.0
    use_embedding: bool = True
    spatial: bool = True
    clip_hi: float = 1.05
    out_bias: float = 0.5
    year0: int = 2000

    @property
    def lead(self) -> int:
        return self.n_t - self.n_known

    def __post_init__(self):
        if self.n_enc < 1:
            raise ValueError("need at least one encoder layer")
        if self.n_m % self.n_heads:
            raise ValueError(f"model width {self.n_m} is not divisible by {self.n_heads} heads")
        if self.n_m % 2:
            raise ValueError("model width must be even")
        if not 0 < self.n_known < self.n_t:
            raise ValueError("lagging length must lie strictly inside the window")
        if self.n_t % (2 ** (self.n_enc - 1)):
            raise ValueError(f"window {self.n_t} cannot be halved {self.n_enc - 1} times")


@dataclass
class DropoutMask:
    masks: dict                     # parameter name -> {0,1} array
    p: float

    def apply(self, name: str, W: T.Tensor) -> T.Tensor:
        m = self.masks.get(name)
        if m is None:
            return W
        return W * (m / (1.0 - self.p))

    def zero_fraction(self) -> float:
        total = np.sum([m.size for m in self.masks.values()])
        zeros = np.sum([m.size - np.count_nonzero(m) for m in self.masks.values()])
        return float(zeros / total)


def sample_mask(shapes: dict, p_dropout: float, seed) -> DropoutMask:
    """Bernoulli drop mask per weight: each entry is 0 with probability ``p_dropout``."""
    if not 0.0 <= p_dropout < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p_dropout}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    masks = {name: (rng.random(shape) >= p_dropout).astype(np.float64) for name, shape in shapes.items()}
    return DropoutMask(masks, p_dropout)


@dataclass
class LatentDraw:
    z: np.ndarray
    seed: int

    @classmethod
    def sample(cls, seed: int, batch: int, d_z: int) -> "LatentDraw":
        return cls(np.random.default_rng(seed).standard_normal((batch, d_z)), seed)


# ---------------------------------------------------------------- building blocks

def layer_norm(x, g, b, eps: float = LN_EPS) -> T.Tensor:
    mu = T.mean(x, axis=-1, keepdims=True)
    d = x - mu
    var = T.mean(d * d, axis=-1, keepdims=True)
    return d * T.power(var + eps, -0.5) * g + b


def instance_norm(h, eps: float = ADAIN_EPS) -> T.Tensor:
    """Zero mean, unit variance per channel over the sequence axis of (..., L, C)."""
    mu = T.mean(h, axis=-2, keepdims=True)
    d = h - mu
    var = T.mean(d * d, axis=-2, keepdims=True)
    return d * T.power(var + eps, -0.5)


def style_map(z, style_params: dict) -> tuple:
    """Latent code -> per-channel (scale, shift), each (B, 1, C)."""
    z = T.const(z)
    w = T.lrelu(T.matmul(z, style_params["W1"]) + style_params["b1"])
    w = T.lrelu(T.matmul(w, style_params["W2"]) + style_params["b2"])
    ss = T.matmul(w, style_params["A"]) + style_params["a"]
    c = ss.shape[-1] // 2
    scale = T.reshape(ss[..., :c], ss.shape[:-1] + (1, c))
    shift = T.reshape(ss[..., c:], ss.shape[:-1] + (1, c))
    return scale, shift


def adain_inject(hidden, z, style_params: dict) -> T.Tensor:
    hidden = T.const(hidden)
    if style_params["A"].shape[-1] != 2 * hidden.shape[-1]:
        raise ValueError("style map output width must be twice the hidden width")
    scale, shift = style_map(z, style_params)
    return instance_norm(hidden) * scale + shift


def spatial_block(pre, K, b) -> T.Tensor:
    """Residual conv over time with sites as channels: (B, L, S) -> (B, L, S)."""
    y = T.conv1d(T.swapaxes(pre, -1, -2), K, padding=K.shape[-1] // 2)
    return pre + T.swapaxes(y, -1, -2) + b


# ---------------------------------------------------------------- the network

def _normal(rng, shape, std):
    return T.Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _full(shape, value):
    return T.Tensor(np.full(shape, float(value)), requires_grad=True)


class Forecaster:
    """Parameters live in ``self.params`` (name -> Tensor); ``dropout_names`` marks the MC-dropout set."""

    def __init__(self, config: ForecasterConfig, rng: np.random.Generator):
        self.config = c = config
        p: dict[str, T.Tensor] = {}
        emb = EmbeddingParams.init(rng, c.n_in, c.n_m, c.year0)
        p.update({f"emb.{k}": v for k, v in emb.tensors().items()})
        s_m, s_ff = 1.0 / math.sqrt(c.n_m), 1.0 / math.sqrt(c.d_ff)
        dropout = []
        for l in range(c.n_enc):
            pre = f"enc.{l}"
            for k, v in AttentionParams.init(rng, c.n_m, c.n_heads).tensors().items():
                p[f"{pre}.attn.{k}"] = v
            p.update(self._ffn(rng, pre, s_m, s_ff))
            p.update(self._ln(pre, 1))
            p.update(self._ln(pre, 2))
            if l < c.n_enc - 1:
                p[f"{pre}.distill.K"] = _normal(rng, (c.n_m, c.n_m, 3), 1.0 / math.sqrt(3 * c.n_m))
                p[f"{pre}.distill.b"] = _full((c.n_m,), 0.0)
            dropout += [f"{pre}.attn.W_O", f"{pre}.ff.W1", f"{pre}.ff.W2"]
        for l in range(c.n_dec):
            pre = f"dec.{l}"
            for part in ("self", "cross"):
                for k, v in AttentionParams.init(rng, c.n_m, c.n_heads).tensors().items():
                    p[f"{pre}.{part}.{k}"] = v
            p.update(self._ffn(rng, pre, s_m, s_ff))
            for i in (1, 2, 3):
                p.update(self._ln(pre, i))
            p[f"{pre}.style.A"] = _normal(rng, (c.style_hidden, 2 * c.n_m), 0.1 / math.sqrt(c.style_hidden))
            p[f"{pre}.style.a"] = T.Tensor(np.concatenate([np.ones(c.n_m), np.zeros(c.n_m)]), requires_grad=True)
        p["style.W1"] = _normal(rng, (c.d_z, c.style_hidden), 1.0 / math.sqrt(c.d_z))
        p["style.b1"] = _full((c.style_hidden,), 0.0)
        p["style.W2"] = _normal(rng, (c.style_hidden, c.style_hidden), 1.0 / math.sqrt(c.style_hidden))
        p["style.b2"] = _full((c.style_hidden,), 0.0)
        p["out.W"] = _normal(rng, (c.n_m, c.n_sites), 0.02)
        p["out.b"] = _full((c.n_sites,), c.out_bias)
        p["out.spatial.K"] = _normal(rng, (c.n_sites, c.n_sites, 3), 0.02)
        p["out.spatial.b"] = _full((c.n_sites,), 0.0)
        for name, t in p.items():
            t.name = name
        self.params = p
        self.dropout_names = tuple(dropout)

    @staticmethod
    def _ffn(rng, pre, s_m, s_ff):
        d_m, d_ff = int(round(1 / s_m ** 2)), int(round(1 / s_ff ** 2))
        return {f"{pre}.ff.W1": _normal(rng, (d_m, d_ff), s_m), f"{pre}.ff.b1": _full((d_ff,), 0.0),
                f"{pre}.ff.W2": _normal(rng, (d_ff, d_m), s_ff), f"{pre}.ff.b2": _full((d_m,), 0.0)}

    def _ln(self, pre, i):
        return {f"{pre}.ln{i}.g": _full((self.config.n_m,), 1.0), f"{pre}.ln{i}.b": _full((self.config.n_m,), 0.0)}

    # -- views
    @property
    def embedding(self) -> EmbeddingParams:
        p = self.params
        tables = {k[len("emb.se."):]: v for k, v in p.items() if k.startswith("emb.se.")}
        return EmbeddingParams(p["emb.W1"], p["emb.B1"], p["emb.W2"], p["emb.B2"], tables, self.config.year0)

    def _attn(self, pre) -> AttentionParams:
        p = self.params
        return AttentionParams(p[f"{pre}.W_Q"], p[f"{pre}.W_K"], p[f"{pre}.W_V"], p[f"{pre}.W_O"], self.config.n_heads)

    def style_params(self, layer: int) -> dict:
        p = self.params
        return {"W1": p["style.W1"], "b1": p["style.b1"], "W2": p["style.W2"], "b2": p["style.b2"],
                "A": p[f"dec.{layer}.style.A"], "a": p[f"dec.{layer}.style.a"]}

    @property
    def fixed_names(self) -> tuple:
        dr = set(self.dropout_names)
        return tuple(n for n in self.params if n not in dr)

    def dropout_shapes(self) -> dict:
        return {n: self.params[n].shape for n in self.dropout_names}

    def sample_mask(self, p_dropout: float, seed) -> DropoutMask:
        return sample_mask(self.dropout_shapes(), p_dropout, seed)

    # -- forward
    def _ffn_apply(self, x, pre, mask):
        p = self.params
        W1, W2 = p[f"{pre}.ff.W1"], p[f"{pre}.ff.W2"]
        if mask is not None:
            W1, W2 = mask.apply(f"{pre}.ff.W1", W1), mask.apply(f"{pre}.ff.W2", W2)
        h = T.lrelu(T.matmul(x, W1) + p[f"{pre}.ff.b1"])
        return T.matmul(h, W2) + p[f"{pre}.ff.b2"]

    def _norm(self, x, pre, i):
        return layer_norm(x, self.params[f"{pre}.ln{i}.g"], self.params[f"{pre}.ln{i}.b"])

    def encode(self, enc_x, enc_stamps, mask: DropoutMask | None, rng) -> T.Tensor:
        c, p = self.config, self.params
        x = assemble_encoder_input(enc_x, enc_stamps, self.embedding, c.use_embedding, c.use_embedding)
        for l in range(c.n_enc):
            pre = f"enc.{l}"
            W_O = p[f"{pre}.attn.W_O"]
            if mask is not None:
                W_O = mask.apply(f"{pre}.attn.W_O", W_O)
            a = multihead(x, x, self._attn(f"{pre}.attn"), c.attention, rng=rng, W_O=W_O, factor=c.factor)
            x = self._norm(x + a, pre, 1)
            x = self._norm(x + self._ffn_apply(x, pre, mask), pre, 2)
            if l < c.n_enc - 1:
                x = distill_layer(x, p[f"{pre}.distill.K"], p[f"{pre}.distill.b"])
        return x

    def decode(self, dec_x, dec_stamps, memory, z, rng) -> T.Tensor:
        c = self.config
        y = assemble_decoder_input(dec_x, dec_stamps, self.embedding, c.use_embedding, c.use_embedding)
        for l in range(c.n_dec):
            pre = f"dec.{l}"
            s = multihead(y, y, self._attn(f"{pre}.self"), c.attention, causal=True, rng=rng, factor=c.factor)
            y = self._norm(y + s, pre, 1)
            x = multihead(y, memory, self._attn(f"{pre}.cross"), "full")
            y = self._norm(y + x, pre, 2)
            f = adain_inject(self._ffn_apply(y, pre, None), z, self.style_params(l))
            y = self._norm(y + f, pre, 3)
        return y

    def output_block(self, y) -> T.Tensor:
        p, c = self.params, self.config
        pre = T.matmul(y[..., c.n_known:, :], p["out.W"]) + p["out.b"]
        if c.spatial:
            pre = spatial_block(pre, p["out.spatial.K"], p["out.spatial.b"])
        return pre

    def forward_with_stats(self, enc_x, enc_stamps, dec_x, dec_stamps, z,
                           mask: DropoutMask | None = None, attn_seed=0) -> tuple:
        """Returns (forecast (B, lead, sites) clipped to [0, clip_hi], number of clipped entries)."""
        rng = attn_seed if isinstance(attn_seed, np.random.Generator) else np.random.default_rng(attn_seed)
        enc_x, dec_x = np.asarray(enc_x, dtype=np.float64), np.asarray(dec_x, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64).reshape(enc_x.shape[0], -1) if enc_x.ndim == 3 else np.asarray(z)
        try:
            memory = self.encode(enc_x, enc_stamps, mask, rng)
            y = self.decode(dec_x, dec_stamps, memory, z, rng)
            raw = self.output_block(y)
        except T.NumericError as exc:
            raise T.NumericError(f"forecaster forward failed: {exc}") from exc
        hi = self.config.clip_hi
        n_clip = int(np.count_nonzero((raw.data < 0.0) | (raw.data > hi)))
        return T.clip(raw, 0.0, hi), n_clip

    def forward(self, enc_x, enc_stamps, dec_x, dec_stamps, z, mask=None, attn_seed=0) -> T.Tensor:
        return self.forward_with_stats(enc_x, enc_stamps, dec_x, dec_stamps, z, mask, attn_seed)[0]

    def config_dict(self) -> dict:
        return asdict(self.config)


def forecaster_forward(model: Forecaster, batch, z, mask=None, attn_seed=0) -> T.Tensor:
    """Forecast for a Batch (see trainer.make_batch)."""
    return model.forward(batch.enc_x, batch.enc_stamps, batch.dec_x, batch.dec_stamps, z, mask, attn_seed)
