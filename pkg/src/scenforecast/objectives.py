"""Forecaster and discriminator loss terms.

Squared-L2 terms are summed over a window (lead nodes x sites) and averaged over the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T


@dataclass
class LossWeights:
    lambda_va: float = 0.5
    lambda_au: float = 0.5
    lambda_ad: float = 1.0
    lambda_gp: float = 1.0
    epsilon: float = 0.05
    n_f: int = 8
    n_n: int = 2

    def __post_init__(self):
        for k, v in vars(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be non-negative, got {v}")


def _sq_err(Y, X) -> T.Tensor:
    """Per-sample squared L2 error, shape (B,) for (B, ...) inputs or () for a single window."""
    d = T.const(X) - T.const(Y)
    if d.ndim <= 2:
        return T.sum(d * d)
    return T.sum(T.reshape(d * d, (d.shape[0], -1)), axis=1)


def variety_loss(Y, candidates) -> T.Tensor:
    """Batch mean of the per-sample minimum squared error over candidates.

    The argmin is taken on values, so only the winning candidate receives gradient.
    """
    if len(candidates) == 0:
        raise ValueError("variety loss needs at least one candidate")
    errs = T.stack([_sq_err(Y, c) for c in candidates], axis=0)        # (N_f, B) or (N_f,)
    pick = np.zeros(errs.shape)
    np.put_along_axis(pick, np.argmin(errs.data, axis=0)[None, ...], 1.0, axis=0)
    return T.mean(T.sum(errs * pick, axis=0))


def decay_factor(n: float, epsilon: float) -> float:
    if n < 0:
        raise ValueError("decay index must be non-negative")
    return math.exp(-epsilon * n)


def auxiliary_loss(Y, forecasts, n: float, epsilon: float) -> T.Tensor:
    if len(forecasts) == 0:
        raise ValueError("auxiliary loss needs at least one forecast")
    errs = [T.mean(_sq_err(Y, f)) for f in forecasts]
    return T.mean(T.stack(errs)) * decay_factor(n, epsilon)


def adversarial_loss_F(scores) -> T.Tensor:
    s = T.const(scores)
    if s.size < 1:
        raise ValueError("need at least one score")
    return -T.mean(s)


def remedy_term(Y, noise_forecasts) -> T.Tensor:
    if len(noise_forecasts) == 0:
        raise ValueError("remedy term needs at least one noise draw")
    return T.mean(T.stack([T.mean(_sq_err(Y, f)) for f in noise_forecasts]))


@dataclass
class ForecasterLossParts:
    variety: T.Tensor
    auxiliary: T.Tensor
    adversarial: T.Tensor
    remedy: T.Tensor


def forecaster_loss(parts: ForecasterLossParts, weights: LossWeights) -> T.Tensor:
    return (parts.variety * weights.lambda_va + parts.auxiliary * weights.lambda_au
            + parts.adversarial * weights.lambda_ad + parts.remedy)


def hinge_loss_D(fake_scores, real_scores) -> tuple:
    f, r = T.const(fake_scores), T.const(real_scores)
    if f.size < 1 or r.size < 1:
        raise ValueError("hinge loss needs non-empty score batches")
    return T.mean(T.relu(1.0 + f)), T.mean(T.relu(1.0 - r))


def gradient_penalty(real_batch, D, squared: bool = False) -> T.Tensor:
    """Batch mean of the input-gradient norm of D at real samples.

    ``D`` is a callable (or object with ``forward``) mapping (B, ...) to (B,) scores.
    The result stays on the tape so it can be differentiated w.r.t. D's parameters.
    """
    fn = D.forward if hasattr(D, "forward") else D
    x = T.Tensor(np.asarray(T.const(real_batch).data), requires_grad=True)
    scores = T.const(fn(x))
    if not scores.requires_grad:
        return T.Tensor(np.array(0.0))
    (g,) = T.grad(T.sum(scores), [x], create_graph=True)
    if g.ndim == 0:
        raise ValueError("gradient unavailable for penalty")
    sq = T.sum(T.reshape(g * g, (g.shape[0], -1)), axis=1)
    return T.mean(sq if squared else T.sqrt(sq))
