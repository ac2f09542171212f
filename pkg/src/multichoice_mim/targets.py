"""Multi-choice targets for masked patch prediction.

The target for every patch blends two distributions over the token
vocabulary:

* ``p`` -- the tokenizer's logits softened with a temperature ``tau``;
* ``W @ p`` -- the same distributions propagated between patches, weighted by
  a row-softmax over cosine similarities of the encoder's patch features.

``z_hat = omega * p + (1 - omega) * W @ p``.  Targets are constants for
the optimiser: nothing here is differentiated.

All functions accept a leading batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class TargetDistribution:
    p: np.ndarray
    W: np.ndarray
    z_hat: np.ndarray
    tau: float
    omega: float


def _row_softmax(s: np.ndarray) -> np.ndarray:
    s = s - s.max(-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(-1, keepdims=True)


def soft_probs(z: np.ndarray, tau: float) -> np.ndarray:
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    z = np.asarray(z)
    return _row_softmax(z / np.asarray(tau, dtype=z.dtype))


def patch_affinity(features: np.ndarray) -> np.ndarray:
    """Row-softmax of cosine similarities between all pairs of patch features.

    Zero-norm rows are left at zero after normalisation, so they are
    orthogonal to everything and get a uniform row.
    """
    f = np.asarray(features)
    norm = np.sqrt((f * f).sum(-1, keepdims=True))
    fn = np.divide(f, norm, out=np.zeros_like(f), where=norm > 0)
    sim = fn @ np.swapaxes(fn, -1, -2)
    return _row_softmax(sim)


def blend_targets(p: np.ndarray, W: np.ndarray, omega: float) -> np.ndarray:
    if not 0.0 <= omega <= 1.0:
        raise ConfigError(f"omega must lie in [0, 1], got {omega}")
    p = np.asarray(p)
    om = np.asarray(omega, dtype=p.dtype)
    return om * p + (1 - om) * (np.asarray(W) @ p)


def build_targets(z: np.ndarray, features: np.ndarray, tau: float, omega: float) -> TargetDistribution:
    p = soft_probs(z, tau)
    # W depends on the (in-training) features; at omega == 1 it has no effect
    # on the target, but is still reported.
    W = patch_affinity(np.asarray(features, dtype=p.dtype))
    return TargetDistribution(p, W, blend_targets(p, W, omega), tau, omega)


def row_entropy(p: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) of each row."""
    p = np.asarray(p)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -(p * logp).sum(-1)
