"""A k-means vector-quantisation tokenizer over image patches.

The tokenizer is fitted once and then frozen.  Its logits for a patch are
scaled negative squared distances to every code, so the nearest code gets
the largest score.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass
class Codebook:
    codes: np.ndarray  # (V, d_tok)
    pool: np.ndarray | None = None  # (C*P*P, d_tok) fixed linear pooling, or None
    gain: float = 1.0  # fixed intensity scale of the token space
    inertia_history: list = field(default_factory=list)

    @property
    def V(self) -> int:
        return self.codes.shape[0]

    @property
    def d_tok(self) -> int:
        return self.codes.shape[1]

    def to_token_space(self, patches: np.ndarray) -> np.ndarray:
        u = np.asarray(patches)
        if self.pool is not None:
            u = u @ self.pool.astype(u.dtype, copy=False)
        if self.gain != 1.0:
            u = u * np.asarray(self.gain, dtype=u.dtype)
        if u.shape[-1] != self.d_tok:
            raise ConfigError(
                f"patch dimension {u.shape[-1]} does not match tokenizer dimension {self.d_tok}")
        return u


def pooling_matrix(in_dim: int, d_tok: int) -> np.ndarray:
    """Average consecutive groups of ``in_dim // d_tok`` inputs."""
    if in_dim % d_tok:
        raise ConfigError(f"cannot pool {in_dim} patch values into {d_tok} dims")
    g = in_dim // d_tok
    m = np.zeros((in_dim, d_tok))
    m[np.arange(in_dim), np.arange(in_dim) // g] = 1.0 / g
    return m


def sq_distances(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Pairwise squared euclidean distances, computed in float64."""
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    d = (x * x).sum(-1)[..., None] - 2.0 * (x @ c.T) + (c * c).sum(-1)
    return np.maximum(d, 0.0)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    idx = [int(rng.integers(n))]
    d2 = sq_distances(x, x[idx[0]][None])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with chosen centres
            i = int(rng.integers(n))
        else:
            i = int(rng.choice(n, p=d2 / total))
        idx.append(i)
        d2 = np.minimum(d2, sq_distances(x, x[i][None])[:, 0])
    return x[idx].astype(np.float64)


def lloyd(x: np.ndarray, centers: np.ndarray, iters: int):
    """Lloyd iterations from ``centers``.

    Empty clusters are reseeded with the point farthest from its centre.
    Returns (centers, labels, inertia_history).
    """
    x = np.asarray(x, dtype=np.float64)
    centers = centers.copy()
    k = centers.shape[0]
    labels = None
    history = []
    for _ in range(iters):
        d = sq_distances(x, centers)
        new = d.argmin(1)
        history.append(float(d[np.arange(len(x)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            err = ((x - centers[labels]) ** 2).sum(1)
            for j in np.flatnonzero(~nonempty):
                far = int(err.argmax())
                centers[j] = x[far]
                err[far] = -1.0
    d = sq_distances(x, centers)
    labels = d.argmin(1)
    return centers, labels, history


def fit_codebook(patches: np.ndarray, V: int, iters: int = 50, seed: int = 0,
                 d_tok: int | None = None, gain: float = 1.0) -> Codebook:
    """Fit a V-code codebook with k-means++ seeding and Lloyd iterations.

    Clustering happens in token space: patches pooled to ``d_tok`` dims (if
    given and different from the patch dimension) and multiplied by ``gain``.
    """
    x = np.asarray(patches, dtype=np.float64)
    pool = None
    if d_tok is not None and d_tok != x.shape[1]:
        pool = pooling_matrix(x.shape[1], d_tok)
        x = x @ pool
    if not gain > 0:
        raise ConfigError(f"tokenizer gain must be positive, got {gain}")
    x = x * gain
    n_distinct = np.unique(x, axis=0).shape[0]
    if n_distinct < V:
        raise ConfigError(f"need at least V={V} distinct patches, got {n_distinct}")
    rng = np.random.default_rng(seed)
    centers, labels, hist = lloyd(x, kmeans_pp_init(x, V, rng), iters)
    hist.append(float(((x - centers[labels]) ** 2).sum()))
    return Codebook(centers, pool, float(gain), hist)


def quantization_error(patches: np.ndarray, cb: Codebook) -> float:
    u = np.asarray(cb.to_token_space(np.asarray(patches, dtype=np.float64)))
    labels = sq_distances(u, cb.codes).argmin(1)
    return float(((u - cb.codes[labels]) ** 2).sum())


def encode_logits(patches, cb: Codebook, dtype=None) -> np.ndarray:
    """Tokenizer logits ``z[i, k] = -||u_i - c_k||^2 / sqrt(d_tok)``.

    ``patches`` may be a ``PatchGrid`` or an array of shape (..., N, C*P*P).
    """
    arr = patches.patches if hasattr(patches, "patches") else np.asarray(patches)
    out_dtype = dtype or (arr.dtype if arr.dtype.kind == "f" else np.float64)
    u = cb.to_token_space(arr.astype(np.float64))
    z = -sq_distances(u, cb.codes) / np.sqrt(cb.d_tok)
    return z.astype(out_dtype)


def hard_ids(z: np.ndarray) -> np.ndarray:
    """Per-patch argmax token id; ties go to the lowest index."""
    return np.asarray(z).argmax(-1)
