"""Masked index sets (random and blockwise) and mask-token substitution."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

BLOCK_MIN_AREA = 4
BLOCK_ASPECT = 0.3
BLOCK_OVERSHOOT = 0.1
BLOCK_MAX_ATTEMPTS = 200


@dataclass
class MaskSpec:
    masked: np.ndarray  # sorted unique int indices
    n: int
    strategy: str
    ratio: float

    def as_bool(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[self.masked] = True
        return m

    @property
    def fraction(self) -> float:
        return len(self.masked) / self.n


def n_masked(N: int, ratio: float) -> int:
    """``round(ratio * N)`` with halves rounded up."""
    return int(math.floor(ratio * N + 0.5))


def _check_ratio(ratio):
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"mask ratio must lie in (0, 1), got {ratio}")


def random_mask(N: int, ratio: float, rng: np.random.Generator) -> MaskSpec:
    _check_ratio(ratio)
    k = n_masked(N, ratio)
    if k < 1:
        raise ConfigError(f"ratio {ratio} masks no patches out of {N}")
    idx = np.sort(rng.choice(N, size=k, replace=False))
    return MaskSpec(idx, N, "random", ratio)


def block_mask(rows: int, cols: int, ratio: float, rng: np.random.Generator) -> MaskSpec:
    """Union of random rectangles until at least ``ratio`` of the grid is masked.

    Each rectangle covers >= 4 patches with aspect ratio in [0.3, 1/0.3] and
    log-uniform area.  A rectangle that would push the masked fraction above
    ``ratio + 0.1`` is rejected.
    """
    _check_ratio(ratio)
    N = rows * cols
    if N < 16:
        raise ConfigError(f"block masking needs at least 16 patches, got {rows}x{cols}")
    need = math.ceil(ratio * N - 1e-9)
    cap = min(N, math.floor((ratio + BLOCK_OVERSHOOT) * N + 1e-9))
    mask = np.zeros((rows, cols), dtype=bool)
    count = 0
    log_aspect = (math.log(BLOCK_ASPECT), math.log(1 / BLOCK_ASPECT))
    for _ in range(BLOCK_MAX_ATTEMPTS):
        if count >= need:
            break
        max_area = max(BLOCK_MIN_AREA, cap - count)
        area = math.exp(rng.uniform(math.log(BLOCK_MIN_AREA), math.log(max_area)))
        aspect = math.exp(rng.uniform(*log_aspect))
        h = int(round(math.sqrt(area * aspect)))
        w = int(round(math.sqrt(area / aspect)))
        if h * w < BLOCK_MIN_AREA or h > rows or w > cols:
            continue
        top = int(rng.integers(0, rows - h + 1))
        left = int(rng.integers(0, cols - w + 1))
        new = int((~mask[top:top + h, left:left + w]).sum())
        if count + new > cap:
            continue
        mask[top:top + h, left:left + w] = True
        count += new
    if count < need:
        raise ConfigError(
            f"block masking reached {count / N:.3f} of the grid after "
            f"{BLOCK_MAX_ATTEMPTS} attempts, target {ratio}")
    return MaskSpec(np.flatnonzero(mask.ravel()), N, "block", ratio)


def make_mask(strategy: str, rows: int, cols: int, ratio: float, rng) -> MaskSpec:
    if strategy == "random":
        return random_mask(rows * cols, ratio, rng)
    if strategy == "block":
        return block_mask(rows, cols, ratio, rng)
    raise ConfigError(f"unknown mask strategy {strategy!r}")


def apply_mask_tokens(embedded: np.ndarray, m, mask_token: np.ndarray) -> np.ndarray:
    """Replace rows listed in ``m`` by ``mask_token``; other rows are copied.

    ``m`` is a MaskSpec, an index array, or a boolean row mask.
    """
    x = np.array(embedded, copy=True)
    n = x.shape[-2]
    if isinstance(m, MaskSpec):
        sel = m.masked
    else:
        sel = np.asarray(m)
    if sel.dtype == bool:
        if sel.shape[-1] != n:
            raise IndexError(f"boolean mask has length {sel.shape[-1]}, expected {n}")
        x[sel] = mask_token
        return x
    if sel.size and (sel.min() < 0 or sel.max() >= n):
        raise IndexError(f"mask index out of range [0, {n})")
    x[..., sel, :] = mask_token
    return x
