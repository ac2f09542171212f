"""Toy image data, patch decomposition and training augmentation.

Images are stored channel-first (C, H, W) with values in [0, 1].  Patch
vectors are flattened row-major and channel-last: for a patch at grid
position (r, c) the vector is ``pixels[:, rP:(r+1)P, cP:(c+1)P]``
transposed to (P, P, C) and raveled.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

SHAPES = ("circle", "square", "triangle", "cross", "ring", "diamond", "hbar", "vbar")


@dataclass
class Image:
    pixels: np.ndarray
    label: int | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[0] < 1:
            raise ValueError(f"expected C x H x W pixels, got shape {px.shape}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        self.pixels = px


@dataclass
class PatchGrid:
    patches: np.ndarray  # (N, C*P*P)
    rows: int
    cols: int
    patch_size: int
    channels: int

    @property
    def n(self) -> int:
        return self.rows * self.cols


@dataclass
class ToyDataset:
    train_x: np.ndarray  # (n_train, C, H, W)
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    classes: int

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for a in (self.train_x, self.train_y, self.test_x, self.test_y):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def _check_divisible(h: int, w: int, p: int):
    if p <= 0 or h % p or w % p:
        raise ConfigError(f"image size H={h}, W={w} is not divisible by patch size P={p}")


def patchify(img, P: int) -> PatchGrid:
    """Split an image (``Image`` or C x H x W array) into P x P patches."""
    px = img.pixels if isinstance(img, Image) else np.asarray(img)
    c, h, w = px.shape
    _check_divisible(h, w, P)
    rows, cols = h // P, w // P
    t = px.reshape(c, rows, P, cols, P).transpose(1, 3, 2, 4, 0)
    return PatchGrid(t.reshape(rows * cols, P * P * c).copy(), rows, cols, P, c)


def unpatchify(pg: PatchGrid) -> np.ndarray:
    P, c = pg.patch_size, pg.channels
    t = pg.patches.reshape(pg.rows, pg.cols, P, P, c).transpose(4, 0, 2, 1, 3)
    return t.reshape(c, pg.rows * P, pg.cols * P).copy()


def patchify_batch(x: np.ndarray, P: int) -> np.ndarray:
    """Batched patchify: (B, C, H, W) -> (B, N, C*P*P)."""
    b, c, h, w = x.shape
    _check_divisible(h, w, P)
    rows, cols = h // P, w // P
    t = x.reshape(b, c, rows, P, cols, P).transpose(0, 2, 4, 3, 5, 1)
    return t.reshape(b, rows * cols, P * P * c)


# ---------------------------------------------------------------------------
# augmentation


def _resize_axis(a: np.ndarray, axis: int, out: int) -> np.ndarray:
    n = a.shape[axis]
    if n == out:
        return a
    # half-pixel centers, edge clamped
    src = (np.arange(out) + 0.5) * (n / out) - 0.5
    src = np.clip(src, 0.0, n - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    t = (src - lo).astype(a.dtype)
    shape = [1] * a.ndim
    shape[axis] = out
    t = t.reshape(shape)
    return np.take(a, lo, axis=axis) * (1 - t) + np.take(a, hi, axis=axis) * t


def resize_bilinear(px: np.ndarray, h: int, w: int) -> np.ndarray:
    out = _resize_axis(_resize_axis(px, 1, h), 2, w)
    return np.clip(out, 0.0, 1.0)


def augment_train(img, rng: np.random.Generator, scale: float | None = None,
                  flip: bool | None = None):
    """Random resized crop (area scale in [0.67, 1]) plus horizontal flip.

    ``scale`` and ``flip`` override the random draws.  Returns the same type
    it was given (``Image`` or bare array).
    """
    px = img.pixels if isinstance(img, Image) else np.asarray(img)
    _, h, w = px.shape
    s = rng.uniform(0.67, 1.0) if scale is None else scale
    do_flip = bool(rng.random() < 0.5) if flip is None else flip
    ch = min(h, max(1, int(round(np.sqrt(s) * h))))
    cw = min(w, max(1, int(round(np.sqrt(s) * w))))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    out = resize_bilinear(px[:, top:top + ch, left:left + cw], h, w)
    if do_flip:
        out = out[:, :, ::-1]
    out = np.ascontiguousarray(out, dtype=px.dtype)
    if isinstance(img, Image):
        return Image(out, img.label)
    return out


# ---------------------------------------------------------------------------
# procedural dataset


def _shape_mask(kind: str, yy, xx, cy, cx, r):
    dy, dx = yy - cy, xx - cx
    if kind == "circle":
        return dy**2 + dx**2 <= r**2
    if kind == "square":
        return (np.abs(dy) <= r * 0.8) & (np.abs(dx) <= r * 0.8)
    if kind == "triangle":
        # apex up
        return (dy <= r * 0.7) & (dy >= -r) & (np.abs(dx) <= (dy + r) * 0.6)
    if kind == "cross":
        t = max(1.0, r * 0.3)
        return ((np.abs(dy) <= t) & (np.abs(dx) <= r)) | ((np.abs(dx) <= t) & (np.abs(dy) <= r))
    if kind == "ring":
        d2 = dy**2 + dx**2
        return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    if kind == "diamond":
        return np.abs(dy) + np.abs(dx) <= r
    if kind == "hbar":
        return (np.abs(dy) <= r * 0.3) & (np.abs(dx) <= r)
    if kind == "vbar":
        return (np.abs(dx) <= r * 0.3) & (np.abs(dy) <= r)
    raise ValueError(kind)


def render_image(rng: np.random.Generator, kind: str, size: int, channels: int = 3) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    # low-frequency colour gradient plus fine noise as background texture
    base = rng.uniform(0.2, 0.8, size=(channels, 1, 1))
    gy, gx = rng.uniform(-0.25, 0.25, size=(2, channels, 1, 1))
    img = base + gy * (yy / size - 0.5) + gx * (xx / size - 0.5)
    img = img + rng.normal(0.0, 0.04, size=(channels, size, size))
    for _ in range(int(rng.integers(1, 4))):
        r = rng.uniform(0.16, 0.3) * size
        cy, cx = rng.uniform(r * 0.8, size - r * 0.8, size=2)
        m = _shape_mask(kind, yy, xx, cy, cx, r)
        colour = rng.uniform(0.0, 1.0, size=(channels, 1, 1))
        img = np.where(m[None], colour, img)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _balanced_labels(rng, n, classes):
    y = np.arange(n) % classes
    return rng.permutation(y)


def generate_toy_dataset(seed: int, n_train: int, n_test: int, classes: int,
                         image_size: int, patch_size: int = 8, channels: int = 3) -> ToyDataset:
    """Class-balanced images of 1-3 shapes of one type on a textured background.

    The class is the shape type.  Output is a pure function of the arguments.
    """
    if classes < 2 or classes > len(SHAPES):
        raise ConfigError(f"classes must be in [2, {len(SHAPES)}], got {classes}")
    if image_size % patch_size:
        raise ConfigError(f"image_size {image_size} is not divisible by patch size {patch_size}")
    ss = np.random.SeedSequence(seed)
    split_seeds = ss.spawn(2)
    out = []
    for n, sseq in zip((n_train, n_test), split_seeds):
        label_rng, *img_seqs = [np.random.default_rng(s) for s in sseq.spawn(n + 1)]
        y = _balanced_labels(label_rng, n, classes)
        x = np.empty((n, channels, image_size, image_size), dtype=np.float32)
        for i in range(n):
            x[i] = render_image(img_seqs[i], SHAPES[y[i]], image_size, channels)
        out.append((x, y.astype(np.int64)))
    (tx, ty), (vx, vy) = out
    return ToyDataset(tx, ty, vx, vy, classes)


# ---------------------------------------------------------------------------
# PPM / PGM


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) file into a C x H x W float array."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace before raster
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported PNM type {magic!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    c = 3 if magic == b"P6" else 1
    dt = np.dtype(">u2") if maxval > 255 else np.uint8
    count = w * h * c
    raster = np.frombuffer(data, dtype=dt, count=count, offset=pos)
    return (raster.reshape(h, w, c).transpose(2, 0, 1) / maxval).astype(np.float32)


def write_pgm(path, values: np.ndarray, maxval: int = 65535, comment: str | None = None):
    """Write a 2-D integer array as binary PGM."""
    v = np.asarray(values)
    h, w = v.shape
    header = b"P5\n"
    if comment:
        header += b"".join(b"# " + line.encode() + b"\n" for line in comment.splitlines())
    header += f"{w} {h}\n{maxval}\n".encode()
    dt = np.dtype(">u2") if maxval > 255 else np.uint8
    with open(path, "wb") as f:
        f.write(header + np.clip(v, 0, maxval).astype(dt).tobytes())


def write_pnm(path, pixels: np.ndarray):
    px = np.asarray(pixels)
    c, h, w = px.shape
    magic = {1: b"P5", 3: b"P6"}[c]
    raster = np.round(px.transpose(1, 2, 0) * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(magic + f"\n{w} {h}\n255\n".encode() + raster.tobytes())


def load_image_dir(path) -> list[Image]:
    """Load every .ppm/.pgm file in ``path`` (sorted by name).

    A file named ``<int>_<anything>`` gets that integer as its label.
    """
    images = []
    for name in sorted(os.listdir(path)):
        if not name.lower().endswith((".ppm", ".pgm")):
            continue
        stem = name.split("_", 1)[0]
        label = int(stem) if "_" in name and stem.isdigit() else None
        images.append(Image(read_pnm(Path(path) / name), label))
    return images
