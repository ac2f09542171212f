"""Per-image dumps of tokenizer ids, multi-choice targets and patch affinities."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import vit
from .data import patchify_batch, write_pgm
from .masking import make_mask
from .targets import build_targets, row_entropy
from .tokenizer import encode_logits

PGM_MAX = 65535


def target_views(state, pixels: np.ndarray, mask_seed: int = 0) -> dict:
    """Tokenizer logits, features and targets for one C x H x W image."""
    cfg = state.cfg
    patches = patchify_batch(pixels[None], cfg.model_patch).astype(cfg.dtype)
    rng = np.random.default_rng(mask_seed)
    m = make_mask(cfg.mask_strategy, cfg.grid, cfg.grid, cfg.mask_ratio, rng)
    rows = m.as_bool()[None]
    out, _ = vit.forward(state.params, patches, rows, cfg.model_config(), with_head=False)
    z = encode_logits(patches, state.codebook, dtype=patches.dtype)[0]
    td = build_targets(z, out.features[0], cfg.target_tau, cfg.target_omega)
    return {"z": z, "features": out.features[0], "mask": m, "td": td}


def _write_matrix(path, mat, header_prefix):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patch"] + [f"{header_prefix}{j}" for j in range(mat.shape[1])])
        for i, row in enumerate(mat):
            w.writerow([i] + [repr(float(v)) for v in row])


def read_matrix_csv(path) -> np.ndarray:
    with open(path) as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) for v in r[1:]] for r in rows])


def write_heatmap(path, W: np.ndarray):
    """Quantise W to 16-bit PGM, scaled by its maximum; the scale is stored
    as a ``# scale <float>`` comment."""
    scale = float(W.max())
    q = np.round(W / scale * PGM_MAX).astype(np.int64)
    write_pgm(path, q, PGM_MAX, comment=f"scale {scale!r}")


def read_heatmap(path) -> np.ndarray:
    data = Path(path).read_bytes()
    scale = None
    for line in data.split(b"\n")[1:]:
        if line.startswith(b"#"):
            parts = line[1:].split()
            if parts and parts[0] == b"scale":
                scale = float(parts[1])
        else:
            break
    from .data import read_pnm

    if scale is None:
        raise ValueError(f"{path}: heatmap has no scale comment")
    return read_pnm(path)[0].astype(np.float64) * scale


def dump_targets(state, pixels: np.ndarray, out_dir, mask_seed: int = 0) -> dict:
    """Write token ids, top-3 choices, p/W/z_hat/features CSVs, a W heatmap
    and an entropy summary into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    v = target_views(state, pixels, mask_seed)
    cfg, td, m = state.cfg, v["td"], v["mask"]
    ids = v["z"].argmax(-1)
    with open(out / "token_ids.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(ids.reshape(cfg.grid, cfg.grid).tolist())
    masked = m.as_bool()
    with open(out / "top3.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patch", "masked", "id1", "p1", "id2", "p2", "id3", "p3"])
        for i, row in enumerate(td.z_hat):
            top = np.argsort(-row, kind="stable")[:3]
            w.writerow([i, int(masked[i])] + [x for k in top for x in (int(k), repr(float(row[k])))])
    _write_matrix(out / "p.csv", td.p, "k")
    _write_matrix(out / "z_hat.csv", td.z_hat, "k")
    _write_matrix(out / "W.csv", td.W, "j")
    _write_matrix(out / "features.csv", v["features"], "d")
    write_heatmap(out / "affinity.pgm", td.W)
    ent_p = row_entropy(td.p)[masked]
    ent_z = row_entropy(td.z_hat)[masked]
    with open(out / "entropy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "mean", "min", "max"])
        for name, e in (("p", ent_p), ("z_hat", ent_z)):
            w.writerow([name, repr(float(e.mean())), repr(float(e.min())), repr(float(e.max()))])
    return v


def cmd_inspect_targets(state, dataset, index: int, out_dir, split: str = "test", mask_seed: int = 0):
    images = dataset.test_x if split == "test" else dataset.train_x
    if not 0 <= index < len(images):
        raise IndexError(f"image index {index} out of range [0, {len(images)})")
    return dump_targets(state, images[index], Path(out_dir) / f"{split}_{index:05d}", mask_seed)
