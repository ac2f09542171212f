"""Masked-patch prediction losses, AdamW, learning-rate schedule and the
pre-training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import vit
from .config import TrainConfig
from .data import ToyDataset, augment_train, generate_toy_dataset, patchify_batch
from .errors import ConfigError, NumericalError
from .masking import MaskSpec, make_mask
from .targets import build_targets, row_entropy
from .tokenizer import Codebook, encode_logits, fit_codebook

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "lr", "loss", "target_entropy")


# ---------------------------------------------------------------------------
# losses


def _mask_rows(m, shape) -> np.ndarray:
    """Boolean (..., N) mask from a MaskSpec, list of MaskSpecs or bool array."""
    if isinstance(m, MaskSpec):
        out = m.as_bool()
    elif isinstance(m, (list, tuple)) and m and isinstance(m[0], MaskSpec):
        out = np.stack([s.as_bool() for s in m])
    else:
        out = np.asarray(m)
        if out.dtype != bool:
            b = np.zeros(shape, dtype=bool)
            b[..., out] = True
            out = b
    return np.broadcast_to(out, shape)


def _log_softmax(x):
    s = x - x.max(-1, keepdims=True)
    return s - np.log(np.exp(s).sum(-1, keepdims=True))


def mc_mim_loss(logits: np.ndarray, z_hat: np.ndarray, m):
    """Soft-label cross entropy averaged over masked patches.

    Returns ``(loss, dloss/dlogits)``; unmasked rows get zero gradient.
    """
    logits = np.asarray(logits)
    rows = _mask_rows(m, logits.shape[:-1])
    count = int(rows.sum())
    if count == 0:
        raise ValueError("mask is empty: no patches to predict")
    logq = _log_softmax(logits)
    per_row = -(np.asarray(z_hat, dtype=logits.dtype) * logq).sum(-1)
    loss = per_row[rows].sum() / count
    grad = (np.exp(logq) - z_hat) / np.asarray(count, dtype=logits.dtype)
    grad = np.where(rows[..., None], grad, 0).astype(logits.dtype)
    return float(loss), grad


def one_hot(y: np.ndarray, V: int, dtype=np.float64) -> np.ndarray:
    return np.eye(V, dtype=dtype)[np.asarray(y)]


def hard_mim_loss(logits: np.ndarray, y: np.ndarray, m):
    """Cross entropy against single token ids (the one-hot case of ``mc_mim_loss``)."""
    logits = np.asarray(logits)
    return mc_mim_loss(logits, one_hot(y, logits.shape[-1], logits.dtype), m)


# ---------------------------------------------------------------------------
# optimisation


def lr_at(step: int, total_steps: int, warmup_steps: int, peak_lr: float, min_lr: float) -> float:
    """Linear warmup from 0 to ``peak_lr``, then cosine decay to ``min_lr`` at the last step."""
    if step < warmup_steps:
        return peak_lr * step / warmup_steps
    span = max(1, total_steps - 1 - warmup_steps)
    t = min(1.0, (step - warmup_steps) / span)
    return min_lr + 0.5 * (peak_lr - min_lr) * (1.0 + math.cos(math.pi * t))


def decays(name: str) -> bool:
    """Weight decay applies to everything except layer norms and the mask token."""
    return not (name == "mask_token" or ".ln" in name or name.startswith("norm.")
                or name.startswith("ln"))


def clip_global_norm(grads: dict, max_norm: float) -> float:
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if max_norm and total > max_norm:
        s = max_norm / (total + 1e-6)
        for k in grads:
            grads[k] = grads[k] * np.asarray(s, dtype=grads[k].dtype)
    return total


def adamw_update(params, grads, m, v, step, lr, beta1, beta2, eps, weight_decay,
                 lr_scale=None):
    """One decoupled-weight-decay Adam update in place.  ``step`` counts from 1."""
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    for k, p in params.items():
        g = grads[k]
        dt = p.dtype
        m[k] = (beta1 * m[k] + (1 - beta1) * g).astype(dt)
        v[k] = (beta2 * v[k] + (1 - beta2) * g * g).astype(dt)
        klr = lr * (lr_scale[k] if lr_scale else 1.0)
        upd = (m[k] / bc1) / (np.sqrt(v[k] / bc2) + eps)
        if weight_decay and decays(k):
            p *= np.asarray(1 - klr * weight_decay, dtype=dt)
        p -= np.asarray(klr, dtype=dt) * upd.astype(dt)


# ---------------------------------------------------------------------------
# state


@dataclass
class TrainState:
    cfg: TrainConfig
    params: dict
    codebook: Codebook
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    history: list = field(default_factory=list)  # metric rows

    @classmethod
    def create(cls, cfg: TrainConfig, codebook: Codebook, seed: int | None = None):
        params = vit.init_params(cfg.model_config(), cfg.seed if seed is None else seed)
        m = {k: np.zeros_like(p) for k, p in params.items()}
        v = {k: np.zeros_like(p) for k, p in params.items()}
        return cls(cfg, params, codebook, m, v)


def batch_rng(seed: int, epoch: int, batch_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, batch_index])


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 0xDA7A]).permutation(n)


def prepare_batch(cfg: TrainConfig, images: np.ndarray, rng: np.random.Generator):
    """Augment, patchify and mask a batch.  Returns (patches, masks)."""
    if cfg.augment:
        images = np.stack([augment_train(x, rng) for x in images])
    patches = patchify_batch(images, cfg.model_patch).astype(cfg.dtype)
    masks = [make_mask(cfg.mask_strategy, cfg.grid, cfg.grid, cfg.mask_ratio, rng)
             for _ in range(len(images))]
    return patches, masks


def compute_loss_and_grads(params, cfg: TrainConfig, codebook: Codebook, patches, masks,
                           targets=None):
    """Forward, targets, loss and backward for one batch.

    ``targets`` may be given as precomputed constants (B, N, V); otherwise
    they are built from the tokenizer logits and the current features.
    Returns (loss, grads, aux) where aux holds the targets and outputs.
    """
    mcfg = cfg.model_config()
    rows = _mask_rows(masks, patches.shape[:2])
    out, cache = vit.forward(params, patches, rows, mcfg)
    z = encode_logits(patches, codebook, dtype=patches.dtype)
    td = None
    if targets is None:
        if cfg.target_mode == "single":
            targets = one_hot(z.argmax(-1), codebook.V, patches.dtype)
        else:
            td = build_targets(z, out.features, cfg.target_tau, cfg.target_omega)
            targets = td.z_hat
    loss, dlogits = mc_mim_loss(out.logits, targets, rows)
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss}; logits range "
                             f"[{np.nanmin(out.logits)}, {np.nanmax(out.logits)}]")
    grads = vit.backward(params, cache, None, dlogits)
    return loss, grads, {"targets": targets, "rows": rows, "out": out, "td": td, "z": z}


def train_step(state: TrainState, images: np.ndarray, rng: np.random.Generator) -> dict:
    """One optimisation step on a batch of raw images; returns the metrics row."""
    cfg = state.cfg
    patches, masks = prepare_batch(cfg, images, rng)
    loss, grads, aux = compute_loss_and_grads(state.params, cfg, state.codebook, patches, masks)
    clip_global_norm(grads, cfg.grad_clip)
    spe = cfg.steps_per_epoch()
    lr = lr_at(state.step, cfg.total_steps(), cfg.warmup_epochs * spe, cfg.peak_lr, cfg.min_lr)
    adamw_update(state.params, grads, state.m, state.v, state.step + 1, lr,
                 cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay)
    ent = float(row_entropy(aux["targets"])[aux["rows"]].mean())
    row = {"step": state.step, "lr": lr, "loss": loss, "target_entropy": ent}
    state.step += 1
    state.history.append(row)
    return row


# ---------------------------------------------------------------------------
# loop


def make_dataset(cfg: TrainConfig) -> ToyDataset:
    return generate_toy_dataset(cfg.seed, cfg.data_n_train, cfg.data_n_test, cfg.data_classes,
                                cfg.data_image_size, cfg.model_patch, cfg.data_channels)


def fit_tokenizer(cfg: TrainConfig, dataset: ToyDataset) -> Codebook:
    patches = patchify_batch(dataset.train_x, cfg.model_patch).reshape(-1, cfg.model_config().patch_dim)
    d_tok = cfg.tokenizer_dim or None
    return fit_codebook(patches, cfg.model_vocab, cfg.tokenizer_iters, cfg.seed, d_tok,
                        cfg.tokenizer_gain)


def write_metrics(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([r["step"], repr(float(r["lr"])), repr(float(r["loss"])),
                        repr(float(r["target_entropy"]))])


def pretrain(cfg: TrainConfig, dataset: ToyDataset | None = None, codebook: Codebook | None = None,
             out_dir=None, state: TrainState | None = None) -> TrainState:
    """Run (or resume) masked-patch pre-training.

    Data order, augmentation and masks depend only on (seed, epoch, batch),
    so a resumed run follows the same trajectory as an uninterrupted one.
    """
    from .checkpoint import save_checkpoint

    dataset = dataset or make_dataset(cfg)
    if state is None:
        codebook = codebook or fit_tokenizer(cfg, dataset)
        if codebook.V != cfg.model_vocab:
            raise ConfigError(f"codebook has {codebook.V} codes but model.vocab={cfg.model_vocab}")
        state = TrainState.create(cfg, codebook)
    spe = cfg.steps_per_epoch()
    n = len(dataset.train_x)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    while state.step < cfg.total_steps():
        epoch, b = divmod(state.step, spe)
        order = epoch_order(cfg.seed, epoch, n)
        idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
        row = train_step(state, dataset.train_x[idx], batch_rng(cfg.seed, epoch, b))
        if b == spe - 1:
            log.info("epoch %d step %d lr %.3g loss %.4f", epoch, row["step"], row["lr"], row["loss"])
            if out_dir and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(state, out_dir / f"checkpoint_e{epoch + 1:04d}.ckpt")
    if out_dir:
        write_metrics(state.history, out_dir / "metrics.csv")
        save_checkpoint(state, out_dir / "checkpoint.ckpt")
    return state


def epoch_mean_losses(history, steps_per_epoch: int) -> np.ndarray:
    losses = np.array([r["loss"] for r in history])
    n = len(losses) // steps_per_epoch
    return losses[:n * steps_per_epoch].reshape(n, steps_per_epoch).mean(1)


# ---------------------------------------------------------------------------
# gradient check

def block_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> float:
    """||a - n|| / max(||a|| + ||n||, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    den = max(np.linalg.norm(a) + np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / den) if den > 0 else 0.0


GRAD_CHECK_SCALE = 0.1


def grad_check(cfg: TrainConfig, seed: int = 0, h: float = 1e-5, samples: int = 12,
               batch: int = 2, blocks=None, dtypes=("float64", "float32")) -> dict:
    """Compare analytic gradients of the masked-prediction loss with central
    finite differences.

    Parameters are drawn around the initialisation with spread
    ``GRAD_CHECK_SCALE``; right at the tiny init most gradient entries are
    ~1e-6, comparable to the finite-difference round-off.  Targets are built
    once and held constant (they are stop-gradient constants in training
    too).  Finite differences are taken once, in float64, and every analytic
    pass in ``dtypes`` is compared against them on ``samples`` random
    coordinates per parameter block.

    Some blocks have an exactly zero gradient (attention key biases: the
    softmax over keys ignores a shift shared by all keys).  Their relative
    error would only measure round-off, so a block whose full float64
    gradient norm is below 1e-12 of the median block norm is measured
    against that median instead, and listed under ``"zero_blocks"``.

    Returns ``{dtype: {"blocks": {name: rel_err}, "max_rel_err": float,
    "zero_blocks": [names]}}``.
    """
    rng = np.random.default_rng(seed)
    c64 = cfg.replace(dtype="float64")
    ds = generate_toy_dataset(seed, max(batch, cfg.data_classes), 0, cfg.data_classes,
                              cfg.data_image_size, cfg.model_patch, cfg.data_channels)
    patches = patchify_batch(ds.train_x[:batch], cfg.model_patch).astype(np.float64)
    masks = [make_mask(cfg.mask_strategy, cfg.grid, cfg.grid, cfg.mask_ratio, rng)
             for _ in range(batch)]
    cb_rng = np.random.default_rng(seed + 1)
    codebook = Codebook(cb_rng.uniform(0, 1, size=(cfg.model_vocab, cfg.model_config().patch_dim)),
                        gain=cfg.tokenizer_gain)
    p64 = vit.init_params(c64.model_config(), seed)
    for k in p64:
        p64[k] = p64[k] + rng.normal(0, GRAD_CHECK_SCALE, p64[k].shape)

    _, _, aux = compute_loss_and_grads(p64, c64, codebook, patches, masks)
    targets = aux["targets"]

    analytic = {}
    for dt in dtypes:
        pa = {k: v.astype(dt) for k, v in p64.items()}
        _, analytic[dt], _ = compute_loss_and_grads(pa, cfg.replace(dtype=dt), codebook,
                                                    patches.astype(dt), masks, targets=targets.astype(dt))

    def loss_at():
        loss, _, _ = compute_loss_and_grads(p64, c64, codebook, patches, masks, targets=targets)
        return loss

    names = list(blocks) if blocks is not None else list(p64)
    ref = analytic.get("float64") or compute_loss_and_grads(p64, c64, codebook, patches, masks,
                                                            targets=targets)[1]
    norms = {k: float(np.linalg.norm(ref[k])) for k in names}
    typical = float(np.median(list(norms.values())))
    zero = [k for k in names if norms[k] < 1e-12 * typical]
    reports = {dt: {} for dt in dtypes}
    for name in names:
        arr = p64[name]
        k = min(samples, arr.size)
        flat_idx = rng.choice(arr.size, size=k, replace=False)
        num = np.empty(k)
        for j, fi in enumerate(flat_idx):
            idx = np.unravel_index(fi, arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            lp = loss_at()
            arr[idx] = old - h
            lm = loss_at()
            arr[idx] = old
            num[j] = (lp - lm) / (2 * h)
        floor = typical * math.sqrt(k / arr.size) if name in zero else 0.0
        for dt in dtypes:
            reports[dt][name] = block_relative_error(analytic[dt][name].ravel()[flat_idx], num, floor)
    return {dt: {"blocks": r, "max_rel_err": max(r.values()), "zero_blocks": zero}
            for dt, r in reports.items()}
