"""Linear probing and fine-tuning on the toy classification task."""
from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import vit
from .config import TrainConfig
from .data import ToyDataset, augment_train, patchify_batch
from .training import adamw_update, batch_rng, clip_global_norm, epoch_order, lr_at

RESULT_FIELDS = ("run_id", "mode", "epoch", "top1", "loss")


@dataclass
class MetricsRow:
    run_id: str
    mode: str  # "probe" | "finetune"
    epoch: int
    top1: float
    loss: float

    def __post_init__(self):
        if not 0.0 <= self.top1 <= 100.0:
            raise ValueError(f"top1 must be a percentage, got {self.top1}")


def top1_accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    if labels.size == 0:
        raise ValueError("cannot compute accuracy of an empty set")
    return 100.0 * float((predictions == labels).sum()) / labels.size


def append_results(row: MetricsRow, path):
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(RESULT_FIELDS)
        d = asdict(row)
        w.writerow([d["run_id"], d["mode"], d["epoch"], repr(d["top1"]), repr(d["loss"])])


def pooled_features(params, cfg: TrainConfig, images: np.ndarray, batch: int = 128) -> np.ndarray:
    """Mean of the final patch features over all patches; no masking, no head."""
    mcfg = cfg.model_config()
    out = []
    for i in range(0, len(images), batch):
        patches = patchify_batch(images[i:i + batch], cfg.model_patch).astype(cfg.dtype)
        o, _ = vit.forward(params, patches, None, mcfg, with_head=False)
        out.append(o.features.mean(1))
    return np.concatenate(out).astype(np.float64)


def _softmax_ce(logits, y):
    s = logits - logits.max(1, keepdims=True)
    logp = s - np.log(np.exp(s).sum(1, keepdims=True))
    loss = -logp[np.arange(len(y)), y].mean()
    g = np.exp(logp)
    g[np.arange(len(y)), y] -= 1.0
    return loss, g / len(y)


def train_linear_classifier(x_train, y_train, x_test, y_test, classes: int, epochs: int,
                            lr: float = 0.01, seed: int = 0, batch: int = 64):
    """Softmax regression on standardised features.

    Returns ``(best_top1, epoch_of_best, final_train_loss)``.
    """
    mu = x_train.mean(0)
    sd = x_train.std(0) + 1e-6
    xt = (x_train - mu) / sd
    xv = (x_test - mu) / sd
    rng = np.random.default_rng(seed)
    p = {"w": np.zeros((xt.shape[1], classes)), "b": np.zeros(classes)}
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v = {k: np.zeros_like(v) for k, v in p.items()}
    best, best_epoch, loss, step = -1.0, 0, float("nan"), 0
    for epoch in range(epochs):
        order = rng.permutation(len(xt))
        for i in range(0, len(order), batch):
            idx = order[i:i + batch]
            loss, g = _softmax_ce(xt[idx] @ p["w"] + p["b"], y_train[idx])
            step += 1
            adamw_update(p, {"w": xt[idx].T @ g, "b": g.sum(0)}, m, v, step, lr,
                         0.9, 0.999, 1e-8, 0.0)
        acc = top1_accuracy((xv @ p["w"] + p["b"]).argmax(1), y_test)
        if acc > best:
            best, best_epoch = acc, epoch
    return best, best_epoch, float(loss)


def linear_probe(params, cfg: TrainConfig, dataset: ToyDataset, epochs: int | None = None,
                 run_id: str = "probe", features=None) -> MetricsRow:
    """Train a linear classifier on frozen mean-pooled features.

    ``features`` may supply precomputed ``(train, test)`` feature matrices
    in place of the encoder.
    """
    if dataset.train_y is None or len(dataset.train_y) == 0:
        raise ValueError("linear probing needs a labelled dataset")
    epochs = cfg.probe_epochs if epochs is None else epochs
    if features is None:
        features = (pooled_features(params, cfg, dataset.train_x),
                    pooled_features(params, cfg, dataset.test_x))
    ftr, fte = features
    best, ep, loss = train_linear_classifier(ftr, dataset.train_y, fte, dataset.test_y,
                                             dataset.classes, epochs, cfg.probe_lr, cfg.seed)
    return MetricsRow(run_id, "probe", ep, best, loss)


def layer_id(name: str, layers: int) -> int:
    """0 for the embedding, 1..L for transformer blocks, L for everything after."""
    if name.startswith(("patch_embed", "pos_embed", "mask_token")):
        return 0
    if name.startswith("blocks."):
        return int(name.split(".")[1]) + 1
    return layers


def layer_lr_scales(names, layers: int, decay: float) -> dict:
    """Per-parameter learning-rate multipliers ``decay ** (L - layer_id)``."""
    return {n: decay ** (layers - layer_id(n, layers)) for n in names}


def fine_tune(params, cfg: TrainConfig, dataset: ToyDataset, epochs: int | None = None,
              lr: float | None = None, layer_decay: float | None = None,
              run_id: str = "finetune") -> MetricsRow:
    """Train the whole encoder plus a linear classifier on mean-pooled features.

    The prediction head used for pre-training is dropped.  ``params`` is not
    modified.
    """
    mcfg = cfg.model_config()
    expected = vit.param_shapes(mcfg)
    for k, shape in expected.items():
        if k not in params or tuple(params[k].shape) != tuple(shape):
            got = None if k not in params else tuple(params[k].shape)
            raise ValueError(f"checkpoint tensor {k!r} has shape {got}, config implies {shape}")
    epochs = cfg.finetune_epochs if epochs is None else epochs
    lr = cfg.finetune_lr if lr is None else lr
    decay = cfg.finetune_layer_decay if layer_decay is None else layer_decay
    dt = np.dtype(cfg.dtype)
    p = {k: v.copy() for k, v in params.items() if not k.startswith("head.")}
    rng0 = np.random.default_rng([cfg.seed, 0xC1A5])
    p["cls.w"] = (rng0.standard_normal((mcfg.dim, dataset.classes)) * 0.02).astype(dt)
    p["cls.b"] = np.zeros(dataset.classes, dt)
    scales = layer_lr_scales(p, mcfg.layers, decay)
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v = {k: np.zeros_like(v) for k, v in p.items()}
    spe = -(-len(dataset.train_x) // cfg.batch_size)
    total, warm = epochs * spe, min(cfg.finetune_warmup_epochs, max(epochs - 1, 0)) * spe
    best, best_epoch, loss, step = -1.0, 0, float("nan"), 0
    for epoch in range(epochs):
        order = epoch_order(cfg.seed + 1, epoch, len(dataset.train_x))
        for b in range(spe):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            rng = batch_rng(cfg.seed + 1, epoch, b)
            imgs = dataset.train_x[idx]
            if cfg.augment:
                imgs = np.stack([augment_train(x, rng) for x in imgs])
            patches = patchify_batch(imgs, cfg.model_patch).astype(dt)
            out, cache = vit.forward(p, patches, None, mcfg, with_head=False)
            pooled = out.features.mean(1)
            loss, g = _softmax_ce(pooled @ p["cls.w"] + p["cls.b"], dataset.train_y[idx])
            g = g.astype(dt)
            grads = {"cls.w": pooled.T @ g, "cls.b": g.sum(0)}
            dfeat = np.repeat((g @ p["cls.w"].T)[:, None, :] / out.features.shape[1],
                              out.features.shape[1], axis=1)
            gb = vit.backward({k: x for k, x in p.items() if not k.startswith("cls.")}, cache, dfeat)
            grads.update({k: x for k, x in gb.items() if not k.startswith("head.")})
            clip_global_norm(grads, cfg.grad_clip)
            cur = lr_at(step, total, warm, lr, min(cfg.finetune_min_lr, lr))
            step += 1
            adamw_update(p, grads, m, v, step, cur, cfg.adam_beta1, cfg.finetune_adam_beta2,
                         cfg.adam_eps, cfg.weight_decay, scales)
        feats = pooled_features(p, cfg, dataset.test_x)
        acc = top1_accuracy((feats @ p["cls.w"] + p["cls.b"]).argmax(1), dataset.test_y)
        if acc > best:
            best, best_epoch = acc, epoch
    return MetricsRow(run_id, "finetune", best_epoch, best, float(loss))
