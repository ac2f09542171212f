"""Self-describing checkpoint files.

Layout::

    MIMCKPT <version> <manifest_bytes>\\n
    <manifest: UTF-8 JSON, sorted keys>
    <blob: concatenated little-endian tensor data>

The manifest holds the format version, a flat config snapshot, the step
counter, the metric history and a tensor table of
``{name, dtype, shape, offset, nbytes}`` with offsets relative to the start
of the blob.  Model parameters and optimiser moments are float32 under the
default config; each tensor is stored in its own dtype, recorded in the
table.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError, OffsetOverrunError, TruncatedBlobError, VersionMismatchError

MAGIC = b"MIMCKPT"
FORMAT_VERSION = 1


def _le(dtype) -> np.dtype:
    return np.dtype(dtype).newbyteorder("<")


def write_tensor_file(path, tensors: dict, meta: dict):
    table, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype=_le(arr.dtype), order="C")
        raw = a.tobytes()
        table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {**meta, "format_version": FORMAT_VERSION, "tensors": table, "blob_bytes": offset}
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + f" {FORMAT_VERSION} {len(head)}\n".encode())
        fh.write(head)
        for c in chunks:
            fh.write(c)


def read_tensor_file(path) -> tuple[dict, dict]:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    first = data[:nl].split() if nl > 0 else []
    if len(first) != 3 or first[0] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, mlen = int(first[1]), int(first[2])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {version}, this build reads version {FORMAT_VERSION}")
    start = nl + 1
    try:
        manifest = json.loads(data[start:start + mlen])
    except ValueError as e:
        raise CheckpointError(f"{path}: corrupt manifest ({e})") from None
    if manifest.get("format_version") != version:
        raise VersionMismatchError(f"{path}: manifest version disagrees with header")
    blob = data[start + mlen:]
    declared = manifest["blob_bytes"]
    tensors = {}
    for t in manifest["tensors"]:
        end = t["offset"] + t["nbytes"]
        dt = np.dtype(t["dtype"])
        expected = int(np.prod(t["shape"], dtype=np.int64)) * dt.itemsize
        if end > declared or t["nbytes"] != expected:
            raise OffsetOverrunError(
                f"{path}: tensor {t['name']!r} spans bytes [{t['offset']}, {end}) "
                f"but the blob is declared as {declared} bytes")
        if end > len(blob):
            raise TruncatedBlobError(
                f"{path}: blob truncated: tensor {t['name']!r} needs bytes "
                f"[{t['offset']}, {end}) but only {len(blob)} of {declared} bytes are present")
        tensors[t["name"]] = np.frombuffer(blob, dtype=dt, count=expected // dt.itemsize,
                                           offset=t["offset"]).reshape(t["shape"]).copy()
    if len(blob) != declared:
        raise TruncatedBlobError(f"{path}: blob is {len(blob)} bytes, manifest declares {declared}")
    return manifest, tensors


def _codebook_tensors(cb) -> dict:
    tensors = {"codebook.codes": cb.codes, "codebook.gain": np.asarray(cb.gain, dtype=np.float64)}
    if cb.pool is not None:
        tensors["codebook.pool"] = cb.pool
    return tensors


def save_codebook(cb, path, meta=None):
    tensors = _codebook_tensors(cb)
    write_tensor_file(path, tensors, {"kind": "codebook", **(meta or {})})


def _codebook_from(tensors):
    from .tokenizer import Codebook

    gain = tensors.get("codebook.gain", np.ones(()))
    if gain.shape != ():
        raise CheckpointError(f"codebook.gain must be a scalar, got shape {gain.shape}")
    return Codebook(tensors["codebook.codes"], tensors.get("codebook.pool"), float(gain))


def load_codebook(path):
    _, tensors = read_tensor_file(path)
    if "codebook.codes" not in tensors:
        raise CheckpointError(f"{path}: no codebook tensors")
    return _codebook_from(tensors)


def save_checkpoint(state, path):
    tensors = {f"params.{k}": v for k, v in state.params.items()}
    tensors.update(_codebook_tensors(state.codebook))
    tensors.update({f"opt.m.{k}": v for k, v in state.m.items()})
    tensors.update({f"opt.v.{k}": v for k, v in state.v.items()})
    history = [[r["step"], float(r["lr"]), float(r["loss"]), float(r["target_entropy"])]
               for r in state.history]
    write_tensor_file(path, tensors, {"kind": "train_state", "config": state.cfg.to_flat(),
                                      "step": state.step, "history": history})


def load_checkpoint(path):
    """Rebuild a TrainState from a checkpoint alone."""
    from . import vit
    from .config import from_flat
    from .training import TrainState

    manifest, tensors = read_tensor_file(path)
    if manifest.get("kind") != "train_state":
        raise CheckpointError(f"{path}: not a training checkpoint")
    cfg = from_flat(manifest["config"])
    shapes = vit.param_shapes(cfg.model_config())
    params, m, v = {}, {}, {}
    for name, shape in shapes.items():
        for prefix, dest in (("params.", params), ("opt.m.", m), ("opt.v.", v)):
            key = prefix + name
            if key not in tensors:
                raise CheckpointError(f"{path}: missing tensor {key!r}")
            if tuple(tensors[key].shape) != tuple(shape):
                raise CheckpointError(f"{path}: tensor {key!r} has shape "
                                      f"{tuple(tensors[key].shape)}, config implies {tuple(shape)}")
            dest[name] = tensors[key]
    known = {p + n for n in shapes for p in ("params.", "opt.m.", "opt.v.")}
    extra = set(tensors) - known - {"codebook.codes", "codebook.pool", "codebook.gain"}
    if extra:
        raise CheckpointError(f"{path}: unexpected tensors {sorted(extra)}")
    history = [dict(zip(("step", "lr", "loss", "target_entropy"), r)) for r in manifest["history"]]
    return TrainState(cfg, params, _codebook_from(tensors), m, v, manifest["step"], history)
