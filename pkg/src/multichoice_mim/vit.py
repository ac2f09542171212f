"""A small pre-norm vision transformer with an analytic backward pass.

Parameters live in a flat ``dict`` of named numpy arrays.  ``forward``
returns the output together with a cache; ``backward`` consumes that cache
and upstream gradients and returns a gradient for every parameter.

Shapes: B batch, N patches, D width, H heads, V vocabulary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ConfigError, NumericalError

LN_EPS = 1e-6
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 4
    dim: int = 128
    heads: int = 4
    patch: int = 8
    vocab: int = 512
    n_patches: int = 16
    channels: int = 3
    mlp_ratio: int = 4
    head_ratio: int = 2
    dtype: str = "float32"

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch * self.patch

    def validate(self):
        if self.dim % self.heads:
            raise ConfigError(f"model.dim={self.dim} is not divisible by model.heads={self.heads}")
        for k in ("layers", "dim", "heads", "patch", "vocab", "n_patches", "channels"):
            if getattr(self, k) < 1:
                raise ConfigError(f"model.{k} must be positive")


@dataclass
class EncoderOutput:
    features: np.ndarray  # (B, N, D) after the final layer norm
    logits: np.ndarray | None  # (B, N, V)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    D, Din = cfg.dim, cfg.patch_dim
    Dm, Dh = cfg.mlp_ratio * D, cfg.head_ratio * D
    shapes = {
        "patch_embed.w": (Din, D),
        "patch_embed.b": (D,),
        "pos_embed": (cfg.n_patches, D),
        "mask_token": (D,),
    }
    for l in range(cfg.layers):
        p = f"blocks.{l}."
        shapes.update({
            p + "ln1.g": (D,), p + "ln1.b": (D,),
            p + "attn.wq": (D, D), p + "attn.bq": (D,),
            p + "attn.wk": (D, D), p + "attn.bk": (D,),
            p + "attn.wv": (D, D), p + "attn.bv": (D,),
            p + "attn.wo": (D, D), p + "attn.bo": (D,),
            p + "ln2.g": (D,), p + "ln2.b": (D,),
            p + "mlp.w1": (D, Dm), p + "mlp.b1": (Dm,),
            p + "mlp.w2": (Dm, D), p + "mlp.b2": (D,),
        })
    shapes.update({
        "norm.g": (D,), "norm.b": (D,),
        "head.w1": (D, Dh), "head.b1": (Dh,),
        "head.w2": (Dh, cfg.vocab), "head.b2": (cfg.vocab,),
    })
    return shapes


def _trunc_normal(rng, shape, std, dtype):
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Truncated-normal weights (std 0.02), zero biases and positions, unit LN gains."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    dt = np.dtype(cfg.dtype)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "pos_embed" or (len(shape) == 1 and leaf.startswith("b")):
            params[name] = np.zeros(shape, dt)
        elif leaf == "g":
            params[name] = np.ones(shape, dt)
        else:
            params[name] = _trunc_normal(rng, shape, INIT_STD, dt)
    return params


def count_params(params) -> int:
    return int(sum(v.size for v in params.values()))


# ---------------------------------------------------------------------------
# primitives


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)).astype(x.dtype))


def gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)).astype(x.dtype))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return cdf + x * pdf.astype(x.dtype)


def layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def layer_norm_backward(dy, g, cache):
    xhat, rstd = cache
    red = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(red)
    db = dy.sum(red)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _linear(x, w, b):
    return x @ w + b


def _linear_backward(dy, x, w):
    d_in, d_out = w.shape
    dw = x.reshape(-1, d_in).T @ dy.reshape(-1, d_out)
    db = dy.reshape(-1, d_out).sum(0)
    return dy @ w.T, dw, db


def _softmax(s):
    s = s - s.max(-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(-1, keepdims=True)


def _split_heads(x, H):
    B, N, D = x.shape
    return x.reshape(B, N, H, D // H).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, N, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, N, H * dh)


# ---------------------------------------------------------------------------
# embedding


def embed(params, patches, mask=None):
    """Patch projection, mask-token substitution, then positional embedding.

    ``patches``: (B, N, C*P*P).  ``mask``: boolean (B, N) or None.
    """
    e = _linear(patches, params["patch_embed.w"], params["patch_embed.b"])
    if mask is not None:
        e = np.where(mask[..., None], params["mask_token"], e)
    x = e + params["pos_embed"]
    return x, {"patches": patches, "mask": mask}


def embed_backward(params, dx, cache):
    patches, mask = cache["patches"], cache["mask"]
    grads = {"pos_embed": dx.sum(0)}
    if mask is not None:
        keep = ~mask[..., None]
        grads["mask_token"] = np.where(keep, 0, dx).reshape(-1, dx.shape[-1]).sum(0)
        de = np.where(keep, dx, 0)
    else:
        grads["mask_token"] = np.zeros_like(params["mask_token"])
        de = dx
    _, grads["patch_embed.w"], grads["patch_embed.b"] = _linear_backward(
        de, patches, params["patch_embed.w"])
    return grads


# ---------------------------------------------------------------------------
# transformer


def _block_forward(params, p, x, H):
    c = {"x": x}
    h, c["ln1"] = layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
    c["h"] = h
    q = _split_heads(_linear(h, params[p + "attn.wq"], params[p + "attn.bq"]), H)
    k = _split_heads(_linear(h, params[p + "attn.wk"], params[p + "attn.bk"]), H)
    v = _split_heads(_linear(h, params[p + "attn.wv"], params[p + "attn.bv"]), H)
    scale = np.asarray(1.0 / np.sqrt(q.shape[-1]), dtype=x.dtype)
    a = _softmax((q @ np.swapaxes(k, -1, -2)) * scale)
    o = _merge_heads(a @ v)
    c.update(q=q, k=k, v=v, a=a, o=o, scale=scale)
    x = x + _linear(o, params[p + "attn.wo"], params[p + "attn.bo"])
    c["x_mid"] = x
    h2, c["ln2"] = layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
    u = _linear(h2, params[p + "mlp.w1"], params[p + "mlp.b1"])
    gu = gelu(u)
    c.update(h2=h2, u=u, gu=gu)
    x = x + _linear(gu, params[p + "mlp.w2"], params[p + "mlp.b2"])
    return x, c


def _block_backward(params, p, dx, c, grads):
    # MLP branch
    dgu, grads[p + "mlp.w2"], grads[p + "mlp.b2"] = _linear_backward(dx, c["gu"], params[p + "mlp.w2"])
    du = dgu * gelu_grad(c["u"])
    dh2, grads[p + "mlp.w1"], grads[p + "mlp.b1"] = _linear_backward(du, c["h2"], params[p + "mlp.w1"])
    dxm, grads[p + "ln2.g"], grads[p + "ln2.b"] = layer_norm_backward(dh2, params[p + "ln2.g"], c["ln2"])
    dx = dx + dxm
    # attention branch
    do, grads[p + "attn.wo"], grads[p + "attn.bo"] = _linear_backward(dx, c["o"], params[p + "attn.wo"])
    H = c["a"].shape[1]
    do = _split_heads(do, H)
    a, q, k, v, scale = c["a"], c["q"], c["k"], c["v"], c["scale"]
    da = do @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(a, -1, -2) @ do
    ds = a * (da - (da * a).sum(-1, keepdims=True)) * scale
    dq = ds @ k
    dk = np.swapaxes(ds, -1, -2) @ q
    dh = np.zeros_like(c["h"])
    for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
        dpart, grads[p + f"attn.w{name}"], grads[p + f"attn.b{name}"] = _linear_backward(
            _merge_heads(dproj), c["h"], params[p + f"attn.w{name}"])
        dh += dpart
    dxa, grads[p + "ln1.g"], grads[p + "ln1.b"] = layer_norm_backward(dh, params[p + "ln1.g"], c["ln1"])
    return dx + dxa


def vit_forward(params, x, cfg: ModelConfig, with_head: bool = True):
    """Run the transformer on already embedded (masked, positioned) input.

    Returns ``(EncoderOutput, cache)``.  A 2-D input is treated as a batch
    of one and the outputs keep the batch axis.
    """
    if x.ndim == 2:
        x = x[None]
    caches = []
    for l in range(cfg.layers):
        x, c = _block_forward(params, f"blocks.{l}.", x, cfg.heads)
        if not np.isfinite(x).all():
            raise NumericalError(f"non-finite activation in transformer block {l}")
        caches.append(c)
    feats, ln_cache = layer_norm(x, params["norm.g"], params["norm.b"])
    cache = {"blocks": caches, "norm": ln_cache, "features": feats}
    logits = None
    if with_head:
        t = _linear(feats, params["head.w1"], params["head.b1"])
        tg = gelu(t)
        logits = _linear(tg, params["head.w2"], params["head.b2"])
        if not np.isfinite(logits).all():
            raise NumericalError("non-finite activation in the prediction head")
        cache.update(t=t, tg=tg)
    return EncoderOutput(feats, logits), cache


def vit_backward(params, cache, dfeatures=None, dlogits=None):
    """Gradients of a scalar loss given its derivative w.r.t. the outputs.

    The returned dict has an entry for every transformer/head parameter plus
    ``"input"``, the gradient w.r.t. the embedded input.
    """
    if cache is None or "blocks" not in cache:
        raise ValueError("vit_backward needs the cache returned by vit_forward")
    grads = {}
    feats = cache["features"]
    df = np.zeros_like(feats) if dfeatures is None else np.array(dfeatures, dtype=feats.dtype)
    if "t" in cache:
        if dlogits is None:
            dlogits = np.zeros(feats.shape[:-1] + (params["head.w2"].shape[1],), feats.dtype)
        dtg, grads["head.w2"], grads["head.b2"] = _linear_backward(dlogits, cache["tg"], params["head.w2"])
        dt = dtg * gelu_grad(cache["t"])
        dfh, grads["head.w1"], grads["head.b1"] = _linear_backward(dt, feats, params["head.w1"])
        df = df + dfh
    elif dlogits is not None:
        raise ValueError("forward pass ran without the head; cannot take logit gradients")
    dx, grads["norm.g"], grads["norm.b"] = layer_norm_backward(df, params["norm.g"], cache["norm"])
    for l in reversed(range(len(cache["blocks"]))):
        dx = _block_backward(params, f"blocks.{l}.", dx, cache["blocks"][l], grads)
    grads["input"] = dx
    return grads


def forward(params, patches, mask, cfg: ModelConfig, with_head: bool = True):
    """Embed raw patches, then run the transformer."""
    x, ecache = embed(params, patches, mask)
    out, cache = vit_forward(params, x, cfg, with_head)
    cache["embed"] = ecache
    return out, cache


def backward(params, cache, dfeatures=None, dlogits=None):
    """Full backward pass including the embedding.  Returns parameter grads only."""
    grads = vit_backward(params, cache, dfeatures, dlogits)
    dx = grads.pop("input")
    grads.update(embed_backward(params, dx, cache["embed"]))
    for name, v in params.items():
        if name not in grads:
            grads[name] = np.zeros_like(v)
    return grads


def attention_maps(cache) -> list[np.ndarray]:
    return [c["a"] for c in cache["blocks"]]
