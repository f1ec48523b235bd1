"""All-MLP vision network over 8x8 patches of a 64x64 map, with hand-written
backpropagation.

Parameters live in an ordered dict of numpy arrays; `param_order` fixes the
layout used by the optimizer, the checkpoint file and the gradient checks.
The network alternates token-mixing and channel-mixing MLP blocks with
pre-LayerNorm and residual connections, then mean-pools tokens into a linear
head over the five steering classes.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import erf

from .prng import SplitMix64

LN_EPS = 1e-5


@dataclass(frozen=True)
class MixerConfig:
    image_size: int = 64
    patch_size: int = 8
    dim: int = 128
    depth: int = 6
    num_classes: int = 5
    token_hidden: int = 64
    channel_hidden: int = 512

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")

    @property
    def tokens(self):
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self):
        return self.patch_size ** 2

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def param_order(config):
    """Fixed (name, shape) layout: embed, per-block tensors, head.

    Weight matrices are (out, in), serialized row-major.
    """
    c = config
    order = [
        ("embed_w", (c.dim, c.patch_dim)),
        ("embed_b", (c.dim,)),
    ]
    for b in range(c.depth):
        order += [
            (f"blk{b}_ln1_g", (c.dim,)),
            (f"blk{b}_ln1_b", (c.dim,)),
            (f"blk{b}_tok_w1", (c.token_hidden, c.tokens)),
            (f"blk{b}_tok_b1", (c.token_hidden,)),
            (f"blk{b}_tok_w2", (c.tokens, c.token_hidden)),
            (f"blk{b}_tok_b2", (c.tokens,)),
            (f"blk{b}_ln2_g", (c.dim,)),
            (f"blk{b}_ln2_b", (c.dim,)),
            (f"blk{b}_ch_w1", (c.channel_hidden, c.dim)),
            (f"blk{b}_ch_b1", (c.channel_hidden,)),
            (f"blk{b}_ch_w2", (c.dim, c.channel_hidden)),
            (f"blk{b}_ch_b2", (c.dim,)),
        ]
    order += [
        ("ln_head_g", (c.dim,)),
        ("ln_head_b", (c.dim,)),
        ("head_w", (c.num_classes, c.dim)),
        ("head_b", (c.num_classes,)),
    ]
    return order


def count_params(config):
    return sum(int(np.prod(shape)) for _, shape in param_order(config))


def init_params(config, seed, dtype=np.float32):
    """Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) weights from splitmix64.

    Biases start at zero, LayerNorm at gamma=1 beta=0.  Same seed, same bits.
    """
    rng = SplitMix64(seed)
    params = {}
    for name, shape in param_order(config):
        if name.endswith("_g"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith(("_b", "_b1", "_b2")):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = shape[1]
            bound = np.sqrt(1.0 / fan_in)
            vals = rng.uniform(-bound, bound, int(np.prod(shape)))
            params[name] = vals.reshape(shape).astype(dtype)
    return params


def patchify(grid, config=MixerConfig()):
    """Split a (64,64) map into row-major 8x8 patches, each flattened.

    Accepts a leading batch axis; returns (..., tokens, patch_dim) float.
    """
    grid = np.asarray(grid)
    p = config.patch_size
    n = config.image_size // p
    if grid.shape[-2:] != (config.image_size, config.image_size):
        raise ValueError(f"expected {config.image_size}x{config.image_size} "
                         f"input, got {grid.shape[-2:]}")
    batch = grid.shape[:-2]
    g = grid.reshape(batch + (n, p, n, p))
    g = np.moveaxis(g, -2, -3)  # (..., n, n, p, p)
    return g.reshape(batch + (n * n, p * p)).astype(grid.dtype)


def gelu_parts(x):
    """Exact GELU x * Phi(x) plus the CDF Phi(x) reused by the backward pass."""
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    return x * cdf, cdf


def gelu(x):
    """Exact GELU: x * Phi(x) with the erf-based normal CDF."""
    return gelu_parts(x)[0]


def gelu_grad(x, cdf=None):
    phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    if cdf is None:
        cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    return cdf + x * phi


try:  # fused single-pass versions; the erf math is identical
    import numba

    @numba.vectorize(["float32(float32)", "float64(float64)"],
                     nopython=True, cache=True)
    def _gelu_cdf_nb(x):
        return 0.5 * (1.0 + math.erf(x / 1.4142135623730951))

    @numba.vectorize(["float32(float32, float32)", "float64(float64, float64)"],
                     nopython=True, cache=True)
    def _gelu_grad_nb(x, cdf):
        return cdf + x * math.exp(-0.5 * x * x) * 0.3989422804014327

    def gelu_parts(x):  # noqa: F811
        cdf = _gelu_cdf_nb(x)
        return x * cdf, cdf

    def gelu_grad(x, cdf=None):  # noqa: F811
        if cdf is None:
            cdf = _gelu_cdf_nb(x)
        return _gelu_grad_nb(x, cdf)
except ImportError:  # pragma: no cover
    pass


def _linear(x, w, b):
    """x @ w.T + b via one 2-D gemm regardless of leading axes."""
    lead = x.shape[:-1]
    out = x.reshape(-1, x.shape[-1]) @ w.T
    return (out + b).reshape(lead + (w.shape[0],))


def _linear_back(dy, x, w):
    """Returns (dx, dw, db) for y = x @ w.T + b."""
    f = dy.reshape(-1, dy.shape[-1])
    g = x.reshape(-1, x.shape[-1])
    dw = f.T @ g
    db = f.sum(axis=0)
    dx = (f @ w).reshape(x.shape)
    return dx, dw, db


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, xhat, inv


def _layernorm_backward(dy, xhat, inv, g):
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def forward(params, grid, config=MixerConfig(), dtype=np.float32):
    """Run the network on one map or a batch; returns (logits, tape).

    The tape holds every intermediate needed by `backward`.  `grid` may be a
    (64,64) map or an (N,64,64) batch; logits are shaped accordingly.
    """
    grid = np.asarray(grid, dtype=dtype)
    single = grid.ndim == 2
    if single:
        grid = grid[None]
    tokens = patchify(grid, config)
    p = {k: v.astype(dtype, copy=False) for k, v in params.items()}
    x = _linear(tokens, p["embed_w"], p["embed_b"])
    tape = {"tokens": tokens, "blocks": []}
    for b in range(config.depth):
        rec = {}
        h, xhat1, inv1 = _layernorm(x, p[f"blk{b}_ln1_g"], p[f"blk{b}_ln1_b"])
        ht = np.ascontiguousarray(np.swapaxes(h, -1, -2))  # (N, dim, tokens)
        u1 = _linear(ht, p[f"blk{b}_tok_w1"], p[f"blk{b}_tok_b1"])
        a1, cdf1 = gelu_parts(u1)
        u2 = _linear(a1, p[f"blk{b}_tok_w2"], p[f"blk{b}_tok_b2"])
        x = x + np.swapaxes(u2, -1, -2)
        rec.update(xhat1=xhat1, inv1=inv1, ht=ht, u1=u1, a1=a1, cdf1=cdf1)
        h2, xhat2, inv2 = _layernorm(x, p[f"blk{b}_ln2_g"], p[f"blk{b}_ln2_b"])
        v1 = _linear(h2, p[f"blk{b}_ch_w1"], p[f"blk{b}_ch_b1"])
        a2, cdf2 = gelu_parts(v1)
        v2 = _linear(a2, p[f"blk{b}_ch_w2"], p[f"blk{b}_ch_b2"])
        x = x + v2
        rec.update(xhat2=xhat2, inv2=inv2, h2=h2, v1=v1, a2=a2, cdf2=cdf2)
        tape["blocks"].append(rec)
    hN, xhatN, invN = _layernorm(x, p["ln_head_g"], p["ln_head_b"])
    pooled = hN.mean(axis=-2)
    logits = _linear(pooled, p["head_w"], p["head_b"])
    if not np.isfinite(logits).all():
        raise FloatingPointError("non-finite logits out of the head layer")
    tape.update(xhatN=xhatN, invN=invN, pooled=pooled, logits=logits,
                config=config, dtype=dtype)
    return (logits[0] if single else logits), tape


def _ln_infer(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + LN_EPS) * g + b


def forward_infer(params, grid, config=MixerConfig()):
    """Single-frame logits without the activation tape.

    Same arithmetic as `forward` on a (64,64) map, restructured for per-call
    latency: flat 2-D matmuls, no batch axis, no saved intermediates.
    Parameters must already be float32 (checkpoints load them that way).
    """
    p = params
    x = patchify(grid.astype(np.float32, copy=False), config) @ p["embed_w"].T
    x += p["embed_b"]
    for b in range(config.depth):
        h = _ln_infer(x, p[f"blk{b}_ln1_g"], p[f"blk{b}_ln1_b"]).T
        u = gelu(h @ p[f"blk{b}_tok_w1"].T + p[f"blk{b}_tok_b1"])
        x += (u @ p[f"blk{b}_tok_w2"].T + p[f"blk{b}_tok_b2"]).T
        h2 = _ln_infer(x, p[f"blk{b}_ln2_g"], p[f"blk{b}_ln2_b"])
        v = gelu(h2 @ p[f"blk{b}_ch_w1"].T + p[f"blk{b}_ch_b1"])
        x += v @ p[f"blk{b}_ch_w2"].T + p[f"blk{b}_ch_b2"]
    pooled = _ln_infer(x, p["ln_head_g"], p["ln_head_b"]).mean(axis=0)
    return pooled @ p["head_w"].T + p["head_b"]


def score_actions(logits):
    """Max-shifted softmax over the five logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise ValueError("logits must be finite")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def backward(params, tape, targets):
    """Gradients of mean cross-entropy loss over the batch w.r.t. all params.

    `targets` is an int or int array of action indices matching the batch.
    Returns a dict with the same keys and shapes as `params`.
    """
    config, dtype = tape["config"], tape["dtype"]
    logits = tape["logits"]
    targets = np.atleast_1d(np.asarray(targets))
    n = logits.shape[0]
    if targets.shape != (n,):
        raise ValueError("targets must match the batch size")
    if targets.min() < 0 or targets.max() >= config.num_classes:
        raise ValueError("target action index out of range")
    probs = score_actions(logits).astype(dtype)
    dlogits = probs.copy()
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n

    p = {k: v.astype(dtype, copy=False) for k, v in params.items()}
    grads = {}
    dpooled, grads["head_w"], grads["head_b"] = _linear_back(
        dlogits, tape["pooled"], p["head_w"])
    s = config.tokens
    dhN = np.broadcast_to(dpooled[:, None, :] / s,
                          tape["xhatN"].shape).copy()
    dx, dg, db = _layernorm_backward(dhN, tape["xhatN"], tape["invN"],
                                     p["ln_head_g"])
    grads["ln_head_g"], grads["ln_head_b"] = dg, db

    for b in reversed(range(config.depth)):
        rec = tape["blocks"][b]
        # channel-mixing branch
        da2, grads[f"blk{b}_ch_w2"], grads[f"blk{b}_ch_b2"] = _linear_back(
            dx, rec["a2"], p[f"blk{b}_ch_w2"])
        dv1 = da2 * gelu_grad(rec["v1"], rec["cdf2"])
        dh2, grads[f"blk{b}_ch_w1"], grads[f"blk{b}_ch_b1"] = _linear_back(
            dv1, rec["h2"], p[f"blk{b}_ch_w1"])
        dmid, dg, db = _layernorm_backward(dh2, rec["xhat2"], rec["inv2"],
                                           p[f"blk{b}_ln2_g"])
        grads[f"blk{b}_ln2_g"], grads[f"blk{b}_ln2_b"] = dg, db
        dx = dx + dmid
        # token-mixing branch
        du2 = np.ascontiguousarray(np.swapaxes(dx, -1, -2))
        da1, grads[f"blk{b}_tok_w2"], grads[f"blk{b}_tok_b2"] = _linear_back(
            du2, rec["a1"], p[f"blk{b}_tok_w2"])
        du1 = da1 * gelu_grad(rec["u1"], rec["cdf1"])
        dht, grads[f"blk{b}_tok_w1"], grads[f"blk{b}_tok_b1"] = _linear_back(
            du1, rec["ht"], p[f"blk{b}_tok_w1"])
        dh = np.swapaxes(dht, -1, -2)
        dres, dg, db = _layernorm_backward(dh, rec["xhat1"], rec["inv1"],
                                           p[f"blk{b}_ln1_g"])
        grads[f"blk{b}_ln1_g"], grads[f"blk{b}_ln1_b"] = dg, db
        dx = dx + dres

    _, grads["embed_w"], grads["embed_b"] = _linear_back(
        dx, tape["tokens"], p["embed_w"])
    return grads
