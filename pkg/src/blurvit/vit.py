"""Compact vision transformer expressed with the autodiff tensors.

The model is a stack of pre-norm encoder blocks over patch tokens plus
a learned class token; classification reads the class position through
a final layer norm and a linear head.  Parameters live in a flat dict
keyed by dotted names so the optimizer and checkpoints can treat them
uniformly.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad

__all__ = [
    "ViTConfig",
    "param_shapes",
    "n_parameters",
    "init_params",
    "sinusoidal_positions",
    "patchify",
    "forward_logits",
]


@dataclass(frozen=True)
class ViTConfig:
    image_hw: tuple
    channels: int
    patch_size: int
    latent_dim: int
    heads: int
    n_blocks: int
    mlp_ratio: int
    n_classes: int
    pos_mode: str = "sinusoidal"
    precision: str = "float64"

    def __post_init__(self):
        h, w = self.image_hw
        p = self.patch_size
        if h % p or w % p:
            raise ValueError(f"patch size {p} must divide image size {h}x{w}")
        if self.latent_dim % self.heads:
            raise ValueError(f"latent dim {self.latent_dim} must be divisible "
                             f"by {self.heads} heads")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.pos_mode not in ("sinusoidal", "learned"):
            raise ValueError(f"unknown pos_mode {self.pos_mode!r}")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"unknown precision {self.precision!r}")

    @property
    def n_patches(self):
        h, w = self.image_hw
        return (h // self.patch_size) * (w // self.patch_size)

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    def to_dict(self):
        d = asdict(self)
        d["image_hw"] = list(self.image_hw)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["image_hw"] = tuple(d["image_hw"])
        return cls(**d)


def param_shapes(config):
    """Flat name -> shape table; the single source of parameter layout."""
    d = config.latent_dim
    hidden = config.mlp_ratio * d
    shapes = {
        "patch_embed": (config.patch_dim, d),
        "class_token": (1, d),
        "pos_embed": (config.n_patches + 1, d),
    }
    for i in range(config.n_blocks):
        pre = f"block{i}."
        shapes[pre + "ln1.gain"] = (d,)
        shapes[pre + "ln1.bias"] = (d,)
        shapes[pre + "wq"] = (d, d)
        shapes[pre + "wk"] = (d, d)
        shapes[pre + "wv"] = (d, d)
        shapes[pre + "wo"] = (d, d)
        shapes[pre + "ln2.gain"] = (d,)
        shapes[pre + "ln2.bias"] = (d,)
        shapes[pre + "mlp.w1"] = (d, hidden)
        shapes[pre + "mlp.b1"] = (hidden,)
        shapes[pre + "mlp.w2"] = (hidden, d)
        shapes[pre + "mlp.b2"] = (d,)
    shapes["final_ln.gain"] = (d,)
    shapes["final_ln.bias"] = (d,)
    shapes["head.weight"] = (d, config.n_classes)
    shapes["head.bias"] = (config.n_classes,)
    return shapes


def n_parameters(config):
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def _truncated_normal(rng, shape, std):
    """Normal(0, std) with draws beyond 2 std resampled."""
    out = rng.normal(0.0, std, size=shape)
    while True:
        bad = np.abs(out) > 2.0 * std
        if not bad.any():
            return out
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))


def sinusoidal_positions(n_positions, dim):
    """Fixed position table: sin(i / 10000^(j/D)) on even columns j,
    cos with the preceding even exponent on odd columns."""
    i = np.arange(n_positions, dtype=np.float64)[:, None]
    j = np.arange(dim)[None, :]
    expo = np.where(j % 2 == 0, j, j - 1) / dim
    angle = i / np.power(10000.0, expo)
    return np.where(j % 2 == 0, np.sin(angle), np.cos(angle))


def init_params(config, seed):
    """Fresh parameter dict: truncated normal weights (std 0.02), zero
    biases and class token, unit layer-norm gains."""
    rng = np.random.default_rng([seed, 0])
    dtype = config.dtype
    params = {}
    for name, shape in param_shapes(config).items():
        last = name.rsplit(".", 1)[-1]
        if name == "class_token" or last in ("bias", "b1", "b2"):
            data = np.zeros(shape)
        elif last == "gain":
            data = np.ones(shape)
        elif name == "pos_embed":
            if config.pos_mode == "sinusoidal":
                data = sinusoidal_positions(*shape)
            else:
                data = _truncated_normal(rng, shape, 0.02)
        else:
            data = _truncated_normal(rng, shape, 0.02)
        trainable = not (name == "pos_embed" and config.pos_mode == "sinusoidal")
        params[name] = ad.Tensor(data.astype(dtype), requires_grad=trainable)
    return params


def patchify(images, patch_size):
    """(B, H, W, C) -> (B, N, P*P*C), patches row major over the grid."""
    b, h, w, c = images.shape
    p = patch_size
    x = images.reshape(b, h // p, p, w // p, p, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(x.reshape(b, (h // p) * (w // p), p * p * c))


def _attention(x, wq, wk, wv, wo, n_heads, attn_sink):
    b, t, d = x.shape
    dk = d // n_heads

    def heads(m):
        return ad.transpose(ad.reshape(m, (b, t, n_heads, dk)), (0, 2, 1, 3))

    q = heads(ad.matmul(x, wq))
    k = heads(ad.matmul(x, wk))
    v = heads(ad.matmul(x, wv))
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
    attn = ad.softmax(scores, axis=-1)
    if attn_sink is not None:
        attn_sink.append(attn.data.copy())
    ctx = ad.matmul(attn, v)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
    return ad.matmul(ctx, wo)


def _block(z, params, pre, n_heads, attn_sink):
    normed = ad.layer_norm(z, params[pre + "ln1.gain"], params[pre + "ln1.bias"])
    z = ad.add(z, _attention(normed, params[pre + "wq"], params[pre + "wk"],
                             params[pre + "wv"], params[pre + "wo"],
                             n_heads, attn_sink))
    normed = ad.layer_norm(z, params[pre + "ln2.gain"], params[pre + "ln2.bias"])
    hidden = ad.gelu(ad.add(ad.matmul(normed, params[pre + "mlp.w1"]),
                            params[pre + "mlp.b1"]))
    mlp_out = ad.add(ad.matmul(hidden, params[pre + "mlp.w2"]),
                     params[pre + "mlp.b2"])
    return ad.add(z, mlp_out)


def forward_logits(params, config, images, attn_sink=None):
    """Run the model on a batch of images, returning the logits tensor.

    images is a plain (B, H, W, C) array.  If attn_sink is a list, each
    block appends its post-softmax attention array (B, heads, T, T).
    """
    images = np.asarray(images, dtype=config.dtype)
    if images.ndim != 4 or images.shape[1:3] != tuple(config.image_hw) \
            or images.shape[3] != config.channels:
        raise ValueError(f"expected batch shaped (B, {config.image_hw[0]}, "
                         f"{config.image_hw[1]}, {config.channels}), got {images.shape}")
    patches = ad.Tensor(patchify(images, config.patch_size))
    tokens = ad.matmul(patches, params["patch_embed"])
    b = images.shape[0]
    d = config.latent_dim
    cls = ad.broadcast_to(ad.reshape(params["class_token"], (1, 1, d)), (b, 1, d))
    z = ad.add(ad.concat([cls, tokens], axis=1), params["pos_embed"])
    for i in range(config.n_blocks):
        z = _block(z, params, f"block{i}.", config.heads, attn_sink)
    cls_out = ad.take_slice(z, (slice(None), 0))
    pooled = ad.layer_norm(cls_out, params["final_ln.gain"], params["final_ln.bias"])
    return ad.add(ad.matmul(pooled, params["head.weight"]), params["head.bias"])
