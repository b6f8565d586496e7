"""Self-checking binary checkpoints for model parameters.

Layout (all integers little endian):

    magic   b"BVT1"
    u64     header length in bytes
    bytes   JSON header (sorted keys): model config + run metadata
    u64     number of arrays
    per array:
        u16     name length, then UTF-8 name
        u8      ndim, then ndim x u64 dims
        bytes   float64 raw data, C order
    32 bytes  sha256 over everything above

Arrays are always stored as float64; float32 parameters upcast exactly
on save and are cast back per the header's precision on load, so a
save/load round trip is bitwise.
"""

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .vit import ViTConfig, param_shapes

__all__ = ["Checkpoint", "ChecksumError", "ConfigMismatchError",
           "save_checkpoint", "load_checkpoint"]

MAGIC = b"BVT1"


class ChecksumError(ValueError):
    """Checkpoint bytes are truncated or corrupted."""


class ConfigMismatchError(ValueError):
    """Checkpoint was written for a different model configuration."""


@dataclass
class Checkpoint:
    params: dict       # model parameters as tensors
    config: "ViTConfig"
    meta: dict
    extra: dict        # non-model arrays (optimizer state) as float64


def save_checkpoint(path, params, config, meta=None, extra=None):
    """Write params (dict of tensors or arrays) plus config and metadata.

    extra holds additional named arrays saved verbatim, e.g. optimizer
    moments; its names must not collide with parameter names.
    """
    arrays = dict(params)
    for name, arr in (extra or {}).items():
        if name in arrays:
            raise ValueError(f"extra array {name!r} collides with a parameter")
        arrays[name] = arr
    header = {"config": config.to_dict(), "meta": dict(meta or {})}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<Q", len(header_bytes)), header_bytes,
              struct.pack("<Q", len(arrays))]
    for name in sorted(arrays):
        value = arrays[name]
        arr = np.asarray(value.data if isinstance(value, ad.Tensor) else value,
                         dtype=np.float64)
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(chunks)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


class _Cursor:
    def __init__(self, buf, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def read(self, n):
        if self.pos + n > len(self.buf):
            raise ChecksumError(f"{self.path}: truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))


def load_checkpoint(path, expect_config=None):
    """Read a checkpoint back into a Checkpoint record.

    Verifies the sha256 trailer before trusting any field.  If
    expect_config is given, the stored config must match it exactly.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 32:
        raise ChecksumError(f"{path}: file too short to be a checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: sha256 mismatch, checkpoint is corrupted")
    cur = _Cursor(body, path)
    if cur.read(4) != MAGIC:
        raise ChecksumError(f"{path}: bad magic, not a checkpoint file")
    (header_len,) = cur.unpack("<Q")
    header = json.loads(cur.read(header_len).decode("utf-8"))
    config = ViTConfig.from_dict(header["config"])
    if expect_config is not None and config != expect_config:
        raise ConfigMismatchError(
            f"{path}: stored config {config.to_dict()} does not match "
            f"expected {expect_config.to_dict()}")
    dtype = config.dtype
    (n_arrays,) = cur.unpack("<Q")
    shapes = param_shapes(config)
    params = {}
    extra = {}
    for _ in range(n_arrays):
        (name_len,) = cur.unpack("<H")
        name = cur.read(name_len).decode("utf-8")
        (ndim,) = cur.unpack("<B")
        shape = cur.unpack(f"<{ndim}Q")
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(cur.read(count * 8), dtype="<f8").reshape(shape)
        if name in shapes:
            if tuple(shape) != shapes[name]:
                raise ConfigMismatchError(f"{path}: array {name} has shape "
                                          f"{tuple(shape)}, config implies {shapes[name]}")
            trainable = not (name == "pos_embed" and config.pos_mode == "sinusoidal")
            params[name] = ad.Tensor(data.astype(dtype), requires_grad=trainable)
        else:
            extra[name] = data.copy()
    missing = sorted(set(shapes) - set(params))
    if missing:
        raise ConfigMismatchError(f"{path}: checkpoint lacks parameters {missing}")
    return Checkpoint(params=params, config=config, meta=header["meta"], extra=extra)
