"""Image decoding, folder datasets, and the synthetic two-class corpus.

Images are plain numpy arrays shaped (H, W, C), float64 in [0, 1].
PNG goes through Pillow; binary PPM (P6) is read and written directly.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage

__all__ = [
    "IMAGE_EXTENSIONS",
    "validate_image",
    "decode_image",
    "decode_and_resize",
    "save_png",
    "read_ppm",
    "write_ppm",
    "resize_bilinear",
    "to_uint8",
    "from_uint8",
    "DatasetManifest",
    "scan_folder",
    "make_synthetic",
    "mean_threshold_accuracy",
]

IMAGE_EXTENSIONS = (".png", ".ppm")


def validate_image(img, name="image"):
    """Check the (H, W, C) float-in-[0,1] contract; returns the array."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ValueError(f"{name} must be (H, W) or (H, W, C), got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} has an empty spatial axis: shape {img.shape}")
    if img.shape[2] not in (1, 3):
        raise ValueError(f"{name} must have 1 or 3 channels, got {img.shape[2]}")
    if not np.issubdtype(img.dtype, np.floating):
        raise ValueError(f"{name} must be floating point, got dtype {img.dtype}")
    if not np.isfinite(img).all():
        raise ValueError(f"{name} contains non-finite values")
    lo, hi = float(img.min()), float(img.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1], got range [{lo}, {hi}]")
    return np.ascontiguousarray(img, dtype=np.float64)


def to_uint8(img):
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def from_uint8(arr):
    return arr.astype(np.float64) / 255.0


def decode_image(path, channels=None):
    """Decode a PNG or PPM file to (H, W, C) float64 in [0, 1].

    channels forces grayscale (1) or RGB (3) regardless of what the
    file stores; None keeps the stored channel count.
    """
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".ppm":
        img = read_ppm(path)
    elif ext == ".png":
        with _PILImage.open(path) as pil:
            mode = pil.mode
            if mode not in ("L", "RGB"):
                pil = pil.convert("RGB" if mode in ("RGBA", "P", "CMYK") else "L")
            arr = np.asarray(pil)
        img = from_uint8(arr if arr.ndim == 3 else arr[:, :, None])
    else:
        raise ValueError(f"unsupported image extension {ext!r} ({path})")
    if channels is not None and img.shape[2] != channels:
        if channels == 1:
            # ITU-R 601 luma
            img = (img @ np.array([[0.299], [0.587], [0.114]]))
        elif channels == 3:
            img = np.repeat(img, 3, axis=2)
        else:
            raise ValueError(f"cannot coerce to {channels} channels")
    return validate_image(np.clip(img, 0.0, 1.0), name=str(path))


def decode_and_resize(path, h, w, channels=None):
    img = decode_image(path, channels=channels)
    return resize_bilinear(img, h, w)


def save_png(path, img):
    img = validate_image(img, name=str(path))
    arr = to_uint8(img)
    if arr.shape[2] == 1:
        pil = _PILImage.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = _PILImage.fromarray(arr, mode="RGB")
    pil.save(Path(path), format="PNG")


def read_ppm(path):
    """Read a binary P6 PPM (maxval <= 255)."""
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PPM not supported (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    raster = np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=pos)
    if raster.size != h * w * 3:
        raise ValueError(f"{path}: truncated raster")
    return raster.reshape(h, w, 3).astype(np.float64) / maxval


def write_ppm(path, img):
    img = validate_image(img, name=str(path))
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    arr = to_uint8(img)
    header = f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())


def resize_bilinear(img, out_h, out_w):
    """Bilinear resample with half-pixel-aligned sample centers."""
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        out = img.copy()
        return out[:, :, 0] if squeeze else out
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.intp)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out[:, :, 0] if squeeze else out


@dataclass(frozen=True)
class DatasetManifest:
    """Deterministic listing of a class-per-subfolder image dataset.

    samples holds (relative posix path, label index) sorted by path;
    content_hash covers class names, paths and file bytes, so two roots
    hash equal iff they contain the same images under the same names.
    """

    root: str
    classes: tuple
    samples: tuple
    content_hash: str

    def labels(self):
        return np.array([label for _, label in self.samples], dtype=np.int64)

    @property
    def n_classes(self):
        return len(self.classes)

    def class_counts(self):
        return np.bincount(self.labels(), minlength=self.n_classes)


def scan_folder(root):
    """Index root/<class_name>/*.png|*.ppm into a DatasetManifest."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise ValueError(f"{root} has no class subdirectories")
    samples = []
    for label, cls in enumerate(classes):
        for path in sorted((root / cls).iterdir()):
            if path.suffix.lower() in IMAGE_EXTENSIONS and path.is_file():
                samples.append((f"{cls}/{path.name}", label))
    if not samples:
        raise ValueError(f"{root} contains no .png or .ppm files")
    digest = hashlib.sha256()
    digest.update(json.dumps(classes).encode())
    for rel, _ in samples:
        digest.update(rel.encode())
        digest.update((root / rel).read_bytes())
    return DatasetManifest(root=str(root), classes=tuple(classes),
                           samples=tuple(samples), content_hash=digest.hexdigest())


# -- synthetic two-class corpus ------------------------------------------

def _blob_image(rng, hw):
    h, w = hw
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w))
    for _ in range(rng.integers(1, 3)):
        cy = rng.uniform(0.25 * h, 0.75 * h)
        cx = rng.uniform(0.25 * w, 0.75 * w)
        s = rng.uniform(0.08, 0.16) * min(h, w)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        img += sign * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    return img


def _stripe_image(rng, hw):
    h, w = hw
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    theta = rng.uniform(0, np.pi)
    wavelength = rng.uniform(8.0, 14.0)
    phase = rng.uniform(0, 2 * np.pi)
    t = np.cos(theta) * xx + np.sin(theta) * yy
    return np.sin(2 * np.pi * t / wavelength + phase)


def _standardize(img, rng):
    std = img.std()
    if std > 1e-9:
        img = (img - img.mean()) / std
    mean = rng.normal(0.5, 0.03)
    img = img * 0.15 + mean
    img += rng.normal(0.0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def make_synthetic(n, hw=(32, 32), seed=0):
    """Generate n grayscale samples of two texture classes, "blob" and
    "stripe", matched in mean and contrast so per-image intensity
    statistics alone cannot separate them.

    Returns (images (n, H, W, 1) float64 in [0, 1], labels (n,) int64,
    class names).
    """
    rng = np.random.default_rng(seed)
    images = np.empty((n, hw[0], hw[1], 1), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        label = i % 2
        raw = _blob_image(rng, hw) if label == 0 else _stripe_image(rng, hw)
        images[i, :, :, 0] = _standardize(raw, rng)
        labels[i] = label
    return images, labels, ("blob", "stripe")


def mean_threshold_accuracy(images, labels):
    """Best accuracy any threshold on per-image mean intensity reaches.

    Guardrail for the synthetic corpus: this should stay well below the
    accuracy a trained model gets, otherwise the task is degenerate.
    """
    means = images.reshape(len(images), -1).mean(axis=1)
    order = np.argsort(means)
    sorted_labels = labels[order]
    n = len(labels)
    best = 0.0
    for cut in range(n + 1):
        below_one = np.count_nonzero(sorted_labels[:cut] == 1)
        above_one = np.count_nonzero(sorted_labels[cut:] == 1)
        acc_a = (cut - below_one + above_one) / n          # below -> 0
        acc_b = (below_one + (n - cut) - above_one) / n    # below -> 1
        best = max(best, acc_a, acc_b)
    return best
