"""Gaussian blur schedule, kernels, and the curriculum partition.

The curriculum works in integer levels b = 0..k-1.  Level b blurs with a
Gaussian of sigma = 0.3*b + 0.5 over a window of radius y = 2*b + 1
(window side 2*y + 1 taps).  Training consumes groups most-blurred
first, i.e. in descending b.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "BlurLevel",
    "BlurSchedule",
    "GaussianKernel",
    "CurriculumPartition",
    "CurriculumDataset",
    "make_schedule",
    "gaussian_weight",
    "gaussian_kernel",
    "kernel_for_level",
    "reflect_index",
    "blur_image",
    "blur_strip",
    "partition",
    "apply_curriculum",
    "write_curriculum",
    "load_curriculum",
    "CURRICULUM_MANIFEST",
]

CURRICULUM_MANIFEST = "manifest.json"


@dataclass(frozen=True)
class BlurLevel:
    """One rung of the schedule: level index b, window radius y, sigma."""

    b: int
    y: int
    sigma: float

    @classmethod
    def from_index(cls, b):
        return cls(b=b, y=2 * b + 1, sigma=b * 0.3 + 0.5)


@dataclass(frozen=True)
class BlurSchedule:
    k: int
    levels: tuple

    def __post_init__(self):
        if self.k != len(self.levels):
            raise ValueError(f"schedule has {len(self.levels)} levels, expected k={self.k}")

    @property
    def group_order(self):
        """Consumption order of blur groups: most blurred first."""
        return tuple(range(self.k - 1, -1, -1))


def make_schedule(k):
    """Build the k-level linear schedule (y = 2b+1, sigma = 0.3b+0.5)."""
    if k < 1:
        raise ValueError(f"need at least one blur level, got k={k}")
    return BlurSchedule(k=k, levels=tuple(BlurLevel.from_index(b) for b in range(k)))


@dataclass(frozen=True)
class GaussianKernel:
    """Discrete 2-d Gaussian, normalized so the taps sum to 1."""

    sigma: float
    radius: int
    weights: np.ndarray


def gaussian_weight(i, j, sigma):
    """Raw (unnormalized) Gaussian tap exp(-(i^2+j^2)/2s^2) / (2*pi*s^2)."""
    return math.exp(-(i * i + j * j) / (2.0 * sigma * sigma)) / (2.0 * math.pi * sigma * sigma)


def gaussian_kernel(sigma, radius):
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    coords = np.arange(-radius, radius + 1, dtype=np.float64)
    ii, jj = np.meshgrid(coords, coords, indexing="ij")
    raw = np.exp(-(ii * ii + jj * jj) / (2.0 * sigma * sigma)) / (2.0 * math.pi * sigma * sigma)
    return GaussianKernel(sigma=float(sigma), radius=int(radius), weights=raw / raw.sum())


def kernel_for_level(level):
    """Kernel for one schedule level; the level's y is the window radius."""
    return gaussian_kernel(level.sigma, level.y)


def reflect_index(i, n):
    """Mirror an out-of-range index back into [0, n), edge pixel included.

    Extension pattern around the left edge is ..., img[1], img[0] | img[0],
    img[1], ...; folds repeatedly when the overshoot exceeds n.
    """
    if n == 1:
        return 0
    i %= 2 * n
    if i >= n:
        i = 2 * n - 1 - i
    return i


def _reflect_indices(n, radius):
    return np.array([reflect_index(i, n) for i in range(-radius, n + radius)], dtype=np.intp)


def blur_image(img, kernel):
    """Convolve every channel with the kernel under reflected borders.

    Output shape equals input shape.  Taps accumulate in row-major kernel
    order starting from zero, so the result is bitwise identical to a
    naive per-pixel double loop over the same padded image.
    """
    img = np.asarray(img)
    if img.size == 0:
        raise ValueError("cannot blur an empty image")
    if img.ndim not in (2, 3):
        raise ValueError(f"expected (H, W) or (H, W, C) image, got shape {img.shape}")
    h, w = img.shape[:2]
    r = kernel.radius
    rows = _reflect_indices(h, r)
    cols = _reflect_indices(w, r)
    padded = img[rows][:, cols]
    out = np.zeros_like(img, dtype=np.result_type(img.dtype, np.float64))
    weights = kernel.weights
    for i in range(2 * r + 1):
        for j in range(2 * r + 1):
            out += weights[i, j] * padded[i:i + h, j:j + w]
    return out


def blur_strip(img, schedule, gap=2):
    """Horizontal contact sheet: the image at every blur level, level 0
    (sharpest) on the left, separated by white gaps."""
    tiles = [np.clip(blur_image(img, kernel_for_level(lv)), 0.0, 1.0)
             for lv in schedule.levels]
    h, w = img.shape[:2]
    strip = np.ones((h, len(tiles) * w + gap * (len(tiles) - 1), img.shape[2]))
    for i, tile in enumerate(tiles):
        strip[:, i * (w + gap):i * (w + gap) + w] = tile
    return strip


@dataclass(frozen=True)
class CurriculumPartition:
    """Disjoint assignment of sample indices to the k blur groups."""

    assignment: np.ndarray
    group_order: tuple

    @property
    def k(self):
        return len(self.group_order)

    def group_indices(self, g):
        return np.flatnonzero(self.assignment == g)

    def group_sizes(self):
        return np.bincount(self.assignment, minlength=self.k)


def partition(n_samples, k, seed):
    """Split n_samples indices into k near-equal disjoint groups.

    Seeded shuffle; the first (n mod k) groups receive one extra sample.
    Group consumption order is descending (most blurred first).
    """
    if k < 1:
        raise ValueError(f"need at least one group, got k={k}")
    if k > n_samples:
        raise ValueError(f"cannot split {n_samples} samples into {k} groups")
    perm = np.random.default_rng(seed).permutation(n_samples)
    base, extra = divmod(n_samples, k)
    assignment = np.empty(n_samples, dtype=np.int64)
    start = 0
    for g in range(k):
        size = base + (1 if g < extra else 0)
        assignment[perm[start:start + size]] = g
        start += size
    return CurriculumPartition(assignment=assignment,
                               group_order=tuple(range(k - 1, -1, -1)))


class CurriculumDataset:
    """Blurred-once samples plus the group bookkeeping training needs.

    `images` is (n, H, W, C) float in [0, 1] with the per-group blur
    already applied; iteration order within an epoch comes from
    `epoch_order`, which yields groups most-blurred-first and shuffles
    inside each group with an (seed, epoch, group)-derived stream.
    """

    def __init__(self, images, labels, groups, schedule, classes=None):
        self.images = np.asarray(images)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.groups = np.asarray(groups, dtype=np.int64)
        self.schedule = schedule
        self.classes = tuple(classes) if classes is not None else None
        n = len(self.images)
        if len(self.labels) != n or len(self.groups) != n:
            raise ValueError("images, labels and groups must have equal length")

    def __len__(self):
        return len(self.images)

    @property
    def n_classes(self):
        if self.classes is not None:
            return len(self.classes)
        return int(self.labels.max()) + 1

    def group_indices(self, b):
        return np.flatnonzero(self.groups == b)

    def sigma_of(self, index):
        return self.schedule.levels[self.groups[index]].sigma

    def group_epoch_order(self, seed, epoch, b):
        """Shuffled indices of group b for one epoch.

        The stream is derived from (seed, epoch, b) alone, so resuming
        at an epoch boundary replays the same order.
        """
        rng = np.random.default_rng([seed, 1, epoch, b])
        return rng.permutation(self.group_indices(b))

    def epoch_order(self, seed, epoch):
        """Sample indices for one epoch: groups descending, shuffled within."""
        return np.concatenate([self.group_epoch_order(seed, epoch, b)
                               for b in self.schedule.group_order])


def apply_curriculum(images, labels, schedule, part):
    """Blur each sample once at its group's level and package the result."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) != len(part.assignment):
        raise ValueError(f"partition covers {len(part.assignment)} samples, "
                         f"dataset has {len(images)}")
    if schedule.k != part.k:
        raise ValueError(f"schedule has {schedule.k} levels, partition has {part.k} groups")
    kernels = [kernel_for_level(lv) for lv in schedule.levels]
    blurred = np.empty_like(images)
    for i in range(len(images)):
        blurred[i] = blur_image(images[i], kernels[part.assignment[i]])
    return CurriculumDataset(blurred, labels, part.assignment, schedule)


# -- on-disk curriculum layout -------------------------------------------
#
# out_dir/
#   group_<b>/<index>.png      blurred samples, 8-bit PNG
#   manifest.json              k, levels, seed, classes, per-sample rows
#
# The manifest is the single source of truth for training order; group
# directories are never globbed.

def write_curriculum(dataset, root, schedule, part, out_dir, image_hw, seed):
    """Blur a folder dataset into the on-disk curriculum layout.

    `dataset` is a data.DatasetManifest; every sample is decoded, resized
    to `image_hw`, blurred at its group's level, and stored as 8-bit PNG.
    Returns the parsed manifest dict.
    """
    from . import data  # local import: data also imports nothing from here

    root = Path(root)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h, w = image_hw
    kernels = [kernel_for_level(lv) for lv in schedule.levels]
    for b in range(schedule.k):
        (out_dir / f"group_{b}").mkdir(exist_ok=True)

    channels = None
    samples = []
    for i, (rel_path, label) in enumerate(dataset.samples):
        img = data.decode_and_resize(root / rel_path, h, w)
        if channels is None:
            channels = img.shape[2]
        elif img.shape[2] != channels:
            img = data.decode_and_resize(root / rel_path, h, w, channels=channels)
        b = int(part.assignment[i])
        blurred = np.clip(blur_image(img, kernels[b]), 0.0, 1.0)
        out_rel = f"group_{b}/{i:05d}.png"
        data.save_png(out_dir / out_rel, blurred)
        samples.append({"group": b, "path": out_rel, "source": rel_path, "label": int(label)})

    manifest = {
        "format": "blurvit-curriculum/1",
        "k": schedule.k,
        "seed": seed,
        "image_size": [h, w],
        "channels": channels,
        "classes": list(dataset.classes),
        "levels": [{"b": lv.b, "y": lv.y, "sigma": lv.sigma} for lv in schedule.levels],
        "source_root": str(root),
        "source_hash": dataset.content_hash,
        "samples": samples,
    }
    body = json.dumps(manifest, sort_keys=True, indent=1)
    (out_dir / CURRICULUM_MANIFEST).write_text(body + "\n")
    return manifest


def read_curriculum_manifest(curriculum_dir):
    path = Path(curriculum_dir) / CURRICULUM_MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no {CURRICULUM_MANIFEST} in {curriculum_dir}; "
                                "run `blurvit prepare` first")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != "blurvit-curriculum/1":
        raise ValueError(f"{path} is not a curriculum manifest")
    return manifest


def load_curriculum(curriculum_dir):
    """Read a prepared curriculum directory back into memory."""
    from . import data

    curriculum_dir = Path(curriculum_dir)
    manifest = read_curriculum_manifest(curriculum_dir)
    schedule = make_schedule(manifest["k"])
    images = []
    labels = []
    groups = []
    for row in manifest["samples"]:
        images.append(data.decode_image(curriculum_dir / row["path"],
                                        channels=manifest["channels"]))
        labels.append(row["label"])
        groups.append(row["group"])
    return CurriculumDataset(np.stack(images), labels, groups, schedule,
                             classes=manifest["classes"])
