"""Datasets, batching and sample-grid output.

Images are float32 NHWC arrays with values in [-1, 1].
"""
import math
import os
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, FormatError
from .tensor import Rng

CIFAR_SIDE = 32
CIFAR_RECORD = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE

SHAPE_CATEGORIES = ("rectangle", "disc", "cross")
SYNTH_KINDS = ("shapes", "two-gaussians-image")
GUTTER = 2


@dataclass
class Dataset:
    images: np.ndarray
    name: str
    labels: np.ndarray = None

    def __len__(self):
        return len(self.images)

    @property
    def side(self):
        return self.images.shape[1]

    def batches(self, batch_size, seed):
        return BatchIterator(len(self), batch_size, seed)


class BatchIterator:
    """Endless stream of index batches; each epoch is a fresh seeded permutation.

    A batch that crosses an epoch boundary finishes the old permutation and
    continues with the next, so every index appears exactly once per epoch.
    """

    def __init__(self, n, batch_size, seed):
        if batch_size < 1:
            raise ConfigError(f"batch size must be positive, got {batch_size}")
        self.n = n
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = 0
        self.pos = 0
        self._perm = self._permutation(0)

    def _permutation(self, epoch):
        return Rng(self.seed).spawn(epoch).permutation(self.n)

    def __iter__(self):
        return self

    def __next__(self):
        out = []
        need = self.batch_size
        while need:
            take = self._perm[self.pos : self.pos + need]
            out.append(take)
            need -= len(take)
            self.pos += len(take)
            if self.pos == self.n:
                self.epoch += 1
                self.pos = 0
                self._perm = self._permutation(self.epoch)
        return np.concatenate(out)

    def get_state(self):
        return {"epoch": self.epoch, "pos": self.pos}

    def set_state(self, state):
        self.epoch, self.pos = int(state["epoch"]), int(state["pos"])
        self._perm = self._permutation(self.epoch)


def load_cifar10_binary(paths):
    """Read CIFAR-10 binary batches; labels are parsed for framing then dropped.

    Each record is one label byte followed by 3072 bytes of planar R, G, B
    32x32 pixels.
    """
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    chunks = []
    for path in paths:
        with open(path, "rb") as fh:
            raw = fh.read()
        whole = len(raw) - len(raw) % CIFAR_RECORD
        if whole != len(raw) or not raw:
            raise FormatError(
                f"{path}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD}; "
                f"incomplete record at byte offset {whole}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        pixels = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).transpose(0, 2, 3, 1)
        chunks.append(pixels)
    images = np.concatenate(chunks).astype(np.float32) / np.float32(127.5) - np.float32(1.0)
    return Dataset(images, "cifar10")


def _shape_sizes(side):
    if side == 16:
        return (7, 9, 11)
    if side == 32:
        return (13, 17, 21)
    raise ConfigError(f"synthetic image side must be 16 or 32, got {side}")


def _cross_thickness(extent):
    return max(1, extent // 4) | 1


def _render_shape(img, category, extent, top, left, color, rng, sizes):
    if category == 0:
        h, w = extent, sizes[rng.integers(len(sizes))]
        img[top : top + h, left : left + w] = color
        return
    yy, xx = np.mgrid[0:extent, 0:extent]
    c = (extent - 1) / 2
    if category == 1:
        mask = (yy - c) ** 2 + (xx - c) ** 2 <= (c + 0.5) ** 2
    else:
        half = _cross_thickness(extent) // 2
        mask = (np.abs(yy - c) <= half) | (np.abs(xx - c) <= half)
    patch = img[top : top + extent, left : left + extent]
    patch[mask] = color


def synth_dataset(kind, n, side, rng):
    """Deterministic synthetic image sets.

    ``shapes``: one filled rectangle, disc or cross (category drawn uniformly)
    of a random light colour on a black background. ``two-gaussians-image``:
    each image is a flat field at -0.5 or +0.5 plus pixel noise of scale 0.25,
    clipped to [-1, 1]. ``labels`` carry the category index.
    """
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown synthetic dataset {kind!r}; choose from {SYNTH_KINDS}")
    sizes = _shape_sizes(side)
    if kind == "two-gaussians-image":
        labels = rng.integers(0, 2, size=n)
        base = np.where(labels == 1, 0.5, -0.5)[:, None, None, None]
        images = np.clip(base + 0.25 * rng.normal((n, side, side, 3)), -1.0, 1.0)
        return Dataset(images.astype(np.float32), kind, labels)

    images = np.full((n, side, side, 3), -1.0, dtype=np.float32)
    labels = rng.integers(0, 3, size=n)
    for i in range(n):
        extent = sizes[rng.integers(len(sizes))]
        top, left = rng.integers(0, side - extent + 1, size=2)
        color = rng.uniform(3)
        color[rng.integers(3)] = 0.6 + 0.4 * rng.uniform(())
        _render_shape(images[i], labels[i], extent, top, left, color, rng, sizes)
    return Dataset(images, kind, labels)


def detect_shape(image, threshold=0.0, clean=0.95):
    """Rule-based shape category of one image, or ``None`` when nothing matches.

    Foreground is any pixel whose brightest channel exceeds ``threshold``.
    The image must look like a drawing: at least ``clean`` of the background
    pixels dark (below -0.5), at least ``clean`` of the foreground bright
    (above 0.3), and a bounding box between 0.3 and 0.75 of the image side.
    The fill ratio of the box then separates the classes: about 1 for
    rectangles, about pi/4 for discs, at most ~0.6 for crosses (which must
    also have a filled centre and empty box corners).
    """
    brightest = np.asarray(image).max(axis=-1)
    side = brightest.shape[0]
    mask = brightest > threshold
    if mask.sum() < 5 or mask.all():
        return None
    if np.mean(brightest[~mask] < -0.5) < clean or np.mean(brightest[mask] > 0.3) < clean:
        return None
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    box = mask[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    bh, bw = box.shape
    if not (0.3 * side <= min(bh, bw) and max(bh, bw) <= 0.75 * side):
        return None
    fill = box.mean()
    if fill >= 0.93:
        return "rectangle"
    if 0.68 <= fill < 0.93 and 0.75 <= bh / bw <= 1.34:
        return "disc"
    corners = box[0, 0] or box[0, -1] or box[-1, 0] or box[-1, -1]
    if 0.2 <= fill < 0.66 and box[bh // 2, bw // 2] and not corners:
        return "cross"
    return None


def quantize(images):
    """Map [-1, 1] to uint8 with round-half-up; out-of-range values clip."""
    v = (np.asarray(images, dtype=np.float64) + 1.0) * 127.5
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)


def grid_size(k, cols, side):
    rows = math.ceil(k / cols)
    return cols * side + (cols - 1) * GUTTER, rows * side + (rows - 1) * GUTTER


def write_sample_grid(images, cols, path):
    """Tile images row-major into a binary P6 pixmap with black 2-pixel gutters."""
    images = np.asarray(getattr(images, "data", images))
    if images.ndim != 4 or len(images) < 1:
        raise ValueError(f"expected (K, M, M, 3) images with K >= 1, got shape {images.shape}")
    k, side = len(images), images.shape[1]
    cols = max(1, min(cols, k))
    width, height = grid_size(k, cols, side)
    canvas = np.zeros((height, width, 3), dtype=np.uint8)
    pixels = quantize(images)
    for i in range(k):
        r, c = divmod(i, cols)
        y, x = r * (side + GUTTER), c * (side + GUTTER)
        canvas[y : y + side, x : x + side] = pixels[i]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(canvas.tobytes())
    return path


def read_ppm(path):
    """Read a binary P6 pixmap written by :func:`write_sample_grid`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P6":
        raise FormatError(f"{path}: not a binary P6 pixmap")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit pixmaps are supported")
    payload = raw[len(raw) - width * height * 3 :]
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)


def make_dataset(spec, side=32, n=10000, seed=0):
    """Resolve a dataset spec string: a synthetic kind, or ``cifar10:<path>[,<path>...]``."""
    if spec.startswith("cifar10:"):
        return load_cifar10_binary(spec.split(":", 1)[1].split(","))
    return synth_dataset(spec, n, side, Rng(seed))
