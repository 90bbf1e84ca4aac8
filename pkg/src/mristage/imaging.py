"""Image decoding, resizing, normalization, augmentation, and batching.

The data path is float32 throughout. Images are resized to 244x244 RGB
(the pipeline's native input size, configurable), normalized to [-1, 1]
via x/127.5 - 1, and delivered in batches of at most 32 with one-hot
labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .manifest import SampleRecord

DEFAULT_INPUT_SIZE = 244
DEFAULT_BATCH_SIZE = 32


class ImageDecodeError(ValueError):
    """Raised when a file cannot be decoded as an image; carries the path."""

    def __init__(self, path, cause=None):
        super().__init__(f"cannot decode image: {path}" + (f" ({cause})" if cause else ""))
        self.path = Path(path)


@dataclass(frozen=True)
class Batch:
    images: np.ndarray  # B x H x W x 3 float32
    labels: np.ndarray  # B x K one-hot float32
    paths: tuple = ()   # optional provenance, parallel to rows


@dataclass(frozen=True)
class AugmentationPolicy:
    horizontal_flip: bool = True
    rotation_degrees: float = 10.0
    width_shift: float = 0.1
    height_shift: float = 0.1
    zoom: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.rotation_degrees < 0:
            raise ValueError("rotation_degrees must be >= 0")
        for name in ("width_shift", "height_shift", "zoom"):
            v = getattr(self, name)
            if not 0.0 <= v <= 0.5:
                raise ValueError(f"{name} must be in [0, 0.5], got {v}")

    @property
    def is_identity(self) -> bool:
        return (
            not self.horizontal_flip
            and self.rotation_degrees == 0
            and self.width_shift == 0
            and self.height_shift == 0
            and self.zoom == 0
        )


def decode_image(path: Path) -> np.ndarray:
    """Decode a JPEG/PNG file to an HxWx3 float32 array in [0, 255].

    Grayscale inputs are replicated across the three channels.
    """
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float32)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(path, exc) from exc
    return arr


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-centered sampling and edge clamping."""
    in_h, in_w = image.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return image.astype(np.float32, copy=True)

    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0, in_h - 1)
    xs = np.clip(xs, 0, in_w - 1)

    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]

    img = image.astype(np.float64)
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def decode_and_resize(path: Path, size: int = DEFAULT_INPUT_SIZE) -> np.ndarray:
    """Decode and resize to size x size x 3, values in [0, 255]."""
    return resize_bilinear(decode_image(path), size, size)


def normalize(image: np.ndarray) -> np.ndarray:
    """Map [0, 255] to [-1, 1]: x/127.5 - 1."""
    return (image.astype(np.float32) / np.float32(127.5)) - np.float32(1.0)


def denormalize(image: np.ndarray) -> np.ndarray:
    return (image.astype(np.float32) + np.float32(1.0)) * np.float32(127.5)


def one_hot(index: int, num_classes: int) -> np.ndarray:
    if not 0 <= index < num_classes:
        raise ValueError(f"label index {index} out of range for {num_classes} classes")
    vec = np.zeros(num_classes, dtype=np.float32)
    vec[index] = 1.0
    return vec


def flip_horizontal(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1].copy()


def _affine_sample(image: np.ndarray, inverse: np.ndarray) -> np.ndarray:
    """Sample with a 2x3 inverse map (output (y,x) -> input coords), bilinear,
    zero fill outside the input."""
    h, w = image.shape[:2]
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    src_y = inverse[0, 0] * yy + inverse[0, 1] * xx + inverse[0, 2]
    src_x = inverse[1, 0] * yy + inverse[1, 1] * xx + inverse[1, 2]

    y0 = np.floor(src_y).astype(int)
    x0 = np.floor(src_x).astype(int)
    wy = (src_y - y0)[..., None]
    wx = (src_x - x0)[..., None]

    img = image.astype(np.float64)

    def gather(yi, xi):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        out = np.zeros((h, w, image.shape[2]))
        out[valid] = img[yi[valid], xi[valid]]
        return out

    top = gather(y0, x0) * (1 - wx) + gather(y0, x0 + 1) * wx
    bot = gather(y0 + 1, x0) * (1 - wx) + gather(y0 + 1, x0 + 1) * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate counterclockwise about the image center, zero fill."""
    h, w = image.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(-degrees)
    c, s = np.cos(theta), np.sin(theta)
    # inverse rotation of output coords back into the input frame
    inv = np.array(
        [
            [c, -s, cy - c * cy + s * cx],
            [s, c, cx - s * cy - c * cx],
        ]
    )
    return _affine_sample(image, inv)


def shift_and_zoom(image: np.ndarray, dy: float, dx: float, scale: float) -> np.ndarray:
    """Translate by (dy, dx) pixels and zoom about the center, zero fill."""
    h, w = image.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    inv_scale = 1.0 / scale
    inv = np.array(
        [
            [inv_scale, 0.0, cy - inv_scale * cy - dy],
            [0.0, inv_scale, cx - inv_scale * cx - dx],
        ]
    )
    return _affine_sample(image, inv)


def augment(image: np.ndarray, policy: AugmentationPolicy, rng: np.random.Generator) -> np.ndarray:
    """Apply one random draw of the policy. Identity policy is bit-exact
    pass-through; otherwise deterministic given the generator state."""
    if policy.is_identity:
        return image.copy()
    out = image
    if policy.horizontal_flip and rng.random() < 0.5:
        out = flip_horizontal(out)
    if policy.rotation_degrees > 0:
        out = rotate(out, rng.uniform(-policy.rotation_degrees, policy.rotation_degrees))
    dy = dx = 0.0
    if policy.height_shift > 0:
        dy = rng.uniform(-policy.height_shift, policy.height_shift) * image.shape[0]
    if policy.width_shift > 0:
        dx = rng.uniform(-policy.width_shift, policy.width_shift) * image.shape[1]
    scale = 1.0
    if policy.zoom > 0:
        scale = rng.uniform(1.0 - policy.zoom, 1.0 + policy.zoom)
    if dy != 0.0 or dx != 0.0 or scale != 1.0:
        out = shift_and_zoom(out, dy, dx, scale)
    return out if out is not image else image.copy()


def make_batches(
    records: Sequence[SampleRecord],
    num_classes: int,
    batch_size: int = DEFAULT_BATCH_SIZE,
    shuffle: bool = False,
    seed: int = 0,
    epoch: int = 0,
    policy: AugmentationPolicy | None = None,
    input_size: int = DEFAULT_INPUT_SIZE,
) -> Iterator[Batch]:
    """Yield ceil(N/batch_size) batches of normalized images + one-hot labels.

    With shuffle=False the record order is preserved exactly; with
    shuffle=True the per-epoch permutation is derived from (seed, epoch).
    Augmentation runs pre-normalization, only when a policy is given.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if not records:
        raise ValueError("no samples")

    order = np.arange(len(records))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(records))
    aug_rng = np.random.default_rng([policy.seed, epoch]) if policy is not None else None

    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        images, labels, paths = [], [], []
        for i in idx:
            rec = records[i]
            img = decode_and_resize(rec.path, size=input_size)
            if policy is not None:
                img = augment(img, policy, aug_rng)
            images.append(normalize(img))
            labels.append(one_hot(rec.label.index, num_classes))
            paths.append(rec.path)
        yield Batch(
            images=np.stack(images),
            labels=np.stack(labels),
            paths=tuple(paths),
        )


def batches_from_arrays(
    images: np.ndarray,
    labels: np.ndarray,
    batch_size: int = DEFAULT_BATCH_SIZE,
    shuffle: bool = False,
    seed: int = 0,
    epoch: int = 0,
) -> Iterator[Batch]:
    """Batch pre-normalized in-memory arrays (synthetic-data path)."""
    if len(images) == 0:
        raise ValueError("no samples")
    if len(images) != len(labels):
        raise ValueError("images/labels length mismatch")
    order = np.arange(len(images))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(images))
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        yield Batch(images=images[idx], labels=labels[idx])
