"""Training-set expansion: kernel filtering followed by random cropping.

A small pool of labeled images is cycled into an arbitrarily large set of
fixed-size crops. Each derived item applies one kernel from a configured
bank (the identity is always a valid member) and then a uniformly random
crop; boxes are translated into crop coordinates, clipped, and dropped when
too little of the original area survives. Every derived item records the
``source_id`` of its parent so train/test splits can stay source-disjoint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import BBox, GrayImage, ValidationError

log = logging.getLogger(__name__)

DEFAULT_KEEP_FRACTION = 0.25


@dataclass(frozen=True)
class Kernel:
    """A square filter kernel with odd size.

    Smoothing kernels (the default) must have weights summing to 1 so the
    augmentation is label-preserving on average intensity.
    """

    weights: np.ndarray
    smoothing: bool = True

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError(f"kernel must be square, got shape {w.shape}")
        if w.shape[0] % 2 != 1:
            raise ValidationError(f"kernel size must be odd, got {w.shape[0]}")
        if not np.all(np.isfinite(w)):
            raise ValidationError("kernel weights must be finite")
        if self.smoothing and abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError(f"smoothing kernel weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @staticmethod
    def identity() -> "Kernel":
        return Kernel(np.array([[1.0]]))

    @staticmethod
    def box(size: int = 3) -> "Kernel":
        return Kernel(np.full((size, size), 1.0 / (size * size)))

    @staticmethod
    def gaussian(size: int = 3, sigma: float = 1.0) -> "Kernel":
        half = size // 2
        ax = np.arange(-half, half + 1, dtype=np.float64)
        g = np.exp(-0.5 * (ax / sigma) ** 2)
        k = np.outer(g, g)
        return Kernel(k / k.sum())


def default_kernel_bank() -> list[Kernel]:
    return [Kernel.identity(), Kernel.gaussian(3, 1.0), Kernel.box(3)]


@dataclass(frozen=True)
class LabeledImage:
    """An image with its ground-truth boxes and the id of its origin."""

    image: GrayImage
    boxes: list[BBox]
    source_id: str

    def __post_init__(self) -> None:
        w, h = self.image.width, self.image.height
        for b in self.boxes:
            if b.x_min < 0 or b.y_min < 0 or b.x_max > w or b.y_max > h:
                raise ValidationError(f"box {b} exceeds image bounds {w}x{h}")


def apply_kernel(image: GrayImage, kernel: Kernel) -> GrayImage:
    """2-D cross-correlation with replicate-edge padding, same output size."""
    k = kernel.size
    half = k // 2
    px = np.pad(image.pixels, half, mode="edge")
    h, w = image.pixels.shape
    out = np.zeros((h, w), dtype=np.float64)
    for dy in range(k):
        for dx in range(k):
            wgt = kernel.weights[dy, dx]
            if wgt != 0.0:
                out += wgt * px[dy:dy + h, dx:dx + w]
    return GrayImage(out)


def random_crop(li: LabeledImage, crop: int, rng_seed: int,
                keep_fraction: float = DEFAULT_KEEP_FRACTION) -> LabeledImage:
    """Crop a random ``crop`` x ``crop`` window with box bookkeeping.

    The top-left offset is uniform over all valid positions (x drawn before
    y). Boxes are shifted into crop coordinates and clipped; a clipped box
    survives iff clipped area / original area >= keep_fraction.
    """
    w, h = li.image.width, li.image.height
    if crop <= 0:
        raise ValidationError("crop size must be positive")
    if crop > w or crop > h:
        raise ValidationError(f"crop {crop} larger than image {w}x{h}")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    x_off = int(rng.integers(0, w - crop + 1))
    y_off = int(rng.integers(0, h - crop + 1))

    kept: list[BBox] = []
    for box in li.boxes:
        moved = box.shifted(-x_off, -y_off)
        clipped = moved.clipped(0.0, 0.0, float(crop), float(crop))
        if clipped is None:
            continue
        if clipped.area / box.area >= keep_fraction:
            kept.append(clipped)
    window = li.image.pixels[y_off:y_off + crop, x_off:x_off + crop]
    return LabeledImage(GrayImage(window.copy()), kept, li.source_id)


@dataclass(frozen=True)
class AugmentConfig:
    crop: int = 64
    keep_fraction: float = DEFAULT_KEEP_FRACTION
    kernel_bank: list[Kernel] = field(default_factory=default_kernel_bank)

    def __post_init__(self) -> None:
        if self.crop <= 0:
            raise ValidationError("crop size must be positive")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValidationError("keep_fraction must be in (0, 1]")
        if not self.kernel_bank:
            raise ValidationError("kernel bank must not be empty")


def build_augmented_set(sources: list[LabeledImage], target_count: int,
                        cfg: AugmentConfig, seed: int) -> list[LabeledImage]:
    """Expand ``sources`` to exactly ``target_count`` filtered random crops.

    Sources are cycled in order; item i derives its own RNG from (seed, i)
    so outputs are independent of any batching or parallel evaluation order.
    Sources smaller than the crop are skipped with a warning.
    """
    if not sources:
        raise ValidationError("no source images")
    eligible = [s for s in sources if s.image.width >= cfg.crop and s.image.height >= cfg.crop]
    skipped = len(sources) - len(eligible)
    if skipped:
        log.warning("skipping %d source image(s) smaller than crop %d", skipped, cfg.crop)
    if not eligible:
        raise ValidationError(f"every source image is smaller than crop {cfg.crop}")
    if target_count < len(eligible):
        raise ValidationError("target_count must be at least the usable source count")

    out: list[LabeledImage] = []
    for i in range(target_count):
        src = eligible[i % len(eligible)]
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(i,))
        kernel_seed, crop_seed = ss.generate_state(2)
        k_rng = np.random.Generator(np.random.PCG64(int(kernel_seed)))
        kernel = cfg.kernel_bank[int(k_rng.integers(0, len(cfg.kernel_bank)))]
        filtered = LabeledImage(apply_kernel(src.image, kernel), src.boxes, src.source_id)
        out.append(random_crop(filtered, cfg.crop, int(crop_seed), cfg.keep_fraction))
    return out
