"""Synthetic capacitor-section phantoms with known defect ground truth.

A phantom is a density raster holding a regular grid of filled disks
("welding spots") inside a margin. Each spot independently receives an
internal void (a concentric disk knocked back to background density) with a
configured probability; the returned ground-truth boxes bound exactly the
voided spots. Everything is a pure function of the spec, including its seed,
so identical specs produce bit-identical rasters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BBox, GrayImage, ValidationError

VOIDING_SPOT_CLASS = 0


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry, densities and randomness of one synthetic part."""

    width: int = 160
    height: int = 160
    case_margin: int = 20
    spot_rows: int = 3
    spot_cols: int = 3
    spot_radius: float = 11.0
    void_rate: float = 0.5
    void_radius_range: tuple[float, float] = (4.0, 8.0)
    background_density: float = 0.25
    spot_density: float = 0.85
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("width and height must be positive")
        if self.spot_rows < 1 or self.spot_cols < 1:
            raise ValidationError("spot grid must have at least one row and column")
        if not 0.0 <= self.void_rate <= 1.0:
            raise ValidationError(f"void_rate {self.void_rate} outside [0, 1]")
        vmin, vmax = self.void_radius_range
        if not 0.0 < vmin <= vmax:
            raise ValidationError("void_radius_range must satisfy 0 < min <= max")
        if vmax >= self.spot_radius:
            raise ValidationError("void radius must stay below spot_radius")
        if self.noise_sigma < 0.0:
            raise ValidationError("noise_sigma must be >= 0")
        inner_w = self.width - 2 * self.case_margin
        inner_h = self.height - 2 * self.case_margin
        if (self.case_margin < 0
                or inner_w < self.spot_cols * 2 * self.spot_radius
                or inner_h < self.spot_rows * 2 * self.spot_radius):
            raise ValidationError("spot grid does not fit inside the case margins")
        if self.seed < 0 or self.seed > 0xFFFFFFFFFFFFFFFF:
            raise ValidationError("seed must fit in 64 unsigned bits")


def spot_centers(spec: PhantomSpec) -> list[tuple[float, float]]:
    """Spot centers in (x, y) pixel coordinates, row-major over the grid."""
    inner_w = spec.width - 2 * spec.case_margin
    inner_h = spec.height - 2 * spec.case_margin
    centers = []
    for r in range(spec.spot_rows):
        cy = spec.case_margin + (r + 0.5) * inner_h / spec.spot_rows
        for c in range(spec.spot_cols):
            cx = spec.case_margin + (c + 0.5) * inner_w / spec.spot_cols
            centers.append((cx, cy))
    return centers


def _disk_mask(width: int, height: int, cx: float, cy: float, radius: float) -> np.ndarray:
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    return (xs - cx) ** 2 + (ys - cy) ** 2 <= radius ** 2


def generate_phantom(spec: PhantomSpec) -> tuple[GrayImage, list[BBox]]:
    """Render the phantom and return it with tight boxes on the voided spots.

    Per spot (row-major order) a Bernoulli draw decides whether it is voided;
    a voided spot gets an inner disk at background density with radius drawn
    uniformly from ``void_radius_range``. The ground-truth box bounds the
    whole welding spot, not just the void, because defect labels mark the
    defective spot. Gaussian pixel noise is added after the geometry and
    clipped to the clean image's own range so the ground truth is unaffected.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    px = np.full((spec.height, spec.width), spec.background_density, dtype=np.float64)

    boxes: list[BBox] = []
    for cx, cy in spot_centers(spec):
        px[_disk_mask(spec.width, spec.height, cx, cy, spec.spot_radius)] = spec.spot_density
        voided = rng.uniform() < spec.void_rate
        vmin, vmax = spec.void_radius_range
        void_radius = rng.uniform(vmin, vmax)  # drawn unconditionally to keep the stream aligned
        if voided:
            px[_disk_mask(spec.width, spec.height, cx, cy, void_radius)] = spec.background_density
            boxes.append(BBox(cx - spec.spot_radius, cy - spec.spot_radius,
                              cx + spec.spot_radius, cy + spec.spot_radius,
                              class_id=VOIDING_SPOT_CLASS))

    if spec.noise_sigma > 0.0:
        lo, hi = px.min(), px.max()
        px = px + rng.normal(0.0, spec.noise_sigma, size=px.shape)
        np.clip(px, lo, hi, out=px)

    return GrayImage(px), boxes


def render_annotations(image: GrayImage, boxes: list[BBox],
                       intensity: float = 1.0) -> GrayImage:
    """Burn 1-pixel-wide box outlines into a copy of the image.

    Boxes are clipped to the image bounds; the input image is untouched.
    """
    px = image.pixels.copy()
    h, w = px.shape
    for box in boxes:
        x0 = int(np.clip(round(box.x_min), 0, w - 1))
        x1 = int(np.clip(round(box.x_max), 0, w - 1))
        y0 = int(np.clip(round(box.y_min), 0, h - 1))
        y1 = int(np.clip(round(box.y_max), 0, h - 1))
        if x0 > x1 or y0 > y1:
            continue
        px[y0, x0:x1 + 1] = intensity
        px[y1, x0:x1 + 1] = intensity
        px[y0:y1 + 1, x0] = intensity
        px[y0:y1 + 1, x1] = intensity
    return GrayImage(px)
