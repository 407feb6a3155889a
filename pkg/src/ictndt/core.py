"""Shared raster and geometry types used across the pipeline.

``GrayImage`` is the universal 2-D scalar field (material density or
reconstructed intensity); ``BBox`` is an axis-aligned box in pixel
coordinates. Everything downstream (simulation, augmentation, detection,
evaluation, persistence) speaks these two types.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class ValidationError(ValueError):
    """Raised when an input violates a documented invariant."""


@dataclass(frozen=True)
class GrayImage:
    """A 2-D grayscale raster, row-major, float64, all values finite."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValidationError(f"image must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValidationError("image contains non-finite pixels")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def copy(self) -> "GrayImage":
        return GrayImage(self.pixels.copy())


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous pixel coordinates.

    ``class_id`` 0 is the voiding-spot defect class. ``score`` is the
    detection confidence; ground-truth boxes leave it as None.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    class_id: int = 0
    score: float | None = None

    def __post_init__(self) -> None:
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValidationError(f"box {name} is not finite")
        if not self.x_min < self.x_max:
            raise ValidationError(f"box requires x_min < x_max, got [{self.x_min}, {self.x_max}]")
        if not self.y_min < self.y_max:
            raise ValidationError(f"box requires y_min < y_max, got [{self.y_min}, {self.y_max}]")
        if self.class_id < 0:
            raise ValidationError(f"negative class_id {self.class_id}")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    @property
    def aspect(self) -> float:
        return self.width / self.height

    def shifted(self, dx: float, dy: float) -> "BBox":
        return replace(self, x_min=self.x_min + dx, y_min=self.y_min + dy,
                       x_max=self.x_max + dx, y_max=self.y_max + dy)

    def clipped(self, x_lo: float, y_lo: float, x_hi: float, y_hi: float) -> "BBox | None":
        """Intersection with a window, or None if the box degenerates."""
        x0 = max(self.x_min, x_lo)
        y0 = max(self.y_min, y_lo)
        x1 = min(self.x_max, x_hi)
        y1 = min(self.y_max, y_hi)
        if x0 >= x1 or y0 >= y1:
            return None
        return replace(self, x_min=x0, y_min=y0, x_max=x1, y_max=y1)


# ---------------------------------------------------------------------------
# PGM I/O
#
# Rasters are persisted as binary PGM (P5) with maxval 65535.  The image's
# [min, max] range is mapped linearly onto [0, 65535]; the original range is
# kept in a comment line so readers can undo the mapping.  16-bit PGM samples
# are most-significant-byte-first per the netpbm format.
# ---------------------------------------------------------------------------

_PGM_MAXVAL = 65535


def write_pgm(image: GrayImage, path: str | Path) -> None:
    """Write a GrayImage as a 16-bit binary PGM with range metadata."""
    px = image.pixels
    lo = float(px.min())
    hi = float(px.max())
    if hi > lo:
        scaled = np.round((px - lo) / (hi - lo) * _PGM_MAXVAL)
    else:
        scaled = np.zeros_like(px)
    raw = scaled.astype(">u2")
    header = (f"P5\n# ictndt range {lo!r} {hi!r}\n"
              f"{image.width} {image.height}\n{_PGM_MAXVAL}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(raw.tobytes())


def read_pgm(path: str | Path) -> GrayImage:
    """Read a PGM written by :func:`write_pgm`, restoring the stored range."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValidationError(f"{path}: not a binary PGM (P5) file")
    pos = 2
    fields: list[bytes] = []
    lo = hi = None
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            end = data.index(b"\n", pos)
            comment = data[pos + 1:end].split()
            if len(comment) == 4 and comment[0] == b"ictndt" and comment[1] == b"range":
                lo = float(comment[2])
                hi = float(comment[3])
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(f) for f in fields)
    if maxval != _PGM_MAXVAL:
        raise ValidationError(f"{path}: expected maxval {_PGM_MAXVAL}, got {maxval}")
    raw = np.frombuffer(data, dtype=">u2", count=width * height, offset=pos)
    px = raw.reshape(height, width).astype(np.float64)
    if lo is None or hi is None:
        lo, hi = 0.0, 1.0
    px = lo + px / _PGM_MAXVAL * (hi - lo)
    return GrayImage(px)


def boxes_to_array(boxes: list[BBox]) -> np.ndarray:
    """Corner coordinates of a box list as an (N, 4) float array."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([[b.x_min, b.y_min, b.x_max, b.y_max] for b in boxes], dtype=np.float64)
