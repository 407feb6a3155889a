"""Multi-scale default-box (anchor) layout.

Each detection scale places one anchor set on a square feature grid: fine
grids carry small boxes for small objects, coarse grids carry large ones.
Anchors are emitted scale-major, then row-major over the grid, then
ratio-minor, which is exactly the flattening order of the network heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ValidationError


@dataclass(frozen=True)
class AnchorLayout:
    """Anchor geometry for a fixed square input size.

    ``scales[k]`` is the anchor side as a fraction of the input for feature
    grid ``feature_grids[k]``; ``aspect_ratios[k]`` lists the width/height
    ratios emitted at that scale.
    """

    input_size: int
    feature_grids: tuple[int, ...]
    scales: tuple[float, ...]
    aspect_ratios: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if self.input_size <= 0:
            raise ValidationError("input_size must be positive")
        if not (len(self.feature_grids) == len(self.scales) == len(self.aspect_ratios)):
            raise ValidationError("feature_grids, scales and aspect_ratios must align")
        if len(self.feature_grids) == 0:
            raise ValidationError("layout needs at least one scale")
        if any(g <= 0 for g in self.feature_grids):
            raise ValidationError("feature grids must be positive")
        if any(a <= b for a, b in zip(self.feature_grids, self.feature_grids[1:])):
            raise ValidationError("feature grids must be strictly decreasing (coarser deeper)")
        if any(not 0.0 < s <= 1.0 for s in self.scales):
            raise ValidationError("scales must lie in (0, 1]")
        if any(len(r) == 0 for r in self.aspect_ratios):
            raise ValidationError("each scale needs at least one aspect ratio")
        if any(ar <= 0.0 for ratios in self.aspect_ratios for ar in ratios):
            raise ValidationError("aspect ratios must be positive")

    @staticmethod
    def shared_ratios(input_size: int, feature_grids: tuple[int, ...],
                      scales: tuple[float, ...],
                      ratios: tuple[float, ...]) -> "AnchorLayout":
        """Layout with the same ratio set at every scale."""
        return AnchorLayout(input_size, tuple(feature_grids), tuple(scales),
                            tuple(tuple(ratios) for _ in feature_grids))

    @property
    def n_anchors(self) -> int:
        return sum(g * g * len(r) for g, r in zip(self.feature_grids, self.aspect_ratios))

    def anchors_per_scale(self) -> list[int]:
        return [g * g * len(r) for g, r in zip(self.feature_grids, self.aspect_ratios)]


def build_anchors(layout: AnchorLayout) -> np.ndarray:
    """All anchors as an (n_anchors, 4) corner array, clipped to the image.

    At scale k, the anchor for grid cell (row, col) and ratio ar is centered
    at ((col+0.5)/grid, (row+0.5)/grid) * input_size with width
    scale*input*sqrt(ar) and height scale*input/sqrt(ar).
    """
    size = float(layout.input_size)
    chunks = []
    for grid, scale, ratios in zip(layout.feature_grids, layout.scales, layout.aspect_ratios):
        rows, cols = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
        cx = (cols.ravel() + 0.5) / grid * size
        cy = (rows.ravel() + 0.5) / grid * size
        r = np.sqrt(np.asarray(ratios, dtype=np.float64))
        w = scale * size * r
        h = scale * size / r
        block = np.empty((grid * grid, len(ratios), 4), dtype=np.float64)
        block[..., 0] = cx[:, None] - 0.5 * w[None, :]
        block[..., 1] = cy[:, None] - 0.5 * h[None, :]
        block[..., 2] = cx[:, None] + 0.5 * w[None, :]
        block[..., 3] = cy[:, None] + 0.5 * h[None, :]
        chunks.append(block.reshape(-1, 4))
    anchors = np.concatenate(chunks, axis=0)
    np.clip(anchors, 0.0, size, out=anchors)
    return anchors
