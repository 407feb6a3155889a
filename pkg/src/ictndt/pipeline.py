"""Tiled inference over images larger than the detector input.

A large raster is covered by fixed-size tiles stepping by (tile - overlap);
when the size is not an exact multiple the last row/column of tiles shifts
inward so every tile keeps the network's full input size and the union of
tiles still covers the image exactly. Detections are produced per tile,
translated into global coordinates, and merged with one cross-tile NMS
round. Tiles are independent work units; with ``jobs`` > 1 they run on a
thread pool and results are merged in tile order, so the output does not
depend on scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import BBox, GrayImage, ValidationError
from .detector import build_anchors, decode_boxes, nms, nms_indices
from .detector.net import DetectorParams, forward


@dataclass(frozen=True)
class TileRect:
    row: int
    col: int
    x_offset: int
    y_offset: int
    width: int
    height: int


@dataclass(frozen=True)
class TileGrid:
    tile: int
    overlap: int
    n_rows: int
    n_cols: int
    tiles: tuple[TileRect, ...]


def _offsets(size: int, tile: int, step: int) -> list[int]:
    if size == tile:
        return [0]
    n = math.ceil((size - tile) / step) + 1
    return [min(i * step, size - tile) for i in range(n)]


def tile_image(image: GrayImage, tile: int, overlap: int = 0) -> tuple[TileGrid, list[GrayImage]]:
    """Cover the image with row-major tile x tile windows.

    Offsets step by (tile - overlap); a non-divisible image size shifts the
    final row/column inward to (size - tile) so coverage stays exact and
    every tile is full size. Images smaller than the tile are rejected.
    """
    if tile <= 0 or overlap < 0 or tile <= overlap:
        raise ValidationError(f"need tile > overlap >= 0, got tile={tile} overlap={overlap}")
    if image.width < tile or image.height < tile:
        raise ValidationError(f"image {image.width}x{image.height} smaller than tile {tile}")
    step = tile - overlap
    xs = _offsets(image.width, tile, step)
    ys = _offsets(image.height, tile, step)
    rects = []
    windows = []
    for r, y in enumerate(ys):
        for c, x in enumerate(xs):
            rects.append(TileRect(r, c, x, y, tile, tile))
            windows.append(GrayImage(image.pixels[y:y + tile, x:x + tile].copy()))
    grid = TileGrid(tile, overlap, len(ys), len(xs), tuple(rects))
    return grid, windows


@dataclass(frozen=True)
class DetectConfig:
    tile: int = 64
    overlap: int = 0
    score_thresh: float = 0.5
    nms_iou: float = 0.45
    jobs: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.score_thresh < 1.0:
            raise ValidationError("score_thresh must lie in (0, 1)")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValidationError("nms_iou must lie in (0, 1)")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")


@dataclass(frozen=True)
class TiledDetection:
    """A detection in global coordinates plus the tile it came from."""

    box: BBox
    tile_row: int
    tile_col: int


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def detect_tile(tile_img: GrayImage, params: DetectorParams,
                cfg: DetectConfig) -> list[BBox]:
    """Detections of one tile in tile coordinates: decode, threshold, NMS."""
    loc, logits = forward(tile_img, params)
    anchors = build_anchors(params.layout)
    probs = _softmax_rows(logits)
    decoded = decode_boxes(loc, anchors, params.variances)
    size = float(params.layout.input_size)
    dets: list[BBox] = []
    for cls in range(params.n_classes):
        scores = probs[:, cls]
        for i in np.nonzero(scores >= cfg.score_thresh)[0]:
            x0, y0, x1, y1 = decoded[i]
            clipped = np.clip([x0, y0, x1, y1], 0.0, size)
            if clipped[0] >= clipped[2] or clipped[1] >= clipped[3]:
                continue
            dets.append(BBox(clipped[0], clipped[1], clipped[2], clipped[3],
                             class_id=cls, score=float(scores[i])))
    return nms(dets, cfg.nms_iou)


def nms(dets: list[BBox], iou_thresh: float) -> list[BBox]:
    # thin alias so per-tile and cross-tile suppression share one code path
    from .detector.boxes import nms as _nms
    return _nms(dets, iou_thresh)


def detect_full_records(image: GrayImage, params: DetectorParams | None,
                        cfg: DetectConfig, tile_detector=None) -> list[TiledDetection]:
    """Tiled detection keeping per-detection tile provenance.

    ``tile_detector(tile_img) -> list[BBox]`` overrides the model-based
    per-tile detector (used for pure remapping checks and idealized
    detectors); by default tiles run through :func:`detect_tile`.
    """
    if tile_detector is None:
        if params is None:
            raise ValidationError("either params or a tile_detector is required")
        if cfg.tile != params.layout.input_size:
            raise ValidationError(f"tile {cfg.tile} != model input size "
                                  f"{params.layout.input_size}")
        def tile_detector(img: GrayImage) -> list[BBox]:
            return detect_tile(img, params, cfg)

    grid, windows = tile_image(image, cfg.tile, cfg.overlap)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            per_tile = list(pool.map(tile_detector, windows))
    else:
        per_tile = [tile_detector(w) for w in windows]

    merged: list[TiledDetection] = []
    for rect, dets in zip(grid.tiles, per_tile):  # fixed tile order
        for det in dets:
            merged.append(TiledDetection(det.shifted(rect.x_offset, rect.y_offset),
                                         rect.row, rect.col))
    if not merged:
        return []
    corners = np.array([[d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max]
                        for d in merged])
    scores = np.array([d.box.score for d in merged])
    classes = np.array([d.box.class_id for d in merged])
    kept = nms_indices(corners, scores, classes, cfg.nms_iou)
    result = [merged[i] for i in kept]
    result.sort(key=lambda d: (-d.box.score, d.box.y_min, d.box.x_min))
    return result


def detect_full(image: GrayImage, params: DetectorParams | None,
                cfg: DetectConfig, tile_detector=None) -> list[BBox]:
    """Full-image detections in global coordinates, best score first."""
    return [d.box for d in detect_full_records(image, params, cfg, tile_detector)]
