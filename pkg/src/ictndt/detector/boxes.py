"""Box arithmetic: IoU, center-size offset codec, greedy NMS.

Scalar entry points operate on :class:`~ictndt.core.BBox`; the `_boxes`
variants are vectorized over (N, 4) corner arrays and are what the training
loop and inference path use.
"""

from __future__ import annotations

import numpy as np

from ..core import BBox, ValidationError


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (N, 4) and (M, 4) corner arrays, shape (N, M)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = (np.minimum(a[:, None, 2], b[None, :, 2])
          - np.maximum(a[:, None, 0], b[None, :, 0]))
    iy = (np.minimum(a[:, None, 3], b[None, :, 3])
          - np.maximum(a[:, None, 1], b[None, :, 1]))
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def _to_center_size(c: np.ndarray) -> np.ndarray:
    cs = np.empty_like(c)
    cs[..., 0] = 0.5 * (c[..., 0] + c[..., 2])
    cs[..., 1] = 0.5 * (c[..., 1] + c[..., 3])
    cs[..., 2] = c[..., 2] - c[..., 0]
    cs[..., 3] = c[..., 3] - c[..., 1]
    return cs


def encode_boxes(gt: np.ndarray, anchors: np.ndarray,
                 variances: tuple[float, float]) -> np.ndarray:
    """Center-size offsets of gt corner boxes relative to anchors.

    t = ((cx-cxa)/wa/vc, (cy-cya)/ha/vc, ln(w/wa)/vs, ln(h/ha)/vs)
    """
    vc, vs = variances
    if vc <= 0.0 or vs <= 0.0:
        raise ValidationError("codec variances must be positive")
    g = _to_center_size(np.asarray(gt, dtype=np.float64))
    a = _to_center_size(np.asarray(anchors, dtype=np.float64))
    t = np.empty_like(g)
    t[..., 0] = (g[..., 0] - a[..., 0]) / a[..., 2] / vc
    t[..., 1] = (g[..., 1] - a[..., 1]) / a[..., 3] / vc
    t[..., 2] = np.log(g[..., 2] / a[..., 2]) / vs
    t[..., 3] = np.log(g[..., 3] / a[..., 3]) / vs
    return t


def decode_boxes(offsets: np.ndarray, anchors: np.ndarray,
                 variances: tuple[float, float]) -> np.ndarray:
    """Exact inverse of :func:`encode_boxes`, returning corner boxes."""
    vc, vs = variances
    if vc <= 0.0 or vs <= 0.0:
        raise ValidationError("codec variances must be positive")
    t = np.asarray(offsets, dtype=np.float64)
    a = _to_center_size(np.asarray(anchors, dtype=np.float64))
    cx = t[..., 0] * vc * a[..., 2] + a[..., 0]
    cy = t[..., 1] * vc * a[..., 3] + a[..., 1]
    w = np.exp(t[..., 2] * vs) * a[..., 2]
    h = np.exp(t[..., 3] * vs) * a[..., 3]
    out = np.empty_like(t)
    out[..., 0] = cx - 0.5 * w
    out[..., 1] = cy - 0.5 * h
    out[..., 2] = cx + 0.5 * w
    out[..., 3] = cy + 0.5 * h
    return out


def encode_box(gt: BBox, anchor: BBox, variances: tuple[float, float]) -> np.ndarray:
    """Offset 4-vector for one gt/anchor pair."""
    gt_arr = np.array([[gt.x_min, gt.y_min, gt.x_max, gt.y_max]])
    an_arr = np.array([[anchor.x_min, anchor.y_min, anchor.x_max, anchor.y_max]])
    return encode_boxes(gt_arr, an_arr, variances)[0]


def decode_box(offsets: np.ndarray, anchor: BBox, variances: tuple[float, float]) -> BBox:
    """Box decoded from one offset 4-vector; inherits the anchor's class."""
    an_arr = np.array([[anchor.x_min, anchor.y_min, anchor.x_max, anchor.y_max]])
    c = decode_boxes(np.asarray(offsets, dtype=np.float64).reshape(1, 4), an_arr, variances)[0]
    return BBox(c[0], c[1], c[2], c[3], class_id=anchor.class_id)


def nms_indices(corners: np.ndarray, scores: np.ndarray, classes: np.ndarray,
                iou_thresh: float) -> list[int]:
    """Indices kept by greedy per-class NMS, in descending-score order.

    Repeatedly keeps the highest-scored remaining box (ties by lower input
    index) and removes remaining same-class boxes with IoU >= iou_thresh.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise ValidationError(f"iou_thresh {iou_thresh} outside (0, 1)")
    n = len(scores)
    if n == 0:
        return []
    order = np.lexsort((np.arange(n), -np.asarray(scores)))
    overlaps = iou_matrix(corners, corners)
    classes = np.asarray(classes)
    alive = np.ones(n, dtype=bool)
    kept: list[int] = []
    for idx in order:
        if not alive[idx]:
            continue
        kept.append(int(idx))
        suppress = alive & (classes == classes[idx]) & (overlaps[idx] >= iou_thresh)
        alive[suppress] = False
    return kept


def nms(dets: list[BBox], iou_thresh: float) -> list[BBox]:
    """Greedy per-class non-maximum suppression over scored boxes."""
    for d in dets:
        if d.score is None:
            raise ValidationError("every detection needs a score for NMS")
    if not dets:
        if not 0.0 < iou_thresh < 1.0:
            raise ValidationError(f"iou_thresh {iou_thresh} outside (0, 1)")
        return []
    corners = np.array([[d.x_min, d.y_min, d.x_max, d.y_max] for d in dets])
    scores = np.array([d.score for d in dets])
    classes = np.array([d.class_id for d in dets])
    return [dets[i] for i in nms_indices(corners, scores, classes, iou_thresh)]
