"""Multibox training loss: softmax cross-entropy + smooth-L1 localization.

Positives come from the match result; negatives are mined from the
background anchors by keeping the ones with the highest background
cross-entropy at a fixed ratio to the positive count. The loss and its
gradients with respect to the raw network outputs are returned together so
the network backward pass stays a separate, independently testable step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ValidationError
from .boxes import encode_boxes
from .matching import BACKGROUND, MatchResult


@dataclass(frozen=True)
class MultiboxLossResult:
    loss: float
    class_loss: float
    loc_loss: float
    n_positives: int
    dloc: np.ndarray      # (A, 4)
    dlogits: np.ndarray   # (A, C+1)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _smooth_l1(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-element huber value and derivative: 0.5 d^2 inside |d|<1, |d|-0.5 outside."""
    a = np.abs(d)
    inside = a < 1.0
    val = np.where(inside, 0.5 * d * d, a - 0.5)
    grad = np.where(inside, d, np.sign(d))
    return val, grad


def multibox_loss(loc: np.ndarray, logits: np.ndarray, match: MatchResult,
                  gt_boxes: np.ndarray, gt_classes: np.ndarray,
                  anchors: np.ndarray, variances: tuple[float, float],
                  neg_ratio: float = 3.0, alpha: float = 1.0) -> MultiboxLossResult:
    """Loss over one image's predictions.

    loss = (class CE over positives and mined negatives + alpha * smooth-L1
    over positives) / N with N the positive count; N = 0 gives loss 0 and
    zero gradients. The background class is the last logit index. Mined
    negatives are the top-loss background anchors, at most neg_ratio * N,
    ties broken by lower anchor index.
    """
    loc = np.asarray(loc, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    n_anchors, n_logit = logits.shape
    if loc.shape != (n_anchors, 4):
        raise ValidationError(f"loc shape {loc.shape} does not match logits {logits.shape}")
    if match.assignment.shape[0] != n_anchors:
        raise ValidationError("match result does not cover the prediction count")
    if neg_ratio < 0.0 or alpha < 0.0:
        raise ValidationError("neg_ratio and alpha must be non-negative")
    background = n_logit - 1

    dloc = np.zeros_like(loc)
    dlogits = np.zeros_like(logits)
    pos = match.positive_mask
    n_pos = int(np.count_nonzero(pos))
    if n_pos == 0:
        return MultiboxLossResult(0.0, 0.0, 0.0, 0, dloc, dlogits)

    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_classes = np.asarray(gt_classes, dtype=np.int64).reshape(-1)
    if np.any(gt_classes < 0) or np.any(gt_classes >= background):
        raise ValidationError("gt class out of range for the logit width")

    probs = _softmax(logits)
    # classification: positives against their gt class
    pos_idx = np.nonzero(pos)[0]
    pos_cls = gt_classes[match.assignment[pos_idx]]
    eps = np.finfo(np.float64).tiny
    class_loss = -np.log(probs[pos_idx, pos_cls] + eps).sum()

    # hard-negative mining on background cross-entropy
    neg_mask = ~pos
    neg_ce = -np.log(probs[:, background] + eps)
    n_neg = min(int(neg_ratio * n_pos), int(np.count_nonzero(neg_mask)))
    neg_sel = np.array([], dtype=np.int64)
    if n_neg > 0:
        cand = np.nonzero(neg_mask)[0]
        order = np.lexsort((cand, -neg_ce[cand]))
        neg_sel = cand[order[:n_neg]]
        class_loss += neg_ce[neg_sel].sum()

    scale = 1.0 / n_pos
    dlogits[pos_idx] = probs[pos_idx] * scale
    dlogits[pos_idx, pos_cls] -= scale
    if n_neg > 0:
        dlogits[neg_sel] = probs[neg_sel] * scale
        dlogits[neg_sel, background] -= scale

    # localization: smooth-L1 between predicted and encoded target offsets
    targets = encode_boxes(gt_boxes[match.assignment[pos_idx]], anchors[pos_idx], variances)
    val, grad = _smooth_l1(loc[pos_idx] - targets)
    loc_loss = float(val.sum())
    dloc[pos_idx] = alpha * grad * scale

    class_loss = float(class_loss)
    total = (class_loss + alpha * loc_loss) * scale
    return MultiboxLossResult(total, class_loss * scale, alpha * loc_loss * scale,
                              n_pos, dloc, dlogits)
