"""Anchor-to-ground-truth assignment for training.

Two phases: a greedy bipartite pass guarantees every ground-truth box at
least one (distinct) anchor, then the threshold pass turns every unclaimed
anchor whose best IoU reaches ``pos_thresh`` into a positive for that box.
All ties break toward lower indices so assignments are identical across
runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ValidationError
from .boxes import iou_matrix

BACKGROUND = -1


@dataclass(frozen=True)
class MatchResult:
    """Per-anchor assignment (gt index or BACKGROUND) and per-gt best anchor."""

    assignment: np.ndarray       # (n_anchors,) int64
    best_anchor_per_gt: np.ndarray  # (n_gts,) int64

    @property
    def positive_mask(self) -> np.ndarray:
        return self.assignment != BACKGROUND

    @property
    def n_positives(self) -> int:
        return int(np.count_nonzero(self.positive_mask))


def match_anchors(gts: np.ndarray, anchors: np.ndarray, pos_thresh: float = 0.5) -> MatchResult:
    """Assign anchors to ground-truth corner boxes.

    Phase 1 repeatedly claims the globally best remaining (gt, anchor) pair
    (ties: lower anchor index, then lower gt index), so each gt ends up with
    a distinct anchor even when several gts prefer the same one. Phase 2
    assigns every remaining anchor with IoU >= pos_thresh to its highest-IoU
    gt (ties: lower gt index). Empty gts yield all background.
    """
    if not 0.0 < pos_thresh < 1.0:
        raise ValidationError(f"pos_thresh {pos_thresh} outside (0, 1)")
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    if anchors.shape[0] == 0:
        raise ValidationError("anchors must be non-empty")
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    n_gt = gts.shape[0]
    n_anchor = anchors.shape[0]
    assignment = np.full(n_anchor, BACKGROUND, dtype=np.int64)
    best_anchor = np.full(n_gt, BACKGROUND, dtype=np.int64)
    if n_gt == 0:
        return MatchResult(assignment, best_anchor)

    overlaps = iou_matrix(gts, anchors)  # (n_gt, n_anchor)

    work = overlaps.copy()
    for _ in range(min(n_gt, n_anchor)):
        flat = np.argmax(work)  # first occurrence wins: lowest gt, then anchor... see below
        g, a = np.unravel_index(flat, work.shape)
        # argmax breaks ties by lowest flat index = (gt-major, anchor-minor);
        # the contract wants lowest anchor first, so rescan the max explicitly.
        m = work[g, a]
        cand_g, cand_a = np.nonzero(work == m)
        pick = np.lexsort((cand_g, cand_a))[0]
        g, a = int(cand_g[pick]), int(cand_a[pick])
        assignment[a] = g
        best_anchor[g] = a
        work[g, :] = -1.0
        work[:, a] = -1.0

    unclaimed = assignment == BACKGROUND
    best_gt = np.argmax(overlaps, axis=0)          # ties: lower gt index
    best_val = overlaps[best_gt, np.arange(n_anchor)]
    take = unclaimed & (best_val >= pos_thresh)
    assignment[take] = best_gt[take]
    return MatchResult(assignment, best_anchor)
