"""SSD-style detection math built from scratch on numpy.

Split by concern: box arithmetic (`boxes`), default-box layout (`anchors`),
ground-truth assignment (`matching`), the convolutional network with manual
backprop (`net`), the multibox training loss (`loss`), and the binary model
file (`model_io`).
"""

from .anchors import AnchorLayout, build_anchors
from .boxes import (decode_box, decode_boxes, encode_box, encode_boxes, iou,
                    iou_matrix, nms, nms_indices)
from .loss import MultiboxLossResult, multibox_loss
from .matching import BACKGROUND, MatchResult, match_anchors
from .net import DetectorParams, ForwardCache, backward, forward, forward_batch, init_params
from .model_io import read_model, write_model

__all__ = [
    "AnchorLayout", "build_anchors",
    "iou", "iou_matrix", "encode_box", "decode_box", "encode_boxes", "decode_boxes",
    "nms", "nms_indices",
    "BACKGROUND", "MatchResult", "match_anchors",
    "DetectorParams", "ForwardCache", "init_params", "forward", "forward_batch", "backward",
    "MultiboxLossResult", "multibox_loss",
    "read_model", "write_model",
]
