"""Plain convolutional backbone with multi-scale detection heads.

The backbone is a stack of stages, each 3x3 conv (stride 1, replicate pad)
-> ReLU -> 2x2 max-pool, so a square input of side S yields feature maps of
sides S/2, S/4, ... A 3x3 conv head sits on each of the last `n_scales`
maps and emits, per aspect ratio, 4 localization offsets plus C+1 class
logits, flattened in exactly the anchor order of
:func:`ictndt.detector.anchors.build_anchors`.

Forward and backward are written out by hand on float64 numpy arrays so the
whole training path is gradient-checkable against finite differences.
Max-pool ties and all reductions resolve in fixed order, which makes
forward/backward bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import GrayImage, ValidationError
from .anchors import AnchorLayout


@dataclass
class DetectorParams:
    """Every trainable tensor plus the anchor layout and codec variances."""

    layout: AnchorLayout
    variances: tuple[float, float] = (0.1, 0.2)
    n_classes: int = 1
    stage_channels: tuple[int, ...] = (8, 16, 32)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        vc, vs = self.variances
        if vc <= 0.0 or vs <= 0.0:
            raise ValidationError("codec variances must be positive")
        if self.n_classes < 1:
            raise ValidationError("need at least one foreground class")
        if not self.stage_channels:
            raise ValidationError("need at least one backbone stage")
        n_stages = len(self.stage_channels)
        size = self.layout.input_size
        if size % (1 << n_stages) != 0:
            raise ValidationError(f"input size {size} not divisible by 2^{n_stages}")
        n_scales = len(self.layout.feature_grids)
        if n_scales > n_stages:
            raise ValidationError("more detection scales than backbone stages")
        expected = tuple(size >> (i + 1) for i in range(n_stages))[n_stages - n_scales:]
        if tuple(self.layout.feature_grids) != expected:
            raise ValidationError(
                f"layout grids {self.layout.feature_grids} do not match the "
                f"last {n_scales} feature map sizes {expected}")
        if self.tensors:
            self._check_tensors()

    @property
    def n_stages(self) -> int:
        return len(self.stage_channels)

    @property
    def n_scales(self) -> int:
        return len(self.layout.feature_grids)

    def head_stage_index(self, k: int) -> int:
        return self.n_stages - self.n_scales + k

    def head_channels(self, k: int) -> int:
        return len(self.layout.aspect_ratios[k]) * (4 + self.n_classes + 1)

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        c_in = 1
        for i, c_out in enumerate(self.stage_channels):
            shapes[f"stage{i}.w"] = (c_out, c_in, 3, 3)
            shapes[f"stage{i}.b"] = (c_out,)
            c_in = c_out
        for k in range(self.n_scales):
            c_feat = self.stage_channels[self.head_stage_index(k)]
            shapes[f"head{k}.w"] = (self.head_channels(k), c_feat, 3, 3)
            shapes[f"head{k}.b"] = (self.head_channels(k),)
        return shapes

    def _check_tensors(self) -> None:
        expected = self.tensor_shapes()
        if set(self.tensors) != set(expected):
            raise ValidationError(
                f"tensor names {sorted(self.tensors)} != expected {sorted(expected)}")
        for name, shape in expected.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise ValidationError(f"{name}: shape {t.shape} != expected {shape}")
            if not np.all(np.isfinite(t)):
                raise ValidationError(f"{name}: non-finite values")

    def copy(self) -> "DetectorParams":
        return DetectorParams(self.layout, self.variances, self.n_classes,
                              self.stage_channels,
                              {k: v.copy() for k, v in self.tensors.items()})


def init_params(layout: AnchorLayout, stage_channels: tuple[int, ...],
                n_classes: int, variances: tuple[float, float],
                seed: int) -> DetectorParams:
    """He-scaled normal init for conv weights, zero biases, seeded."""
    params = DetectorParams(layout, variances, n_classes, tuple(stage_channels))
    rng = np.random.Generator(np.random.PCG64(seed))
    tensors: dict[str, np.ndarray] = {}
    for name, shape in params.tensor_shapes().items():  # insertion order is fixed
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=np.float64)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    params.tensors = tensors
    params._check_tensors()
    return params


# ---------------------------------------------------------------------------
# layer primitives (NCHW, float64)
# ---------------------------------------------------------------------------

def _im2col3(x: np.ndarray) -> np.ndarray:
    """(N,C,H,W) -> (N, C*9, H*W) patches under replicate padding."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    patches = np.empty((n, c, 3, 3, h, w), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            patches[:, :, dy, dx] = xp[:, :, dy:dy + h, dx:dx + w]
    return patches.reshape(n, c * 9, h * w)


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (out (N,K,H,W), cols) with cols cached for the backward pass."""
    n, _, h, width = x.shape
    k = w.shape[0]
    cols = _im2col3(x)
    w2 = w.reshape(k, -1)
    out = np.matmul(w2, cols) + b[:, None]
    return out.reshape(n, k, h, width), cols


def conv3x3_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray,
                     x_shape: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dw, db) of conv3x3_forward."""
    n, c, h, width = x_shape
    k = w.shape[0]
    dout2 = dout.reshape(n, k, h * width)
    db = dout2.sum(axis=(0, 2))
    dw = np.matmul(dout2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    w2 = w.reshape(k, -1)
    dcols = np.matmul(w2.T, dout2).reshape(n, c, 3, 3, h, width)
    dxp = np.zeros((n, c, h + 2, width + 2), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            dxp[:, :, dy:dy + h, dx:dx + width] += dcols[:, :, dy, dx]
    # fold replicate-padding gradients back onto the border pixels
    dx = dxp[:, :, 1:h + 1, 1:width + 1].copy()
    dx[:, :, 0, :] += dxp[:, :, 0, 1:width + 1]
    dx[:, :, -1, :] += dxp[:, :, -1, 1:width + 1]
    dx[:, :, :, 0] += dxp[:, :, 1:h + 1, 0]
    dx[:, :, :, -1] += dxp[:, :, 1:h + 1, -1]
    dx[:, :, 0, 0] += dxp[:, :, 0, 0]
    dx[:, :, 0, -1] += dxp[:, :, 0, -1]
    dx[:, :, -1, 0] += dxp[:, :, -1, 0]
    dx[:, :, -1, -1] += dxp[:, :, -1, -1]
    return dx, dw, db


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2/stride-2 max pool; ties take the first window element."""
    n, c, h, w = x.shape
    windows = (x.reshape(n, c, h // 2, 2, w // 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h // 2, w // 2, 4))
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(dout: np.ndarray, idx: np.ndarray, x_shape: tuple[int, ...]) -> np.ndarray:
    n, c, h, w = x_shape
    dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=np.float64)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    return (dwin.reshape(n, c, h // 2, w // 2, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h, w))


# ---------------------------------------------------------------------------
# whole-network forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    """Intermediates needed by :func:`backward`."""

    x_shape: tuple[int, ...]
    stage_cols: list[np.ndarray]
    stage_pre: list[np.ndarray]        # pre-activations (before ReLU)
    stage_act_shape: list[tuple[int, ...]]
    stage_pool_idx: list[np.ndarray]
    stage_out: list[np.ndarray]        # pooled outputs (head inputs)
    head_cols: list[np.ndarray]


def forward_batch(x: np.ndarray, params: DetectorParams) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Run a (N, 1, S, S) batch; returns per-anchor loc, logits and cache.

    loc has shape (N, A, 4) and logits (N, A, C+1), with A equal to the
    layout's anchor count and ordered scale-major, row-major, ratio-minor.
    """
    x = np.asarray(x, dtype=np.float64)
    size = params.layout.input_size
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != size or x.shape[3] != size:
        raise ValidationError(f"expected input (N, 1, {size}, {size}), got {x.shape}")

    cache = ForwardCache(x.shape, [], [], [], [], [], [])
    h = x
    for i in range(params.n_stages):
        pre, cols = conv3x3_forward(h, params.tensors[f"stage{i}.w"], params.tensors[f"stage{i}.b"])
        act = np.maximum(pre, 0.0)
        pooled, idx = maxpool2_forward(act)
        cache.stage_cols.append(cols)
        cache.stage_pre.append(pre)
        cache.stage_act_shape.append(act.shape)
        cache.stage_pool_idx.append(idx)
        cache.stage_out.append(pooled)
        h = pooled

    n = x.shape[0]
    per_anchor = 4 + params.n_classes + 1
    loc_chunks = []
    logit_chunks = []
    for k in range(params.n_scales):
        feat = cache.stage_out[params.head_stage_index(k)]
        out, cols = conv3x3_forward(feat, params.tensors[f"head{k}.w"], params.tensors[f"head{k}.b"])
        cache.head_cols.append(cols)
        g = params.layout.feature_grids[k]
        n_ratios = len(params.layout.aspect_ratios[k])
        # (N, R*(5+C), g, g) -> (N, g*g*R, 5+C) in anchor order
        flat = out.transpose(0, 2, 3, 1).reshape(n, g * g * n_ratios, per_anchor)
        loc_chunks.append(flat[:, :, :4])
        logit_chunks.append(flat[:, :, 4:])
    loc = np.concatenate(loc_chunks, axis=1)
    logits = np.concatenate(logit_chunks, axis=1)
    return loc, logits, cache


def forward(image: GrayImage, params: DetectorParams) -> tuple[np.ndarray, np.ndarray]:
    """Single-image forward pass: (loc (A, 4), class logits (A, C+1))."""
    size = params.layout.input_size
    if image.width != size or image.height != size:
        raise ValidationError(f"image {image.width}x{image.height} != input size {size}")
    loc, logits, _ = forward_batch(image.pixels[None, None, :, :], params)
    return loc[0], logits[0]


def backward(dloc: np.ndarray, dlogits: np.ndarray, params: DetectorParams,
             cache: ForwardCache) -> dict[str, np.ndarray]:
    """Gradients of every parameter tensor given per-anchor output grads."""
    n = cache.x_shape[0]
    per_anchor = 4 + params.n_classes + 1
    grads: dict[str, np.ndarray] = {}
    dfeat: list[np.ndarray | None] = [None] * params.n_stages

    offset = 0
    for k in range(params.n_scales):
        g = params.layout.feature_grids[k]
        n_ratios = len(params.layout.aspect_ratios[k])
        count = g * g * n_ratios
        dflat = np.concatenate([dloc[:, offset:offset + count, :],
                                dlogits[:, offset:offset + count, :]], axis=2)
        offset += count
        dhead_out = (dflat.reshape(n, g, g, n_ratios * per_anchor)
                          .transpose(0, 3, 1, 2))
        stage_idx = params.head_stage_index(k)
        feat_shape = cache.stage_out[stage_idx].shape
        dx, dw, db = conv3x3_backward(dhead_out, cache.head_cols[k],
                                      params.tensors[f"head{k}.w"], feat_shape)
        grads[f"head{k}.w"] = dw
        grads[f"head{k}.b"] = db
        dfeat[stage_idx] = dx if dfeat[stage_idx] is None else dfeat[stage_idx] + dx

    dnext: np.ndarray | None = None
    for i in reversed(range(params.n_stages)):
        d = dfeat[i]
        if dnext is not None:
            d = dnext if d is None else d + dnext
        if d is None:
            d = np.zeros(cache.stage_out[i].shape, dtype=np.float64)
        dact = maxpool2_backward(d, cache.stage_pool_idx[i], cache.stage_act_shape[i])
        dpre = dact * (cache.stage_pre[i] > 0.0)
        in_shape = cache.x_shape if i == 0 else cache.stage_out[i - 1].shape
        dnext, dw, db = conv3x3_backward(dpre, cache.stage_cols[i],
                                         params.tensors[f"stage{i}.w"], in_shape)
        grads[f"stage{i}.w"] = dw
        grads[f"stage{i}.b"] = db
    return grads
