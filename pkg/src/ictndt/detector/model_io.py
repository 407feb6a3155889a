"""Binary model checkpoint format.

Little-endian layout:
    magic "SSDM", u32 version
    u32 input_size, u32 n_scales,
    per scale: u32 grid, f64 scale, u32 n_ratios, f64 ratios[]
    f64 v_center, f64 v_size, u32 n_classes,
    u32 n_stages, u32 stage_channels[]
    u32 tensor_count, per tensor: u8 name_len, name bytes, u32 rank,
        u32 dims[], f32 data[]

Weights are stored in single precision and promoted back to float64 on
load, so save -> load is the only place the training pipeline rounds.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..core import ValidationError
from .anchors import AnchorLayout
from .net import DetectorParams

_MAGIC = b"SSDM"
_VERSION = 1


def write_model(params: DetectorParams, path: str | Path) -> None:
    lay = params.layout
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<II", _VERSION, lay.input_size)
    out += struct.pack("<I", len(lay.feature_grids))
    for grid, scale, ratios in zip(lay.feature_grids, lay.scales, lay.aspect_ratios):
        out += struct.pack("<Id", grid, scale)
        out += struct.pack("<I", len(ratios))
        out += struct.pack(f"<{len(ratios)}d", *ratios)
    out += struct.pack("<dd", *params.variances)
    out += struct.pack("<I", params.n_classes)
    out += struct.pack("<I", len(params.stage_channels))
    out += struct.pack(f"<{len(params.stage_channels)}I", *params.stage_channels)
    names = sorted(params.tensors)
    out += struct.pack("<I", len(names))
    for name in names:
        raw = name.encode("ascii")
        if len(raw) > 255:
            raise ValidationError(f"tensor name too long: {name}")
        t = params.tensors[name]
        out += struct.pack("<B", len(raw)) + raw
        out += struct.pack("<I", t.ndim)
        out += struct.pack(f"<{t.ndim}I", *t.shape)
        out += t.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def read_model(path: str | Path) -> DetectorParams:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValidationError(f"{path}: bad model magic")
    off = 4
    version, input_size = struct.unpack_from("<II", data, off)
    off += 8
    if version != _VERSION:
        raise ValidationError(f"{path}: unsupported model version {version}")
    (n_scales,) = struct.unpack_from("<I", data, off)
    off += 4
    grids: list[int] = []
    scales: list[float] = []
    ratio_sets: list[tuple[float, ...]] = []
    for _ in range(n_scales):
        grid, scale = struct.unpack_from("<Id", data, off)
        off += 12
        (n_ratios,) = struct.unpack_from("<I", data, off)
        off += 4
        ratios = struct.unpack_from(f"<{n_ratios}d", data, off)
        off += 8 * n_ratios
        grids.append(grid)
        scales.append(scale)
        ratio_sets.append(tuple(ratios))
    vc, vs = struct.unpack_from("<dd", data, off)
    off += 16
    (n_classes,) = struct.unpack_from("<I", data, off)
    off += 4
    (n_stages,) = struct.unpack_from("<I", data, off)
    off += 4
    stage_channels = struct.unpack_from(f"<{n_stages}I", data, off)
    off += 4 * n_stages
    (tensor_count,) = struct.unpack_from("<I", data, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(tensor_count):
        (name_len,) = struct.unpack_from("<B", data, off)
        off += 1
        name = data[off:off + name_len].decode("ascii")
        off += name_len
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off)
        off += 4 * count
        tensors[name] = arr.reshape(dims).astype(np.float64)

    layout = AnchorLayout(input_size, tuple(grids), tuple(scales), tuple(ratio_sets))
    return DetectorParams(layout, (vc, vs), n_classes, tuple(stage_channels), tensors)
