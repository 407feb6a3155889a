"""Parallel-beam projection and filtered back-projection on 2-D rasters.

The scanner model is the line-detector (2-D CT) case: for each angle in
[0, pi) a row of line integrals is measured across a 1-D detector array.
Projection samples the image's bilinear interpolant along rays at a fixed
sub-pixel step; reconstruction applies a frequency-domain ramp filter
(optionally Hann-apodized) per row and back-projects with linear detector
interpolation. Both directions are pure, deterministic functions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BBox, GrayImage, ValidationError
from .phantom import PhantomSpec, generate_phantom

RAY_STEP = 0.5  # sample spacing along rays, in pixels

FILTER_KINDS = ("ramp", "hann")


@dataclass(frozen=True)
class Sinogram:
    """Projection data: one row of detector readings per angle."""

    angles: np.ndarray          # radians, strictly increasing in [0, pi)
    detector_spacing: float
    data: np.ndarray            # (n_angles, n_detectors)

    def __post_init__(self) -> None:
        angles = np.asarray(self.angles, dtype=np.float64)
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != angles.shape[0]:
            raise ValidationError(f"sinogram data shape {data.shape} does not match "
                                  f"{angles.shape[0]} angles")
        if angles.size == 0:
            raise ValidationError("sinogram needs at least one angle")
        if np.any(angles < 0.0) or np.any(angles >= np.pi) or np.any(np.diff(angles) <= 0.0):
            raise ValidationError("angles must be strictly increasing within [0, pi)")
        if self.detector_spacing <= 0.0:
            raise ValidationError("detector_spacing must be positive")
        if not np.all(np.isfinite(data)):
            raise ValidationError("sinogram contains non-finite values")
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "data", data)

    @property
    def n_angles(self) -> int:
        return self.data.shape[0]

    @property
    def n_detectors(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ReconFilter:
    """Reconstruction filter: plain ramp, or ramp with Hann apodization.

    ``cutoff`` is the frequency cutoff as a fraction of Nyquist in (0, 1].
    """

    kind: str = "ramp"
    cutoff: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in FILTER_KINDS:
            raise ValidationError(f"unknown filter kind {self.kind!r}, expected one of {FILTER_KINDS}")
        if not 0.0 < self.cutoff <= 1.0:
            raise ValidationError(f"cutoff {self.cutoff} outside (0, 1]")


def bilinear_sample(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample the bilinear interpolant of ``pixels`` at (xs, ys), 0 outside.

    Uses a zero ring around the raster so out-of-bounds corners clamp onto
    zeros instead of needing per-corner masks.
    """
    h, w = pixels.shape
    padded = np.zeros((h + 2, w + 2), dtype=np.float64)
    padded[1:-1, 1:-1] = pixels
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    xi = np.clip(x0, -1, w) + 1
    yi = np.clip(y0, -1, h) + 1
    xj = np.clip(x0 + 1, -1, w) + 1
    yj = np.clip(y0 + 1, -1, h) + 1
    flat = padded.ravel()
    stride = w + 2
    v00 = flat[yi * stride + xi]
    v01 = flat[yi * stride + xj]
    v10 = flat[yj * stride + xi]
    v11 = flat[yj * stride + xj]
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    return top + fy * (bot - top)


def project(image: GrayImage, n_angles: int, n_detectors: int,
            detector_spacing: float = 1.0) -> Sinogram:
    """Line-integral projections at angles k*pi/n_angles, k = 0..n_angles-1.

    Row k holds the integral of the image's bilinear interpolant along rays
    orthogonal to the detector axis (cos a, sin a), sampled at RAY_STEP and
    weighted by the step. The detector array is centered on the image center
    and must span the image diagonal.
    """
    if n_angles < 1:
        raise ValidationError("n_angles must be >= 1")
    if detector_spacing <= 0.0:
        raise ValidationError("detector_spacing must be positive")
    h, w = image.pixels.shape
    diag = float(np.hypot(w, h))
    if n_detectors * detector_spacing < diag:
        raise ValidationError(
            f"detector array span {n_detectors * detector_spacing:.1f} "
            f"shorter than image diagonal {diag:.1f}")

    angles = np.arange(n_angles, dtype=np.float64) * np.pi / n_angles
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    s = (np.arange(n_detectors, dtype=np.float64) - (n_detectors - 1) / 2.0) * detector_spacing
    n_half = int(np.ceil((diag / 2.0 + 2.0) / RAY_STEP))
    t = np.arange(-n_half, n_half + 1, dtype=np.float64) * RAY_STEP  # symmetric about 0

    data = np.empty((n_angles, n_detectors), dtype=np.float64)
    for k, a in enumerate(angles):
        ca, sa = np.cos(a), np.sin(a)
        xs = cx + s[:, None] * ca - t[None, :] * sa
        ys = cy + s[:, None] * sa + t[None, :] * ca
        data[k] = bilinear_sample(image.pixels, xs, ys).sum(axis=1) * RAY_STEP
    return Sinogram(angles=angles, detector_spacing=detector_spacing, data=data)


def filter_transfer(n: int, recon_filter: ReconFilter, detector_spacing: float) -> np.ndarray:
    """Frequency response applied to (fft-ordered) projection rows of length n."""
    freqs = np.fft.fftfreq(n, d=detector_spacing)
    transfer = np.abs(freqs)
    nyquist = 0.5 / detector_spacing
    fc = recon_filter.cutoff * nyquist
    transfer[np.abs(freqs) > fc] = 0.0
    if recon_filter.kind == "hann":
        window = 0.5 * (1.0 + np.cos(np.pi * freqs / fc))
        window[np.abs(freqs) > fc] = 0.0
        transfer = transfer * window
    return transfer


def fbp_reconstruct(sino: Sinogram, recon_filter: ReconFilter, out_size: int) -> GrayImage:
    """Filtered back-projection onto an out_size x out_size raster.

    Rows are zero-padded to the next power of two >= 2n before filtering to
    avoid circular-convolution wrap-around; the output pixel grid shares the
    projection's center convention, so a reconstruction at the source image's
    size is spatially aligned with it.
    """
    if out_size <= 0:
        raise ValidationError("out_size must be positive")
    n_det = sino.n_detectors
    n_pad = 1 << int(np.ceil(np.log2(max(2 * n_det, 16))))
    transfer = filter_transfer(n_pad, recon_filter, sino.detector_spacing)
    padded = np.zeros((sino.n_angles, n_pad), dtype=np.float64)
    padded[:, :n_det] = sino.data
    filtered = np.real(np.fft.ifft(np.fft.fft(padded, axis=1) * transfer[None, :], axis=1))
    filtered = filtered[:, :n_det]

    c = (out_size - 1) / 2.0
    xs = np.arange(out_size, dtype=np.float64) - c
    ys = np.arange(out_size, dtype=np.float64) - c
    X, Y = np.meshgrid(xs, ys)
    det_center = (n_det - 1) / 2.0
    det_idx = np.arange(n_det, dtype=np.float64)

    recon = np.zeros((out_size, out_size), dtype=np.float64)
    for k in range(sino.n_angles):
        a = sino.angles[k]
        pos = (X * np.cos(a) + Y * np.sin(a)) / sino.detector_spacing + det_center
        recon += np.interp(pos.ravel(), det_idx, filtered[k], left=0.0, right=0.0).reshape(out_size, out_size)
    recon *= np.pi / sino.n_angles
    return GrayImage(recon)


def default_n_detectors(width: int, height: int, detector_spacing: float = 1.0) -> int:
    """Smallest detector count covering the image diagonal, plus one spare."""
    return int(np.ceil(np.hypot(width, height) / detector_spacing)) + 1


@dataclass(frozen=True)
class ScanConfig:
    """Acquisition and reconstruction settings for a simulated scan."""

    n_angles: int = 120
    n_detectors: int | None = None  # None: derived from the phantom diagonal
    detector_spacing: float = 1.0
    recon_filter: ReconFilter = ReconFilter()

    def __post_init__(self) -> None:
        if self.n_angles < 1:
            raise ValidationError("n_angles must be >= 1")
        if self.n_detectors is not None and self.n_detectors < 1:
            raise ValidationError("n_detectors must be >= 1")
        if self.detector_spacing <= 0.0:
            raise ValidationError("detector_spacing must be positive")


def scan_part(spec: PhantomSpec, scan_cfg: ScanConfig = ScanConfig()) -> tuple[GrayImage, list[BBox]]:
    """Simulate one part: phantom -> projections -> FBP reconstruction.

    Ground-truth boxes pass through unchanged; the reconstruction matches the
    phantom raster size so they stay aligned.
    """
    if spec.width != spec.height:
        raise ValidationError("scan_part requires a square phantom so the "
                              "reconstruction grid aligns with the ground truth")
    image, boxes = generate_phantom(spec)
    n_det = scan_cfg.n_detectors
    if n_det is None:
        n_det = default_n_detectors(spec.width, spec.height, scan_cfg.detector_spacing)
    sino = project(image, scan_cfg.n_angles, n_det, scan_cfg.detector_spacing)
    recon = fbp_reconstruct(sino, scan_cfg.recon_filter, spec.width)
    return recon, boxes


# ---------------------------------------------------------------------------
# Sinogram file format: little-endian binary
#   magic "SINO", u32 version, u32 n_angles, u32 n_detectors,
#   f64 detector_spacing, f64 angles[n_angles], f32 data[] row-major
# ---------------------------------------------------------------------------

_SINO_MAGIC = b"SINO"
_SINO_VERSION = 1


def write_sinogram(sino: Sinogram, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_SINO_MAGIC)
        fh.write(struct.pack("<III", _SINO_VERSION, sino.n_angles, sino.n_detectors))
        fh.write(struct.pack("<d", sino.detector_spacing))
        fh.write(sino.angles.astype("<f8").tobytes())
        fh.write(sino.data.astype("<f4").tobytes())


def read_sinogram(path: str | Path) -> Sinogram:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _SINO_MAGIC:
        raise ValidationError(f"{path}: bad sinogram magic")
    version, n_angles, n_detectors = struct.unpack_from("<III", data, 4)
    if version != _SINO_VERSION:
        raise ValidationError(f"{path}: unsupported sinogram version {version}")
    (spacing,) = struct.unpack_from("<d", data, 16)
    off = 24
    angles = np.frombuffer(data, dtype="<f8", count=n_angles, offset=off).copy()
    off += 8 * n_angles
    rows = np.frombuffer(data, dtype="<f4", count=n_angles * n_detectors, offset=off)
    return Sinogram(angles=angles, detector_spacing=spacing,
                    data=rows.reshape(n_angles, n_detectors).astype(np.float64))
