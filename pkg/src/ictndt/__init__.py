"""Deterministic industrial-CT defect-detection pipeline.

Submodules:
    core       shared raster/box types, PGM I/O
    phantom    synthetic parts with exact defect ground truth
    ctsim      parallel-beam projection and FBP reconstruction
    augment    kernel-filter + random-crop set expansion
    detector   SSD-style detection math (anchors, matching, net, loss, NMS)
    trainer    dataset split, SGD training loop, gradient checking
    pipeline   tiled full-image inference
    evaluation IoU/MIoU/precision/recall metrics and quality grading
    store      label/detection files and the append-only defect database
    cli        end-to-end subcommands
"""

from .core import BBox, GrayImage, ValidationError

__all__ = ["BBox", "GrayImage", "ValidationError"]
__version__ = "0.1.0"
