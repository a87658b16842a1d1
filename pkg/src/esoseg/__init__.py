"""Fully automatic tubular-organ CT segmentation toolkit.

Pipeline: 3D fully-convolutional network -> active-contour centerline ->
prior-driven random walker, with a synthetic phantom generator for
desk-scale training and evaluation.
"""

from .volume import (
    KIND_HU,
    KIND_MASK,
    KIND_PROBABILITY,
    Volume3D,
    VolumeError,
    downsample2,
    extract_subvolume,
    read_volume,
    upsample2_nearest,
    write_volume,
)

__version__ = "0.1.0"

__all__ = [
    "KIND_HU",
    "KIND_MASK",
    "KIND_PROBABILITY",
    "Volume3D",
    "VolumeError",
    "downsample2",
    "extract_subvolume",
    "read_volume",
    "upsample2_nearest",
    "write_volume",
    "__version__",
]
