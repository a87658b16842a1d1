"""Pipeline pre/post-processing: air replacement and morphological closing."""

import numpy as np
from scipy import ndimage

from .volume import KIND_HU, KIND_MASK, Volume3D

AIR_CUTOFF_HU = -150.0


def preprocess_ct(ct, mean_eso_hu, cutoff=AIR_CUTOFF_HU):
    """Replace voxels strictly below the cutoff by the mean foreground HU."""
    if ct.kind != KIND_HU:
        raise ValueError("preprocess_ct expects an HU volume")
    out = np.where(ct.data < cutoff, mean_eso_hu, ct.data)
    return Volume3D(out, ct.spacing, KIND_HU)


def ball_6connected(radius):
    """Structuring element: r dilations of the 6-connected cross."""
    cross = ndimage.generate_binary_structure(3, 1)
    return ndimage.iterate_structure(cross, radius)


def morphological_closing(mask, radius_voxels=1):
    """Dilation then erosion with a 6-connected ball.

    Out-of-volume voxels count as background for the dilation and as
    foreground for the erosion, so the volume border never erodes the
    mask.
    """
    if mask.kind != KIND_MASK:
        raise ValueError("morphological_closing expects a mask volume")
    st = ball_6connected(radius_voxels)
    m = mask.data.astype(bool)
    dilated = ndimage.binary_dilation(m, structure=st, border_value=0)
    closed = ndimage.binary_erosion(dilated, structure=st, border_value=1)
    return Volume3D(closed.astype(np.float64), mask.spacing, KIND_MASK)
