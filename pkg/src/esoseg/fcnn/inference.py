"""Tiled dense inference over a whole volume.

The volume is covered by non-overlapping output blocks; each block is
produced by one forward pass on a mirror-padded input tile, so every
output voxel is computed exactly once.
"""

import numpy as np

from ..volume import KIND_PROBABILITY, Volume3D, extract_region
from . import network

FG_CLASS = 1


def predict_volume(params, ct, infer_subvol=45):
    """Per-voxel foreground probability map for a full CT volume."""
    spec = params.spec
    rf1 = spec.receptive_field - 1
    block = spec.output_size(infer_subvol)
    dims = ct.dims
    out = np.zeros(dims, dtype=np.float64)
    data = ct.data.astype(np.float32)
    s_ctx = spec.context_size(infer_subvol)
    for bx in range(0, dims[0], block):
        for by in range(0, dims[1], block):
            for bz in range(0, dims[2], block):
                start = (bx, by, bz)
                main = extract_region(
                    data,
                    tuple(s - rf1 // 2 for s in start),
                    (infer_subvol,) * 3,
                )
                center = tuple(s + block // 2 for s in start)
                ctx = extract_region(
                    data,
                    tuple(c - s_ctx // 2 for c in center),
                    (s_ctx,) * 3,
                )
                _, probs = forward_tile(params, main, ctx)
                keep = tuple(min(block, dims[i] - start[i]) for i in range(3))
                out[
                    bx : bx + keep[0], by : by + keep[1], bz : bz + keep[2]
                ] = probs[FG_CLASS, : keep[0], : keep[1], : keep[2]]
    prob32 = np.clip(out, 0.0, 1.0).astype(np.float32)
    return Volume3D(prob32.astype(np.float64), ct.spacing, KIND_PROBABILITY)


def forward_tile(params, main, ctx):
    return network.forward(params, main, ctx if params.spec.dual_path else None)
