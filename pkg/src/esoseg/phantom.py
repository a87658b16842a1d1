"""Synthetic tubular CT phantoms with ground-truth masks.

Each phantom contains one smooth wobbling tube of soft-tissue-like HU on a
smooth bright background, optional air pockets inside the tube (so the
low-HU replacement rule is exercised), plus false-positive distractors: a
second partial tube and bright/dark blobs. Fully deterministic per seed.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import KIND_HU, KIND_MASK, Volume3D, write_volume


@dataclass
class PhantomConfig:
    dims: tuple = (64, 64, 48)
    spacing: tuple = (1.0, 1.0, 3.0)
    radius_range_mm: tuple = (3.0, 8.0)
    radius_variation_mm: float = 0.5
    wobble_amplitude: float = 5.0  # voxels
    wobble_smoothness: float = 8.0  # slices
    tissue_hu_mean: float = 30.0
    tissue_hu_std: float = 15.0
    background_hu_mean: float = 60.0
    background_hu_std: float = 40.0
    n_distractor_blobs: int = 3
    distractor_tube: bool = True
    air_pocket_prob: float = 0.2
    air_hu: float = -800.0
    noise_std: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.dims[0] < 32 or self.dims[1] < 32:
            raise ValueError("in-plane dims must be >= 32")
        if self.radius_range_mm[0] <= 0:
            raise ValueError("radii must be positive")


def _smooth_noise1d(rng, n, sigma):
    x = rng.normal(size=n)
    if sigma > 0:
        x = ndimage.gaussian_filter1d(x, sigma, mode="nearest")
    s = x.std()
    return x / s if s > 0 else x


def _tube_centerline(cfg, rng):
    nx, ny, nz = cfg.dims
    r_max = cfg.radius_range_mm[1]
    margin = r_max / cfg.spacing[0] + 3.0
    base = np.array(
        [
            rng.uniform(0.4 * nx, 0.6 * nx),
            rng.uniform(0.4 * ny, 0.6 * ny),
        ]
    )
    wob = np.column_stack(
        [
            _smooth_noise1d(rng, nz, cfg.wobble_smoothness),
            _smooth_noise1d(rng, nz, cfg.wobble_smoothness),
        ]
    ) * cfg.wobble_amplitude
    if cfg.wobble_amplitude > 0:
        # keep consecutive slice disks overlapping (6-connected tube)
        step = np.abs(np.diff(wob, axis=0)).max()
        if step > 1.2:
            wob *= 1.2 / step
    pts = base[None, :] + wob
    pts[:, 0] = np.clip(pts[:, 0], margin, nx - 1 - margin)
    pts[:, 1] = np.clip(pts[:, 1], margin, ny - 1 - margin)
    return pts


def _tube_radii(cfg, rng):
    nz = cfg.dims[2]
    r_lo, r_hi = cfg.radius_range_mm
    var = min(cfg.radius_variation_mm, (r_hi - r_lo) / 2.0)
    base = rng.uniform(r_lo + var, r_hi - var) if r_hi > r_lo else r_lo
    if var > 0:
        radii = base + var * _smooth_noise1d(rng, nz, cfg.wobble_smoothness)
    else:
        radii = np.full(nz, float(base))
    return np.clip(radii, r_lo, r_hi)


def _inplane_dist2_mm(cfg, centers):
    """Squared in-plane mm distance of every voxel to its slice center."""
    nx, ny, nz = cfg.dims
    sx, sy, _ = cfg.spacing
    gx = np.arange(nx)[:, None, None] * sx
    gy = np.arange(ny)[None, :, None] * sy
    cx = centers[None, None, :, 0] * sx
    cy = centers[None, None, :, 1] * sy
    return (gx - cx) ** 2 + (gy - cy) ** 2


def generate_phantom(cfg):
    """Returns (HU Volume3D with integral values, mask Volume3D)."""
    rng = np.random.default_rng(cfg.seed)
    nx, ny, nz = cfg.dims

    centers = _tube_centerline(cfg, rng)
    radii = _tube_radii(cfg, rng)
    d2 = _inplane_dist2_mm(cfg, centers)
    mask = d2 <= (radii[None, None, :] ** 2)

    # smooth background texture
    bg = rng.normal(size=cfg.dims)
    bg = ndimage.gaussian_filter(bg, sigma=(6.0, 6.0, 2.0), mode="nearest")
    bg = bg / bg.std() * cfg.background_hu_std + cfg.background_hu_mean
    hu = bg

    # distractor blobs away from the tube
    for _ in range(cfg.n_distractor_blobs):
        hu = _add_blob(cfg, rng, hu, centers)

    if cfg.distractor_tube:
        hu = _add_distractor_tube(cfg, rng, hu, centers)

    # tube tissue
    tissue = rng.normal(cfg.tissue_hu_mean, cfg.tissue_hu_std, size=cfg.dims)
    hu = np.where(mask, tissue, hu)

    # air pockets inside the tube
    for z in range(nz):
        if rng.random() < cfg.air_pocket_prob:
            pr = min(radii[z] - 1.5, 2.5)
            if pr < 0.8:
                continue
            pocket = d2[:, :, z] <= pr**2
            hu[:, :, z][pocket] = cfg.air_hu + rng.normal(0.0, 30.0, pocket.sum())

    hu = hu + rng.normal(0.0, cfg.noise_std, size=cfg.dims)
    hu = np.clip(np.rint(hu), -1000, 2000)
    return (
        Volume3D(hu, cfg.spacing, KIND_HU),
        Volume3D(mask.astype(np.float64), cfg.spacing, KIND_MASK),
    )


def _add_blob(cfg, rng, hu, tube_centers):
    nx, ny, nz = cfg.dims
    sx, sy, sz = cfg.spacing
    for _ in range(50):
        cx = rng.uniform(5, nx - 6)
        cy = rng.uniform(5, ny - 6)
        cz = rng.uniform(2, nz - 3)
        tc = tube_centers[int(cz)]
        if np.hypot((cx - tc[0]) * sx, (cy - tc[1]) * sy) >= 15.0:
            break
    else:
        return hu
    rx, ry = rng.uniform(3.0, 6.0, 2)
    rz = rng.uniform(6.0, 12.0)
    offset = rng.choice([-1.0, 1.0]) * rng.uniform(80.0, 200.0)
    gx = (np.arange(nx)[:, None, None] - cx) * sx / rx
    gy = (np.arange(ny)[None, :, None] - cy) * sy / ry
    gz = (np.arange(nz)[None, None, :] - cz) * sz / rz
    inside = gx**2 + gy**2 + gz**2 <= 1.0
    return np.where(inside, hu + offset, hu)


def _add_distractor_tube(cfg, rng, hu, tube_centers):
    """A shorter, thinner tissue-like tube that mimics the true one."""
    nx, ny, nz = cfg.dims
    sx, sy, _ = cfg.spacing
    z0 = rng.integers(0, max(1, nz // 2))
    length = int(rng.integers(nz // 3, max(nz // 3 + 1, nz // 2)))
    z1 = min(nz, z0 + length)
    for _ in range(50):
        cx = rng.uniform(8, nx - 9)
        cy = rng.uniform(8, ny - 9)
        dmin = min(
            np.hypot((cx - tube_centers[z][0]) * sx, (cy - tube_centers[z][1]) * sy)
            for z in range(z0, z1)
        )
        if dmin >= 20.0:
            break
    else:
        return hu
    radius = rng.uniform(2.5, 4.0)
    gx = np.arange(nx)[:, None] * sx
    gy = np.arange(ny)[None, :] * sy
    inside2d = (gx - cx * sx) ** 2 + (gy - cy * sy) ** 2 <= radius**2
    vals = rng.normal(cfg.tissue_hu_mean - 15.0, cfg.tissue_hu_std, size=cfg.dims)
    sel = np.zeros(cfg.dims, dtype=bool)
    sel[:, :, z0:z1] = inside2d[:, :, None]
    return np.where(sel, vals, hu)


def generate_dataset(cfg, n, seed, out_dir):
    """Write n phantoms (seeds seed..seed+n-1) plus a manifest file.

    Returns the manifest path. Manifest rows are "ct_path mask_path",
    relative to the manifest's directory.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for i in range(n):
        from dataclasses import replace

        c = replace(cfg, seed=seed + i)
        ct, mask = generate_phantom(c)
        ct_name = "ct_%04d.mhd" % (seed + i)
        mask_name = "mask_%04d.mhd" % (seed + i)
        write_volume(ct, os.path.join(out_dir, ct_name))
        write_volume(mask, os.path.join(out_dir, mask_name))
        rows.append("%s %s" % (ct_name, mask_name))
    manifest = os.path.join(out_dir, "manifest.txt")
    with open(manifest, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    return manifest


def read_manifest(path):
    """List of absolute (ct_path, mask_path) pairs from a manifest file."""
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            ct_rel, mask_rel = line.split()
            pairs.append(
                (os.path.join(base, ct_rel), os.path.join(base, mask_rel))
            )
    if not pairs:
        raise ValueError("empty manifest: %s" % path)
    return pairs
