"""Active contour centerline: one in-plane point per axial slice.

The contour minimizes a data term (negative smoothed, bilinearly
interpolated probability) plus a first-order membrane smoothness penalty,
by gradient descent with step halving whenever a step would increase the
energy. The fitted line is then turned into a linear distance map that is
1 on the centerline and falls to 0 at 25 mm.
"""

from dataclasses import dataclass

import numpy as np

from .volume import KIND_PROBABILITY, Volume3D

DISTANCE_RADIUS_MM = 25.0


@dataclass
class ACMConfig:
    alpha: float = 0.5
    step: float = 0.5
    max_iters: int = 500
    tol: float = 1e-3

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


@dataclass
class Centerline:
    """Ordered (x, y) point per axial slice, z = 0..nz-1."""

    points: np.ndarray  # (nz, 2) float64

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError("centerline points must be (nz, 2)")


def save_centerline(c, path):
    with open(path, "w") as fh:
        for z, (x, y) in enumerate(c.points):
            fh.write("%d %.6f %.6f\n" % (z, x, y))


def load_centerline(path):
    pts = []
    with open(path) as fh:
        for line in fh:
            _, x, y = line.split()
            pts.append((float(x), float(y)))
    return Centerline(np.array(pts))


def init_centerline(probmap):
    """Probability-weighted in-plane centroid per slice.

    Slices with (near) zero total probability inherit the nearest
    initialized slice's point, or the volume in-plane center if no slice
    has mass.
    """
    if probmap.kind != KIND_PROBABILITY:
        raise ValueError("init_centerline expects a probability volume")
    nx, ny, nz = probmap.dims
    data = probmap.data
    pts = np.empty((nz, 2))
    mass = data.sum(axis=(0, 1))
    xs = np.arange(nx, dtype=np.float64)
    ys = np.arange(ny, dtype=np.float64)
    good = mass >= 1e-6
    for z in range(nz):
        if good[z]:
            sl = data[:, :, z]
            pts[z, 0] = (sl.sum(axis=1) * xs).sum() / mass[z]
            pts[z, 1] = (sl.sum(axis=0) * ys).sum() / mass[z]
    if not good.any():
        pts[:] = ((nx - 1) / 2.0, (ny - 1) / 2.0)
    elif not good.all():
        idx_good = np.flatnonzero(good)
        for z in np.flatnonzero(~good):
            nearest = idx_good[np.argmin(np.abs(idx_good - z))]
            pts[z] = pts[nearest]
    return Centerline(pts)


def _box_smooth3(data):
    """3x3x3 box smoothing with edge-replicated borders."""
    padded = np.pad(data, 1, mode="edge")
    out = np.zeros_like(data)
    for dx in range(3):
        for dy in range(3):
            for dz in range(3):
                out += padded[
                    dx : dx + data.shape[0],
                    dy : dy + data.shape[1],
                    dz : dz + data.shape[2],
                ]
    return out / 27.0


def _bilinear(slice2d, x, y):
    """Value and in-plane gradient of the bilinear interpolant at (x, y)."""
    nx, ny = slice2d.shape
    x = min(max(x, 0.0), nx - 1.0)
    y = min(max(y, 0.0), ny - 1.0)
    x0 = min(int(x), nx - 2) if nx > 1 else 0
    y0 = min(int(y), ny - 2) if ny > 1 else 0
    x1 = min(x0 + 1, nx - 1)
    y1 = min(y0 + 1, ny - 1)
    fx, fy = x - x0, y - y0
    v00, v01 = slice2d[x0, y0], slice2d[x0, y1]
    v10, v11 = slice2d[x1, y0], slice2d[x1, y1]
    val = (
        v00 * (1 - fx) * (1 - fy)
        + v10 * fx * (1 - fy)
        + v01 * (1 - fx) * fy
        + v11 * fx * fy
    )
    gx = (v10 - v00) * (1 - fy) + (v11 - v01) * fy
    gy = (v01 - v00) * (1 - fx) + (v11 - v10) * fx
    return val, gx, gy


def _energy_and_grad(smoothed, pts, alpha):
    nz = pts.shape[0]
    e_data = 0.0
    grad = np.zeros_like(pts)
    for z in range(nz):
        val, gx, gy = _bilinear(smoothed[:, :, z], pts[z, 0], pts[z, 1])
        e_data -= val
        grad[z, 0] -= gx
        grad[z, 1] -= gy
    diffs = pts[1:] - pts[:-1]
    e_smooth = alpha * float((diffs**2).sum())
    grad[:-1] += -2.0 * alpha * diffs
    grad[1:] += 2.0 * alpha * diffs
    return e_data + e_smooth, grad


def fit_centerline(probmap, cfg=None, init=None, return_energies=False):
    """Fit the per-slice contour on a probability map.

    The energy is guaranteed non-increasing across accepted iterations:
    steps that would raise it trigger step halving instead. init overrides
    the centroid-based starting contour. With return_energies=True also
    returns the energy at the start plus after every accepted step.
    """
    if cfg is None:
        cfg = ACMConfig()
    nx, ny, nz = probmap.dims
    smoothed = _box_smooth3(probmap.data)
    if init is None:
        init = init_centerline(probmap)
    pts = init.points.copy()
    step = cfg.step
    energy, grad = _energy_and_grad(smoothed, pts, cfg.alpha)
    energies = [energy]
    for _ in range(cfg.max_iters):
        trial = pts - step * grad
        trial[:, 0] = np.clip(trial[:, 0], 0.0, nx - 1.0)
        trial[:, 1] = np.clip(trial[:, 1], 0.0, ny - 1.0)
        e_new, g_new = _energy_and_grad(smoothed, trial, cfg.alpha)
        if e_new > energy:
            step *= 0.5
            if step < 1e-12:
                break
            continue
        moved = float(np.abs(trial - pts).max())
        pts, energy, grad = trial, e_new, g_new
        energies.append(energy)
        if moved < cfg.tol:
            break
    c = Centerline(pts)
    if return_energies:
        return c, energies
    return c


def centerline_distance_map(c, geometry_of):
    """Linear 25 mm falloff from the centerline polyline (3D, in mm)."""
    nx, ny, nz = geometry_of.dims
    if c.points.shape[0] != nz:
        raise ValueError("centerline has %d points for %d slices" % (c.points.shape[0], nz))
    sx, sy, sz = geometry_of.spacing
    # physical voxel-center coordinates
    px = np.arange(nx) * sx
    py = np.arange(ny) * sy
    pz = np.arange(nz) * sz
    vx, vy, vzc = np.meshgrid(px, py, pz, indexing="ij")
    pts_mm = np.column_stack(
        [c.points[:, 0] * sx, c.points[:, 1] * sy, np.arange(nz) * sz]
    )
    dist2 = np.full((nx, ny, nz), np.inf)
    if nz == 1:
        d2 = (vx - pts_mm[0, 0]) ** 2 + (vy - pts_mm[0, 1]) ** 2 + (vzc - pts_mm[0, 2]) ** 2
        dist2 = d2
    for k in range(nz - 1):
        a = pts_mm[k]
        b = pts_mm[k + 1]
        ab = b - a
        denom = float(ab @ ab)
        wx, wy, wz = vx - a[0], vy - a[1], vzc - a[2]
        if denom == 0.0:
            t = np.zeros_like(wx)
        else:
            t = np.clip((wx * ab[0] + wy * ab[1] + wz * ab[2]) / denom, 0.0, 1.0)
        d2 = (wx - t * ab[0]) ** 2 + (wy - t * ab[1]) ** 2 + (wz - t * ab[2]) ** 2
        np.minimum(dist2, d2, out=dist2)
    vals = np.maximum(0.0, 1.0 - np.sqrt(dist2) / DISTANCE_RADIUS_MM)
    return Volume3D(vals, geometry_of.spacing, KIND_PROBABILITY)
