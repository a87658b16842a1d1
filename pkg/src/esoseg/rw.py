"""Seed-free random walker on the 6-connected voxel lattice.

Edge weights come from a Gaussian model of neighboring-voxel HU
differences; two label nodes (foreground / background) attach to every
voxel with prior-product weights. The resulting augmented Dirichlet
problem (L + gamma*Lambda) x = gamma*b is symmetric positive definite and
solved matrix-free with Jacobi-preconditioned conjugate gradient.
"""

from dataclasses import dataclass

import numpy as np

from .volume import KIND_HU, KIND_MASK, KIND_PROBABILITY, Volume3D

EDGE_WEIGHT_FLOOR = 1e-6


class SolverError(Exception):
    """Raised on singular systems or CG non-convergence."""


@dataclass
class EdgeWeights:
    """Per-axis weights between voxel (i) and its +axis neighbor."""

    wx: np.ndarray  # (nx-1, ny, nz)
    wy: np.ndarray  # (nx, ny-1, nz)
    wz: np.ndarray  # (nx, ny, nz-1)

    @property
    def dims(self):
        return (self.wx.shape[0] + 1,) + self.wx.shape[1:]


@dataclass
class PriorField:
    w_eso: Volume3D
    w_non: Volume3D


@dataclass
class RWConfig:
    gamma: float = 1.0
    cg_tol: float = 1e-8
    cg_max_iters: int = 5000
    threshold: float = 0.5

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


def build_edge_weights(ct, stats):
    """Gaussian-of-difference edge weights, min-max scaled to [floor, 1]."""
    if ct.kind != KIND_HU:
        raise ValueError("build_edge_weights expects an HU volume")
    if ct.data.size == 1:
        raise ValueError("volume has no edges")
    d = ct.data
    raws = []
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        delta = d[tuple(hi)] - d[tuple(lo)]
        raws.append(
            np.exp(-((delta - stats.mu_delta) ** 2) / (2.0 * stats.sigma_delta**2))
            / (stats.sigma_delta * np.sqrt(2.0 * np.pi))
        )
    all_vals = np.concatenate([r.ravel() for r in raws])
    w_min, w_max = float(all_vals.min()), float(all_vals.max())
    if w_max == w_min:
        scaled = [np.ones_like(r) for r in raws]
    else:
        scaled = [
            np.maximum((r - w_min) / (w_max - w_min), EDGE_WEIGHT_FLOOR) for r in raws
        ]
    return EdgeWeights(*scaled)


def build_prior_weights(cnn, acm, ctprior):
    """Label-node weights: products of the three per-voxel priors."""
    if not (cnn.dims == acm.dims == ctprior.dims):
        raise ValueError("prior volumes must share dimensions")
    w_eso = cnn.data * acm.data * ctprior.data
    w_non = (1.0 - cnn.data) * (1.0 - acm.data) * (1.0 - ctprior.data)
    return PriorField(
        Volume3D(w_eso, cnn.spacing, KIND_PROBABILITY),
        Volume3D(w_non, cnn.spacing, KIND_PROBABILITY),
    )


def _laplacian_apply(ew, x):
    """y = L x for the weighted 6-connected lattice Laplacian."""
    y = np.zeros_like(x)
    for axis, w in enumerate((ew.wx, ew.wy, ew.wz)):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        diff = w * (x[lo] - x[hi])
        y[lo] += diff
        y[hi] -= diff
    return y


def _degree(ew, dims):
    deg = np.zeros(dims)
    for axis, w in enumerate((ew.wx, ew.wy, ew.wz)):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        deg[tuple(lo)] += w
        deg[tuple(hi)] += w
    return deg


def solve_rw(ew, pf, cfg=None):
    """Solve the augmented system for the foreground probability volume."""
    if cfg is None:
        cfg = RWConfig()
    we = pf.w_eso.data
    wn = pf.w_non.data
    dims = we.shape
    if ew.dims != dims:
        raise ValueError("edge weights and priors disagree on dims")
    lam = cfg.gamma * (we + wn)
    if lam.max() <= 0.0:
        raise SolverError("singular system: no prior attachment anywhere")
    b = cfg.gamma * we
    diag = _degree(ew, dims) + lam
    x = solve_spd_cg(
        lambda v: _laplacian_apply(ew, v) + lam * v,
        b,
        diag,
        cfg.cg_tol,
        cfg.cg_max_iters,
    )
    return Volume3D(np.clip(x, 0.0, 1.0), pf.w_eso.spacing, KIND_PROBABILITY)


def solve_spd_cg(apply_a, b, diag, tol, max_iters):
    """Jacobi-preconditioned CG; returns x with ||r|| / ||b|| < tol."""
    b_norm = float(np.sqrt((b * b).sum()))
    if b_norm == 0.0:
        return np.zeros_like(b)
    inv_diag = 1.0 / diag
    x = np.zeros_like(b)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = float((r * z).sum())
    for _ in range(max_iters):
        ap = apply_a(p)
        alpha = rz / float((p * ap).sum())
        x += alpha * p
        r -= alpha * ap
        if np.sqrt(float((r * r).sum())) / b_norm < tol:
            return x
        z = inv_diag * r
        rz_new = float((r * z).sum())
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError("CG did not converge within %d iterations" % max_iters)


def extract_label(x, threshold=0.5):
    """Binarize a probability volume; ties (x == threshold) go foreground."""
    if x.kind != KIND_PROBABILITY:
        raise ValueError("extract_label expects a probability volume")
    return Volume3D((x.data >= threshold).astype(np.float64), x.spacing, KIND_MASK)


def dense_system(ew, pf, cfg):
    """Dense (A, b) for small grids; the CG oracle in tests."""
    we = pf.w_eso.data
    wn = pf.w_non.data
    dims = we.shape
    n = we.size
    idx = np.arange(n).reshape(dims)
    a = np.zeros((n, n))
    for axis, w in enumerate((ew.wx, ew.wy, ew.wz)):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        i = idx[tuple(lo)].ravel()
        j = idx[tuple(hi)].ravel()
        wv = w.ravel()
        a[i, j] -= wv
        a[j, i] -= wv
        np.add.at(a, (i, i), wv)
        np.add.at(a, (j, j), wv)
    lam = cfg.gamma * (we + wn).ravel()
    a[np.arange(n), np.arange(n)] += lam
    b = cfg.gamma * we.ravel()
    return a, b
