"""Intensity prior models learned from training data.

Covers the univariate Gaussian mixture over foreground HU values (EM with
k-means++ style seeding), the per-voxel intensity prior map it induces,
and the 6-neighbor gradient statistics used for random-walker edge
weights.
"""

from dataclasses import dataclass

import numpy as np

VARIANCE_FLOOR = 1.0  # HU^2
SIGMA_DELTA_FLOOR = 1.0  # HU


@dataclass
class GMMModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K,) HU
    variances: np.ndarray  # (K,) HU^2

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be strictly positive")

    @property
    def k(self):
        return len(self.weights)

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        comp = (
            self.weights
            / np.sqrt(2.0 * np.pi * self.variances)
            * np.exp(-((x[..., None] - self.means) ** 2) / (2.0 * self.variances))
        )
        return comp.sum(axis=-1)


@dataclass
class GradientStats:
    mu_delta: float
    sigma_delta: float
    mean_eso_hu: float

    def __post_init__(self):
        if self.sigma_delta <= 0:
            raise ValueError("sigma_delta must be positive")


def _log_likelihood(samples, weights, means, variances):
    comp = (
        weights
        / np.sqrt(2.0 * np.pi * variances)
        * np.exp(-((samples[:, None] - means) ** 2) / (2.0 * variances))
    )
    return float(np.log(np.maximum(comp.sum(axis=1), 1e-300)).sum())


def _kmeanspp_centers(samples, k, rng):
    centers = [samples[rng.integers(len(samples))]]
    for _ in range(1, k):
        d2 = np.min((samples[:, None] - np.array(centers)) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(samples[rng.integers(len(samples))])
            continue
        centers.append(samples[np.searchsorted(np.cumsum(d2), rng.random() * total)])
    return np.array(centers, dtype=np.float64)


def fit_gmm(samples, k, rng, tol=1e-7, max_iters=200, return_history=False):
    """Univariate EM fit; log-likelihood is non-decreasing per iteration.

    With return_history=True also returns the per-iteration log-likelihood
    sequence.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if k < 1:
        raise ValueError("K must be >= 1")
    if len(samples) < 10 * k:
        raise ValueError("need at least 10*K samples, got %d" % len(samples))
    means = _kmeanspp_centers(samples, k, rng)
    var0 = max(samples.var(), VARIANCE_FLOOR)
    variances = np.full(k, var0)
    weights = np.full(k, 1.0 / k)
    ll_prev = _log_likelihood(samples, weights, means, variances)
    history = [ll_prev]
    for _ in range(max_iters):
        # E step
        comp = (
            weights
            / np.sqrt(2.0 * np.pi * variances)
            * np.exp(-((samples[:, None] - means) ** 2) / (2.0 * variances))
        )
        totals = np.maximum(comp.sum(axis=1, keepdims=True), 1e-300)
        resp = comp / totals
        # M step
        nk = np.maximum(resp.sum(axis=0), 1e-12)
        weights = nk / len(samples)
        means = (resp * samples[:, None]).sum(axis=0) / nk
        variances = (resp * (samples[:, None] - means) ** 2).sum(axis=0) / nk
        variances = np.maximum(variances, VARIANCE_FLOOR)
        ll = _log_likelihood(samples, weights, means, variances)
        history.append(ll)
        if ll - ll_prev < tol * max(1.0, abs(ll_prev)) and ll >= ll_prev - 1e-9:
            ll_prev = ll
            break
        ll_prev = ll
    weights = weights / weights.sum()
    model = GMMModel(weights, means, variances)
    if return_history:
        return model, history
    return model


def gmm_prior_map(ct, model):
    """Intensity prior in (0, 1]: mixture pdf scaled by its modal value.

    The mode is located on a 1-HU grid spanning every component's +-5 sigma
    range (component means included exactly), so a voxel at the mode maps
    to 1.
    """
    from .volume import KIND_HU, KIND_PROBABILITY, Volume3D

    if ct.kind != KIND_HU:
        raise ValueError("gmm_prior_map expects an HU volume")
    sig = np.sqrt(model.variances)
    lo = float(np.min(model.means - 5.0 * sig))
    hi = float(np.max(model.means + 5.0 * sig))
    grid = np.arange(lo, hi + 1.0, 1.0)
    cand = np.concatenate([grid, model.means])
    peak = float(model.pdf(cand).max())
    vals = np.minimum(model.pdf(ct.data) / peak, 1.0)
    return Volume3D(vals, ct.spacing, KIND_PROBABILITY)


def fit_gradient_stats(pairs):
    """6-neighbor HU difference statistics inside reference masks.

    pairs: iterable of (ct Volume3D, mask Volume3D). Each unordered
    neighbor pair is counted once, differenced in the +x/+y/+z direction
    (HU at the higher index minus HU at the lower). Also returns the mean
    HU over all mask voxels.
    """
    deltas = []
    hu_sum, hu_count = 0.0, 0
    for ct, mask in pairs:
        d = ct.data
        m = mask.data == 1.0
        hu_sum += d[m].sum()
        hu_count += int(m.sum())
        for axis in range(3):
            sel_lo = [slice(None)] * 3
            sel_hi = [slice(None)] * 3
            sel_lo[axis] = slice(0, -1)
            sel_hi[axis] = slice(1, None)
            both = m[tuple(sel_lo)] & m[tuple(sel_hi)]
            if both.any():
                diff = d[tuple(sel_hi)] - d[tuple(sel_lo)]
                deltas.append(diff[both])
    if not deltas or hu_count == 0:
        raise ValueError("no neighbor pairs inside the reference masks")
    deltas = np.concatenate(deltas)
    mu = float(deltas.mean())
    sigma = max(float(deltas.std()), SIGMA_DELTA_FLOOR)
    return GradientStats(mu, sigma, hu_sum / hu_count)


PRIOR_FILE_MAGIC = "ESOSEG_PRIORS"
PRIOR_FILE_VERSION = 1


def save_prior_model(path, gmm, stats):
    with open(path, "w") as fh:
        fh.write("%s v%d\n" % (PRIOR_FILE_MAGIC, PRIOR_FILE_VERSION))
        fh.write("K = %d\n" % gmm.k)
        for w, m, v in zip(gmm.weights, gmm.means, gmm.variances):
            fh.write("component = %.9g %.9g %.9g\n" % (w, m, v))
        fh.write("mu_delta = %.9g\n" % stats.mu_delta)
        fh.write("sigma_delta = %.9g\n" % stats.sigma_delta)
        fh.write("mean_eso_hu = %.9g\n" % stats.mean_eso_hu)


def load_prior_model(path):
    with open(path) as fh:
        first = fh.readline().strip()
        if not first.startswith(PRIOR_FILE_MAGIC):
            raise ValueError("not a prior model file: %s" % path)
        keys = {}
        comps = []
        for line in fh:
            key, val = (t.strip() for t in line.split("=", 1))
            if key == "component":
                comps.append(tuple(float(t) for t in val.split()))
            else:
                keys[key] = val
    if len(comps) != int(keys["K"]):
        raise ValueError("component count mismatch in prior file")
    comps = np.array(comps)
    gmm = GMMModel(comps[:, 0], comps[:, 1], comps[:, 2])
    stats = GradientStats(
        float(keys["mu_delta"]),
        float(keys["sigma_delta"]),
        float(keys["mean_eso_hu"]),
    )
    return gmm, stats
