"""End-to-end segmentation pipeline and prior fitting orchestration.

Stage order: low-HU replacement -> CNN probability map -> centerline fit
-> centerline distance map -> intensity prior map -> graph weights ->
random-walker solve -> threshold -> morphological closing.
"""

import numpy as np

from . import acm, postproc, priors, rw
from .fcnn import inference
from .volume import read_volume

GMM_SAMPLE_CAP = 50000


def fit_priors_from_dataset(pairs, k=2, seed=0, cutoff=postproc.AIR_CUTOFF_HU):
    """Fit the GMM and gradient statistics from (ct, mask) volume pairs.

    The GMM is fitted on raw in-mask HU values (air pockets form their own
    component). Gradient statistics are fitted after low-HU replacement,
    matching the data the random walker actually sees; the replacement
    value is the mean of in-mask voxels at or above the cutoff.
    """
    raw_samples = []
    tissue_sum, tissue_count = 0.0, 0
    for ct, mask in pairs:
        inside = ct.data[mask.data == 1.0]
        raw_samples.append(inside)
        tissue = inside[inside >= cutoff]
        tissue_sum += tissue.sum()
        tissue_count += tissue.size
    if tissue_count == 0:
        raise ValueError("no in-mask voxels above the air cutoff")
    mean_tissue_hu = tissue_sum / tissue_count

    pre_pairs = [
        (postproc.preprocess_ct(ct, mean_tissue_hu, cutoff), mask)
        for ct, mask in pairs
    ]
    stats = priors.fit_gradient_stats(pre_pairs)

    samples = np.concatenate(raw_samples)
    rng = np.random.default_rng(seed)
    if samples.size > GMM_SAMPLE_CAP:
        samples = rng.choice(samples, size=GMM_SAMPLE_CAP, replace=False)
    gmm = priors.fit_gmm(samples, k, rng)
    return gmm, stats


def segment_volume(
    ct,
    params,
    gmm,
    stats,
    acm_cfg=None,
    rw_cfg=None,
    infer_subvol=45,
    closing_radius=1,
):
    """Run the full pipeline on one CT volume.

    Returns (final mask Volume3D, intermediates dict with the CNN map,
    ACM distance map, intensity prior map and raw RW probability).
    """
    if rw_cfg is None:
        rw_cfg = rw.RWConfig()
    pre = postproc.preprocess_ct(ct, stats.mean_eso_hu)
    cnn_map = inference.predict_volume(params, pre, infer_subvol)
    centerline = acm.fit_centerline(cnn_map, acm_cfg)
    acm_map = acm.centerline_distance_map(centerline, ct)
    ct_prior = priors.gmm_prior_map(pre, gmm)
    ew = rw.build_edge_weights(pre, stats)
    pf = rw.build_prior_weights(cnn_map, acm_map, ct_prior)
    rw_prob = rw.solve_rw(ew, pf, rw_cfg)
    label = rw.extract_label(rw_prob, rw_cfg.threshold)
    final = postproc.morphological_closing(label, closing_radius)
    intermediates = {
        "cnn": cnn_map,
        "acm": acm_map,
        "ctprior": ct_prior,
        "rw": rw_prob,
        "centerline": centerline,
    }
    return final, intermediates


def load_pairs(manifest_pairs):
    return [(read_volume(ct), read_volume(mask)) for ct, mask in manifest_pairs]
