"""Training loop: balanced sub-volume sampling, RMSprop, lr schedule.

Training runs in float32 end to end so checkpoints round-trip exactly;
the per-epoch sampling RNG is derived from (seed, epoch) so a run resumed
from an epoch-boundary checkpoint reproduces the uninterrupted run bit
for bit.
"""

from dataclasses import dataclass

import numpy as np

from ..volume import extract_region
from . import network


@dataclass
class TrainingConfig:
    epochs: int = 25
    subepochs_per_epoch: int = 20
    samples_per_subepoch: int = 500
    batch_size: int = 5
    lr0: float = 0.001
    lr_halving_period_epochs: int = 5
    lr_halving_start_epoch: int = 10
    momentum: float = 0.6
    rms_decay: float = 0.9
    epsilon: float = 1e-6
    train_subvol: int = 27
    infer_subvol: int = 45
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        for name in (
            "epochs",
            "subepochs_per_epoch",
            "samples_per_subepoch",
            "batch_size",
            "lr_halving_period_epochs",
            "train_subvol",
            "infer_subvol",
        ):
            if getattr(self, name) < (0 if name == "epochs" else 1):
                raise ValueError("%s must be positive" % name)

    def learning_rate(self, epoch):
        """Learning rate for a 1-based epoch index, halved on schedule."""
        if epoch < self.lr_halving_start_epoch:
            return self.lr0
        halvings = 1 + (epoch - self.lr_halving_start_epoch) // self.lr_halving_period_epochs
        return self.lr0 / (2.0 ** halvings)


def rmsprop_init(params):
    """Zeroed cache and velocity matching every trainable tensor."""
    return {
        "cache": [np.zeros_like(t) for t in params.tensors()],
        "velocity": [np.zeros_like(t) for t in params.tensors()],
    }


def rmsprop_step(params, grads_flat, state, lr, momentum, rms_decay, epsilon):
    """One in-place RMSprop-with-momentum update.

    cache <- rho*cache + (1-rho)*g^2; v <- m*v - lr*g/sqrt(cache+eps);
    theta <- theta + v.
    """
    tensors = params.tensors()
    new_tensors = []
    for t, g, c, v in zip(tensors, grads_flat, state["cache"], state["velocity"]):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
        dt = t.dtype.type
        c *= dt(rms_decay)
        c += dt(1.0 - rms_decay) * g * g
        v *= dt(momentum)
        v -= dt(lr) * g / np.sqrt(c + dt(epsilon))
        new_tensors.append(t + v)
    params.set_tensors(new_tensors)
    return params, state


def sample_training_batch(dataset, cfg, rng, n_samples=None, spec=None):
    """Draw class-balanced training samples.

    dataset: list of (ct Volume3D, mask Volume3D). Half the sample centers
    are drawn uniformly from foreground voxels, half from background (all
    background for volumes with empty foreground). Returns a list of
    (main sub-volume, context sub-volume, label block) float32 triples.
    """
    if not dataset:
        raise ValueError("empty dataset")
    if spec is None:
        spec = network.tiny_spec()
    n = cfg.samples_per_subepoch if n_samples is None else n_samples
    s_main = cfg.train_subvol
    out = spec.output_size(s_main)
    s_ctx = spec.context_size(s_main)
    samples = []
    coord_cache = {}
    for i in range(n):
        k = rng.integers(len(dataset))
        vol, mask = dataset[k]
        md = mask.data
        if k not in coord_cache:
            coord_cache[k] = (np.argwhere(md == 1.0), np.argwhere(md == 0.0))
        fg, bg = coord_cache[k]
        want_fg = (i % 2 == 0) and len(fg) > 0
        coords = fg if want_fg else bg
        center = coords[rng.integers(len(coords))]
        main = _extract_centered(vol.data, center, s_main)
        ctx = _extract_centered(vol.data, center, s_ctx)
        lab = _extract_centered(md, center, out).astype(np.int64)
        samples.append(
            (main.astype(np.float32), ctx.astype(np.float32), lab)
        )
    return samples


def _extract_centered(data, center, size):
    start = tuple(int(c) - size // 2 for c in center)
    return extract_region(data, start, (size, size, size))


def train(dataset, cfg, spec=None, params=None, state=None, start_epoch=1,
          log=None):
    """Run the full training schedule; returns (params, loss history).

    Deterministic for a fixed (seed, config, dataset). params/state/
    start_epoch allow resuming from an epoch-boundary checkpoint.
    """
    if not dataset:
        raise ValueError("empty dataset")
    if spec is None:
        spec = network.tiny_spec()
    if params is None:
        init_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0)))
        params = network.init_params(spec, init_rng, dtype=np.float32)
    if state is None:
        state = rmsprop_init(params)
    history = []
    for epoch in range(start_epoch, cfg.epochs + 1):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, epoch)))
        lr = cfg.learning_rate(epoch)
        for sub in range(cfg.subepochs_per_epoch):
            samples = sample_training_batch(dataset, cfg, rng, spec=spec)
            losses = []
            for ofs in range(0, len(samples), cfg.batch_size):
                chunk = samples[ofs : ofs + cfg.batch_size]
                batch = [(m, c) for m, c, _ in chunk]
                labels = [l for _, _, l in chunk]
                grads, l = network.backward(params, batch, labels)
                flat = network.grads_in_order(params, grads)
                rmsprop_step(
                    params, flat, state, lr, cfg.momentum, cfg.rms_decay, cfg.epsilon
                )
                losses.append(l)
            mean_loss = float(np.mean(losses)) if losses else float("nan")
            history.append(mean_loss)
            if log is not None:
                log(epoch, sub + 1, lr, mean_loss)
    return params, history, state
