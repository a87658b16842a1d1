"""Dual-path 3D FCNN: parameter containers, forward pass, loss, backward.

The main path sees the sub-volume at native resolution; the context path
sees a wider box around the same center, mean-pooled by 2, and its output
is nearest-neighbor up-sampled, center-cropped and channel-concatenated
with the main path before the 1x1x1 "fully-connected" layers.
"""

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .layers import ShapeError

CONV_K = 3
PRELU_INIT = 0.25
LOSS_P_FLOOR = 1e-12


@dataclass(frozen=True)
class ArchitectureSpec:
    conv_channels: tuple = (25, 25, 25, 50, 50, 50, 75, 75, 75)
    fc_widths: tuple = (400, 200, 150)
    n_classes: int = 2
    dual_path: bool = True

    def __post_init__(self):
        if len(self.conv_channels) != 9 or any(c < 1 for c in self.conv_channels):
            raise ValueError("expected 9 positive conv channel counts")
        if len(self.fc_widths) != 3 or any(w < 1 for w in self.fc_widths):
            raise ValueError("expected 3 positive FC widths")
        if self.n_classes != 2:
            raise ValueError("only two-class networks are supported")

    @property
    def receptive_field(self):
        # nine 3^3 valid convolutions per path
        return 1 + len(self.conv_channels) * (CONV_K - 1)

    def output_size(self, main_in):
        out = main_in - (self.receptive_field - 1)
        if out < 1:
            raise ShapeError("main input %d smaller than receptive field" % main_in)
        return out

    def context_size(self, main_in):
        out = self.output_size(main_in)
        return 2 * ((out + 1) // 2 + self.receptive_field - 1)


def tiny_spec():
    """Desk-scale preset used by the acceptance runs."""
    return ArchitectureSpec(
        conv_channels=(4, 4, 4, 8, 8, 8, 12, 12, 12), fc_widths=(32, 16, 8)
    )


def full_spec():
    return ArchitectureSpec()


@dataclass
class LayerParams:
    kernels: np.ndarray
    biases: np.ndarray
    slopes: np.ndarray = None  # None for the classification layer


@dataclass
class NetworkParams:
    spec: ArchitectureSpec
    main: list = field(default_factory=list)
    context: list = field(default_factory=list)
    fc: list = field(default_factory=list)
    cls: LayerParams = None

    def layers_in_order(self):
        out = list(self.main) + list(self.context) + list(self.fc)
        out.append(self.cls)
        return out

    def named_tensors(self):
        """Flat (name, array) view in a fixed declaration order."""
        groups = [("main", self.main), ("context", self.context), ("fc", self.fc)]
        out = []
        for gname, group in groups:
            for i, lp in enumerate(group):
                out.append(("%s%d.kernels" % (gname, i), lp.kernels))
                out.append(("%s%d.biases" % (gname, i), lp.biases))
                out.append(("%s%d.slopes" % (gname, i), lp.slopes))
        out.append(("cls.kernels", self.cls.kernels))
        out.append(("cls.biases", self.cls.biases))
        return out

    def tensors(self):
        return [a for _, a in self.named_tensors()]

    def set_tensors(self, arrays):
        flat = self.named_tensors()
        if len(arrays) != len(flat):
            raise ValueError("tensor count mismatch")
        it = iter(arrays)
        for group in (self.main, self.context, self.fc):
            for lp in group:
                lp.kernels, lp.biases, lp.slopes = next(it), next(it), next(it)
        self.cls.kernels, self.cls.biases = next(it), next(it)


def he_init(shape, n_l, rng):
    """He-style Gaussian init with std sqrt(2 / fan_in)."""
    if n_l < 1:
        raise ValueError("fan-in must be positive")
    return rng.normal(0.0, np.sqrt(2.0 / n_l), size=shape)


def _conv_layer(ci, co, k, rng, dtype, with_prelu=True):
    fan_in = ci * k * k * k
    kern = he_init((co, ci, k, k, k), fan_in, rng).astype(dtype)
    bias = np.zeros(co, dtype=dtype)
    slopes = np.full(co, PRELU_INIT, dtype=dtype) if with_prelu else None
    return LayerParams(kern, bias, slopes)


def init_params(spec, rng, dtype=np.float32):
    """Initialize all trainable tensors for the given architecture."""
    p = NetworkParams(spec=spec)
    for path in ("main", "context"):
        ci = 1
        lst = []
        for co in spec.conv_channels:
            lst.append(_conv_layer(ci, co, CONV_K, rng, dtype))
            ci = co
        setattr(p, path, lst)
    ci = spec.conv_channels[-1] * (2 if spec.dual_path else 1)
    fc = []
    for co in spec.fc_widths:
        fc.append(_conv_layer(ci, co, 1, rng, dtype))
        ci = co
    p.fc = fc
    p.cls = _conv_layer(ci, spec.n_classes, 1, rng, dtype, with_prelu=False)
    return p


def _run_path(path_params, x, tape=None):
    for lp in path_params:
        if tape is None:
            x = layers.prelu(layers.conv3d_valid(x, lp.kernels, lp.biases), lp.slopes)
        else:
            y, cache = layers.conv3d_valid(x, lp.kernels, lp.biases, want_cache=True)
            tape.append((lp, cache, y))
            x = layers.prelu(y, lp.slopes)
    return x


def forward(params, main_in, context_in=None, want_tape=False):
    """Forward pass on one sample; returns (class scores, softmax probs).

    main_in and context_in are (1, S, S, S) tensors (a leading channel axis
    is added if missing). With want_tape=True a third element carrying the
    caches for backward() is returned.
    """
    spec = params.spec
    if main_in.ndim == 3:
        main_in = main_in[None]
    m = np.ascontiguousarray(main_in)
    out_sp = tuple(s - (spec.receptive_field - 1) for s in m.shape[1:])
    if any(s < 1 for s in out_sp):
        raise ShapeError("main input %s below receptive field" % (m.shape[1:],))
    tape = {"main": [], "context": [], "fc": []} if want_tape else None

    feat = _run_path(params.main, m, tape["main"] if want_tape else None)
    if spec.dual_path:
        if context_in is None:
            raise ShapeError("dual-path network requires a context input")
        if context_in.ndim == 3:
            context_in = context_in[None]
        want = tuple(
            2 * ((o + 1) // 2 + spec.receptive_field - 1) for o in out_sp
        )
        if context_in.shape[1:] != want:
            raise ShapeError(
                "context input %s, expected %s" % (context_in.shape[1:], want)
            )
        c = layers.mean_pool2(np.ascontiguousarray(context_in))
        cfeat = _run_path(params.context, c, tape["context"] if want_tape else None)
        ctx_up = layers.upsample2_crop(cfeat, out_sp)
        feat = np.concatenate([feat, ctx_up], axis=0)
        if want_tape:
            tape["ctx_shapes"] = (context_in.shape, cfeat.shape[1:])
    x = _run_path(params.fc, feat, tape["fc"] if want_tape else None)
    scores, cls_cache = layers.conv3d_valid(
        x, params.cls.kernels, params.cls.biases, want_cache=True
    )
    probs = layers.softmax_channels(scores)
    if want_tape:
        tape["cls_cache"] = cls_cache
        tape["n_main_feat"] = params.main[-1].kernels.shape[0]
        return scores, probs, tape
    return scores, probs


def loss(probmap, labels):
    """Mean negative log-probability of the true class.

    probmap: (n_classes, ...) softmax output or a list of them (a batch);
    labels: matching integer class grid(s).
    """
    if isinstance(probmap, (list, tuple)):
        total, count = 0.0, 0
        for p, l in zip(probmap, labels):
            p_true = np.take_along_axis(p, np.asarray(l)[None], axis=0)[0]
            total += -np.log(np.maximum(p_true, LOSS_P_FLOOR)).sum()
            count += p_true.size
        return total / count
    p_true = np.take_along_axis(probmap, np.asarray(labels)[None], axis=0)[0]
    return float(-np.log(np.maximum(p_true, LOSS_P_FLOOR)).mean())


def _backward_path(path_params, tape, dx, grads):
    for lp, cache, pre_act in reversed(tape):
        d_pre, da = layers.prelu_backward(dx, pre_act, lp.slopes)
        dx, dk, db = layers.conv3d_backward(d_pre, lp.kernels, cache)
        g = grads[id(lp)]
        g["kernels"] += dk
        g["biases"] += db
        g["slopes"] += da
    return dx


def zero_grads(params):
    grads = {}
    for group in (params.main, params.context, params.fc):
        for lp in group:
            grads[id(lp)] = {
                "kernels": np.zeros_like(lp.kernels),
                "biases": np.zeros_like(lp.biases),
                "slopes": np.zeros_like(lp.slopes),
            }
    grads[id(params.cls)] = {
        "kernels": np.zeros_like(params.cls.kernels),
        "biases": np.zeros_like(params.cls.biases),
    }
    return grads


def grads_in_order(params, grads):
    """Flat gradient list matching NetworkParams.named_tensors()."""
    out = []
    for group in (params.main, params.context, params.fc):
        for lp in group:
            g = grads[id(lp)]
            out.extend([g["kernels"], g["biases"], g["slopes"]])
    g = grads[id(params.cls)]
    out.extend([g["kernels"], g["biases"]])
    return out


def backward(params, batch, labels):
    """Analytic gradient of the mean cost over a batch of samples.

    batch is a list of (main_in, context_in) pairs; labels a list of
    integer grids shaped like the output block. Returns (grads dict keyed
    like zero_grads, mean loss).
    """
    spec = params.spec
    grads = zero_grads(params)
    total_vox = 0
    loss_sum = 0.0
    results = []
    for (main_in, context_in), lab in zip(batch, labels):
        scores, probs, tape = forward(params, main_in, context_in, want_tape=True)
        lab = np.asarray(lab)
        total_vox += lab.size
        p_true = np.take_along_axis(probs, lab[None], axis=0)[0]
        loss_sum += -np.log(np.maximum(p_true, LOSS_P_FLOOR)).sum()
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, lab[None], 1.0, axis=0)
        dscores = (probs - onehot).astype(scores.dtype)
        results.append((dscores, tape))
    scale = 1.0 / total_vox
    for dscores, tape in results:
        dscores = dscores * np.asarray(scale, dtype=dscores.dtype)
        dx, dk, db = layers.conv3d_backward(
            dscores, params.cls.kernels, tape["cls_cache"]
        )
        g = grads[id(params.cls)]
        g["kernels"] += dk
        g["biases"] += db
        dx = _backward_path(params.fc, tape["fc"], dx, grads)
        if spec.dual_path:
            nm = tape["n_main_feat"]
            d_main, d_ctx = dx[:nm], dx[nm:]
            ctx_in_shape, cfeat_sp = tape["ctx_shapes"]
            d_cfeat = layers.upsample2_crop_backward(d_ctx, cfeat_sp)
            d_pool = _backward_path(params.context, tape["context"], d_cfeat, grads)
            # gradient w.r.t. the raw context input is discarded (input data)
            layers.mean_pool2_backward(d_pool, ctx_in_shape)
            dx = d_main
        _backward_path(params.main, tape["main"], dx, grads)
    return grads, loss_sum / total_vox
