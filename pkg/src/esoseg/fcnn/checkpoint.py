"""Model checkpoint file: versioned text header + float32 tensor payload.

Layout: UTF-8 header lines terminated by an "END_HEADER" line, then every
parameter tensor as little-endian float32 in NetworkParams declaration
order, then (if saved mid-training) the RMSprop cache and velocity tensors
in the same order. Checkpoints round-trip exactly because training runs
in float32.
"""

import io

import numpy as np

from . import network, training

MAGIC = "ESOSEG_CHECKPOINT"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, params, seed, epoch, state=None):
    spec = params.spec
    lines = [
        "%s v%d" % (MAGIC, VERSION),
        "conv_channels = %s" % " ".join(str(c) for c in spec.conv_channels),
        "fc_widths = %s" % " ".join(str(w) for w in spec.fc_widths),
        "n_classes = %d" % spec.n_classes,
        "dual_path = %d" % int(spec.dual_path),
        "seed = %d" % seed,
        "epoch = %d" % epoch,
        "optimizer_state = %d" % int(state is not None),
        "END_HEADER",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for t in params.tensors():
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
        if state is not None:
            for key in ("cache", "velocity"):
                for t in state[key]:
                    fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (params, seed, epoch, state-or-None)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    stream = io.BytesIO(blob)
    header = {}
    first = stream.readline().decode("utf-8").strip()
    if not first.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file")
    while True:
        line = stream.readline().decode("utf-8").strip()
        if line == "END_HEADER":
            break
        if not line or "=" not in line:
            raise CheckpointError("malformed checkpoint header")
        key, val = (t.strip() for t in line.split("=", 1))
        header[key] = val
    try:
        spec = network.ArchitectureSpec(
            conv_channels=tuple(int(t) for t in header["conv_channels"].split()),
            fc_widths=tuple(int(t) for t in header["fc_widths"].split()),
            n_classes=int(header["n_classes"]),
            dual_path=bool(int(header["dual_path"])),
        )
        seed = int(header["seed"])
        epoch = int(header["epoch"])
        has_state = bool(int(header["optimizer_state"]))
    except (KeyError, ValueError) as exc:
        raise CheckpointError("bad checkpoint header: %s" % exc) from exc
    params = network.init_params(spec, np.random.default_rng(0), dtype=np.float32)
    tensors = []
    for t in params.tensors():
        n = t.size * 4
        buf = stream.read(n)
        if len(buf) != n:
            raise CheckpointError("truncated checkpoint payload")
        tensors.append(np.frombuffer(buf, dtype="<f4").reshape(t.shape).copy())
    params.set_tensors(tensors)
    state = None
    if has_state:
        state = training.rmsprop_init(params)
        for key in ("cache", "velocity"):
            loaded = []
            for t in state[key]:
                n = t.size * 4
                buf = stream.read(n)
                if len(buf) != n:
                    raise CheckpointError("truncated optimizer state")
                loaded.append(np.frombuffer(buf, dtype="<f4").reshape(t.shape).copy())
            state[key] = loaded
    if stream.read(1):
        raise CheckpointError("trailing bytes in checkpoint")
    return params, seed, epoch, state
