from .network import (
    ArchitectureSpec,
    NetworkParams,
    backward,
    forward,
    he_init,
    init_params,
    loss,
    full_spec,
    tiny_spec,
)
from .layers import conv3d_valid, prelu, ShapeError
from .training import TrainingConfig, rmsprop_init, rmsprop_step, sample_training_batch, train
from .inference import predict_volume
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "ArchitectureSpec",
    "NetworkParams",
    "TrainingConfig",
    "CheckpointError",
    "ShapeError",
    "backward",
    "conv3d_valid",
    "forward",
    "he_init",
    "init_params",
    "load_checkpoint",
    "loss",
    "full_spec",
    "predict_volume",
    "prelu",
    "rmsprop_init",
    "rmsprop_step",
    "sample_training_batch",
    "save_checkpoint",
    "tiny_spec",
    "train",
]
