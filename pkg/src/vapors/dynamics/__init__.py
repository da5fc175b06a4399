from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import (
    LatentDynamics,
    LatentState,
    ModelParams,
    TrainBatch,
    TrainingError,
    decode_obs,
    decode_reward,
    grad,
    loss,
    loss_and_grad,
    param_shapes,
    posterior_encode,
    prior_transition,
)

__all__ = [
    "CheckpointError",
    "LatentDynamics",
    "LatentState",
    "ModelParams",
    "TrainBatch",
    "TrainingError",
    "decode_obs",
    "decode_reward",
    "grad",
    "load_checkpoint",
    "loss",
    "loss_and_grad",
    "param_shapes",
    "posterior_encode",
    "prior_transition",
    "save_checkpoint",
]
