"""Memory-array RNN next-event predictor with compiled and numpy kernels."""

from .kernels import BACKEND, have_compiled
from .model import (
    Batch,
    CellState,
    ModelConfig,
    ParamLayout,
    accuracy,
    cell_step,
    clip_by_global_norm,
    forward_batch,
    forward_sequence,
    hessian_vector_product,
    init_params,
    load_params,
    local_train,
    log_softmax,
    loss,
    loss_and_gradient,
    make_batch,
    per_sequence_loss,
    predict,
    predict_logits,
    save_params,
    softmax,
)

__all__ = [
    "BACKEND",
    "Batch",
    "CellState",
    "ModelConfig",
    "ParamLayout",
    "accuracy",
    "cell_step",
    "clip_by_global_norm",
    "forward_batch",
    "forward_sequence",
    "have_compiled",
    "hessian_vector_product",
    "init_params",
    "load_params",
    "local_train",
    "log_softmax",
    "loss",
    "loss_and_gradient",
    "make_batch",
    "per_sequence_loss",
    "predict",
    "predict_logits",
    "save_params",
    "softmax",
]
