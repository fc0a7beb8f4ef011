"""Mean-pooled bag classifier: model, optimizer, training and PNN helpers."""

from .data import PoolSource, draw_bags
from .model import (
    BagModel,
    HeadKind,
    HeadOutput,
    adapt_normalization,
    as_batch,
    embed,
    forward,
    forward_batch,
    logits_batch,
    loss_and_grad,
    n_trainable_params,
    pool,
    predict_proba,
)
from .optim import AdamState, adam_step
from .pnn import PNNGroup, build_pnn_training_set, pnn_source, predict_pnn
from .train import History, TrainSchedule, batch_size_for, evaluate_loss, train

__all__ = [
    "AdamState",
    "BagModel",
    "HeadKind",
    "HeadOutput",
    "History",
    "PNNGroup",
    "PoolSource",
    "TrainSchedule",
    "adam_step",
    "adapt_normalization",
    "as_batch",
    "batch_size_for",
    "build_pnn_training_set",
    "draw_bags",
    "embed",
    "evaluate_loss",
    "forward",
    "forward_batch",
    "logits_batch",
    "loss_and_grad",
    "n_trainable_params",
    "pnn_source",
    "pool",
    "predict_pnn",
    "predict_proba",
    "train",
]
