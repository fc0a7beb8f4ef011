"""Training loop: mini-batch Adam, plateau LR schedule, early stopping."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InsufficientDataError, TrainingDivergedError
from ..rng import derive_seed, make_rng
from .model import (
    BagModel,
    HeadKind,
    adapt_normalization,
    data_loss,
    l2_penalty,
    logits_batch,
    loss_and_grad,
    update_running_stats,
)
from .optim import AdamState, adam_step

__all__ = ["TrainSchedule", "History", "batch_size_for", "train", "evaluate_loss"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSchedule:
    initial_lr: float = 1e-3
    min_lr: float = 1e-4
    lr_reduction_factor: float = 0.3162
    patience: int = 10
    batch_events: int = 80_000
    dynamic_bags: bool = True
    max_epochs: int = 500
    min_delta: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.lr_reduction_factor < 1.0:
            raise ValueError("lr_reduction_factor must lie in (0, 1)")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be positive")

    def batch_size(self, n_b: int) -> int:
        return batch_size_for(n_b, self.batch_events)

    def digest(self) -> bytes:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).digest()


def batch_size_for(n_b: int, batch_events: int = 80_000) -> int:
    """Bags per mini-batch: ``floor(batch_events / N_B)``, at least one."""
    return max(1, batch_events // n_b)


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_loss(model: BagModel, x: np.ndarray, y: np.ndarray) -> float:
    """Eval-mode loss including the L2 term, as monitored for early stopping."""
    logits = logits_batch(model, x)
    yy = y.astype(np.int64) if model.head is HeadKind.MULTICLASS else y.astype(np.float64)
    return data_loss(model, logits, yy)[0] + l2_penalty(model)


def train(model: BagModel, train_data, val_data, schedule: TrainSchedule = TrainSchedule(),
          seed: int = 0) -> tuple[BagModel, History]:
    """Fit ``model`` in place and return it with its loss history.

    ``train_data`` is either a fixed ``(X, y)`` pair or a callable mapping a
    seed to ``(X, y)``; with ``schedule.dynamic_bags`` the callable is asked
    for fresh bags every epoch.  ``val_data`` is a fixed ``(X, y)`` pair or a
    callable (drawn once).  The weights of the best validation epoch are
    restored before returning.
    """
    dynamic = callable(train_data) and schedule.dynamic_bags
    if callable(train_data) and not dynamic:
        train_data = train_data(derive_seed(seed, "static-bags"))
    if callable(val_data):
        val_data = val_data(derive_seed(seed, "val-bags"))
    xv, yv = val_data
    if len(yv) == 0:
        raise InsufficientDataError("empty validation set")

    x, y = train_data(derive_seed(seed, "epoch", 0)) if dynamic else train_data
    if len(y) == 0:
        raise InsufficientDataError("empty training set")
    if not model.adapted:
        adapt_normalization(model, x.reshape(-1, x.shape[-1]))

    opt = AdamState.for_model(model)
    hist = History()
    lr = schedule.initial_lr
    best, best_w, wait = math.inf, model.get_weights(), 0
    for epoch in range(schedule.max_epochs):
        if dynamic and epoch > 0:
            x, y = train_data(derive_seed(seed, "epoch", epoch))
        bs = schedule.batch_size(x.shape[1])
        order = make_rng(seed, "order", epoch).permutation(len(y))
        total = 0.0
        for b, start in enumerate(range(0, len(y), bs)):
            idx = order[start:start + bs]
            stats: dict = {}
            loss, grad = loss_and_grad(model, x[idx], y[idx], rng=make_rng(seed, "dropout", epoch, b),
                                       stats=stats)
            if not math.isfinite(loss):
                hist.stop_reason = "diverged"
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}", hist)
            try:
                adam_step(model, opt, grad, lr)
            except TrainingDivergedError as exc:
                hist.stop_reason = "diverged"
                raise TrainingDivergedError(str(exc), hist) from None
            update_running_stats(model, stats)
            total += loss * len(idx)
        val = evaluate_loss(model, xv, yv)
        if not math.isfinite(val):
            hist.stop_reason = "diverged"
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}", hist)
        hist.train_loss.append(total / len(y))
        hist.val_loss.append(val)
        hist.lr.append(lr)

        if val < best - schedule.min_delta:
            best, best_w, wait = val, model.get_weights(), 0
            hist.best_epoch = epoch
        else:
            wait += 1
        if lr > schedule.min_lr * (1 + 1e-9):
            if wait >= schedule.patience:
                lr = lr * schedule.lr_reduction_factor
                if lr <= schedule.min_lr * (1 + 1e-9):
                    lr = schedule.min_lr
                wait = 0
                log.debug("epoch %d: lr -> %.3g", epoch, lr)
        elif wait >= 2 * schedule.patience:
            hist.stop_reason = "early-stop"
            break
    else:
        hist.stop_reason = "max-epochs"
    model.set_weights(best_w)
    return model, hist
