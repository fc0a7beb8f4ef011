"""Adam with bias-corrected moments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError, TrainingDivergedError

__all__ = ["AdamState", "adam_step"]


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_model(cls, model, **kw) -> "AdamState":
        st = cls(**kw)
        st.m = {k: np.zeros_like(p) for k, p in model.params.items()}
        st.v = {k: np.zeros_like(p) for k, p in model.params.items()}
        return st

    def copy(self) -> "AdamState":
        return AdamState(self.beta1, self.beta2, self.eps, self.step,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adam_step(model, state: AdamState, grad: dict, lr: float):
    """Apply one Adam update to ``model.params`` in place; returns ``(model, state)``."""
    for k, g in grad.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for {k}")
        if g.shape != model.params[k].shape or g.shape != state.m[k].shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {k}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k, g in grad.items():
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        model.params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return model, state
