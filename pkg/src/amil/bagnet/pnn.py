"""Parameterized-network helpers: (bag, theta) pairs and theta scans."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import HeadMismatchError, InvalidGridError
from ..rng import derive_seed
from ..synthdata import EventFamily, sample_events
from .data import PoolSource
from .model import BagModel, HeadKind, forward

__all__ = ["PNNGroup", "build_pnn_training_set", "predict_pnn", "pnn_source", "SM_NEGATIVE_MIX"]

# negatives paired with theta = 0 come from kinematics near zero
SM_NEGATIVE_MIX = ((0.2, 0.2), (-0.2, 0.2), (0.1, 0.3), (-0.1, 0.3))


@dataclass
class PNNGroup:
    events: np.ndarray
    bag_theta: float
    paired_theta: float
    label: int


def _grid_has(grid: np.ndarray, value: float) -> bool:
    return bool(np.any(np.isclose(grid, value, atol=1e-9)))


def build_pnn_training_set(family: EventFamily, theta_grid, events_per_class: int,
                           seed: int) -> list[PNNGroup]:
    """Symmetric positive/negative event groups for a parameterized classifier.

    * positives: events at theta_k paired with theta_k, for every grid point;
    * negatives: events at 0 paired with every theta_k != 0, and a 20/20/30/30
      mixture from theta = +-0.2, +-0.1 paired with 0.

    Positive and negative event totals are equal.
    """
    grid = np.asarray(theta_grid, dtype=np.float64)
    for req in (0.0, 0.1, -0.1, 0.2, -0.2):
        if not _grid_has(grid, req):
            raise InvalidGridError(f"theta grid must contain {req}")
    groups = []
    for k, t in enumerate(grid):
        t = 0.0 if abs(t) < 1e-12 else float(t)
        pos = sample_events(family, t, events_per_class, derive_seed(seed, "pnn-pos", k))
        groups.append(PNNGroup(pos.features, t, t, 1))
        if t != 0.0:
            neg = sample_events(family, 0.0, events_per_class, derive_seed(seed, "pnn-neg", k))
            groups.append(PNNGroup(neg.features, 0.0, t, 0))
    counts = [int(round(frac * events_per_class)) for _, frac in SM_NEGATIVE_MIX]
    counts[-1] = events_per_class - sum(counts[:-1])
    for j, ((t, _), n) in enumerate(zip(SM_NEGATIVE_MIX, counts)):
        ev = sample_events(family, t, n, derive_seed(seed, "pnn-mix", j))
        groups.append(PNNGroup(ev.features, t, 0.0, 0))
    return groups


def pnn_source(groups: list[PNNGroup], n_b: int) -> PoolSource:
    return PoolSource([(g.events, g.label, g.paired_theta) for g in groups], n_b)


def predict_pnn(model: BagModel, bag, theta: float) -> float:
    """Probability that the bag kinematics match ``theta``."""
    if model.head is not HeadKind.PARAM:
        raise HeadMismatchError(f"predict_pnn needs a parameterized head, model has {model.head.value}")
    return forward(model, bag, False, theta=theta).probability
