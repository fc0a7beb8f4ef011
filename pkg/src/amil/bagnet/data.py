"""Bag sources for training: event pools re-bagged on demand."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import derive_seed
from ..synthdata import bag_indices, contaminate_arrays

__all__ = ["PoolSource", "draw_bags"]


@dataclass
class PoolSource:
    """Labeled event pools that are cut into bags with a given seed.

    Each pool is ``(events[n, d], label)`` or ``(events, label, theta)``; when
    a theta is given it is appended to every event row (parameterized head).
    Background rows, if any, are dealt out to pools round-robin so no
    background event appears in two bags of one draw.
    """

    pools: list
    n_signal: int
    background: np.ndarray | None = None
    c_bkgrd: float = 0.0

    def __call__(self, seed: int) -> tuple[np.ndarray, np.ndarray]:
        return draw_bags(self, seed)

    @property
    def n_events(self) -> int:
        return sum(p[0].shape[0] for p in self.pools)


def draw_bags(src: PoolSource, seed: int) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    k = len(src.pools)
    for i, pool in enumerate(src.pools):
        events, label = pool[0], pool[1]
        s = derive_seed(seed, "pool", i)
        if src.background is not None and src.c_bkgrd > 0:
            x, _ = contaminate_arrays(events, src.background[i::k], src.c_bkgrd, src.n_signal, s)
        else:
            x = events[bag_indices(events.shape[0], src.n_signal, s)]
        if len(pool) > 2:
            t = np.full(x.shape[:2] + (1,), float(pool[2]))
            x = np.concatenate([x, t], axis=2)
        xs.append(x)
        ys.append(np.full(x.shape[0], label))
    return np.ascontiguousarray(np.concatenate(xs)), np.concatenate(ys)
