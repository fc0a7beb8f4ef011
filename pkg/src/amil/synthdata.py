"""Synthetic event families with exact likelihoods, bagging and splitting.

Two one-parameter families stand in for a physics process:

* ``gauss-shift``:  x[0] ~ Normal(theta, 1),          I_1 = 1
* ``gauss-logvar``: x[0] ~ Normal(0, exp(theta)),     I_1 = 1/2

Every other coordinate is an independent standard Normal that carries no
information about theta.  ``background`` is the theta-independent
standard-Normal family used to contaminate bags.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, InvalidParameterError, InvalidSpecError, ShapeError
from .rng import derive_seed, make_rng

__all__ = [
    "FamilyKind",
    "EventFamily",
    "EventSet",
    "Bag",
    "SplitSpec",
    "sample_events",
    "sample_background",
    "true_llr",
    "true_llr_grid",
    "true_score",
    "true_fisher",
    "log_density",
    "make_bags",
    "bag_indices",
    "contaminate",
    "contaminate_arrays",
    "n_background_for",
    "split",
    "stack_bags",
]

_BLOCK_ROWS = 1 << 16
_LOG_2PI = math.log(2.0 * math.pi)


class FamilyKind(str, enum.Enum):
    GAUSS_SHIFT = "gauss-shift"
    GAUSS_LOGVAR = "gauss-logvar"
    BACKGROUND = "background"


# tags used in binary event files
FAMILY_TAGS = {FamilyKind.GAUSS_SHIFT: 1, FamilyKind.GAUSS_LOGVAR: 2, FamilyKind.BACKGROUND: 255}


@dataclass(frozen=True)
class EventFamily:
    kind: FamilyKind = FamilyKind.GAUSS_SHIFT
    dim: int = 1
    nuisance_dims: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", FamilyKind(self.kind))
        if self.dim < 1:
            raise InvalidParameterError(f"dim must be positive, got {self.dim}")
        if self.nuisance_dims < 0:
            raise InvalidParameterError(f"nuisance_dims must be >= 0, got {self.nuisance_dims}")

    @property
    def dim_total(self) -> int:
        return self.dim + self.nuisance_dims

    @classmethod
    def parse(cls, name: str, dim: int = 1, nuisance_dims: int = 0) -> "EventFamily":
        try:
            kind = FamilyKind(name)
        except ValueError:
            raise InvalidParameterError(f"unknown family {name!r}") from None
        return cls(kind, dim, nuisance_dims)


@dataclass
class EventSet:
    features: np.ndarray
    theta: float
    seed: int
    family: EventFamily = field(default_factory=EventFamily)

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx) -> "EventSet":
        return EventSet(self.features[idx], self.theta, self.seed, self.family)


@dataclass
class Bag:
    events: np.ndarray
    theta_label: float
    n_signal: int
    n_background: int = 0

    def __post_init__(self):
        self.events = np.asarray(self.events, dtype=np.float64)
        if self.events.ndim != 2:
            raise ShapeError(f"bag events must be a matrix, got shape {self.events.shape}")
        if self.events.shape[0] < 1:
            raise InvalidParameterError("a bag needs at least one event")
        if self.n_signal + self.n_background != self.events.shape[0]:
            raise InvalidParameterError(
                f"n_signal + n_background = {self.n_signal + self.n_background} "
                f"but bag holds {self.events.shape[0]} events"
            )

    @property
    def size(self) -> int:
        return self.events.shape[0]


@dataclass(frozen=True)
class SplitSpec:
    test_frac: float = 0.2
    val_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("test_frac", "val_frac"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise InvalidSpecError(f"{name} must lie in (0, 1), got {v}")
        if self.test_frac + self.val_frac >= 1.0:
            raise InvalidSpecError("test_frac + val_frac must be < 1")


def _check_theta(theta) -> float:
    theta = float(theta)
    if not math.isfinite(theta):
        raise InvalidParameterError(f"theta must be finite, got {theta}")
    return theta


def _standard_normal_rows(n: int, dim: int, seed: int, tag: str) -> np.ndarray:
    # fixed-size blocks, each with its own stream: prefix-stable and
    # independent of how blocks might be distributed over workers
    out = np.empty((n, dim), dtype=np.float64)
    for b, start in enumerate(range(0, n, _BLOCK_ROWS)):
        stop = min(start + _BLOCK_ROWS, n)
        out[start:stop] = make_rng(seed, tag, b).standard_normal((stop - start, dim))
    return out


def sample_events(family: EventFamily, theta: float, n: int, seed: int) -> EventSet:
    """Draw ``n`` i.i.d. events from ``family`` at ``theta``."""
    theta = _check_theta(theta)
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    x = _standard_normal_rows(int(n), family.dim_total, seed, "events")
    if family.kind is FamilyKind.GAUSS_SHIFT:
        x[:, 0] += theta
    elif family.kind is FamilyKind.GAUSS_LOGVAR:
        x[:, 0] *= math.exp(0.5 * theta)
    return EventSet(x, theta, int(seed), family)


def sample_background(n: int, dim_total: int, seed: int) -> EventSet:
    fam = EventFamily(FamilyKind.BACKGROUND, dim=1, nuisance_dims=dim_total - 1)
    x = _standard_normal_rows(int(n), dim_total, seed, "background")
    return EventSet(x, 0.0, int(seed), fam)


def _first_coord(family: EventFamily, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != family.dim_total:
        raise ShapeError(f"expected {family.dim_total} features, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise InvalidParameterError("event features must be finite")
    return x[..., 0]


def log_density(family: EventFamily, x, theta: float):
    """Exact log p(x | theta), nuisance coordinates included."""
    theta = _check_theta(theta)
    x = np.asarray(x, dtype=np.float64)
    x0 = _first_coord(family, x)
    rest = -0.5 * np.sum(x[..., 1:] ** 2, axis=-1) - 0.5 * _LOG_2PI * (family.dim_total - 1)
    if family.kind is FamilyKind.GAUSS_SHIFT:
        lp = -0.5 * (x0 - theta) ** 2 - 0.5 * _LOG_2PI
    elif family.kind is FamilyKind.GAUSS_LOGVAR:
        lp = -0.5 * theta - 0.5 * x0**2 * math.exp(-theta) - 0.5 * _LOG_2PI
    else:
        lp = -0.5 * x0**2 - 0.5 * _LOG_2PI
    return lp + rest


def true_llr(family: EventFamily, x, theta1: float, theta0: float):
    """log p(x|theta1) - log p(x|theta0); scalar for one event, vector for a matrix."""
    theta1, theta0 = _check_theta(theta1), _check_theta(theta0)
    x0 = _first_coord(family, x)
    if family.kind is FamilyKind.GAUSS_SHIFT:
        out = (theta1 - theta0) * x0 - 0.5 * (theta1 * theta1 - theta0 * theta0)
    elif family.kind is FamilyKind.GAUSS_LOGVAR:
        out = -0.5 * (theta1 - theta0) - 0.5 * x0 * x0 * (math.exp(-theta1) - math.exp(-theta0))
    else:
        out = np.zeros_like(x0)
    return float(out) if np.ndim(out) == 0 else out


def true_llr_grid(family: EventFamily, x, grid, theta0: float) -> np.ndarray:
    """Per-event LLR against ``theta0`` at every grid point, shape ``x.shape[:-1] + (G,)``."""
    theta0 = _check_theta(theta0)
    grid = np.asarray(grid, dtype=np.float64)
    x0 = _first_coord(family, x)[..., None]
    if family.kind is FamilyKind.GAUSS_SHIFT:
        return (grid - theta0) * x0 - 0.5 * (grid * grid - theta0 * theta0)
    if family.kind is FamilyKind.GAUSS_LOGVAR:
        return -0.5 * (grid - theta0) - 0.5 * x0 * x0 * (np.exp(-grid) - math.exp(-theta0))
    return np.zeros(x0.shape[:-1] + grid.shape)


def true_score(family: EventFamily, x, theta: float):
    """d/dtheta log p(x | theta)."""
    theta = _check_theta(theta)
    x0 = _first_coord(family, x)
    if family.kind is FamilyKind.GAUSS_SHIFT:
        return x0 - theta
    if family.kind is FamilyKind.GAUSS_LOGVAR:
        return -0.5 + 0.5 * x0 * x0 * math.exp(-theta)
    return np.zeros_like(x0)


def true_fisher(family: EventFamily, theta: float) -> float:
    """Per-event Fisher information; a bag of N events carries N times this."""
    _check_theta(theta)
    return {FamilyKind.GAUSS_SHIFT: 1.0, FamilyKind.GAUSS_LOGVAR: 0.5, FamilyKind.BACKGROUND: 0.0}[
        family.kind
    ]


def bag_indices(n_events: int, n_b: int, seed: int) -> np.ndarray:
    """Shuffle ``range(n_events)`` and cut it into ``n_events // n_b`` rows of ``n_b``.

    Leftover events are dropped.
    """
    if n_b < 1:
        raise InvalidParameterError(f"bag size must be >= 1, got {n_b}")
    if n_b > n_events:
        raise InsufficientDataError(f"need at least {n_b} events for one bag, have {n_events}")
    m = n_events // n_b
    perm = make_rng(seed, "bags").permutation(n_events)
    return perm[: m * n_b].reshape(m, n_b)


def make_bags(events: EventSet, n_b: int, shuffle_seed: int) -> list[Bag]:
    idx = bag_indices(len(events), n_b, shuffle_seed)
    x = events.features
    return [Bag(x[row], events.theta, n_b, 0) for row in idx]


def n_background_for(c_bkgrd: float, n_signal: int) -> int:
    """round(c_bkgrd * n_signal), ties rounding up."""
    if c_bkgrd < 0 or not math.isfinite(c_bkgrd):
        raise InvalidParameterError(f"c_bkgrd must be finite and >= 0, got {c_bkgrd}")
    # the epsilon absorbs representation error such as 0.8 * 100 = 80.00000000000001
    return int(math.floor(c_bkgrd * n_signal + 0.5 + 1e-9))


def contaminate_arrays(
    signal: np.ndarray, background: np.ndarray, c_bkgrd: float, n_signal_per_bag: int, seed: int
) -> tuple[np.ndarray, int]:
    """Array form of :func:`contaminate`: returns ``(X[M, N_B, d], n_background)``."""
    if n_signal_per_bag < 1:
        raise InvalidParameterError("n_signal_per_bag must be >= 1")
    n_bkg = n_background_for(c_bkgrd, n_signal_per_bag)
    sig_idx = bag_indices(signal.shape[0], n_signal_per_bag, derive_seed(seed, "signal"))
    m = sig_idx.shape[0]
    parts = [signal[sig_idx]]
    if n_bkg:
        if background.shape[0] < m * n_bkg:
            raise InsufficientDataError(
                f"{m} bags need {m * n_bkg} background events, have {background.shape[0]}"
            )
        if background.shape[1] != signal.shape[1]:
            raise ShapeError("signal and background dimensionality differ")
        bkg_idx = make_rng(seed, "bkg").permutation(background.shape[0])[: m * n_bkg]
        parts.append(background[bkg_idx.reshape(m, n_bkg)])
    x = np.concatenate(parts, axis=1)
    order = make_rng(seed, "within").permuted(
        np.broadcast_to(np.arange(x.shape[1]), x.shape[:2]), axis=1
    )
    x = np.take_along_axis(x, order[:, :, None], axis=1)
    return x, n_bkg


def contaminate(
    signal: EventSet, background: EventSet, c_bkgrd: float, n_signal_per_bag: int, seed: int
) -> list[Bag]:
    """Bags of ``n_signal_per_bag`` signal plus ``round(c_bkgrd * n)`` background events."""
    x, n_bkg = contaminate_arrays(
        signal.features, background.features, c_bkgrd, n_signal_per_bag, seed
    )
    return [Bag(b, signal.theta, n_signal_per_bag, n_bkg) for b in x]


def split(events: EventSet, spec: SplitSpec = SplitSpec()) -> tuple[EventSet, EventSet, EventSet]:
    """Event-level train/val/test partition.

    ``test_frac`` is taken off first; ``val_frac`` is a fraction of the rest.
    """
    n = len(events)
    n_test = int(round(n * spec.test_frac))
    rest = n - n_test
    n_val = int(round(rest * spec.val_frac))
    n_train = rest - n_val
    if min(n_test, n_val, n_train) < 1:
        raise InvalidSpecError(f"split of {n} events leaves an empty partition")
    perm = make_rng(spec.seed, "split").permutation(n)
    test = np.sort(perm[:n_test])
    val = np.sort(perm[n_test : n_test + n_val])
    train = np.sort(perm[n_test + n_val :])
    return events.subset(train), events.subset(val), events.subset(test)


def stack_bags(bags: list[Bag]) -> np.ndarray:
    """Stack equal-size bags into an ``[M, N_B, d]`` array."""
    if not bags:
        raise InsufficientDataError("no bags to stack")
    sizes = {b.size for b in bags}
    if len(sizes) != 1:
        raise ShapeError(f"bags have differing sizes {sorted(sizes)}")
    return np.stack([b.events for b in bags])
