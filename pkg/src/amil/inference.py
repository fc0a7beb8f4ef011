"""From bag scores to LLR profiles, Fisher-information estimates and intervals.

Conventions:

* profiles store Lambda(theta) = log L(theta) - log L(theta0), so the
  reference point is exactly 0;
* fits are made to ``-2 * Lambda``, so the fitted curvature ``a`` in
  ``a * (theta - theta_hat)**2 + c`` is directly a Fisher information;
* sample variances are unbiased (ddof=1).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bagnet.model import BagModel, HeadKind, as_batch, logits_batch
from .errors import (
    DegenerateDesignError,
    HeadMismatchError,
    InfiniteInformationError,
    InsufficientDataError,
    InsufficientPointsError,
    InvalidGridError,
    InvalidParameterError,
    NonConvexFitError,
)
from .synthdata import Bag, EventFamily, true_llr_grid

__all__ = [
    "TARGET_COVERAGE",
    "LLRProfile",
    "ParabolaFit",
    "CalibrationRecord",
    "CoverageReport",
    "OracleScorer",
    "NoisyOracleScorer",
    "bag_llr_binary",
    "bag_llr_multiclass",
    "bag_llr_pnn",
    "test_statistic",
    "llr_profile",
    "profile_from_bag_llrs",
    "check_grid",
    "parabola_fit",
    "default_window",
    "mle_fisher",
    "calibration_constant",
    "calibrate",
    "bias_correct",
    "corrected_variance",
    "confidence_interval",
    "coverage",
    "snr",
    "effective_fisher",
    "error_variance_from_ieff",
    "fit_error_variance_model",
    "theta_grid",
]

TARGET_COVERAGE = 0.683


def theta_grid(lo: float = -1.0, hi: float = 1.0, step: float = 0.1) -> np.ndarray:
    """Evenly spaced grid with endpoints included and values rounded to 1e-10."""
    n = int(round((hi - lo) / step))
    g = np.round(lo + step * np.arange(n + 1), 10)
    g[g == 0] = 0.0  # no negative zero
    return g


@dataclass
class LLRProfile:
    theta_grid: np.ndarray
    llr: np.ndarray
    n_events_represented: int
    theta0: float = 0.0

    def to_dict(self) -> dict:
        return {"grid": [float(t) for t in self.theta_grid], "llr": [float(v) for v in self.llr],
                "n_events": int(self.n_events_represented), "theta0": float(self.theta0)}

    def scaled(self, c: float) -> "LLRProfile":
        return LLRProfile(self.theta_grid, c * self.llr, self.n_events_represented, self.theta0)


@dataclass
class ParabolaFit:
    theta_hat: float
    i_curv: float
    fit_mse: float
    window: tuple
    n_fit_points: int
    status: str = "ok"

    @property
    def valid(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = [float(w) for w in self.window]
        return d

    @classmethod
    def failed(cls, status: str, window=(math.nan, math.nan)) -> "ParabolaFit":
        return cls(math.nan, math.nan, math.nan, tuple(window), 0, status)


@dataclass
class CalibrationRecord:
    i_mle: float
    i_curv_mean: float
    c_cicc: float
    bias_hat: float
    n_pseudo: int
    n_excluded: int = 0
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CoverageReport:
    intervals: list
    hits: list
    coverage: float
    target: float = TARGET_COVERAGE

    def to_dict(self) -> dict:
        return {"intervals": [[float(a), float(b)] for a, b in self.intervals],
                "hits": [bool(h) for h in self.hits], "coverage": float(self.coverage),
                "target": self.target}


# -- per-bag LLR estimates -------------------------------------------------

def _need_head(model: BagModel, head: HeadKind):
    if model.head is not head:
        raise HeadMismatchError(f"expected a {head.value} head, model has {model.head.value}")


def bag_llr_binary(model: BagModel, bag) -> float:
    """The pre-sigmoid logit of a binary bag classifier."""
    _need_head(model, HeadKind.BINARY)
    return float(logits_batch(model, as_batch(model, bag))[0, 0])


def bag_llr_multiclass(model: BagModel, bag, k: int, k0: int) -> float:
    """log p_k - log p_k0, taken as a logit difference."""
    _need_head(model, HeadKind.MULTICLASS)
    for idx in (k, k0):
        if not 0 <= idx < model.n_classes:
            raise IndexError(f"class index {idx} out of range [0, {model.n_classes})")
    if k == k0:
        return 0.0
    z = logits_batch(model, as_batch(model, bag))[0]
    return float(z[k] - z[k0])


def bag_llr_pnn(model: BagModel, bag, theta: float, theta0: float) -> float:
    _need_head(model, HeadKind.PARAM)
    if theta == theta0:
        return 0.0
    x = _as_bag_array(bag)
    if x.shape[0] != 1:
        raise InvalidParameterError("bag_llr_pnn takes a single bag")
    z = logits_batch(model, np.concatenate([x, x]), thetas=[theta, theta0])[:, 0]
    return float(z[0] - z[1])


def test_statistic(bag_llrs) -> float:
    """T(D): the sum of per-bag LLRs."""
    v = np.asarray(bag_llrs, dtype=np.float64)
    if v.size == 0:
        raise InsufficientDataError("test statistic of an empty dataset")
    if not np.all(np.isfinite(v)):
        raise InvalidParameterError("non-finite bag LLR")
    return float(np.sum(v))


# -- scorers ---------------------------------------------------------------

@dataclass
class OracleScorer:
    """Exact bag LLRs from the analytic family density."""

    family: EventFamily

    def bag_llrs(self, bags: np.ndarray, grid, theta0: float, rng=None) -> np.ndarray:
        return true_llr_grid(self.family, bags, grid, theta0).sum(axis=1)


@dataclass
class NoisyOracleScorer:
    """Exact bag LLRs plus a per-bag estimation error.

    The error is ``(theta - theta0) / delta_theta * eps_j`` with
    ``eps_j ~ Normal(0, sigma2)``: at ``theta0 + delta_theta`` each bag's LLR
    is off by noise of variance ``sigma2``, and the error vanishes at the
    reference point.
    """

    family: EventFamily
    sigma2: float
    delta_theta: float

    def bag_llrs(self, bags: np.ndarray, grid, theta0: float, rng=None) -> np.ndarray:
        base = true_llr_grid(self.family, bags, grid, theta0).sum(axis=1)
        if self.sigma2 == 0:
            return base
        if rng is None:
            raise InvalidParameterError("noisy scorer needs a random generator")
        eps = rng.normal(0.0, math.sqrt(self.sigma2), size=base.shape[0])
        slope = (np.asarray(grid, dtype=np.float64) - theta0) / self.delta_theta
        return base + eps[:, None] * slope[None, :]


def _as_bag_array(bags) -> np.ndarray:
    if isinstance(bags, Bag):
        return bags.events[None]
    if isinstance(bags, (list, tuple)):
        if not bags:
            raise InsufficientDataError("empty dataset")
        return np.stack([b.events if isinstance(b, Bag) else np.asarray(b) for b in bags])
    x = np.asarray(bags, dtype=np.float64)
    return x[None] if x.ndim == 2 else x


def check_grid(grid, theta0) -> tuple[np.ndarray, int]:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise InvalidGridError("theta grid must be strictly increasing with >= 2 points")
    hit = np.flatnonzero(np.isclose(grid, theta0, rtol=0, atol=1e-9))
    if hit.size != 1:
        raise InvalidGridError(f"reference theta0={theta0} is not on the grid")
    return grid, int(hit[0])


def llr_profile(scorer, bags, theta_grid, theta0: float = 0.0, rng=None) -> LLRProfile:
    """Sum of bag LLRs over a dataset at every grid point."""
    grid, i0 = check_grid(theta_grid, theta0)
    x = _as_bag_array(bags)
    if x.shape[0] == 0:
        raise InsufficientDataError("empty dataset")
    per_bag = np.asarray(scorer.bag_llrs(x, grid, float(grid[i0]), rng), dtype=np.float64)
    return profile_from_bag_llrs(per_bag, grid, i0, int(x.shape[0] * x.shape[1]))


def profile_from_bag_llrs(per_bag: np.ndarray, grid: np.ndarray, i0: int, n_events: int) -> LLRProfile:
    """Sum an ``[M, G]`` matrix of bag LLRs into a profile pinned to 0 at ``grid[i0]``."""
    llr = per_bag.sum(axis=0)
    llr[i0] = 0.0
    if not np.all(np.isfinite(llr)):
        raise InvalidParameterError("non-finite LLR in profile")
    return LLRProfile(grid, llr, n_events, float(grid[i0]))


# -- parabola fit ----------------------------------------------------------

def default_window(n_b: int) -> float:
    """Fit half-width: 0.4, widened to 0.7 for event-level (N_B = 1) profiles."""
    return 0.7 if n_b == 1 else 0.4


def parabola_fit(profile: LLRProfile, window_halfwidth: float = 0.4) -> ParabolaFit:
    """Least-squares fit of ``-2 Lambda ~ a (theta - theta_hat)^2 + c`` near its minimum.

    The window is centred on the grid point with the smallest ``-2 Lambda``.
    Fits whose vertex leaves the window (or the grid) come back with a
    non-``ok`` status; a non-positive curvature raises.
    """
    grid = np.asarray(profile.theta_grid, dtype=np.float64)
    y = -2.0 * np.asarray(profile.llr, dtype=np.float64)
    center = float(grid[int(np.argmin(y))])
    sel = np.abs(grid - center) <= window_halfwidth + 1e-9
    n = int(sel.sum())
    if n < 3:
        raise InsufficientPointsError(f"only {n} grid points inside the fit window")
    u, yy = grid[sel] - center, y[sel]
    design = np.stack([u * u, u, np.ones_like(u)], axis=1)
    coef = np.linalg.lstsq(design, yy, rcond=None)[0]
    a, b, c0 = (float(v) for v in coef)
    if not a > 0:
        raise NonConvexFitError(f"fitted curvature {a:.4g} is not positive")
    resid = yy - design @ coef
    lo = max(center - window_halfwidth, float(grid[0]))
    hi = min(center + window_halfwidth, float(grid[-1]))
    theta_hat = center - b / (2.0 * a)
    if not grid[0] <= theta_hat <= grid[-1]:
        status = "vertex-outside-grid"
    elif not lo - 1e-12 <= theta_hat <= hi + 1e-12:
        status = "vertex-outside-window"
    else:
        status = "ok"
    return ParabolaFit(theta_hat, a, float(np.mean(resid * resid)), (lo, hi), n, status)


# -- Fisher information and calibration -----------------------------------

def mle_fisher(theta_hats) -> float:
    """1 / unbiased sample variance of the MLEs."""
    v = np.asarray(theta_hats, dtype=np.float64)
    if v.size < 2:
        raise InsufficientDataError("need at least two estimates")
    var = float(np.var(v, ddof=1))
    if var == 0.0:
        raise InfiniteInformationError("all estimates identical: information is unbounded")
    return 1.0 / var


def calibration_constant(i_mle: float, i_curv_mean: float) -> float:
    if not (i_mle > 0 and i_curv_mean > 0):
        raise InvalidParameterError("calibration needs positive information values")
    return i_mle / i_curv_mean


def calibrate(fits, theta_true: float, seed: int | None = None) -> CalibrationRecord:
    """c_cicc and bias from a batch of pseudo-experiment fits (invalid fits skipped)."""
    ok = [f for f in fits if f.valid]
    th = np.array([f.theta_hat for f in ok])
    i_mle = mle_fisher(th)
    i_curv = float(np.mean([f.i_curv for f in ok]))
    return CalibrationRecord(
        i_mle=i_mle,
        i_curv_mean=i_curv,
        c_cicc=calibration_constant(i_mle, i_curv),
        bias_hat=float(np.mean(th)) - theta_true,
        n_pseudo=len(fits),
        n_excluded=len(fits) - len(ok),
        seed=seed,
    )


def bias_correct(theta_hats, theta_true: float) -> tuple[np.ndarray, float]:
    """Subtract the estimated bias ``mean(theta_hat) - theta_true``."""
    v = np.asarray(theta_hats, dtype=np.float64)
    if v.size < 2:
        raise InsufficientDataError("need at least two estimates")
    b = float(np.mean(v)) - theta_true
    return v - b, b


def corrected_variance(corrected, theta_true: float) -> float:
    """Mean squared deviation about the (now known) centre ``theta_true``.

    Equals ``var(raw, ddof=1) * (1 - 1/N)`` for bias-corrected estimates.
    """
    v = np.asarray(corrected, dtype=np.float64)
    return float(np.mean((v - theta_true) ** 2))


def confidence_interval(fit: ParabolaFit, c_cicc: float = 1.0, bias: float = 0.0) -> tuple[float, float]:
    """1-sigma interval ``theta_hat - bias +- 1/sqrt(c_cicc * i_curv)``."""
    if not fit.i_curv > 0:
        raise NonConvexFitError("interval needs a convex fit")
    if not fit.valid:
        raise InvalidParameterError(f"fit is not usable ({fit.status})")
    if not c_cicc > 0:
        raise InvalidParameterError("c_cicc must be positive")
    half = 1.0 / math.sqrt(c_cicc * fit.i_curv)
    centre = fit.theta_hat - bias
    return centre - half, centre + half


def coverage(intervals, theta_true: float) -> CoverageReport:
    """Fraction of intervals containing ``theta_true`` (endpoints count)."""
    iv = [(float(a), float(b)) for a, b in intervals]
    if not iv:
        raise InsufficientDataError("no intervals")
    hits = [a <= theta_true <= b for a, b in iv]
    return CoverageReport(iv, hits, sum(hits) / len(hits))


def snr(mu_eta: float, sigma_eta: float, n: int) -> tuple[float, float]:
    """Event-level and bag-level signal-to-noise ratios."""
    if not sigma_eta > 0:
        raise InvalidParameterError("sigma must be positive")
    if n < 1:
        raise InvalidParameterError("bag size must be positive")
    ebe = abs(mu_eta) / sigma_eta
    return ebe, math.sqrt(n) * ebe


def effective_fisher(i_true_dataset: float, i_bag: float, sigma2_eps: float, delta_theta: float) -> float:
    """Dataset information left after per-bag LLR errors of variance ``sigma2_eps``."""
    if not i_bag > 0:
        raise InvalidParameterError("bag information must be positive")
    if delta_theta == 0 or not math.isfinite(delta_theta):
        raise InvalidParameterError("delta_theta must be finite and non-zero")
    if sigma2_eps < 0:
        raise InvalidParameterError("error variance must be >= 0")
    return i_true_dataset / (1.0 + sigma2_eps / (i_bag * delta_theta**2))


def error_variance_from_ieff(n_b: int, i_eff: float, i_true_1: float, delta_theta: float,
                             n_events: int = 1) -> float:
    """Invert :func:`effective_fisher` for the error variance at bag size ``n_b``."""
    if not i_eff > 0:
        raise InvalidParameterError("effective information must be positive")
    i_true = n_events * i_true_1
    return n_b * i_true_1 * delta_theta**2 * (i_true / i_eff - 1.0)


_ANSATZ = {"sqrt": np.sqrt}


def fit_error_variance_model(points, i_true_1: float, delta_theta: float, n_events: int = 1,
                             ansatz: str = "sqrt") -> float:
    """Least-squares ``C`` in ``sigma2_eps(N_B) = C * g(N_B)`` through the origin.

    ``points`` are ``(N_B, i_eff)`` pairs where ``i_eff`` is the effective
    information of ``n_events`` events.  Only ``g = sqrt`` ships.
    """
    pts = [(int(n), float(i)) for n, i in points]
    if len({n for n, _ in pts}) < 2:
        raise DegenerateDesignError("need at least two distinct bag sizes")
    try:
        g = _ANSATZ[ansatz]
    except KeyError:
        raise InvalidParameterError(f"unknown ansatz {ansatz!r}") from None
    nb = np.array([n for n, _ in pts], dtype=np.float64)
    s2 = np.array([error_variance_from_ieff(n, i, i_true_1, delta_theta, n_events) for n, i in pts])
    x = g(nb)
    return float(np.dot(x, s2) / np.dot(x, x))
