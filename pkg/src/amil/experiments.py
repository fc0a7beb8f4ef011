"""Binary scaling, multi-class Fisher scan and PNN scan studies.

Every random quantity is keyed by ``(master_seed, purpose, indices...)``, and
parallel work is split on fixed task boundaries, so a report is identical for
any number of workers.
"""

from __future__ import annotations

import logging
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import log_expit, logsumexp, log_softmax
from scipy.stats import rankdata

from . import inference as inf
from .bagnet import (
    BagModel,
    HeadKind,
    PoolSource,
    TrainSchedule,
    build_pnn_training_set,
    logits_batch,
    train,
)
from .errors import (
    AmilError,
    HeterogeneousEnsembleError,
    InsufficientDataError,
    InvalidParameterError,
    PseudoExperimentError,
    TrainingDivergedError,
)
from .rng import derive_seed, make_rng
from .synthdata import (
    EventFamily,
    SplitSpec,
    bag_indices,
    n_background_for,
    sample_background,
    sample_events,
    split,
    true_fisher,
)

__all__ = [
    "ExperimentConfig",
    "ScalingReport",
    "EnsemblePrediction",
    "MulticlassScorer",
    "PNNScorer",
    "BinaryScanScorer",
    "roc_auc",
    "ensemble_predict",
    "run_pseudo_experiments",
    "train_model",
    "run_binary_scaling",
    "run_multiclass_fisher_scan",
    "run_pnn_scan",
    "run_scaling",
    "parallel_map",
]

log = logging.getLogger(__name__)

# pseudo-experiments are scored in fixed groups of this many chunks
CHUNK_GROUP = 16


def parallel_map(fn, tasks: list, workers: int = 1) -> list:
    """``[fn(t) for t in tasks]``, optionally over a process pool; order preserved."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks)), mp_context=ctx) as ex:
        return list(ex.map(fn, tasks))


# -- metrics ---------------------------------------------------------------

def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise InvalidParameterError("scores and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidParameterError("labels must be 0 or 1")
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise InvalidParameterError("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# -- ensembles and scorers -------------------------------------------------

@dataclass
class EnsemblePrediction:
    probabilities: np.ndarray
    log_ratio: np.ndarray  # logit for one-output heads, log-probabilities otherwise


def _check_ensemble(models: list[BagModel]):
    if not models:
        raise HeterogeneousEnsembleError("empty ensemble")
    ref = models[0]
    for m in models[1:]:
        if (m.head, m.input_dim, m.n_classes) != (ref.head, ref.input_dim, ref.n_classes):
            raise HeterogeneousEnsembleError("ensemble members differ in head or input shape")


def _log_mean_probs(models, x, thetas, space: str):
    """Ensemble log-probabilities: ``(log p, log(1-p))`` for one output, ``log p`` for softmax."""
    z = np.stack([logits_batch(m, x, thetas) for m in models])  # [n_models, M, K]
    n = len(models)
    if models[0].head is HeadKind.MULTICLASS:
        if space == "logit":
            return log_softmax(z.mean(axis=0), axis=1)
        return logsumexp(log_softmax(z, axis=2), axis=0) - math.log(n)
    z = z[..., 0]
    if space == "logit":
        zm = z.mean(axis=0)
        return log_expit(zm), log_expit(-zm)
    return logsumexp(log_expit(z), axis=0) - math.log(n), logsumexp(log_expit(-z), axis=0) - math.log(n)


def ensemble_predict(models: list[BagModel], bags, thetas=None, space: str = "probability") -> EnsemblePrediction:
    """Average member predictions and re-derive the log-ratio from the average.

    ``space="probability"`` averages output probabilities; ``"logit"``
    averages logits instead.
    """
    _check_ensemble(models)
    if space not in ("probability", "logit"):
        raise InvalidParameterError(f"unknown averaging space {space!r}")
    lp = _log_mean_probs(models, bags, thetas, space)
    if models[0].head is HeadKind.MULTICLASS:
        return EnsemblePrediction(np.exp(lp), lp)
    lp1, lp0 = lp
    return EnsemblePrediction(np.exp(lp1), lp1 - lp0)


@dataclass
class MulticlassScorer:
    """Bag LLRs ``log p_k - log p_k0`` from a (possibly ensembled) multi-class model."""

    models: list
    class_thetas: np.ndarray
    space: str = "probability"

    def __post_init__(self):
        _check_ensemble(self.models)
        self.class_thetas = np.asarray(self.class_thetas, dtype=np.float64)
        if self.models[0].n_classes != self.class_thetas.size:
            raise InvalidParameterError("class count does not match class thetas")

    def bag_llrs(self, bags, grid, theta0, rng=None):
        grid = np.asarray(grid, dtype=np.float64)
        cols = [int(np.flatnonzero(np.isclose(self.class_thetas, t, atol=1e-9))[0]) for t in grid]
        k0 = int(np.flatnonzero(np.isclose(self.class_thetas, theta0, atol=1e-9))[0])
        if len(self.models) == 1:
            z = logits_batch(self.models[0], bags)
        else:
            z = _log_mean_probs(self.models, bags, None, self.space)
        return z[:, cols] - z[:, [k0]]


@dataclass
class PNNScorer:
    """Bag LLRs ``logit(bag, theta) - logit(bag, theta0)`` from parameterized models."""

    models: list
    space: str = "probability"

    def __post_init__(self):
        _check_ensemble(self.models)

    def _logit(self, bags, theta):
        if len(self.models) == 1:
            return logits_batch(self.models[0], bags, theta)[:, 0]
        lp1, lp0 = _log_mean_probs(self.models, bags, theta, self.space)
        return lp1 - lp0

    def bag_llrs(self, bags, grid, theta0, rng=None):
        ref = self._logit(bags, theta0)
        return np.stack([self._logit(bags, t) - ref if t != theta0 else np.zeros_like(ref)
                         for t in np.asarray(grid, dtype=np.float64)], axis=1)

    def probability_curve(self, bag, grid) -> np.ndarray:
        x = np.asarray(bag, dtype=np.float64)[None]
        return np.array([float(np.exp(log_expit(self._logit(x, t)))[0]) for t in grid])


@dataclass
class BinaryScanScorer:
    """Independent binary classifiers, one per theta, each giving LLR(theta vs theta0)."""

    models_by_theta: dict

    def bag_llrs(self, bags, grid, theta0, rng=None):
        cols = []
        for t in np.asarray(grid, dtype=np.float64):
            if abs(t - theta0) < 1e-12:
                cols.append(np.zeros(len(bags)))
                continue
            key = min(self.models_by_theta, key=lambda k: abs(k - t))
            if abs(key - t) > 1e-9:
                raise InvalidParameterError(f"no binary model for theta={t}")
            cols.append(ensemble_predict(self.models_by_theta[key], bags).log_ratio)
        return np.stack(cols, axis=1)


# -- pseudo-experiments ----------------------------------------------------

def _pseudo_group(args):
    (scorer, family, theta_true, chunk_events, grid, i0, window, seed, n_b, idxs, strict,
     keep_profiles) = args
    m = chunk_events // n_b
    xs = []
    for i in idxs:
        ev = sample_events(family, theta_true, chunk_events, derive_seed(seed, "chunk", i)).features
        xs.append(ev[bag_indices(chunk_events, n_b, derive_seed(seed, "bag", i))])
    x = np.ascontiguousarray(np.concatenate(xs))
    per_bag = np.asarray(scorer.bag_llrs(x, grid, float(grid[i0]), make_rng(seed, "scorer", idxs[0])))
    fits, profiles = [], []
    for j, i in enumerate(idxs):
        try:
            prof = inf.profile_from_bag_llrs(per_bag[j * m:(j + 1) * m], grid, i0, m * n_b)
            fit = inf.parabola_fit(prof, window)
        except AmilError as exc:
            if strict:
                raise PseudoExperimentError(i, exc) from exc
            prof = None
            fit = inf.ParabolaFit.failed(type(exc).__name__)
        fits.append(fit)
        profiles.append(prof)
    return fits, (profiles if keep_profiles else None)


def run_pseudo_experiments(scorer, family: EventFamily, theta_true: float, chunk_events: int,
                           n_pseudo: int, grid, window: float, seed: int, n_b: int = 1,
                           theta0: float = 0.0, strict: bool = True, workers: int = 1,
                           keep_profiles: bool = False):
    """Fit ``n_pseudo`` independent ``chunk_events``-event datasets drawn at ``theta_true``.

    Returns the list of fits (and the profiles when ``keep_profiles``).  With
    ``strict`` a failing chunk raises :class:`PseudoExperimentError`; otherwise
    it is returned as a failed fit.
    """
    if chunk_events < n_b:
        raise InsufficientDataError(f"chunk of {chunk_events} events cannot hold a bag of {n_b}")
    if n_pseudo < 1:
        raise InvalidParameterError("n_pseudo must be >= 1")
    grid, i0 = inf.check_grid(grid, theta0)
    groups = [list(range(s, min(s + CHUNK_GROUP, n_pseudo))) for s in range(0, n_pseudo, CHUNK_GROUP)]
    tasks = [(scorer, family, theta_true, chunk_events, grid, i0, window, seed, n_b, g, strict,
              keep_profiles) for g in groups]
    out = parallel_map(_pseudo_group, tasks, workers)
    fits = [f for fs, _ in out for f in fs]
    if keep_profiles:
        return fits, [p for _, ps in out for p in ps]
    return fits


# -- configuration and reports ---------------------------------------------

@dataclass
class ExperimentConfig:
    mode: str = "multiclass"
    family: str = "gauss-shift"
    dim: int = 1
    nuisance_dims: int = 0
    theta0: float = 0.0
    theta1: float = 0.02
    grid_lo: float = -1.0
    grid_hi: float = 1.0
    grid_step: float = 0.1
    theta_true: float = 0.0
    bag_sizes: list = field(default_factory=lambda: [1, 10, 50, 250])
    background_fracs: list = field(default_factory=lambda: [0.0])
    n_models_per_point: int | None = None
    n_pseudo: int = 200
    n_pseudo_holdout: int | None = None
    chunk_events: int = 1000
    master_seed: int = 0
    train_events_per_class: int = 100_000
    test_events_per_class: int | None = None
    test_frac: float = 0.2
    val_frac: float = 0.2
    initial_lr: float = 1e-3
    min_lr: float = 1e-4
    lr_reduction_factor: float = 0.3162
    patience: int = 10
    batch_events: int = 80_000
    dynamic_bags: bool = True
    max_epochs: int = 500
    window: float = 0.4
    window_event_level: float = 0.7
    ensemble_space: str = "probability"
    oracle: bool = False
    ansatz: str = "sqrt"
    ansatz_delta_theta: float | None = None
    n_curve_bags: int = 5
    retry_failed: bool = True

    def __post_init__(self):
        if self.mode not in ("binary", "multiclass", "pnn"):
            raise InvalidParameterError(f"unknown mode {self.mode!r}")
        if not self.bag_sizes or not self.background_fracs:
            raise InvalidParameterError("bag_sizes and background_fracs must be non-empty")
        self.bag_sizes = [int(b) for b in self.bag_sizes]
        self.background_fracs = [float(c) for c in self.background_fracs]
        if min(self.bag_sizes) < 1:
            raise InvalidParameterError("bag sizes must be positive")
        if self.n_models_per_point is None:
            self.n_models_per_point = 5 if self.mode == "binary" else 20
        if self.n_pseudo_holdout is None:
            self.n_pseudo_holdout = self.n_pseudo

    @property
    def event_family(self) -> EventFamily:
        return EventFamily.parse(self.family, self.dim, self.nuisance_dims)

    @property
    def grid(self) -> np.ndarray:
        return inf.theta_grid(self.grid_lo, self.grid_hi, self.grid_step)

    @property
    def schedule(self) -> TrainSchedule:
        return TrainSchedule(self.initial_lr, self.min_lr, self.lr_reduction_factor, self.patience,
                             self.batch_events, self.dynamic_bags, self.max_epochs)

    def window_for(self, n_b: int) -> float:
        return self.window_event_level if n_b == 1 else self.window

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ScalingReport:
    mode: str
    config: dict
    points: list
    ansatz: dict | None = None
    curves: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    schema_version: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingReport":
        return cls(**d)


# -- training --------------------------------------------------------------

def _split_events(family, theta, n, seed, cfg: ExperimentConfig):
    ev = sample_events(family, theta, n, seed)
    return split(ev, SplitSpec(cfg.test_frac, cfg.val_frac, derive_seed(seed, "split")))


def train_model(head: str, n_features: int, n_classes: int, train_src, val_src,
                schedule: TrainSchedule, seed: int, retry: bool = True):
    """Train one model; on divergence retry once with a derived seed.

    Returns ``(model, history, status)``; ``model`` is ``None`` when both
    attempts diverged.
    """
    attempts = 2 if retry else 1
    last = None
    for attempt in range(attempts):
        s = seed if attempt == 0 else derive_seed(seed, "retry", attempt)
        model = BagModel.create(head, n_features, n_classes=n_classes, seed=s)
        try:
            model, hist = train(model, train_src, val_src, schedule, seed=s)
            return model, hist, "ok" if attempt == 0 else "ok-retried"
        except TrainingDivergedError as exc:
            log.warning("training diverged (seed %d, attempt %d): %s", s, attempt, exc)
            last = exc
    return None, last.history if last else None, "failed"


def _train_task(args):
    return train_model(*args)


# -- binary scaling --------------------------------------------------------

def _binary_data(cfg: ExperimentConfig):
    fam = cfg.event_family
    sm = _split_events(fam, cfg.theta0, cfg.train_events_per_class,
                       derive_seed(cfg.master_seed, "data", 0), cfg)
    alt = _split_events(fam, cfg.theta1, cfg.train_events_per_class,
                        derive_seed(cfg.master_seed, "data", 1), cfg)
    if cfg.test_events_per_class:
        # an independent, larger test sample keeps AUC noise small at large N_B
        n = cfg.test_events_per_class
        sm = (sm[0], sm[1], sample_events(fam, cfg.theta0, n, derive_seed(cfg.master_seed, "test-data", 0)))
        alt = (alt[0], alt[1], sample_events(fam, cfg.theta1, n, derive_seed(cfg.master_seed, "test-data", 1)))
    return sm, alt


def _binary_sources(cfg, sm, alt, n_sig, c, ip):
    fam = cfg.event_family
    srcs = []
    for part in range(3):
        a, b = sm[part].features, alt[part].features
        n_bkg = n_background_for(c, n_sig)
        bkg = None
        if n_bkg:
            need = 2 * max(a.shape[0], b.shape[0]) // n_sig * n_bkg
            bkg = sample_background(need, fam.dim_total,
                                    derive_seed(cfg.master_seed, "background", ip, part)).features
        srcs.append(PoolSource([(a, 0), (b, 1)], n_sig, bkg, c))
    return srcs


def run_binary_scaling(config: ExperimentConfig, workers: int = 1) -> ScalingReport:
    """Test-set AUC of bag classifiers over bag size x background contamination."""
    cfg = config
    if cfg.mode != "binary":
        raise InvalidParameterError("run_binary_scaling needs mode='binary'")
    sm, alt = _binary_data(cfg)
    grid = [(nb, c) for nb in cfg.bag_sizes for c in cfg.background_fracs]
    baseline = 1 not in cfg.bag_sizes
    if baseline:
        grid = [(1, 0.0)] + grid
    tasks, meta, tests = [], [], []
    for ip, (nb, c) in enumerate(grid):
        tr, va, te = _binary_sources(cfg, sm, alt, nb, c, ip)
        tests.append(te(derive_seed(cfg.master_seed, "test-bags", ip)))
        for k in range(cfg.n_models_per_point):
            s = derive_seed(cfg.master_seed, "model", ip, k)
            tasks.append(("binary", cfg.event_family.dim_total, 2, tr, va, cfg.schedule, s,
                          cfg.retry_failed))
            meta.append((ip, k))
    results = parallel_map(_train_task, tasks, workers)

    points = []
    for ip, (nb, c) in enumerate(grid):
        xt, yt = tests[ip]
        aucs, statuses = [], []
        for (jp, _), (model, hist, status) in zip(meta, results):
            if jp != ip:
                continue
            statuses.append(status)
            if model is not None:
                aucs.append(roc_auc(logits_batch(model, xt)[:, 0], yt))
        n_bkg = n_background_for(c, nb)
        points.append({
            "n_signal": nb,
            "c_bkgrd": c,
            "bag_size": nb + n_bkg,
            "baseline": baseline and ip == 0,
            "auc": aucs,
            "auc_mean": float(np.mean(aucs)) if aucs else None,
            "auc_std": float(np.std(aucs, ddof=1)) if len(aucs) > 1 else (0.0 if aucs else None),
            "n_test_bags": int(len(yt)),
            "model_status": statuses,
            "status": "ok" if aucs else "failed",
        })
    return ScalingReport("binary", cfg.to_dict(), points)


# -- multi-class / PNN Fisher scans ----------------------------------------

def _class_pools(cfg: ExperimentConfig):
    fam = cfg.event_family
    parts = ([], [], [])
    for k, t in enumerate(cfg.grid):
        sp = _split_events(fam, float(t), cfg.train_events_per_class,
                           derive_seed(cfg.master_seed, "class-data", k), cfg)
        for p in range(3):
            parts[p].append((sp[p].features, k))
    return parts


def _pnn_pools(cfg: ExperimentConfig):
    groups = build_pnn_training_set(cfg.event_family, cfg.grid, cfg.train_events_per_class,
                                    derive_seed(cfg.master_seed, "pnn-data"))
    tr, va = [], []
    for j, g in enumerate(groups):
        n = g.events.shape[0]
        perm = make_rng(cfg.master_seed, "pnn-split", j).permutation(n)
        n_val = max(1, int(round(n * cfg.val_frac)))
        va.append((g.events[np.sort(perm[:n_val])], g.label, g.paired_theta))
        tr.append((g.events[np.sort(perm[n_val:])], g.label, g.paired_theta))
    return tr, va, groups


def _ensemble_tasks(cfg: ExperimentConfig, head: str, pools, ib: int, nb: int):
    tr, va = pools
    n_classes = len(cfg.grid) if head == "multiclass" else 2
    tasks = []
    for k in range(cfg.n_models_per_point):
        s = derive_seed(cfg.master_seed, "model", ib, k)
        tasks.append((head, cfg.event_family.dim_total, n_classes, PoolSource(tr, nb),
                      PoolSource(va, nb), cfg.schedule, s, cfg.retry_failed))
    return tasks


def _scan_point(cfg: ExperimentConfig, scorer, ib: int, nb: int, workers: int) -> dict:
    fam = cfg.event_family
    grid = cfg.grid
    window = cfg.window_for(nb)
    common = dict(family=fam, theta_true=cfg.theta_true, chunk_events=cfg.chunk_events, grid=grid,
                  window=window, n_b=nb, theta0=cfg.theta0, strict=False, workers=workers)
    cal_fits = run_pseudo_experiments(scorer, n_pseudo=cfg.n_pseudo,
                                      seed=derive_seed(cfg.master_seed, "calib", ib), **common)
    hold_fits = run_pseudo_experiments(scorer, n_pseudo=cfg.n_pseudo_holdout,
                                       seed=derive_seed(cfg.master_seed, "holdout", ib), **common)
    ok_cal = [f for f in cal_fits if f.valid]
    ok_hold = [f for f in hold_fits if f.valid]
    point = {"bag_size": nb, "window": window, "n_pseudo": len(cal_fits),
             "n_pseudo_holdout": len(hold_fits), "n_excluded_calib": len(cal_fits) - len(ok_cal),
             "n_excluded_holdout": len(hold_fits) - len(ok_hold)}
    try:
        rec = inf.calibrate(cal_fits, cfg.theta_true)
    except AmilError as exc:
        point.update(status=f"failed: {type(exc).__name__}", rows=[])
        return point
    mse = float(np.mean([f.fit_mse for f in ok_cal]))
    rows = []
    for label, c in (("uncalibrated", 1.0), ("calibrated", rec.c_cicc)):
        iv = [inf.confidence_interval(f, c, rec.bias_hat) for f in ok_hold]
        cov = inf.coverage(iv, cfg.theta_true).coverage if iv else None
        rows.append({"calibration": label, "c_cicc": c, "coverage": cov,
                     "mean_fisher": c * rec.i_curv_mean, "bias": rec.bias_hat,
                     "fit_mse": c * c * mse})
    hold_th = [f.theta_hat for f in ok_hold]
    point.update(
        status="ok",
        i_mle=rec.i_mle,
        i_curv_mean=rec.i_curv_mean,
        c_cicc=rec.c_cicc,
        bias=rec.bias_hat,
        fit_mse=mse,
        i_eff=rec.i_mle,
        i_mle_holdout=inf.mle_fisher(hold_th) if len(hold_th) > 1 else None,
        theta_hat_std=float(np.std([f.theta_hat for f in ok_cal], ddof=1)),
        rows=rows,
    )
    return point


def _ansatz(cfg: ExperimentConfig, points: list) -> dict | None:
    if cfg.ansatz in ("none", "", None):
        return None
    ok = [p for p in points if p["status"] == "ok"]
    i1 = true_fisher(cfg.event_family, cfg.theta_true)
    dtheta = cfg.ansatz_delta_theta or cfg.grid_step
    try:
        c = inf.fit_error_variance_model([(p["bag_size"], p["i_eff"]) for p in ok], i1, dtheta,
                                         n_events=cfg.chunk_events, ansatz=cfg.ansatz)
    except AmilError as exc:
        return {"form": cfg.ansatz, "status": f"failed: {type(exc).__name__}"}
    i_true = cfg.chunk_events * i1
    pred = {}
    for p in ok:
        s2 = c * math.sqrt(p["bag_size"])
        try:
            pred[str(p["bag_size"])] = inf.effective_fisher(i_true, p["bag_size"] * i1, max(s2, 0.0), dtheta)
        except AmilError:
            pred[str(p["bag_size"])] = None
    return {"form": cfg.ansatz, "status": "ok", "C": c, "delta_theta": dtheta,
            "i_true_dataset": i_true, "i_eff_model": pred}


def _train_ensembles(cfg, head, pools, workers):
    tasks, owner = [], []
    for ib, nb in enumerate(cfg.bag_sizes):
        t = _ensemble_tasks(cfg, head, pools, ib, nb)
        tasks += t
        owner += [ib] * len(t)
    results = parallel_map(_train_task, tasks, workers)
    per_nb = {ib: [] for ib in range(len(cfg.bag_sizes))}
    for ib, r in zip(owner, results):
        per_nb[ib].append(r)
    return per_nb


def _model_summary(results) -> dict:
    return {"model_status": [s for _, _, s in results],
            "epochs": [h.epochs if h is not None else None for _, h, _ in results]}


def run_multiclass_fisher_scan(config: ExperimentConfig, workers: int = 1) -> ScalingReport:
    """Calibrated Fisher-information scan over bag sizes with a multi-class ensemble.

    With ``config.oracle`` the exact likelihood replaces the network.
    """
    cfg = config
    if cfg.mode != "multiclass":
        raise InvalidParameterError("run_multiclass_fisher_scan needs mode='multiclass'")
    trained = None
    if not cfg.oracle:
        tr, va, _ = _class_pools(cfg)
        trained = _train_ensembles(cfg, "multiclass", (tr, va), workers)
    points = []
    for ib, nb in enumerate(cfg.bag_sizes):
        if cfg.oracle:
            scorer, extra = inf.OracleScorer(cfg.event_family), {"scorer": "oracle"}
        else:
            models = [m for m, _, _ in trained[ib] if m is not None]
            extra = {"scorer": "ensemble", "n_models": len(models), **_model_summary(trained[ib])}
            if not models:
                points.append({"bag_size": nb, "status": "failed: no trained models", "rows": [], **extra})
                continue
            scorer = MulticlassScorer(models, cfg.grid, cfg.ensemble_space)
        pt = _scan_point(cfg, scorer, ib, nb, workers)
        pt.update(extra)
        points.append(pt)
    return ScalingReport("multiclass", cfg.to_dict(), points, _ansatz(cfg, points))


def _scan_flags(points) -> list:
    ok = [p for p in points if p["status"] == "ok"]
    curv = [p["i_curv_mean"] for p in ok]
    flags = []
    if len(curv) > 2 and np.any(np.diff(curv) > 0) and np.any(np.diff(curv) < 0):
        flags.append("non-monotone-i_curv")
    if curv and min(curv) < 1e-3 * max(curv):
        flags.append("collapsed-i_curv")
    return flags


def run_pnn_scan(config: ExperimentConfig, workers: int = 1) -> ScalingReport:
    """Same aggregates as the multi-class scan, from parameterized networks."""
    cfg = config
    if cfg.mode != "pnn":
        raise InvalidParameterError("run_pnn_scan needs mode='pnn'")
    tr, va, _ = _pnn_pools(cfg)
    trained = _train_ensembles(cfg, "param", (tr, va), workers)
    points, curves = [], []
    grid = cfg.grid
    for ib, nb in enumerate(cfg.bag_sizes):
        models = [m for m, _, _ in trained[ib] if m is not None]
        extra = {"scorer": "pnn-ensemble", "n_models": len(models), **_model_summary(trained[ib])}
        if not models:
            points.append({"bag_size": nb, "status": "failed: no trained models", "rows": [], **extra})
            continue
        scorer = PNNScorer(models, cfg.ensemble_space)
        pt = _scan_point(cfg, scorer, ib, nb, workers)
        pt.update(extra)
        points.append(pt)
        ev = sample_events(cfg.event_family, cfg.theta_true, cfg.chunk_events,
                           derive_seed(cfg.master_seed, "curves", ib)).features
        bags = ev[bag_indices(cfg.chunk_events, nb, derive_seed(cfg.master_seed, "curve-bags", ib))]
        for j in range(min(cfg.n_curve_bags, bags.shape[0])):
            curves.append({"bag_size": nb, "bag": j, "grid": [float(t) for t in grid],
                           "probability": [float(v) for v in scorer.probability_curve(bags[j], grid)]})
    return ScalingReport("pnn", cfg.to_dict(), points, _ansatz(cfg, points), curves, _scan_flags(points))


def run_scaling(config: ExperimentConfig, workers: int = 1) -> ScalingReport:
    return {"binary": run_binary_scaling, "multiclass": run_multiclass_fisher_scan,
            "pnn": run_pnn_scan}[config.mode](config, workers)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("AMIL_WORKERS", "1")))
    except ValueError:
        return 1
