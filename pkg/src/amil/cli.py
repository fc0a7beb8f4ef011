"""Command-line entry point: ``amil <generate|train|scan|calibrate|coverage|scaling>``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import inference as inf
from . import persistence as io
from .config import (
    KEY_SECTION,
    coerce,
    config_hash,
    dump_config,
    field_types,
    load_config,
    parse_config,
)
from .errors import (
    AmilError,
    ConfigError,
    HeadMismatchError,
    InvalidGridError,
    InvalidParameterError,
    InvalidSpecError,
    TrainingDivergedError,
)
from .experiments import (
    ExperimentConfig,
    MulticlassScorer,
    PNNScorer,
    _binary_data,
    _binary_sources,
    _class_pools,
    _pnn_pools,
    parallel_map,
    run_pseudo_experiments,
    run_scaling,
)
from .bagnet import PoolSource
from .experiments import train_model
from .rng import derive_seed
from .synthdata import (
    EventFamily,
    bag_indices,
    contaminate_arrays,
    n_background_for,
    sample_background,
    sample_events,
)

log = logging.getLogger("amil")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
_CONFIG_ERRORS = (ConfigError, InvalidParameterError, InvalidGridError, InvalidSpecError, HeadMismatchError)
_HEAD_FOR_MODE = {"binary": "binary", "multiclass": "multiclass", "pnn": "param"}


def _env_workers() -> int:
    raw = os.environ.get("AMIL_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"AMIL_WORKERS must be an integer, got {raw!r}") from None


def _finite(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be finite, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


# -- parser ----------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--out", required=True, type=Path, help="output run directory")
    p.add_argument("--workers", type=_positive_int, default=None,
                   help="parallel worker processes (default: $AMIL_WORKERS or 1); results do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_config(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="INI config file; flags below override its keys")
    p.add_argument("--seed", type=int, dest="cfg_master_seed", help="master seed (alias of --master-seed)")
    types = field_types()
    g = p.add_argument_group("config overrides", "each flag sets the config key of the same name")
    for key, section in KEY_SECTION.items():
        flag = "--" + key.replace("_", "-")
        kw = dict(dest=f"cfg_{key}", default=None, metavar="VALUE", help=f"[{section}] {key}")
        if types[key] is bool:
            kw.update(nargs="?", const="true")
        if key == "n_models_per_point":
            g.add_argument(flag, "--seeds", **kw)
        else:
            g.add_argument(flag, **kw)


def _add_scorer(p: argparse.ArgumentParser):
    p.add_argument("--nb", type=_positive_int, default=None,
                   help="bag size (default: first entry of bag_sizes)")
    p.add_argument("--checkpoint", action="append", type=Path, default=[],
                   help="model checkpoint (repeat for an ensemble)")
    p.add_argument("--checkpoint-dir", type=Path, help="use every *.amck file in this directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amil", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"amil {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample events (and optionally bags) to disk")
    p.add_argument("--family", default="gauss-shift", help="gauss-shift | gauss-logvar")
    p.add_argument("--theta", type=_finite, required=True, help="parameter value of the sample")
    p.add_argument("--n", type=_positive_int, required=True, help="number of signal events")
    p.add_argument("--dim", type=_positive_int, default=1, help="informative dimensions")
    p.add_argument("--nuisance-dims", type=int, default=0, help="extra uninformative dimensions")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--nb", type=_positive_int, default=None, help="also write a bag index file with this bag size")
    p.add_argument("--c-bkgrd", type=_finite, default=0.0, help="background events per signal event in each bag")
    p.add_argument("--csv", action="store_true", help="also export events as CSV")
    _add_common(p)

    p = sub.add_parser("train", help="train one model or an ensemble; writes checkpoints and histories")
    _add_config(p)
    p.add_argument("--nb", type=_positive_int, default=None, help="bag size (default: first entry of bag_sizes)")
    p.add_argument("--c-bkgrd", type=_finite, default=0.0, help="background fraction (binary mode)")
    _add_common(p)

    p = sub.add_parser("scan", help="LLR profile and parabola fit for one dataset")
    _add_config(p)
    _add_scorer(p)
    p.add_argument("--events", type=Path, help="event file to scan (default: sample chunk_events at theta_true)")
    _add_common(p)

    p = sub.add_parser("calibrate", help="pseudo-experiments -> calibration record (c_cicc, bias)")
    _add_config(p)
    _add_scorer(p)
    _add_common(p)

    p = sub.add_parser("coverage", help="apply a calibration record to fresh pseudo-experiments")
    _add_config(p)
    _add_scorer(p)
    p.add_argument("--calibration", type=Path, required=True, help="calibration record JSON")
    p.add_argument("--holdout-seed", type=int, default=None,
                   help="pseudo-experiment seed (default: derived; must differ from the calibration seed)")
    p.add_argument("--uncalibrated", action="store_true", help="ignore c_cicc (bias is still removed)")
    _add_common(p)

    p = sub.add_parser("scaling", help="full bag-size study; emits report tables")
    _add_config(p)
    _add_common(p)
    return parser


# -- helpers ---------------------------------------------------------------

def _config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for key in KEY_SECTION:
        v = getattr(args, f"cfg_{key}", None)
        if v is not None:
            overrides[key] = v if not isinstance(v, str) else coerce(key, v)
    if args.config is not None:
        return load_config(args.config, overrides)
    return parse_config("", overrides)


class _Run:
    """Run directory bookkeeping: layout, config snapshot and manifest."""

    def __init__(self, out: Path, cfg: ExperimentConfig | None):
        self.layout = io.RunLayout(out).create()
        try:
            self.manifest = io.load_manifest(out, verify=False)
        except FileNotFoundError:
            self.manifest = io.RunManifest(config_hash=config_hash(cfg) if cfg else "")
        if cfg is not None:
            self.manifest.config_hash = config_hash(cfg)
            self.manifest.seeds["master_seed"] = cfg.master_seed
            cpath = self.layout.config
            cpath.write_text(dump_config(cfg), encoding="utf-8")
            self.add({"path": str(cpath), "sha256": io.sha256_file(cpath)})

    def add(self, entry: dict):
        self.manifest.add(self.layout.root, entry)

    def add_report(self, entries: dict):
        for e in entries.values():
            self.add(e)

    def close(self):
        io.write_manifest(self.manifest, self.layout.root)


def _bag_size(args, cfg: ExperimentConfig) -> int:
    return args.nb if args.nb is not None else cfg.bag_sizes[0]


def _window(args, cfg: ExperimentConfig, nb: int) -> float:
    # an explicit --window wins for every bag size, including N_B = 1
    return cfg.window if args.cfg_window is not None else cfg.window_for(nb)


def _checkpoint_paths(args) -> list[Path]:
    paths = list(args.checkpoint)
    if args.checkpoint_dir is not None:
        paths += sorted(args.checkpoint_dir.glob("*.amck"))
    return paths


def _scorer(args, cfg: ExperimentConfig):
    if cfg.oracle:
        return inf.OracleScorer(cfg.event_family), {"scorer": "oracle"}
    paths = _checkpoint_paths(args)
    if not paths:
        raise ConfigError("need --checkpoint/--checkpoint-dir or --oracle")
    head = _HEAD_FOR_MODE[cfg.mode]
    models = [io.load_checkpoint(p, expected_head=head) for p in paths]
    meta = {"scorer": f"{cfg.mode}-ensemble", "checkpoints": [io.sha256_file(p) for p in paths]}
    if cfg.mode == "multiclass":
        return MulticlassScorer(models, cfg.grid, cfg.ensemble_space), meta
    if cfg.mode == "pnn":
        return PNNScorer(models, cfg.ensemble_space), meta
    raise ConfigError("profile scans need a multiclass or pnn model (mode = binary has no theta scan)")


# -- subcommands -----------------------------------------------------------

def cmd_generate(args) -> int:
    if args.c_bkgrd < 0:
        raise ConfigError("--c-bkgrd must be >= 0")
    if args.c_bkgrd > 0 and args.nb is None:
        raise ConfigError("--c-bkgrd needs --nb")
    fam = EventFamily.parse(args.family, args.dim, args.nuisance_dims)
    run = _Run(args.out, None)
    run.manifest.seeds["generate"] = args.seed
    data = run.layout.root / "data"
    ev = sample_events(fam, args.theta, args.n, derive_seed(args.seed, "events"))
    run.add(io.save_events(ev, data / "events.amil"))
    if args.csv:
        io.export_events_csv(ev, data / "events.csv")
        run.add({"path": str(data / "events.csv"), "sha256": io.sha256_file(data / "events.csv")})
    if args.nb is not None:
        # bag on row numbers: background rows are numbered after the signal rows
        sig = np.arange(args.n, dtype=np.float64)[:, None]
        n_bkg_total = 0
        bkg = np.empty((0, 1))
        if args.c_bkgrd > 0:
            n_bkg_total = (args.n // args.nb) * n_background_for(args.c_bkgrd, args.nb)
            bkg = (args.n + np.arange(n_bkg_total, dtype=np.float64))[:, None]
            bev = sample_background(n_bkg_total, fam.dim_total, derive_seed(args.seed, "background"))
            run.add(io.save_events(bev, data / "background.amil"))
        x, _ = contaminate_arrays(sig, bkg, args.c_bkgrd, args.nb, derive_seed(args.seed, "bags"))
        run.add(io.save_bag_indices(x[:, :, 0].astype(np.int64), data / "bags.ambg"))
    run.close()
    print(f"wrote {args.n} events to {data}")
    return EXIT_OK


def _train_sources(cfg: ExperimentConfig, nb: int, c_bkgrd: float):
    if cfg.mode == "binary":
        sm, alt = _binary_data(cfg)
        tr, va, _ = _binary_sources(cfg, sm, alt, nb, c_bkgrd, 0)
        return "binary", 2, tr, va
    if cfg.mode == "multiclass":
        tr, va, _ = _class_pools(cfg)
        return "multiclass", len(cfg.grid), PoolSource(tr, nb), PoolSource(va, nb)
    tr, va, _ = _pnn_pools(cfg)
    return "param", 2, PoolSource(tr, nb), PoolSource(va, nb)


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    nb = _bag_size(args, cfg)
    run = _Run(args.out, cfg)
    head, n_classes, tr, va = _train_sources(cfg, nb, args.c_bkgrd)
    seeds = [derive_seed(cfg.master_seed, "train-model", nb, k) for k in range(cfg.n_models_per_point)]
    run.manifest.seeds["models"] = seeds
    tasks = [(head, cfg.event_family.dim_total, n_classes, tr, va, cfg.schedule, s, cfg.retry_failed)
             for s in seeds]
    results = parallel_map(_train_task, tasks, args.workers)
    failed = 0
    for k, (model, hist, status) in enumerate(results):
        if hist is not None:
            hdoc = {"model": k, "seed": seeds[k], "status": status, "history": hist.to_dict()}
            run.add(io.write_json(hdoc, run.layout.reports / f"history_{k:03d}.json", "history"))
        if model is None:
            failed += 1
            continue
        run.add(io.save_checkpoint(model, run.layout.checkpoints / f"model_{k:03d}.amck",
                                   cfg.schedule.digest()))
    run.close()
    if failed:
        print(f"error: {failed} of {len(results)} models diverged; histories kept in {run.layout.reports}",
              file=sys.stderr)
        return EXIT_RUNTIME
    print(f"trained {len(results)} model(s) at N_B={nb}")
    return EXIT_OK


def _train_task(t):
    return train_model(*t)


def cmd_scan(args) -> int:
    cfg = _config_from_args(args)
    nb = _bag_size(args, cfg)
    scorer, meta = _scorer(args, cfg)
    if args.events is not None:
        ev = io.load_events(args.events)
        if ev.family.dim_total != cfg.event_family.dim_total:
            raise ConfigError("event file dimensionality does not match the config")
        x = ev.features
    else:
        x = sample_events(cfg.event_family, cfg.theta_true, cfg.chunk_events,
                          derive_seed(cfg.master_seed, "scan-events")).features
    bags = x[bag_indices(x.shape[0], nb, derive_seed(cfg.master_seed, "scan-bags"))]
    profile = inf.llr_profile(scorer, bags, cfg.grid, cfg.theta0)
    window = _window(args, cfg, nb)
    run = _Run(args.out, cfg)
    try:
        fit = inf.parabola_fit(profile, window)
    except AmilError as exc:
        fit = inf.ParabolaFit.failed(type(exc).__name__)
    doc = {"bag_size": nb, "profile": profile.to_dict(), "fit": fit.to_dict(), **meta}
    run.add(io.write_json(doc, run.layout.reports / "profile.json", "profile"))
    rows = [[t, v] for t, v in zip(profile.theta_grid.tolist(), profile.llr.tolist())]
    io.write_csv(["theta", "minus_2_delta_log_l"], rows, run.layout.plotdata / "profile.csv")
    run.add({"path": str(run.layout.plotdata / "profile.csv"),
             "sha256": io.sha256_file(run.layout.plotdata / "profile.csv")})
    run.close()
    print(f"theta_hat = {fit.theta_hat:.6g}, i_curv = {fit.i_curv:.6g} ({fit.status})")
    return EXIT_OK


def _pseudo(args, cfg, scorer, nb, n, seed):
    return run_pseudo_experiments(scorer, cfg.event_family, cfg.theta_true, cfg.chunk_events, n,
                                  cfg.grid, _window(args, cfg, nb), seed, n_b=nb, theta0=cfg.theta0,
                                  strict=False, workers=args.workers)


def cmd_calibrate(args) -> int:
    cfg = _config_from_args(args)
    if cfg.n_pseudo < 2:
        raise ConfigError("calibration needs n_pseudo >= 2")
    nb = _bag_size(args, cfg)
    scorer, meta = _scorer(args, cfg)
    seed = derive_seed(cfg.master_seed, "calib", nb)
    fits = _pseudo(args, cfg, scorer, nb, cfg.n_pseudo, seed)
    rec = inf.calibrate(fits, cfg.theta_true, seed)
    rec.extra.update(meta, master_seed=cfg.master_seed, bag_size=nb, window=_window(args, cfg, nb),
                     theta_true=cfg.theta_true)
    run = _Run(args.out, cfg)
    run.manifest.seeds["calibration"] = seed
    run.add_report(io.write_report(rec, run.layout.reports, "calibration", run.layout.plotdata))
    run.close()
    print(f"c_cicc = {rec.c_cicc:.4f}, bias = {rec.bias_hat:.3g} "
          f"({rec.n_pseudo - rec.n_excluded}/{rec.n_pseudo} pseudo-experiments)")
    return EXIT_OK


def cmd_coverage(args) -> int:
    cfg = _config_from_args(args)
    rec = io.read_report(args.calibration)
    if not isinstance(rec, inf.CalibrationRecord):
        raise ConfigError(f"{args.calibration} is not a calibration record")
    nb = _bag_size(args, cfg)
    seed = args.holdout_seed if args.holdout_seed is not None else derive_seed(cfg.master_seed, "holdout", nb)
    if rec.seed is not None and seed == rec.seed:
        raise ConfigError("held-out pseudo-experiments must not reuse the calibration seed")
    scorer, _ = _scorer(args, cfg)
    fits = [f for f in _pseudo(args, cfg, scorer, nb, cfg.n_pseudo, seed) if f.valid]
    c = 1.0 if args.uncalibrated else rec.c_cicc
    rep = inf.coverage([inf.confidence_interval(f, c, rec.bias_hat) for f in fits], cfg.theta_true)
    run = _Run(args.out, cfg)
    run.manifest.seeds["holdout"] = seed
    run.add_report(io.write_report(rep, run.layout.reports, "coverage", run.layout.plotdata))
    run.close()
    print(f"coverage = {rep.coverage:.4f} over {len(fits)} intervals (target {rep.target})")
    return EXIT_OK


def cmd_scaling(args) -> int:
    cfg = _config_from_args(args)
    report = run_scaling(cfg, args.workers)
    run = _Run(args.out, cfg)
    run.add_report(io.write_report(report, run.layout.reports, "scaling", run.layout.plotdata))
    if report.curves:
        rows = [[c["bag_size"], c["bag"], t, p] for c in report.curves for t, p in zip(c["grid"], c["probability"])]
        path = run.layout.plotdata / "pnn_curves.csv"
        io.write_csv(["bag_size", "bag", "theta", "probability"], rows, path)
        run.add({"path": str(path), "sha256": io.sha256_file(path)})
    run.close()
    bad = [p for p in report.points if p["status"] != "ok"]
    print(f"{report.mode} scaling: {len(report.points)} points, {len(bad)} failed")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "scan": cmd_scan,
    "calibrate": cmd_calibrate,
    "coverage": cmd_coverage,
    "scaling": cmd_scaling,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers is None:
            args.workers = _env_workers()
        return COMMANDS[args.command](args)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (AmilError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
