import json

import numpy as np
import pytest

from amil import persistence as io
from amil.cli import build_parser, main

SMALL = """
[synthdata]
train_events_per_class = 1500
[bagnet]
batch_events = 600
max_epochs = 2
patience = 1
n_models_per_point = 2
[inference]
n_pseudo = 30
[experiments]
mode = pnn
bag_sizes = 5
"""


def _json(p):
    return json.loads(p.read_text())["data"]


def test_help_documents_every_flag(capsys):
    for cmd in ("generate", "train", "scan", "calibrate", "coverage", "scaling"):
        with pytest.raises(SystemExit) as e:
            main([cmd, "--help"])
        assert e.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--window", "--oracle", "--seeds", "--ansatz", "--workers", "--nb", "--out", "--n-pseudo"):
        assert flag in out


def test_generate(tmp_path):
    out = tmp_path / "g"
    assert main(["generate", "--family", "gauss-shift", "--theta", "0.1", "--n", "1000", "--seed", "7",
                 "--nb", "250", "--out", str(out)]) == 0
    ev = io.load_events(out / "data" / "events.amil")
    assert ev.features.shape == (1000, 1) and ev.theta == 0.1
    assert io.load_bag_indices(out / "data" / "bags.ambg").shape == (4, 250)
    io.load_manifest(out)  # verifies every artifact hash
    with pytest.raises(SystemExit) as e:
        main(["generate", "--theta", "nan", "--n", "10", "--out", str(out)])
    assert e.value.code == 2


def test_generate_with_background(tmp_path):
    out = tmp_path / "g"
    assert main(["generate", "--theta", "0", "--n", "100", "--nb", "10", "--c-bkgrd", "0.2",
                 "--out", str(out)]) == 0
    idx = io.load_bag_indices(out / "data" / "bags.ambg")
    assert idx.shape == (10, 12)
    assert np.all((idx >= 100).sum(axis=1) == 2)
    assert len(io.load_events(out / "data" / "background.amil")) == 20


def test_oracle_calibrate_and_coverage(tmp_path):
    out = tmp_path / "run"
    assert main(["calibrate", "--oracle", "--n-pseudo", "200", "--nb", "10", "--out", str(out)]) == 0
    rec = _json(out / "reports" / "calibration.json")
    assert abs(rec["c_cicc"] - 1) < 0.25 and rec["n_pseudo"] == 200 and rec["seed"] is not None
    cal = str(out / "reports" / "calibration.json")
    assert main(["coverage", "--oracle", "--n-pseudo", "200", "--nb", "10", "--calibration", cal,
                 "--out", str(out)]) == 0
    assert 0.55 < _json(out / "reports" / "coverage.json")["coverage"] < 0.8
    assert "target" in (out / "plotdata" / "coverage.csv").read_text().splitlines()[0]
    # leakage guard: reusing the calibration seed is a config error
    assert main(["coverage", "--oracle", "--n-pseudo", "20", "--nb", "10", "--calibration", cal,
                 "--holdout-seed", str(rec["seed"]), "--out", str(out)]) == 2
    assert main(["calibrate", "--oracle", "--n-pseudo", "1", "--out", str(out)]) == 2


def test_scan_with_oracle_and_window(tmp_path):
    out = tmp_path / "scan"
    assert main(["scan", "--oracle", "--nb", "1", "--window", "0.7", "--out", str(out)]) == 0
    doc = _json(out / "reports" / "profile.json")
    assert doc["fit"]["status"] == "ok" and doc["fit"]["window"][1] - doc["fit"]["window"][0] > 1.0
    assert len((out / "plotdata" / "profile.csv").read_text().splitlines()) == 22
    assert main(["scan", "--nb", "1", "--out", str(out)]) == 2  # no checkpoint, no oracle


def test_scan_event_file(tmp_path):
    main(["generate", "--theta", "0.2", "--n", "2000", "--out", str(tmp_path / "g")])
    assert main(["scan", "--oracle", "--nb", "10", "--events", str(tmp_path / "g" / "data" / "events.amil"),
                 "--out", str(tmp_path / "s")]) == 0
    fit = _json(tmp_path / "s" / "reports" / "profile.json")["fit"]
    assert abs(fit["theta_hat"] - 0.2) < 0.1 and fit["i_curv"] == pytest.approx(2000)


def test_train_then_calibrate(tmp_path):
    cfg = tmp_path / "small.ini"
    cfg.write_text(SMALL)
    out = tmp_path / "t"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    ck = sorted((out / "checkpoints").glob("*.amck"))
    assert len(ck) == 2
    seeds = json.loads((out / "manifest.json").read_text())["seeds"]["models"]
    assert len(set(seeds)) == 2
    assert main(["calibrate", "--config", str(cfg), "--checkpoint-dir", str(out / "checkpoints"),
                 "--out", str(out)]) == 0
    # a pnn checkpoint cannot serve a multiclass pipeline
    assert main(["calibrate", "--config", str(cfg), "--mode", "multiclass",
                 "--checkpoint", str(ck[0]), "--out", str(out)]) == 2
    io.load_manifest(out)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exits_nonzero_and_keeps_history(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(SMALL.replace("[bagnet]", "[bagnet]\ninitial_lr = 1e300\nretry_failed = false"))
    out = tmp_path / "t"
    assert main(["train", "--config", str(cfg), "--seeds", "1", "--out", str(out)]) == 3
    hist = _json(out / "reports" / "history_000.json")
    assert hist["status"] == "failed" and hist["history"]["stop_reason"] == "diverged"


def test_config_errors_exit_2(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[bagnet]\npatience = ten\n")
    assert main(["scaling", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["scaling", "--mode", "nope", "--out", str(tmp_path / "x")]) == 2
    assert main(["calibrate", "--config", str(tmp_path / "absent.ini"), "--out", str(tmp_path / "x")]) == 2


def test_workers_env_default(monkeypatch):
    monkeypatch.setenv("AMIL_WORKERS", "3")
    args = build_parser().parse_args(["scaling", "--out", "x"])
    assert args.workers is None  # resolved from the environment inside main
