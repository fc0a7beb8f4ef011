import json

import numpy as np
import pytest

from amil import inference as inf
from amil import persistence as io
from amil.bagnet import BagModel, TrainSchedule, adapt_normalization, logits_batch
from amil.errors import FormatError, HeadMismatchError, IntegrityError, SchemaVersionError
from amil.experiments import ExperimentConfig, ScalingReport
from amil.synthdata import EventFamily, sample_background, sample_events


def _trained_like(head="multiclass", seed=0):
    m = BagModel.create(head, 2, n_classes=4, seed=seed)
    rng = np.random.default_rng(seed)
    adapt_normalization(m, rng.standard_normal((50, m.input_dim)) * 3 + 1)
    for k in m.state:
        if k.startswith("running"):
            m.state[k] = rng.uniform(0.5, 1.5, m.state[k].shape)
    return m


@pytest.mark.parametrize("head", ["binary", "multiclass", "param"])
def test_checkpoint_round_trip_is_bit_exact(tmp_path, head, rng):
    m = _trained_like(head)
    entry = io.save_checkpoint(m, tmp_path / "m.amck", TrainSchedule().digest())
    assert entry["sha256"] == io.sha256_file(tmp_path / "m.amck")
    m2 = io.load_checkpoint(tmp_path / "m.amck")
    x = rng.standard_normal((3, 5, 2))
    th = 0.1 if head == "param" else None
    np.testing.assert_array_equal(logits_batch(m, x, th), logits_batch(m2, x, th))
    assert (m2.head, m2.n_classes, m2.width, m2.dropout, m2.l2, m2.adapted) == (
        m.head, m.n_classes, m.width, m.dropout, m.l2, True)


def test_checkpoint_corruption(tmp_path):
    p = tmp_path / "m.amck"
    io.save_checkpoint(_trained_like(), p)
    raw = bytearray(p.read_bytes())

    flipped = bytearray(raw)
    flipped[-20] ^= 0x01
    (tmp_path / "flip.amck").write_bytes(flipped)
    with pytest.raises(IntegrityError):
        io.load_checkpoint(tmp_path / "flip.amck")

    (tmp_path / "trunc.amck").write_bytes(raw[:-8])
    with pytest.raises(IntegrityError):
        io.load_checkpoint(tmp_path / "trunc.amck")

    (tmp_path / "short.amck").write_bytes(raw[:30])
    with pytest.raises(IntegrityError):
        io.load_checkpoint(tmp_path / "short.amck")

    bad = bytearray(raw)
    bad[:4] = b"XXXX"
    (tmp_path / "magic.amck").write_bytes(bad)
    with pytest.raises(FormatError):
        io.load_checkpoint(tmp_path / "magic.amck")

    ver = bytearray(raw)
    ver[4] = 9
    (tmp_path / "ver.amck").write_bytes(ver)
    with pytest.raises(FormatError, match="version"):
        io.load_checkpoint(tmp_path / "ver.amck")


def test_checkpoint_head_guard(tmp_path):
    io.save_checkpoint(_trained_like("param"), tmp_path / "p.amck")
    with pytest.raises(HeadMismatchError):
        io.load_checkpoint(tmp_path / "p.amck", expected_head="binary")
    assert io.load_checkpoint(tmp_path / "p.amck", expected_head="param").head.value == "param"


def test_event_file_round_trip(tmp_path):
    fam = EventFamily("gauss-logvar", dim=1, nuisance_dims=2)
    ev = sample_events(fam, -0.3, 123, 42)
    io.save_events(ev, tmp_path / "e.amil")
    back = io.load_events(tmp_path / "e.amil")
    np.testing.assert_array_equal(back.features, ev.features)
    assert (back.theta, back.seed, back.family) == (-0.3, 42, fam)
    raw = (tmp_path / "e.amil").read_bytes()
    assert raw[:4] == b"AMIL"
    (tmp_path / "t.amil").write_bytes(raw[:-1])
    with pytest.raises(IntegrityError):
        io.load_events(tmp_path / "t.amil")
    bkg = sample_background(10, 3, 1)
    io.save_events(bkg, tmp_path / "b.amil")
    assert io.load_events(tmp_path / "b.amil").family.kind.value == "background"


def test_event_csv(tmp_path):
    ev = sample_events(EventFamily("gauss-shift", 2), 0.1, 5, 0)
    io.export_events_csv(ev, tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "x0,x1" and len(lines) == 6
    assert float(lines[1].split(",")[0]) == ev.features[0, 0]


def test_bag_index_round_trip(tmp_path):
    idx = np.arange(40).reshape(4, 10)[:, ::-1]
    io.save_bag_indices(idx, tmp_path / "b.ambg")
    np.testing.assert_array_equal(io.load_bag_indices(tmp_path / "b.ambg"), idx)


def _report(status="ok"):
    cfg = ExperimentConfig(mode="multiclass", bag_sizes=[1, 10])
    pts = [{"bag_size": 1, "status": status, "c_cicc": 1.0 / 3.0, "i_mle": float("nan"),
            "rows": [{"calibration": "uncalibrated", "c_cicc": 1.0, "coverage": 0.7, "mean_fisher": 1e3,
                      "bias": -1e-17, "fit_mse": 0.1}]},
           {"bag_size": 10, "status": "failed: no trained models", "rows": []}]
    return ScalingReport("multiclass", cfg.to_dict(), pts, {"C": 0.04})


def test_report_json_is_canonical_and_lossless(tmp_path):
    rep = _report()
    io.write_report(rep, tmp_path / "a", "scaling")
    back = io.read_report(tmp_path / "a" / "scaling.json")
    assert back.points[0]["c_cicc"] == 1.0 / 3.0
    assert back.points[0]["i_mle"] is None  # non-finite -> null
    assert back.points[1]["status"] == "failed: no trained models"
    io.write_report(back, tmp_path / "b", "scaling")
    assert (tmp_path / "a" / "scaling.json").read_bytes() == (tmp_path / "b" / "scaling.json").read_bytes()
    # key order never depends on construction order
    d = {"b": 1, "a": [1.5, {"z": 0, "y": 1}]}
    assert io.canonical_json(d) == io.canonical_json(dict(reversed(list(d.items()))))


def test_report_csv_rows(tmp_path):
    paths = io.write_report(_report(), tmp_path, "scaling")
    lines = open(paths["csv"]["path"]).read().splitlines()
    assert lines[0].startswith("bag_size,calibration,c_cicc,coverage")
    assert len(lines) - 1 == 2 * 2  # (bag sizes) x (uncalibrated, calibrated)
    assert lines[-1].endswith("failed: no trained models")


def test_calibration_and_coverage_round_trip(tmp_path):
    rec = inf.CalibrationRecord(200.0, 180.0, 200 / 180, 0.001, 100, 2, seed=7, extra={"bag_size": 10})
    io.write_report(rec, tmp_path, "cal")
    assert io.read_report(tmp_path / "cal.json") == rec
    cov = inf.coverage([(0.0, 1.0), (2.0, 3.0)], 1.0)
    paths = io.write_report(cov, tmp_path, "cov")
    back = io.read_report(tmp_path / "cov.json")
    assert back.coverage == 0.5 and back.intervals == [(0.0, 1.0), (2.0, 3.0)]
    assert "target" in open(paths["csv"]["path"]).readline()


def test_schema_version_mismatch(tmp_path):
    p = tmp_path / "r.json"
    p.write_text(json.dumps({"schema_version": 99, "kind": "scaling", "data": {}}))
    with pytest.raises(SchemaVersionError):
        io.read_report(p)
    p.write_text("{not json")
    with pytest.raises(FormatError):
        io.read_report(p)


def test_manifest_verification(tmp_path):
    lay = io.RunLayout(tmp_path / "run").create()
    entry = io.save_checkpoint(_trained_like(), lay.checkpoints / "m.amck")
    man = io.RunManifest(config_hash="abc", seeds={"master_seed": 1})
    man.add(lay.root, entry)
    io.write_manifest(man, lay.root)
    back = io.load_manifest(lay.root)
    assert back.artifacts == {"checkpoints/m.amck": entry["sha256"]}
    assert back.created and back.code_version
    with open(lay.checkpoints / "m.amck", "ab") as f:
        f.write(b"\0")
    with pytest.raises(IntegrityError):
        io.load_manifest(lay.root)
    (lay.checkpoints / "m.amck").unlink()
    with pytest.raises(IntegrityError, match="missing"):
        io.load_manifest(lay.root)
