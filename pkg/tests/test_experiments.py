import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amil import inference as inf
from amil.bagnet import BagModel, logits_batch
from amil.errors import (
    HeterogeneousEnsembleError,
    InsufficientDataError,
    InvalidParameterError,
    PseudoExperimentError,
)
from amil.experiments import (
    BinaryScanScorer,
    ExperimentConfig,
    MulticlassScorer,
    PNNScorer,
    ensemble_predict,
    roc_auc,
    run_binary_scaling,
    run_multiclass_fisher_scan,
    run_pseudo_experiments,
)
from amil.synthdata import EventFamily


def brute_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=60))
def test_auc_matches_pairwise_count(pairs):
    s = np.array([p[0] for p in pairs], dtype=float)
    y = np.array([int(p[1]) for p in pairs])
    if y.min() == y.max():
        with pytest.raises(InvalidParameterError):
            roc_auc(s, y)
        return
    assert roc_auc(s, y) == pytest.approx(brute_auc(s, y), abs=1e-12)


def test_auc_properties(rng):
    s = rng.standard_normal(500)
    y = rng.integers(0, 2, 500)
    a = roc_auc(s, y)
    assert roc_auc(-s, y) == pytest.approx(1 - a)
    assert roc_auc(np.exp(s), y) == pytest.approx(a)  # rank-only
    assert roc_auc(np.zeros(500), y) == 0.5
    assert roc_auc([0, 1], [0, 1]) == 1.0
    with pytest.raises(InvalidParameterError):
        roc_auc([0.1, 0.2], [0, 2])


def test_ensemble_of_identical_models_matches_single(rng):
    m = BagModel.create("binary", 1, seed=3)
    x = rng.standard_normal((10, 4, 1))
    pred = ensemble_predict([m, m.copy()], x)
    np.testing.assert_allclose(pred.log_ratio, logits_batch(m, x)[:, 0], rtol=1e-9, atol=1e-12)
    mc = BagModel.create("multiclass", 1, n_classes=3, seed=1)
    pred = ensemble_predict([mc, mc], x)
    np.testing.assert_allclose(pred.probabilities.sum(axis=1), 1.0)


def test_ensemble_averages_probabilities(rng):
    a, b = BagModel.create("binary", 1, seed=1), BagModel.create("binary", 1, seed=2)
    x = rng.standard_normal((5, 3, 1))
    pa = 1 / (1 + np.exp(-logits_batch(a, x)[:, 0]))
    pb = 1 / (1 + np.exp(-logits_batch(b, x)[:, 0]))
    p = ensemble_predict([a, b], x)
    np.testing.assert_allclose(p.probabilities, (pa + pb) / 2, rtol=1e-12)
    pbar = (pa + pb) / 2
    np.testing.assert_allclose(p.log_ratio, np.log(pbar / (1 - pbar)), rtol=1e-10)
    lg = ensemble_predict([a, b], x, space="logit")
    np.testing.assert_allclose(lg.log_ratio, (logits_batch(a, x) + logits_batch(b, x))[:, 0] / 2, rtol=1e-10)


def test_heterogeneous_ensemble_rejected():
    with pytest.raises(HeterogeneousEnsembleError):
        ensemble_predict([BagModel.create("binary", 1), BagModel.create("binary", 2)], np.zeros((1, 1, 1)))
    with pytest.raises(HeterogeneousEnsembleError):
        ensemble_predict([], np.zeros((1, 1, 1)))


def test_multiclass_scorer(rng):
    grid = inf.theta_grid(-0.2, 0.2, 0.1)
    m = BagModel.create("multiclass", 1, n_classes=5, seed=0)
    x = rng.standard_normal((6, 3, 1))
    z = logits_batch(m, x)
    got = MulticlassScorer([m], grid).bag_llrs(x, grid, 0.0)
    np.testing.assert_allclose(got, z - z[:, [2]], rtol=1e-12)
    # two copies of one model give the same LLRs through log-mean-softmax
    got2 = MulticlassScorer([m, m.copy()], grid).bag_llrs(x, grid, 0.0)
    np.testing.assert_allclose(got2, got, rtol=1e-9, atol=1e-12)
    with pytest.raises(InvalidParameterError):
        MulticlassScorer([m], grid[:3])


def test_pnn_and_binary_scan_scorers(rng):
    grid = np.array([-0.1, 0.0, 0.1])
    p = BagModel.create("param", 1, seed=0)
    x = rng.standard_normal((4, 2, 1))
    got = PNNScorer([p]).bag_llrs(x, grid, 0.0)
    want = logits_batch(p, x, 0.1)[:, 0] - logits_batch(p, x, 0.0)[:, 0]
    np.testing.assert_allclose(got[:, 2], want, rtol=1e-12)
    assert np.all(got[:, 1] == 0)
    models = {-0.1: [BagModel.create("binary", 1, seed=1)], 0.1: [BagModel.create("binary", 1, seed=2)]}
    got = BinaryScanScorer(models).bag_llrs(x, grid, 0.0)
    np.testing.assert_allclose(got[:, 2], logits_batch(models[0.1][0], x)[:, 0], rtol=1e-9)
    with pytest.raises(InvalidParameterError):
        BinaryScanScorer(models).bag_llrs(x, np.array([0.0, 0.3]), 0.0)


def test_pseudo_experiments_reproducible_and_chunk_independent():
    fam = EventFamily("gauss-shift")
    grid = inf.theta_grid(-1, 1, 0.1)
    sc = inf.OracleScorer(fam)
    a = run_pseudo_experiments(sc, fam, 0.0, 1000, 40, grid, 0.4, seed=5, n_b=10)
    b = run_pseudo_experiments(sc, fam, 0.0, 1000, 20, grid, 0.4, seed=5, n_b=10)
    assert [f.theta_hat for f in a[:20]] == [f.theta_hat for f in b]
    # exact oracle: every fit has the full-data curvature
    assert all(f.i_curv == pytest.approx(1000, rel=1e-9) for f in a)
    c = run_pseudo_experiments(sc, fam, 0.0, 1000, 20, grid, 0.4, seed=6, n_b=10)
    assert [f.theta_hat for f in c] != [f.theta_hat for f in b]


def test_pseudo_experiments_strict_and_lenient():
    fam = EventFamily("gauss-shift")
    grid = inf.theta_grid(-1, 1, 0.1)
    # true theta far off the grid: the vertex lands outside, which is a status, not an error
    fits = run_pseudo_experiments(inf.OracleScorer(fam), fam, 3.0, 100, 3, grid, 0.4, seed=0)
    assert all(not f.valid for f in fits)
    with pytest.raises(PseudoExperimentError) as info:
        run_pseudo_experiments(inf.OracleScorer(fam), fam, 0.0, 100, 3, grid, 0.05, seed=0)
    assert info.value.chunk_index == 0
    fits = run_pseudo_experiments(inf.OracleScorer(fam), fam, 0.0, 100, 3, grid, 0.05, seed=0, strict=False)
    assert [f.status for f in fits] == ["InsufficientPointsError"] * 3
    with pytest.raises(InsufficientDataError):
        run_pseudo_experiments(inf.OracleScorer(fam), fam, 0.0, 5, 3, grid, 0.4, seed=0, n_b=10)


def test_config_defaults_and_validation():
    assert ExperimentConfig(mode="binary").n_models_per_point == 5
    assert ExperimentConfig(mode="multiclass").n_models_per_point == 20
    cfg = ExperimentConfig(n_pseudo=50)
    assert cfg.n_pseudo_holdout == 50 and len(cfg.grid) == 21
    assert cfg.window_for(1) == 0.7 and cfg.window_for(10) == 0.4
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidParameterError):
        ExperimentConfig(mode="regression")
    with pytest.raises(InvalidParameterError):
        ExperimentConfig.from_dict({"bogus": 1})


def test_oracle_fisher_scan():
    cfg = ExperimentConfig(mode="multiclass", oracle=True, bag_sizes=[1, 10, 50], n_pseudo=300)
    rep = run_multiclass_fisher_scan(cfg)
    assert [p["bag_size"] for p in rep.points] == [1, 10, 50]
    for p in rep.points:
        assert p["status"] == "ok"
        assert p["i_curv_mean"] == pytest.approx(1000, rel=1e-9)
        assert abs(p["c_cicc"] - 1) < 0.25
        assert [r["calibration"] for r in p["rows"]] == ["uncalibrated", "calibrated"]
    assert rep.ansatz["status"] == "ok" and abs(rep.ansatz["C"]) < 0.05


def test_binary_scaling_tiny():
    cfg = ExperimentConfig(mode="binary", theta1=1.0, bag_sizes=[5], background_fracs=[0.0, 1.0],
                           n_models_per_point=1, train_events_per_class=2000, batch_events=500,
                           max_epochs=3, patience=1)
    rep = run_binary_scaling(cfg)
    # the event-level baseline is always included
    assert [(p["n_signal"], p["c_bkgrd"], p["baseline"]) for p in rep.points] == [
        (1, 0.0, True), (5, 0.0, False), (5, 1.0, False)]
    assert rep.points[2]["bag_size"] == 10
    assert all(p["status"] == "ok" and 0.5 < p["auc_mean"] <= 1 for p in rep.points)
    assert rep.points[1]["auc_mean"] > rep.points[0]["auc_mean"]
