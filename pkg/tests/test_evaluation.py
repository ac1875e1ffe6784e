import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aaupower import dataset as dsm
from aaupower.evaluation import (
    SCATTER_COLUMNS, MetricsReport, calibration, evaluate, group_slopes, mae, mape,
    scatter_rows, write_scatter_csv, z_for_level,
)
from aaupower.nn import GaussianPrediction, TrainConfig, train
from aaupower.teacher import ActivityConfig, generate_dataset, sample_fleet


def test_mae_mape_examples():
    assert mae([110, 90], [100, 100]) == 10.0
    assert mape([110, 90], [100, 100]) == pytest.approx(10.0, abs=1e-12)
    assert mape([55], [50]) == pytest.approx(10.0, abs=1e-12)
    assert mae([1.5, 2.5], [1.5, 2.5]) == 0.0
    assert mape([3.0], [3.0]) == 0.0


def test_mae_matches_reference_loop():
    rng = np.random.default_rng(0)
    p, t = rng.normal(400, 50, 1000), rng.normal(400, 50, 1000)
    ref = sum(abs(a - b) for a, b in zip(p.tolist(), t.tolist())) / len(p)
    assert mae(p, t) == pytest.approx(ref, abs=1e-12)


def test_metric_errors():
    with pytest.raises(ValueError, match="length"):
        mae([1, 2], [1])
    with pytest.raises(ValueError):
        mae([], [])
    with pytest.raises(ValueError, match="positive"):
        mape([1, 2], [1, 0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(1, 1e3), st.floats(1, 1e3)), min_size=1, max_size=30),
       st.randoms(use_true_random=False), st.floats(0.01, 100))
def test_permutation_and_scale_invariance(pairs, rnd, lam):
    p = np.array([a for a, _ in pairs])
    t = np.array([b for _, b in pairs])
    perm = list(range(len(p)))
    rnd.shuffle(perm)
    assert mae(p[perm], t[perm]) == pytest.approx(mae(p, t), rel=1e-12, abs=1e-12)
    assert mape(p[perm], t[perm]) == pytest.approx(mape(p, t), rel=1e-12, abs=1e-12)
    assert mape(lam * p, lam * t) == pytest.approx(mape(p, t), rel=1e-9, abs=1e-9)
    assert mae(lam * p, lam * t) == pytest.approx(lam * mae(p, t), rel=1e-9, abs=1e-9)


def test_z_quantile():
    assert z_for_level(0.9) == pytest.approx(1.6448536269514722, abs=1e-12)
    assert z_for_level(0.95) == pytest.approx(1.959963984540054, abs=1e-12)
    with pytest.raises(ValueError):
        z_for_level(1.0)


def _gauss(mu, sigma):
    return GaussianPrediction(mu_norm=mu, sigma_norm=sigma, mu_w=mu, sigma_w=sigma)


def test_calibration_monte_carlo():
    rng = np.random.default_rng(5)
    n = 100_000
    mu = rng.uniform(100, 800, n)
    sigma = rng.uniform(1, 40, n)
    truth = rng.normal(mu, sigma)
    cov = calibration(_gauss(mu, sigma), truth)
    assert abs(cov[0.9] - 0.90) < 0.01
    assert abs(cov[0.5] - 0.50) < 0.01
    assert cov[0.5] < cov[0.8] < cov[0.9] < cov[0.95]


def test_calibration_extremes():
    mu = np.full(100, 300.0)
    assert calibration(_gauss(mu, np.full(100, 50.0)), mu + 0.01)[0.9] == 1.0
    assert calibration(_gauss(mu, np.full(100, 0.01)), mu + 50.0)[0.9] == 0.0
    with pytest.raises(ValueError):
        calibration(_gauss(mu, np.zeros(100)), mu)


def test_metrics_report_json():
    r = MetricsReport(1.5, 2.5, 10, {0.9: 0.8}, 3.0)
    d = json.loads(r.to_json())
    assert d == {"mae_w": 1.5, "mape_pct": 2.5, "n": 10, "coverage": {"0.9": 0.8}, "mean_sigma_w": 3.0}


# ── scatter export ─────────────────────────────────────────────────────


NO_SAVING = ActivityConfig(p_symbol_shutdown=0, p_channel_shutdown=0, p_carrier_shutdown=0,
                           p_deep_dormancy=0)


@pytest.fixture(scope="module")
def affine_setup():
    """A single single-carrier type, no noise, no energy saving: power is affine in load
    per p_max group."""
    fleet = sample_fleet(1, 60, 1, 3).with_noise(0.0, 0.0)
    ds = generate_dataset(fleet, 4, 0, NO_SAVING)
    tr, va, te = dsm.split(ds, dsm.SplitSpec.by_count(4, 1), 0)
    model, _ = train(tr, va, config=TrainConfig(max_epochs=200, patience=20, batch_size=64))
    return model, te


def test_scatter_groups_and_columns(affine_setup, tmp_path):
    model, te = affine_setup
    rows = scatter_rows(model, te, group_by="p_max")
    assert len(rows) == len(te)
    assert len({r["group"] for r in rows}) == 3
    assert len({r["group"] for r in scatter_rows(model, te, group_by="type_id")}) == 1
    write_scatter_csv(rows, tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        back = list(csv.DictReader(fh))
    assert tuple(back[0]) == SCATTER_COLUMNS and len(back) == len(rows)
    r = rows[0]
    assert r["true_power_norm"] == pytest.approx(r["true_power_w"] / model.power_max_w)
    with pytest.raises(ValueError):
        scatter_rows(model, te, group_by="band")


def test_teacher_scatter_is_affine_per_group(affine_setup):
    model, te = affine_setup
    fits = group_slopes(scatter_rows(model, te), "true_power_w")
    assert all(r2 > 0.99 for _, _, r2 in fits.values())
    slopes = [b for _, b, _ in fits.values()]
    assert len(set(np.round(slopes, 6))) == len(slopes)


def test_estimated_slopes_track_true(affine_setup):
    model, te = affine_setup
    rows = scatter_rows(model, te)
    true, est = group_slopes(rows, "true_power_w"), group_slopes(rows, "est_power_w")
    for g in true:
        assert abs(est[g][1] / true[g][1] - 1) < 0.10


def test_evaluate_against_measured(affine_setup):
    model, te = affine_setup
    rep = evaluate(model, te)
    assert rep.n == len(te) and rep.mae_w >= 0 and 0 <= rep.mape_pct < 5
    assert all(0 <= v <= 1 for v in rep.coverage.values())
