import numpy as np
import pytest

import paramcpd as pc
from paramcpd import evaluation as ev
from paramcpd.errors import DataError

from helpers import exhaustive_max_matching, last_value_probe_model, max_matching_size, spaced_instance


def test_match_identical_lists():
    res = ev.match([10, 50, 90], [10, 50, 90], delta=5)
    assert res.pairs == [(10, 10), (50, 50), (90, 90)]
    assert res.false_positives == [] and res.false_negatives == []
    assert ev.metrics(res, 100).mae_steps == 0.0


def test_match_empty_predictions():
    res = ev.match([], [10, 20], delta=5)
    assert len(res.pairs) == 0
    assert res.false_negatives == [10, 20]


def test_match_tie_break_earlier_prediction():
    # distances tie at 1; the earlier prediction wins the single truth
    res = ev.match([10, 12], [11], delta=2)
    assert res.pairs == [(10, 11)]
    assert res.false_positives == [12]
    assert res.false_negatives == []


def test_match_one_to_one():
    res = ev.match([10, 11], [10], delta=3)
    assert len(res.pairs) == 1
    assert res.false_positives == [11]


def test_metrics_perfect():
    res = ev.match([5, 10, 15, 20, 25], [5, 10, 15, 20, 25], delta=1)
    m = ev.metrics(res, 1000)
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)
    assert m.fp_per_1000 == 0.0


def test_metrics_zero_denominator_conventions():
    m = ev.metrics(ev.match([3, 50], [200], delta=5), 1000)
    assert m.tp == 0 and m.fp == 2 and m.fn == 1
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)
    assert np.isnan(m.mae_steps)
    empty = ev.metrics(ev.match([], [], delta=5), 1000)
    assert (empty.precision, empty.recall, empty.f1) == (0.0, 0.0, 0.0)


def test_fp_per_1000_linearity():
    preds = [100, 200, 300, 400]
    m1 = ev.metrics(ev.match(preds, [], delta=5), 1000)
    m2 = ev.metrics(ev.match(preds, [], delta=5), 2000)
    assert m1.fp_per_1000 == 4.0
    assert m2.fp_per_1000 == 2.0


def test_matching_symmetry_swaps_fp_fn():
    rng = np.random.default_rng(0)
    for _ in range(50):
        preds, truths = spaced_instance(rng)
        a = ev.metrics(ev.match(preds, truths, 20), 2000)
        b = ev.metrics(ev.match(truths, preds, 20), 2000)
        assert a.tp == b.tp
        assert (a.fp, a.fn) == (b.fn, b.fp)
        assert (a.mae_steps == b.mae_steps) or (np.isnan(a.mae_steps) and np.isnan(b.mae_steps))


def test_f1_monotone_in_delta():
    rng = np.random.default_rng(1)
    deltas = [1, 2, 5, 10, 20, 40]
    for _ in range(100):
        preds, truths = spaced_instance(rng)
        curve = ev.f1_delta_curve(preds, truths, 2000, deltas)
        f1s = [b.f1 for _, b in curve]
        assert f1s == sorted(f1s)


def test_delta_larger_than_series_saturates_cardinality():
    rng = np.random.default_rng(2)
    for _ in range(20):
        t_len = 500
        preds = sorted(rng.integers(0, t_len, size=rng.integers(1, 8)).tolist())
        truths = sorted(rng.integers(0, t_len, size=rng.integers(1, 8)).tolist())
        res = ev.match(preds, truths, delta=t_len)
        assert len(res.pairs) == min(len(preds), len(truths))


def test_two_pointer_oracle_is_maximal():
    # validate the cardinality oracle itself against exhaustive search,
    # including instances *without* the spacing property
    rng = np.random.default_rng(3)
    for _ in range(200):
        preds = sorted(rng.integers(0, 30, size=rng.integers(0, 6)).tolist())
        truths = sorted(rng.integers(0, 30, size=rng.integers(0, 6)).tolist())
        delta = int(rng.integers(0, 8))
        assert max_matching_size(preds, truths, delta) == exhaustive_max_matching(
            preds, truths, delta
        )


def test_greedy_attains_maximal_cardinality_on_spaced_instances():
    rng = np.random.default_rng(4)
    for _ in range(200):
        preds, truths = spaced_instance(rng)
        delta = int(rng.integers(0, 41))
        res = ev.match(preds, truths, delta)
        assert len(res.pairs) == max_matching_size(preds, truths, delta)


def test_ols_perfect_line():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    slope, intercept, r2 = ev.ols_fit(x, 2.0 * x - 1.0)
    assert abs(slope - 2.0) < 1e-12 and abs(intercept + 1.0) < 1e-12 and r2 == 1.0


def test_ols_two_points_interpolates():
    slope, intercept, r2 = ev.ols_fit([1.0, 3.0], [5.0, 9.0])
    assert abs(slope - 2.0) < 1e-12 and abs(intercept - 3.0) < 1e-12
    assert r2 == 1.0


def test_calibration_report_perfect_estimator():
    theta = np.linspace(7, 15, 30)
    rep = ev.calibration_report(theta, theta, "sigma")
    assert abs(rep.slope - 1.0) < 1e-12
    assert abs(rep.intercept) < 1e-12
    assert rep.r2 == 1.0 and rep.mae == 0.0
    assert rep.points.shape == (30, 2)


def test_calibrate_runs_with_probe_model():
    # stationary records whose x tracks sigma exactly -> near-perfect line
    model = last_value_probe_model(w=20)
    recs = []
    rng = np.random.default_rng(5)
    for i, v in enumerate(np.linspace(-1.0, 1.0, 8)):
        states = np.column_stack([
            np.full(300, v) + 0.001 * rng.standard_normal(300),
            np.zeros(300), np.zeros(300),
        ])
        params = pc.LorenzParams(v + 10.0, 28.0, 8 / 3)
        recs.append(pc.dataset.StationaryRecord(params, pc.Trajectory(states, dt=0.01), "sigma", i))
    # probe reports x itself, so theta_hat = theta_true - 10: slope 1, intercept -10
    rep = ev.calibrate(recs, model, w=20, m_samples=16, seed=0)
    assert abs(rep.slope - 1.0) < 0.05
    assert abs(rep.intercept + 10.0) < 0.1
    assert rep.r2 > 0.99


def test_calibrate_corpus_too_short():
    model = last_value_probe_model(w=20)
    states = np.random.default_rng(6).standard_normal((25, 3))
    recs = [pc.dataset.StationaryRecord(pc.CLASSIC_PARAMS, pc.Trajectory(states, dt=0.01),
                                        "sigma", 0)]
    # 6 windows for w=20, T=25; excluding 10 per side leaves nothing
    with pytest.raises(DataError):
        ev.calibrate(recs, model, w=20, m_samples=4)


def test_calibrate_empty_corpus():
    model = last_value_probe_model(w=20)
    with pytest.raises(DataError):
        ev.calibrate([], model, w=20)
