import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

from rwpnn.data import TimeSeriesDataset
from rwpnn.detector import (ANOMALY, NORMAL, DetectionModel, EarlyWarningConfig,
                            classify_window, early_warning_scan, f1_at_thresholds,
                            rolling_deltas, scan_density_series,
                            select_view_and_threshold, threshold_candidates)
from rwpnn.mrwpn import MrwpnModel
from rwpnn.srencdec import NotFittedError, RecurrentAutoencoder


def brute_f1(values, labels, beta):
    pred = np.asarray(values) < beta
    y = np.asarray(labels).astype(bool)
    tp = np.sum(pred & y)
    denom = pred.sum() + y.sum()
    return 2 * tp / denom if denom else 0.0


# selection ---------------------------------------------------------------

def test_separable_midpoint():
    d = np.array([0.9, 0.8, 0.1, 0.2])
    sel = select_view_and_threshold(d, [0, 0, 1, 1])
    assert sel.view == 0 and sel.threshold == 0.5 and sel.f1 == 1.0


def test_all_equal_densities():
    a, N = 3, 10
    labels = np.r_[np.ones(a), np.zeros(N - a)]
    sel = select_view_and_threshold(np.full(N, 0.4), labels)
    assert sel.threshold == math.inf
    assert sel.f1 == pytest.approx(2 * a / (a + N))


def test_second_view_separable():
    labels = np.array([0, 0, 0, 1, 1])
    v0 = np.array([0.5, 0.1, 0.9, 0.4, 0.6])
    v1 = np.array([0.9, 0.8, 0.7, 0.1, 0.2])
    sel = select_view_and_threshold(np.stack([v0, v1], axis=1), labels)
    assert sel.view == 1 and sel.f1 == 1.0


def test_tie_prefers_lowest_view():
    d = np.array([[0.9, 0.9], [0.1, 0.1]])
    assert select_view_and_threshold(d, [0, 1]).view == 0


@pytest.mark.parametrize("labels", [[0, 0, 0], [1, 1, 1]])
def test_single_class_rejected(labels):
    with pytest.raises(ValueError, match="both"):
        select_view_and_threshold(np.array([0.1, 0.2, 0.3]), labels)


def test_candidates_include_sentinels():
    c = threshold_candidates([3.0, 1.0, 1.0, 2.0])
    assert c.tolist() == [-math.inf, 1.5, 2.5, math.inf]


def test_adjacent_float_candidates_separate():
    a = 1.0
    b = np.nextafter(a, 2.0)
    c = threshold_candidates([a, b])
    # the rule "value < beta" must be able to split the two values
    assert np.sum(np.array([a, b]) < c[1]) == 1


densities = st.integers(4, 40).flatmap(lambda n: st.tuples(
    arrays(np.float64, (n, 3), elements=st.floats(0, 5, allow_nan=False)),
    arrays(np.int64, n, elements=st.integers(0, 1))))


@given(densities)
def test_threshold_optimality_rescan(case):
    d, y = case
    assume(0 < y.sum() < len(y))
    sel = select_view_and_threshold(d, y)
    for i in range(d.shape[1]):
        for beta in threshold_candidates(d[:, i]):
            assert brute_f1(d[:, i], y, beta) <= sel.f1 + 1e-12
    assert brute_f1(d[:, sel.view], y, sel.threshold) == pytest.approx(sel.f1)


@given(densities)
def test_vectorized_f1_matches_direct(case):
    d, y = case
    v = d[:, 0]
    betas = threshold_candidates(v)
    fast = f1_at_thresholds(v, y, betas)
    slow = [brute_f1(v, y, b) for b in betas]
    assert np.allclose(fast, slow)


@given(arrays(np.float64, 20, elements=st.floats(0, 1)),
       st.floats(0, 1), st.floats(0, 1))
def test_predicted_set_monotone_in_beta(v, b1, b2):
    lo, hi = sorted((b1, b2))
    assert np.all((v < lo) <= (v < hi))


@given(arrays(np.float64, 20, elements=st.floats(1e-3, 10)),
       st.floats(1e-3, 10), st.floats(1e-3, 1e3))
def test_scale_free_decision(v, beta, c):
    # exact scaling by a power of two keeps every comparison bit-identical
    c = 2.0 ** round(math.log2(c))
    assert np.array_equal(v < beta, c * v < c * beta)


# early warning -----------------------------------------------------------

def test_constant_series_no_alerts():
    recs = scan_density_series(np.full(40, 0.3), threshold=1e-9, s=5)
    assert all(r.delta == 0.0 and not r.alert for r in recs)


@pytest.mark.parametrize("t0", [10, 17, 25])
def test_step_alert_within_two_windows(t0):
    s = 5
    p = np.where(np.arange(50) < t0, 1.0, 0.01)
    recs = scan_density_series(p, threshold=0.5, s=s)
    first = next(r.t for r in recs if r.alert)
    assert t0 <= first <= t0 + 2 * s


def test_infinite_threshold_no_alerts():
    p = np.where(np.arange(50) < 20, 1.0, 1e-6)
    assert not any(r.alert for r in scan_density_series(p, math.inf, s=5))


def test_deltas_start_at_2s_minus_1():
    t, d = rolling_deltas(np.linspace(0.1, 1, 30), 5)
    assert t[0] == 9 and t[-1] == 29 and len(d) == 21


def test_short_series_rejected():
    with pytest.raises(ValueError, match="shorter than 2s"):
        rolling_deltas(np.ones(9), 5)


def test_log_floor_applies_to_zero_density():
    _, d = rolling_deltas(np.r_[np.ones(5), np.zeros(5)], 5, log_floor=1e-12)
    assert d[0] == pytest.approx(-math.log(1e-12))


@given(arrays(np.float64, 30, elements=st.floats(1e-6, 1)), st.integers(1, 10))
def test_shift_equivariance(p, shift):
    s, thr = 3, 0.5
    base = [r.t for r in scan_density_series(p, thr, s) if r.alert]
    # deltas whose windows lie inside the original series must move intact
    shifted = np.r_[np.full(shift, p[0]), p]
    moved = [r.t - shift for r in scan_density_series(shifted, thr, s) if r.alert]
    assert [t for t in moved if t >= 2 * s - 1] == base


def test_config_validation():
    with pytest.raises(ValueError):
        EarlyWarningConfig(window=0)
    with pytest.raises(ValueError):
        EarlyWarningConfig(alert_threshold=0.0)


# classification ----------------------------------------------------------

def tiny_model(threshold=0.5):
    ae = RecurrentAutoencoder(1, (4, 2), seed=0)
    net = MrwpnModel.create(1, 3, 2)
    return DetectionModel(ae, net, 0, threshold)


def test_classify_requires_fitted_model():
    with pytest.raises(NotFittedError):
        classify_window(tiny_model(), np.zeros((6, 1)))


def test_infinite_threshold_flags_everything(rng):
    model = tiny_model(math.inf)
    X = rng.uniform(size=(20, 6, 1))
    h, _ = model.autoencoder.encode_batch(X)
    model.autoencoder.fit_latent_norm(h)
    model.mrwpn.update_many(model.autoencoder.latent_normalize(h))
    assert all(classify_window(model, x).label == ANOMALY for x in X)
    assert model.predict(X).tolist() == [1] * 20


def test_classify_matches_batch_scores(rng):
    model = tiny_model()
    X = rng.uniform(size=(10, 6, 1))
    h, _ = model.autoencoder.encode_batch(X)
    model.autoencoder.fit_latent_norm(h)
    model.mrwpn.update_many(model.autoencoder.latent_normalize(h[:5]))
    scores = model.scores(X)
    for x, s in zip(X, scores):
        c = classify_window(model, x)
        assert c.score == pytest.approx(s, rel=1e-12)
        assert c.label == (ANOMALY if s < model.threshold else NORMAL)


def test_view_out_of_range():
    with pytest.raises(ValueError):
        DetectionModel(RecurrentAutoencoder(1, (4, 2)), MrwpnModel.create(1, 3, 2), 5, 0.1)


def test_scan_without_early_warning_model():
    with pytest.raises(NotFittedError):
        early_warning_scan(tiny_model(), np.zeros((12, 1)), EarlyWarningConfig(alert_threshold=1.0))


# fitted synthetic pipeline -------------------------------------------------

@pytest.fixture(scope="module")
def fitted():
    from rwpnn.data import SplitSpec, apply_normalization, fit_normalization, split
    from rwpnn.experiment import SYNTHETIC_PIPELINE, synthetic_corpus
    from rwpnn.detector import fit_pipeline
    from dataclasses import replace
    seed = 4
    parts = split(synthetic_corpus(0), SplitSpec(0.8, seed))
    stats = fit_normalization(parts.train)
    tr, v1, v2, _ = (apply_normalization(p, stats) for p in parts)
    cfg = replace(SYNTHETIC_PIPELINE, train=replace(SYNTHETIC_PIPELINE.train, seed=seed))
    model = fit_pipeline(tr, v1, v2, cfg)
    return model, stats


@pytest.mark.xfail(reason="validation F1 tops out near 0.94 on this corpus; see the decisions ledger",
                   strict=False)
def test_fitted_reaches_perfect_validation(fitted):
    model, _ = fitted
    assert model.validation_f1 == 1.0


def test_training_distribution_classified_normal(fitted):
    from rwpnn.data import apply_normalization, make_sine_corpus
    model, stats = fitted
    fresh = apply_normalization(make_sine_corpus(100, 0, L=64, seed=99, phase_spread=0.0), stats)
    normal = sum(classify_window(model, w).label == NORMAL for w in fresh.windows)
    assert normal >= 95


def test_uniform_noise_classified_anomalous(fitted):
    model, _ = fitted
    noise = np.random.default_rng(98).uniform(0, 1, (100, 64, 1))
    flagged = sum(classify_window(model, w).label == ANOMALY for w in noise)
    assert flagged >= 95


def test_fit_pipeline_deterministic():
    from rwpnn.data import SplitSpec, make_sine_corpus, split
    from rwpnn.detector import PipelineConfig, fit_pipeline
    from rwpnn.srencdec import TrainConfig
    parts = split(make_sine_corpus(40, 10, L=12, seed=1, burst_len=12), SplitSpec(0.5, 0))
    cfg = PipelineConfig(encoder_sizes=(4, 2), j0=1,
                         train=TrainConfig(learning_rate=1e-2, max_epochs=3, batch_size=8))
    a = fit_pipeline(parts.train, parts.v1, parts.v2, cfg)
    b = fit_pipeline(parts.train, parts.v1, parts.v2, cfg)
    assert (a.view, a.threshold) == (b.view, b.threshold)
    assert np.array_equal(a.mrwpn.coefficients, b.mrwpn.coefficients)
    assert a.ew_alert_threshold == b.ew_alert_threshold
    w = parts.test.windows[0]
    assert [r.delta for r in early_warning_scan(a, w, EarlyWarningConfig(window=3))] == \
           [r.delta for r in early_warning_scan(b, w, EarlyWarningConfig(window=3))]
