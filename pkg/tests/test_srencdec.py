import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import numeric_grads, rel_err
from rwpnn import binio
from rwpnn.data import make_sine_windows
from rwpnn.srencdec import (LstmLayerParams, NotFittedError, RecurrentAutoencoder,
                            TrainConfig, TrainingDivergedError, load_checkpoint,
                            lstm_cell_forward, lstm_gates, normalize_latent,
                            save_checkpoint, train)


def test_zero_cell():
    p = LstmLayerParams(3, 4, np.zeros((16, 7)), np.zeros(16))
    h, C = lstm_cell_forward(p, np.zeros(3), np.zeros(4), np.zeros(4))
    assert np.array_equal(h, np.zeros(4)) and np.array_equal(C, np.zeros(4))


def test_cell_matches_gate_equations(rng):
    p = LstmLayerParams.init(3, 5, rng)
    x, h0, c0 = rng.normal(size=3), rng.normal(size=5), rng.normal(size=5)
    hx = np.concatenate([h0, x])
    sig = lambda z: 1 / (1 + np.exp(-z))
    f = sig(p.W_f @ hx + p.b_f)
    i = sig(p.W_i @ hx + p.b_i)
    cand = np.tanh(p.W_C @ hx + p.b_C)
    o = sig(p.W_o @ hx + p.b_o)
    C = f * c0 + i * cand
    h, C_got = lstm_cell_forward(p, x, h0, c0)
    assert np.allclose(C_got, C, rtol=1e-13, atol=1e-15)
    assert np.allclose(h, o * np.tanh(C), rtol=1e-13, atol=1e-15)


def test_cell_shape_mismatch(rng):
    p = LstmLayerParams.init(3, 5, rng)
    with pytest.raises(ValueError):
        lstm_cell_forward(p, np.zeros(2), np.zeros(5), np.zeros(5))


@given(arrays(np.float64, 3, elements=st.floats(-20, 20)),
       arrays(np.float64, 4, elements=st.floats(-1, 1)),
       arrays(np.float64, 4, elements=st.floats(-50, 50)),
       st.integers(0, 2**16))
def test_cell_ranges(x, h0, c0, seed):
    p = LstmLayerParams.init(3, 4, np.random.default_rng(seed))
    h, C = lstm_cell_forward(p, x, h0, c0)
    assert np.all(np.abs(h) < 1) and np.all(np.isfinite(C))
    f, i, cand, o = lstm_gates(p, x, h0)
    for gate in (f, i, o):
        assert np.all((gate > 0) & (gate < 1))
    assert np.all(np.abs(cand) < 1)


def test_gradient_matches_finite_differences(rng):
    model = RecurrentAutoencoder(2, (6, 3), (3, 5), seed=3)
    X = rng.uniform(0, 1, (3, 4, 2))
    _, grads = model.loss_and_grads(X)
    num = numeric_grads(model, X)
    for name in grads:
        assert rel_err(grads[name], num[name]) <= 1e-4, name


# encode / decode ---------------------------------------------------------

def test_single_step_window():
    model = RecurrentAutoencoder(3, (4, 2), seed=0)
    h, y = model.encode(np.full((1, 3), 0.3))
    assert y.shape == (1, 2)
    assert np.array_equal(y[0], h)


def test_reversal_changes_latent(rng):
    model = RecurrentAutoencoder(1, (8, 3), seed=1)
    w = rng.uniform(0, 1, (12, 1))
    h1, _ = model.encode(w)
    h2, _ = model.encode(w[::-1])
    assert not np.allclose(h1, h2)


def test_encode_deterministic(rng):
    w = rng.uniform(0, 1, (10, 2))
    a = RecurrentAutoencoder(2, (8, 3), seed=7).encode(w)
    b = RecurrentAutoencoder(2, (8, 3), seed=7).encode(w)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_encode_shape_checks():
    model = RecurrentAutoencoder(2, (8, 3), seed=0)
    with pytest.raises(ValueError):
        model.encode(np.zeros((5, 3)))
    with pytest.raises(ValueError, match="compress"):
        model.encode(np.zeros((1, 2)))


def test_decoder_first_layer_takes_latent():
    with pytest.raises(ValueError):
        RecurrentAutoencoder(1, (8, 4), (8, 4))


def test_decode_shape_and_finite():
    model = RecurrentAutoencoder(2, (8, 3), seed=0)
    h, _ = model.encode(np.zeros((9, 2)))
    out = model.decode(h, 9)
    assert out.shape == (9, 2) and np.all(np.isfinite(out))


def test_sine_reconstruction():
    X = make_sine_windows(40, 64, seed=0, period_jitter=0.0)
    V = make_sine_windows(32, 64, seed=100, period_jitter=0.0)
    H = make_sine_windows(20, 64, seed=200, period_jitter=0.0)
    model = RecurrentAutoencoder(1, (32, 4), seed=1)
    train(model, X, V, TrainConfig(learning_rate=3e-3, max_epochs=200, batch_size=8,
                                   early_stop_patience=200, seed=1))
    assert np.mean(np.abs(model.reconstruct(H) - H)) <= 0.05


# training ----------------------------------------------------------------

def test_training_loss_decreases_on_toy_set():
    X = make_sine_windows(10, 12, seed=5)
    ok = 0
    for seed in range(10):
        model = RecurrentAutoencoder(1, (8, 3), seed=seed)
        rep = train(model, X, None, TrainConfig(learning_rate=1e-3, max_epochs=20,
                                                batch_size=10, seed=seed))
        ok += all(b <= a for a, b in zip(rep.train_loss, rep.train_loss[1:]))
    assert ok >= 9


class FrozenValidation(RecurrentAutoencoder):
    def loss(self, X):
        return 0.5


def test_early_stop_on_frozen_validation():
    X = make_sine_windows(8, 10, seed=0)
    model = FrozenValidation(1, (4, 2), seed=0)
    rep = train(model, X, X, TrainConfig(max_epochs=100, early_stop_patience=5))
    assert rep.stopped_early
    assert rep.epochs == 6 and rep.best_epoch == 1


def test_epochs_bounded_and_records():
    X = make_sine_windows(8, 10, seed=0)
    rep = train(RecurrentAutoencoder(1, (4, 2)), X, X, TrainConfig(max_epochs=7))
    assert rep.epochs <= 7
    recs = list(rep.records())
    assert recs[0].keys() == {"epoch", "train_mae", "val_mae"}


def test_divergence_reports_epoch():
    X = make_sine_windows(8, 10, seed=0)
    X[3, 4, 0] = np.nan
    with pytest.raises(TrainingDivergedError) as err:
        train(RecurrentAutoencoder(1, (4, 2)), X, None, TrainConfig(max_epochs=3))
    assert err.value.epoch == 1


def test_training_deterministic():
    X = make_sine_windows(12, 10, seed=0)
    cfg = TrainConfig(max_epochs=5, batch_size=4, seed=11)
    a, b = RecurrentAutoencoder(1, (6, 2), seed=2), RecurrentAutoencoder(1, (6, 2), seed=2)
    ra, rb = train(a, X, X, cfg), train(b, X, X, cfg)
    assert ra.train_loss == rb.train_loss
    for p, q in zip(a.get_state(), b.get_state()):
        assert np.array_equal(p, q)


# latent normalization ----------------------------------------------------

def test_latent_normalize():
    lo, hi = np.array([-1.0, 0.0, 2.0]), np.array([1.0, 4.0, 2.0])
    assert np.array_equal(normalize_latent(lo, lo, hi), [0.0, 0.0, 0.5])
    assert np.array_equal(normalize_latent(hi, lo, hi), [1.0, 1.0, 0.5])
    assert np.array_equal(normalize_latent([5.0, -3.0, 9.0], lo, hi), [1.0, 0.0, 0.5])
    with pytest.raises(NotFittedError):
        RecurrentAutoencoder(1, (4, 2)).latent_normalize([0.0, 0.0])


@given(arrays(np.float64, (6, 3), elements=st.floats(-1e3, 1e3)))
def test_latent_normalize_unit_box(h):
    lo, hi = h.min(axis=0), h.max(axis=0)
    z = normalize_latent(h, lo, hi)
    assert np.all((z >= 0) & (z <= 1))


def test_checkpoint_roundtrip(tmp_path):
    X = make_sine_windows(8, 10, seed=0)
    model = RecurrentAutoencoder(1, (6, 2), seed=4)
    train(model, X, X, TrainConfig(max_epochs=2))
    path = tmp_path / "ae.bin"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    for p, q in zip(model.get_state(), back.get_state()):
        assert np.array_equal(p, q)
    assert np.array_equal(back.latent_min, model.latent_min)
    assert np.array_equal(back.encode(X[0])[0], model.encode(X[0])[0])
    path.write_bytes(path.read_bytes()[:50])
    with pytest.raises(binio.ModelTruncatedError):
        load_checkpoint(path)
