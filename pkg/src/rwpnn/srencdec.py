"""Stacked LSTM encoder-decoder in plain numpy with hand-written BPTT.

The encoder compresses a (L, n_o) window into the last hidden state of its
top layer; the decoder starts from that state and unrolls L steps
autoregressively, feeding each dense output back as the next input.
"""

from __future__ import annotations

import copy
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import binio

log = logging.getLogger(__name__)

MAGIC = b"SRENCDEC"
VERSION = 1

CONSTANT_SPAN = 1e-9


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged: non-finite loss at epoch {epoch}")
        self.epoch = epoch


class NotFittedError(RuntimeError):
    pass


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LstmLayerParams:
    """Gate weights stacked as [forget, input, candidate, output] rows.

    ``W`` has shape (4*hidden, hidden + input) and acts on [h_{t-1}, x_t].
    """
    input_size: int
    hidden_size: int
    W: np.ndarray
    b: np.ndarray

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator,
             forget_bias: float = 1.0):
        bound = 1.0 / math.sqrt(hidden_size)
        W = rng.uniform(-bound, bound, size=(4 * hidden_size, hidden_size + input_size))
        b = rng.uniform(-bound, bound, size=4 * hidden_size)
        b[:hidden_size] += forget_bias
        return cls(input_size, hidden_size, W, b)

    def _gate(self, g):
        h = self.hidden_size
        return slice(g * h, (g + 1) * h)

    @property
    def W_f(self):
        return self.W[self._gate(0)]

    @property
    def W_i(self):
        return self.W[self._gate(1)]

    @property
    def W_C(self):
        return self.W[self._gate(2)]

    @property
    def W_o(self):
        return self.W[self._gate(3)]

    @property
    def b_f(self):
        return self.b[self._gate(0)]

    @property
    def b_i(self):
        return self.b[self._gate(1)]

    @property
    def b_C(self):
        return self.b[self._gate(2)]

    @property
    def b_o(self):
        return self.b[self._gate(3)]


def _cell(p: LstmLayerParams, zx, h_prev, C_prev):
    """One step given the input projection ``zx`` = x_t @ W_x.T + b."""
    hs = p.hidden_size
    z = zx + h_prev @ p.W[:, :hs].T
    f = sigmoid(z[:, :hs])
    i = sigmoid(z[:, hs:2 * hs])
    g = np.tanh(z[:, 2 * hs:3 * hs])
    o = sigmoid(z[:, 3 * hs:])
    C = f * C_prev + i * g
    tC = np.tanh(C)
    h = o * tC
    return h, C, (f, i, g, o, C_prev, tC)


def _cell_backward(p: LstmLayerParams, dh, dC, cache):
    f, i, g, o, C_prev, tC = cache
    dC = dC + dh * o * (1.0 - tC * tC)
    dz = np.concatenate([
        dC * C_prev * f * (1.0 - f),
        dC * g * i * (1.0 - i),
        dC * i * (1.0 - g * g),
        dh * tC * o * (1.0 - o),
    ], axis=1)
    return dz, dC * f


def lstm_cell_forward(params: LstmLayerParams, x_t, h_prev, C_prev):
    """Single LSTM step for one sample or a batch; returns (h_t, C_t)."""
    single = np.ndim(x_t) == 1
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    h_prev = np.atleast_2d(np.asarray(h_prev, dtype=np.float64))
    C_prev = np.atleast_2d(np.asarray(C_prev, dtype=np.float64))
    if x_t.shape[1] != params.input_size or h_prev.shape[1] != params.hidden_size \
            or C_prev.shape != h_prev.shape:
        raise ValueError("LSTM cell shape mismatch")
    zx = x_t @ params.W[:, params.hidden_size:].T + params.b
    h, C, _ = _cell(params, zx, h_prev, C_prev)
    if single:
        return h[0], C[0]
    return h, C


def lstm_gates(params: LstmLayerParams, x_t, h_prev):
    """Gate activations (f, i, candidate, o) for inspection."""
    hx = np.concatenate([np.atleast_2d(h_prev), np.atleast_2d(x_t)], axis=1)
    z = hx @ params.W.T + params.b
    hs = params.hidden_size
    return (sigmoid(z[:, :hs]), sigmoid(z[:, hs:2 * hs]),
            np.tanh(z[:, 2 * hs:3 * hs]), sigmoid(z[:, 3 * hs:]))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 200
    batch_size: int = 32
    early_stop_patience: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "max_epochs", "batch_size", "early_stop_patience"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def records(self):
        for e, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            yield {"epoch": e, "train_mae": tr, "val_mae": va}


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class RecurrentAutoencoder:
    def __init__(self, n_o: int, encoder_sizes: Sequence[int] = (32, 4),
                 decoder_sizes: Sequence[int] | None = None, seed: int = 0):
        encoder_sizes = tuple(int(s) for s in encoder_sizes)
        if decoder_sizes is None:
            decoder_sizes = encoder_sizes[::-1]
        decoder_sizes = tuple(int(s) for s in decoder_sizes)
        if not encoder_sizes or not decoder_sizes:
            raise ValueError("encoder and decoder need at least one layer each")
        if decoder_sizes[0] != encoder_sizes[-1]:
            raise ValueError(
                "first decoder layer must have the latent size "
                f"{encoder_sizes[-1]}, got {decoder_sizes[0]}")
        self.n_o = int(n_o)
        self.encoder_sizes = encoder_sizes
        self.decoder_sizes = decoder_sizes
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.encoder_layers = []
        inp = self.n_o
        for hs in encoder_sizes:
            self.encoder_layers.append(LstmLayerParams.init(inp, hs, rng))
            inp = hs
        self.decoder_layers = []
        inp = self.n_o
        for hs in decoder_sizes:
            self.decoder_layers.append(LstmLayerParams.init(inp, hs, rng))
            inp = hs
        bound = 1.0 / math.sqrt(inp)
        self.dense_W = rng.uniform(-bound, bound, size=(self.n_o, inp))
        self.dense_b = rng.uniform(-bound, bound, size=self.n_o)
        self.latent_min: np.ndarray | None = None
        self.latent_max: np.ndarray | None = None

    @property
    def latent_dim(self) -> int:
        return self.encoder_sizes[-1]

    def parameters(self) -> dict[str, np.ndarray]:
        """Live references to every trainable array, in a fixed order."""
        out = {}
        for tag, layers in (("enc", self.encoder_layers), ("dec", self.decoder_layers)):
            for j, p in enumerate(layers):
                out[f"{tag}{j}.W"] = p.W
                out[f"{tag}{j}.b"] = p.b
        out["dense.W"] = self.dense_W
        out["dense.b"] = self.dense_b
        return out

    def _check_windows(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[2] != self.n_o:
            raise ValueError(f"expected windows of shape (L, {self.n_o}), got {X.shape[1:]}")
        if self.latent_dim >= self.n_o * X.shape[1]:
            raise ValueError(
                f"latent size {self.latent_dim} does not compress windows of "
                f"{X.shape[1]} x {self.n_o}")
        return X

    # forward -----------------------------------------------------------

    def _encode(self, X, keep_cache=False):
        B, L, _ = X.shape
        seq = X
        caches = []
        for p in self.encoder_layers:
            hs = p.hidden_size
            zx = seq @ p.W[:, hs:].T + p.b
            h = np.zeros((B, hs))
            C = np.zeros((B, hs))
            out = np.empty((B, L, hs))
            layer_cache = []
            for t in range(L):
                h, C, c = _cell(p, zx[:, t], h, C)
                out[:, t] = h
                if keep_cache:
                    layer_cache.append(c)
            caches.append((seq, out, layer_cache))
            seq = out
        return seq[:, -1].copy(), seq, caches

    def _decode(self, h0, L, keep_cache=False):
        B = h0.shape[0]
        hs = [np.zeros((B, p.hidden_size)) for p in self.decoder_layers]
        Cs = [np.zeros((B, p.hidden_size)) for p in self.decoder_layers]
        hs[0] = h0
        prev = np.zeros((B, self.n_o))
        out = np.empty((B, L, self.n_o))
        caches = []
        for t in range(L):
            inp = prev
            step = []
            for d, p in enumerate(self.decoder_layers):
                zx = inp @ p.W[:, p.hidden_size:].T + p.b
                hx_in = hs[d]
                hs[d], Cs[d], c = _cell(p, zx, hs[d], Cs[d])
                if keep_cache:
                    step.append((inp, hx_in, c))
                inp = hs[d]
            prev = inp @ self.dense_W.T + self.dense_b
            out[:, t] = prev
            if keep_cache:
                caches.append((step, inp))
        return out, caches

    def encode(self, window):
        """Latent vector h^E_L and the top-layer hidden sequence y^E."""
        X = self._check_windows(window)
        if X.shape[0] != 1:
            raise ValueError("encode takes a single window; use encode_batch")
        h, y, _ = self._encode(X)
        return h[0], y[0]

    def encode_batch(self, X):
        X = self._check_windows(X)
        h, y, _ = self._encode(X)
        return h, y

    def decode(self, h_final, L: int):
        h = np.atleast_2d(np.asarray(h_final, dtype=np.float64))
        if h.shape[1] != self.latent_dim:
            raise ValueError(f"latent has size {h.shape[1]}, expected {self.latent_dim}")
        out, _ = self._decode(h, int(L))
        return out[0] if np.ndim(h_final) == 1 else out

    def reconstruct(self, X):
        X = self._check_windows(X)
        h, _, _ = self._encode(X)
        out, _ = self._decode(h, X.shape[1])
        return out

    def loss(self, X) -> float:
        X = self._check_windows(X)
        return float(np.mean(np.abs(self.reconstruct(X) - X)))

    # backward ----------------------------------------------------------

    def loss_and_grads(self, X):
        """MAE over the batch and its gradient for every parameter."""
        X = self._check_windows(X)
        B, L, n_o = X.shape
        h_final, _, enc_caches = self._encode(X, keep_cache=True)
        Xh, dec_caches = self._decode(h_final, L, keep_cache=True)
        diff = Xh - X
        loss = float(np.mean(np.abs(diff)))
        dout_all = np.sign(diff) / diff.size

        grads = {k: np.zeros_like(v) for k, v in self.parameters().items()}
        dW_dense = grads["dense.W"]
        db_dense = grads["dense.b"]
        nd = len(self.decoder_layers)
        dh_next = [np.zeros((B, p.hidden_size)) for p in self.decoder_layers]
        dC_next = [np.zeros((B, p.hidden_size)) for p in self.decoder_layers]
        dfeed = np.zeros((B, n_o))
        for t in range(L - 1, -1, -1):
            step, top = dec_caches[t]
            dout = dout_all[:, t] + dfeed
            dW_dense += dout.T @ top
            db_dense += dout.sum(axis=0)
            dabove = dout @ self.dense_W
            for d in range(nd - 1, -1, -1):
                p = self.decoder_layers[d]
                inp, h_prev, c = step[d]
                dz, dC_next[d] = _cell_backward(p, dabove + dh_next[d], dC_next[d], c)
                grads[f"dec{d}.W"] += dz.T @ np.concatenate([h_prev, inp], axis=1)
                grads[f"dec{d}.b"] += dz.sum(axis=0)
                dhx = dz @ p.W
                dh_next[d] = dhx[:, :p.hidden_size]
                dabove = dhx[:, p.hidden_size:]
            dfeed = dabove
        dh_final = dh_next[0]

        dseq = np.zeros((B, L, self.encoder_layers[-1].hidden_size))
        dseq[:, -1] = dh_final
        for e in range(len(self.encoder_layers) - 1, -1, -1):
            p = self.encoder_layers[e]
            hs = p.hidden_size
            seq_in, out, cache = enc_caches[e]
            dh = np.zeros((B, hs))
            dC = np.zeros((B, hs))
            dz_all = np.empty((B, L, 4 * hs))
            for t in range(L - 1, -1, -1):
                dz, dC = _cell_backward(p, dseq[:, t] + dh, dC, cache[t])
                dz_all[:, t] = dz
                dh = dz @ p.W[:, :hs]
            h_prevs = np.concatenate([np.zeros((B, 1, hs)), out[:, :-1]], axis=1)
            hx = np.concatenate([h_prevs, seq_in], axis=2)
            grads[f"enc{e}.W"] += np.einsum("btz,bti->zi", dz_all, hx)
            grads[f"enc{e}.b"] += dz_all.sum(axis=(0, 1))
            dseq = dz_all @ p.W[:, hs:]
        return loss, grads

    # training ----------------------------------------------------------

    def train(self, train_X, val_X, cfg: TrainConfig | None = None) -> TrainReport:
        return train(self, train_X, val_X, cfg)

    # latent normalization ----------------------------------------------

    def fit_latent_norm(self, latents) -> None:
        latents = np.asarray(latents, dtype=np.float64).reshape(-1, self.latent_dim)
        self.latent_min = latents.min(axis=0)
        self.latent_max = latents.max(axis=0)

    def latent_normalize(self, h):
        return normalize_latent(h, self.latent_min, self.latent_max)

    def copy(self) -> "RecurrentAutoencoder":
        return copy.deepcopy(self)

    def get_state(self) -> list[np.ndarray]:
        return [v.copy() for v in self.parameters().values()]

    def set_state(self, state) -> None:
        for dst, src in zip(self.parameters().values(), state):
            dst[...] = src


def normalize_latent(h, lo, hi):
    """Per-dimension min-max scaling clamped to [0, 1]; dimensions with a
    span below 1e-9 map to 0.5."""
    if lo is None or hi is None:
        raise NotFittedError("latent normalization statistics are not fitted")
    h = np.asarray(h, dtype=np.float64)
    span = hi - lo
    flat = span < CONSTANT_SPAN
    safe = np.where(flat, 1.0, span)
    z = np.clip((h - lo) / safe, 0.0, 1.0)
    return np.where(flat, 0.5, z)


def train(model: RecurrentAutoencoder, train_X, val_X, cfg: TrainConfig | None = None) -> TrainReport:
    """Adam on reconstruction MAE with early stopping on the validation set.

    The weights from the best validation epoch are restored at the end and
    latent normalization is fitted on the training latents.
    """
    cfg = cfg or TrainConfig()
    train_X = model._check_windows(train_X)
    val_X = model._check_windows(val_X) if val_X is not None and len(val_X) else None
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    report = TrainReport()
    best = math.inf
    best_state = model.get_state()
    stale = 0
    N = train_X.shape[0]
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(N)
        total = 0.0
        for s in range(0, N, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, grads = model.loss_and_grads(train_X[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch)
            opt.step(grads)
            total += loss * idx.size
        train_loss = total / N
        val_loss = model.loss(val_X) if val_X is not None else train_loss
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingDivergedError(epoch)
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        if val_loss < best:
            best = val_loss
            best_state = model.get_state()
            report.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                report.stopped_early = True
                log.info("early stop at epoch %d (best %d)", epoch, report.best_epoch)
                break
    model.set_state(best_state)
    h, _ = model.encode_batch(train_X)
    model.fit_latent_norm(h)
    return report


# checkpoint --------------------------------------------------------------

def dumps(model: RecurrentAutoencoder) -> bytes:
    parts = [struct.pack("<IQII", model.n_o, model.seed & (2**64 - 1),
                         len(model.encoder_sizes), len(model.decoder_sizes))]
    parts.append(struct.pack(f"<{len(model.encoder_sizes)}I", *model.encoder_sizes))
    parts.append(struct.pack(f"<{len(model.decoder_sizes)}I", *model.decoder_sizes))
    for v in model.parameters().values():
        parts.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    fitted = model.latent_min is not None
    parts.append(struct.pack("<B", int(fitted)))
    if fitted:
        parts.append(np.asarray(model.latent_min, dtype="<f8").tobytes())
        parts.append(np.asarray(model.latent_max, dtype="<f8").tobytes())
    return binio.pack(MAGIC, VERSION, b"".join(parts))


def loads(blob: bytes) -> RecurrentAutoencoder:
    r = binio.Reader(binio.unpack(blob, MAGIC, VERSION))
    n_o, seed, ne, nd = r.take("IQII")
    enc = r.take(f"{ne}I")
    dec = r.take(f"{nd}I")
    model = RecurrentAutoencoder(n_o, enc, dec, seed=seed)
    for v in model.parameters().values():
        v[...] = r.f64_array(v.size).reshape(v.shape)
    (fitted,) = r.take("B")
    if fitted:
        model.latent_min = r.f64_array(model.latent_dim)
        model.latent_max = r.f64_array(model.latent_dim)
    return model


def save_checkpoint(model: RecurrentAutoencoder, path) -> None:
    binio.atomic_write_bytes(path, dumps(model))


def load_checkpoint(path) -> RecurrentAutoencoder:
    with open(path, "rb") as fh:
        return loads(fh.read())
