"""Threshold/view selection, window classification and early warning."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import TimeSeriesDataset
from .mrwpn import DEFAULT_GAMMAS, MrwpnModel, ReceptiveFieldSet
from .srencdec import (NotFittedError, RecurrentAutoencoder, TrainConfig,
                       TrainReport, normalize_latent, train)
from .wavelet import SplineOrder, build_grid

log = logging.getLogger(__name__)

ANOMALY = "anomaly"
NORMAL = "normal"


class Selection(NamedTuple):
    view: int
    threshold: float
    f1: float


def threshold_candidates(values) -> np.ndarray:
    """-inf, midpoints between consecutive distinct values, +inf."""
    u = np.unique(np.asarray(values, dtype=np.float64))
    mids = u[:-1] + (u[1:] - u[:-1]) / 2.0
    # adjacent floats: the midpoint may round onto the lower value
    mids = np.where(mids <= u[:-1], u[1:], mids)
    return np.concatenate([[-np.inf], mids, [np.inf]])


def f1_at_thresholds(values, labels, betas) -> np.ndarray:
    """F1 of the rule ``value < beta`` (anomaly) for every beta."""
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    all_sorted = np.sort(values)
    anom_sorted = np.sort(values[labels])
    predicted = np.searchsorted(all_sorted, betas, side="left")
    tp = np.searchsorted(anom_sorted, betas, side="left")
    # F1 = 2TP / (2TP + FP + FN) = 2TP / (predicted + actual)
    denom = predicted + anom_sorted.size
    return np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), 0.0)


def select_view_and_threshold(densities, labels) -> Selection:
    """Jointly pick the view and threshold maximising validation F1.

    Ties go to the lowest view index, then the smallest threshold.
    """
    densities = np.asarray(densities, dtype=np.float64)
    if densities.ndim == 1:
        densities = densities[:, None]
    labels = np.asarray(labels).astype(bool).reshape(-1)
    if labels.shape[0] != densities.shape[0]:
        raise ValueError("one label per validation density row is required")
    if labels.all() or not labels.any():
        raise ValueError("threshold selection needs both normal and anomalous windows")
    best = Selection(0, np.inf, -1.0)
    for i in range(densities.shape[1]):
        betas = threshold_candidates(densities[:, i])
        f1 = f1_at_thresholds(densities[:, i], labels, betas)
        j = int(np.argmax(f1))
        if f1[j] > best.f1:
            best = Selection(i, float(betas[j]), float(f1[j]))
    return best


@dataclass
class EarlyWarningConfig:
    window: int = 5
    alert_threshold: float | None = None
    log_floor: float = 1e-12
    view: int | None = None

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("rolling window must be >= 1")
        if self.alert_threshold is not None and not self.alert_threshold > 0:
            raise ValueError("alert threshold must be positive")


class WarningRecord(NamedTuple):
    t: int
    delta: float
    alert: bool


def rolling_deltas(density, s: int, log_floor: float = 1e-12):
    """(t, |rolling mean_t - rolling mean_{t-s}|) of the log-density series.

    The rolling mean is trailing over ``s`` steps, so deltas start at t = 2s-1.
    """
    density = np.asarray(density, dtype=np.float64).reshape(-1)
    if density.size < 2 * s:
        raise ValueError(f"series of length {density.size} is shorter than 2s = {2 * s}")
    logp = np.log(np.maximum(density, log_floor))
    # per-window means rather than a running cumsum, so that a window's value
    # does not depend on what came before it
    smooth = sliding_window_view(logp, s).mean(axis=1)   # smooth[j] covers t = j .. j+s-1
    delta = np.abs(smooth[s:] - smooth[:-s])
    t = np.arange(2 * s - 1, density.size)
    return t, delta


def scan_density_series(density, threshold: float, s: int = 5,
                        log_floor: float = 1e-12) -> list[WarningRecord]:
    t, delta = rolling_deltas(density, s, log_floor)
    return [WarningRecord(int(a), float(d), bool(d > threshold)) for a, d in zip(t, delta)]


@dataclass
class PipelineConfig:
    encoder_sizes: Sequence[int] = (32, 4)
    decoder_sizes: Sequence[int] | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    j0: int = 2
    m: int = 3
    gammas: Sequence[float] = DEFAULT_GAMMAS
    early_warning: bool = True
    early_warning_window: int = 5
    alert_quantile: float = 0.99


@dataclass
class DetectionModel:
    autoencoder: RecurrentAutoencoder
    mrwpn: MrwpnModel
    view: int
    threshold: float
    ew_mrwpn: MrwpnModel | None = None
    ew_lo: np.ndarray | None = None
    ew_hi: np.ndarray | None = None
    ew_alert_threshold: float | None = None
    validation_f1: float | None = None
    train_report: TrainReport | None = None

    def __post_init__(self):
        if not 0 <= self.view < self.mrwpn.n_views:
            raise ValueError(f"view {self.view} outside [0, {self.mrwpn.n_views})")

    def latents(self, windows) -> np.ndarray:
        h, _ = self.autoencoder.encode_batch(windows)
        return self.autoencoder.latent_normalize(h)

    def densities(self, windows) -> np.ndarray:
        """All views' densities per window, shape (N, |gammas|)."""
        return self.mrwpn.estimate_many(self.latents(windows))

    def scores(self, windows) -> np.ndarray:
        return self.densities(windows)[:, self.view]

    def predict(self, windows) -> np.ndarray:
        return (self.scores(windows) < self.threshold).astype(np.int64)

    def timestep_densities(self, window) -> np.ndarray:
        """Early-warning density of every timestep of one window."""
        if self.ew_mrwpn is None:
            raise NotFittedError("model has no early-warning density network")
        _, y = self.autoencoder.encode(window)
        z = normalize_latent(y, self.ew_lo, self.ew_hi)
        return self.ew_mrwpn.estimate_many(z)


class Classification(NamedTuple):
    label: str
    score: float


def classify_window(model: DetectionModel, window) -> Classification:
    if model.autoencoder.latent_min is None:
        raise NotFittedError("autoencoder latent normalization is not fitted")
    if model.mrwpn.points_seen == 0:
        raise NotFittedError("density network has not seen any training latents")
    h, _ = model.autoencoder.encode(window)
    z = model.autoencoder.latent_normalize(h)
    score = float(model.mrwpn.estimate_density(z).per_view[model.view])
    return Classification(ANOMALY if score < model.threshold else NORMAL, score)


def early_warning_scan(model: DetectionModel, window,
                       cfg: EarlyWarningConfig | None = None) -> list[WarningRecord]:
    cfg = cfg or EarlyWarningConfig()
    threshold = cfg.alert_threshold if cfg.alert_threshold is not None else model.ew_alert_threshold
    if threshold is None:
        raise NotFittedError("no alert threshold configured or fitted")
    view = model.view if cfg.view is None else cfg.view
    dens = model.timestep_densities(window)[:, view]
    return scan_density_series(dens, threshold, cfg.window, cfg.log_floor)


def fit_early_warning(model: DetectionModel, train_windows, cfg: PipelineConfig) -> None:
    """Train the per-timestep density network on y^E and pick the default
    alert threshold as a quantile of the training deltas."""
    _, y = model.autoencoder.encode_batch(train_windows)
    flat = y.reshape(-1, y.shape[-1])
    model.ew_lo, model.ew_hi = flat.min(axis=0), flat.max(axis=0)
    ew = MrwpnModel(model.mrwpn.grid, model.mrwpn.fields)
    ew.update_many(normalize_latent(flat, model.ew_lo, model.ew_hi))
    model.ew_mrwpn = ew
    s = cfg.early_warning_window
    deltas = []
    if y.shape[1] >= 2 * s:
        for seq in y:
            dens = ew.estimate_many(normalize_latent(seq, model.ew_lo, model.ew_hi))[:, model.view]
            deltas.append(rolling_deltas(dens, s)[1])
    q = float(np.quantile(np.concatenate(deltas), cfg.alert_quantile)) if deltas else 0.0
    model.ew_alert_threshold = q if q > 0 else 1e-9


def fit_pipeline(train_set: TimeSeriesDataset, v1: TimeSeriesDataset,
                 v2: TimeSeriesDataset, cfg: PipelineConfig | None = None,
                 autoencoder: RecurrentAutoencoder | None = None) -> DetectionModel:
    """Train the autoencoder, stream training latents into the density
    network, then select the view and threshold on v1 + v2.

    A pre-trained ``autoencoder`` skips the first step.
    """
    cfg = cfg or PipelineConfig()
    report = None
    if autoencoder is None:
        autoencoder = RecurrentAutoencoder(train_set.n, cfg.encoder_sizes,
                                           cfg.decoder_sizes, seed=cfg.train.seed)
        report = train(autoencoder, train_set.windows, v1.windows, cfg.train)
    grid = build_grid(cfg.j0, SplineOrder(cfg.m), autoencoder.latent_dim)
    net = MrwpnModel(grid, ReceptiveFieldSet(tuple(cfg.gammas)))
    h, _ = autoencoder.encode_batch(train_set.windows)
    net.update_many(autoencoder.latent_normalize(h))
    model = DetectionModel(autoencoder, net, 0, math.inf, train_report=report)
    val = TimeSeriesDataset.concat([v1, v2], "validation")
    sel = select_view_and_threshold(model.densities(val.windows), val.labels)
    model.view, model.threshold, model.validation_f1 = sel
    log.info("selected view %d (alpha=%g) beta=%g F1=%.4f",
             sel.view, net.gammas[sel.view], sel.threshold, sel.f1)
    if cfg.early_warning:
        fit_early_warning(model, train_set.windows, cfg)
    return model
