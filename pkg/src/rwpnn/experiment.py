"""Repeated split / fit / evaluate runs and their aggregate report."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (DriftSpec, Metrics, SplitSpec, TimeSeriesDataset,
                   apply_normalization, compute_metrics, fit_normalization,
                   inject_drift, make_sine_corpus, split)
from .detector import DetectionModel, PipelineConfig, fit_pipeline
from .srencdec import TrainConfig


@dataclass
class RepeatResult:
    seed: int
    view: int
    threshold: float
    clean: Metrics
    drifted: Metrics | None = None
    seconds: float = 0.0

    def record(self) -> dict:
        rec = {"seed": self.seed, "view": self.view, "threshold": self.threshold,
               "precision": self.clean.precision, "recall": self.clean.recall,
               "f1": self.clean.f1, "seconds": round(self.seconds, 3)}
        if self.drifted is not None:
            rec.update(drift_precision=self.drifted.precision,
                       drift_recall=self.drifted.recall, drift_f1=self.drifted.f1)
        return rec


@dataclass
class ExperimentReport:
    dataset: str
    P: float
    repeats: list[RepeatResult] = field(default_factory=list)

    def _stack(self, drifted=False):
        rows = [r.drifted if drifted else r.clean for r in self.repeats]
        if any(r is None for r in rows):
            return None
        return np.asarray(rows, dtype=np.float64)

    def summary(self) -> dict:
        out = {"dataset": self.dataset, "P": self.P, "repeats": len(self.repeats)}
        for tag, drifted in (("", False), ("drift_", True)):
            arr = self._stack(drifted)
            if arr is None:
                continue
            for j, name in enumerate(Metrics._fields):
                out[f"{tag}{name}_mean"] = float(arr[:, j].mean())
                out[f"{tag}{name}_std"] = float(arr[:, j].std())
        return out

    def records(self):
        for r in self.repeats:
            yield {"kind": "repeat", **r.record()}
        yield {"kind": "aggregate", **self.summary()}

    def table(self) -> str:
        s = self.summary()
        lines = [f"{self.dataset}  P={self.P}  repeats={len(self.repeats)}",
                 f"{'':8}{'precision':>18}{'recall':>18}{'f1':>18}"]
        for tag, label in (("", "clean"), ("drift_", "drift")):
            if f"{tag}f1_mean" not in s:
                continue
            cells = [f"{s[f'{tag}{k}_mean']:.4f} ± {s[f'{tag}{k}_std']:.4f}"
                     for k in ("precision", "recall", "f1")]
            lines.append(f"{label:8}" + "".join(f"{c:>18}" for c in cells))
        return "\n".join(lines)


def evaluate(model: DetectionModel, test: TimeSeriesDataset) -> Metrics:
    return compute_metrics(model.predict(test.windows), test.labels)


def run_repeat(dataset: TimeSeriesDataset, P: float, seed: int, config: PipelineConfig,
               drift: DriftSpec | None = None, ae_cache: dict | None = None) -> RepeatResult:
    start = time.perf_counter()
    parts = split(dataset, SplitSpec(P, seed))
    stats = fit_normalization(parts.train)
    train_set, v1, v2, test = (apply_normalization(p, stats) for p in parts)
    cfg = replace(config, train=replace(config.train, seed=seed), early_warning=False)
    key = (dataset.name, dataset.windows.shape, seed, P, tuple(cfg.encoder_sizes),
           cfg.decoder_sizes and tuple(cfg.decoder_sizes), repr(cfg.train))
    ae = ae_cache.get(key) if ae_cache is not None else None
    model = fit_pipeline(train_set, v1, v2, cfg, autoencoder=ae)
    if ae_cache is not None:
        ae_cache[key] = model.autoencoder
    clean = evaluate(model, test)
    drifted = None
    if drift is not None:
        drifted = evaluate(model, inject_drift(test, drift, seed=seed + 1))
    return RepeatResult(seed, model.view, model.threshold, clean, drifted,
                        time.perf_counter() - start)


def run_experiment(dataset: TimeSeriesDataset, P: float, config: PipelineConfig | None = None,
                   drift: DriftSpec | None = None, repeats: int = 10, base_seed: int = 0,
                   ae_cache: dict | None = None) -> ExperimentReport:
    """Split, normalize, fit and evaluate ``repeats`` times with seeds
    base_seed, base_seed+1, ...; each repeat re-splits the data.

    With ``drift`` the same fitted model is also scored on a drifted copy
    of the test split.
    """
    config = config or PipelineConfig()
    report = ExperimentReport(dataset.name, P)
    for r in range(repeats):
        report.repeats.append(run_repeat(dataset, P, base_seed + r, config, drift, ae_cache))
    return report


# synthetic harness -----------------------------------------------------------

SYNTHETIC_PIPELINE = PipelineConfig(
    encoder_sizes=(32, 4), j0=2, m=3, early_warning=False,
    train=TrainConfig(learning_rate=1e-2, max_epochs=150, batch_size=8,
                      early_stop_patience=30))


def synthetic_corpus(seed: int = 0) -> TimeSeriesDataset:
    """200 aligned sine windows plus 40 windows of pure uniform noise, L=64."""
    return make_sine_corpus(200, 40, L=64, seed=seed, burst_len=64, phase_spread=0.0)


def run_synthetic(repeats: int = 5, config: PipelineConfig | None = None,
                  drift: DriftSpec | None = DriftSpec(), corpus_seed: int = 0) -> ExperimentReport:
    return run_experiment(synthetic_corpus(corpus_seed), 0.8, config or SYNTHETIC_PIPELINE,
                          drift, repeats)
