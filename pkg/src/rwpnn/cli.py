"""Command-line front end.

Exit codes:
    0   success
    2   missing path, bad config, unreadable data or model files
    3   autoencoder training diverged (non-finite loss)
    64  usage error (unknown flag, missing argument)
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import mrwpn as mrwpn_io
from . import srencdec
from .binio import ModelFileError, atomic_write_text
from .config import ConfigError, RunConfig, SchemaSection, load_config
from .data import (DatasetError, DriftSpec, NormStats, SplitSpec, TimeSeriesDataset,
                   apply_normalization, compute_metrics, fit_normalization,
                   inject_drift, load_csv, make_sine_corpus, split, write_csv)
from .detector import (DetectionModel, EarlyWarningConfig, fit_pipeline,
                       rolling_deltas)
from .experiment import run_experiment
from .srencdec import NotFittedError, TrainingDivergedError

log = logging.getLogger("rwpnn")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIVERGED = 3
EXIT_USAGE = 64

MODEL_FORMAT = 1
AUTOENCODER_FILE = "autoencoder.bin"
MRWPN_FILE = "mrwpn.bin"
EW_MRWPN_FILE = "earlywarn_mrwpn.bin"
DETECTOR_FILE = "detector.json"


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# helpers -------------------------------------------------------------------

def write_jsonl(path, records) -> None:
    atomic_write_text(path, "".join(json.dumps(r) + "\n" for r in records))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def _require(path, what="file") -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} not found: {p}")
    return p


def save_model_dir(out: Path, model: DetectionModel, stats: NormStats,
                   schema: SchemaSection, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    srencdec.save_checkpoint(model.autoencoder, out / AUTOENCODER_FILE)
    mrwpn_io.save_model(model.mrwpn, out / MRWPN_FILE)
    ew = None
    if model.ew_mrwpn is not None:
        mrwpn_io.save_model(model.ew_mrwpn, out / EW_MRWPN_FILE)
        ew = {"window": cfg.early_warning.window,
              "alert_threshold": model.ew_alert_threshold,
              "lo": model.ew_lo.tolist(), "hi": model.ew_hi.tolist()}
    write_json(out / DETECTOR_FILE, {
        "format": MODEL_FORMAT,
        "view": model.view,
        "gamma": model.mrwpn.gammas[model.view],
        "threshold": model.threshold,
        "validation_f1": model.validation_f1,
        "input_norm": stats.to_dict(),
        "schema": {k: getattr(schema, k) for k in
                   ("L", "n", "label_column", "label_map", "header", "delimiter")},
        "early_warning": ew,
        "config": cfg.to_dict(),
    })


def load_model_dir(model_dir) -> tuple[DetectionModel, dict]:
    d = _require(model_dir, "model directory")
    meta_path = _require(d / DETECTOR_FILE)
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{meta_path}: invalid JSON: {exc}") from None
    if meta.get("format") != MODEL_FORMAT:
        raise InputError(f"{meta_path}: unsupported model format {meta.get('format')!r}")
    ae = srencdec.load_checkpoint(_require(d / AUTOENCODER_FILE))
    net = mrwpn_io.load_model(_require(d / MRWPN_FILE))
    model = DetectionModel(ae, net, int(meta["view"]), float(meta["threshold"]),
                           validation_f1=meta.get("validation_f1"))
    ew = meta.get("early_warning")
    if ew is not None and (d / EW_MRWPN_FILE).exists():
        model.ew_mrwpn = mrwpn_io.load_model(d / EW_MRWPN_FILE)
        model.ew_lo = np.asarray(ew["lo"], dtype=np.float64)
        model.ew_hi = np.asarray(ew["hi"], dtype=np.float64)
        model.ew_alert_threshold = float(ew["alert_threshold"])
    return model, meta


def _load_data(path, schema_dict) -> TimeSeriesDataset:
    schema = SchemaSection(**schema_dict).to_schema()
    return load_csv(_require(path, "dataset"), schema)


def _normalized(meta, data: TimeSeriesDataset) -> TimeSeriesDataset:
    return apply_normalization(data, NormStats.from_dict(meta["input_norm"]))


# commands ------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(_require(args.config, "config"))
    if args.seed is not None:
        cfg.seed = args.seed
    if not cfg.dataset:
        raise InputError("config does not name a dataset")
    data = load_csv(_require(cfg.dataset, "dataset"), cfg.schema.to_schema())
    parts = split(data, SplitSpec(cfg.split.P, cfg.seed))
    stats = fit_normalization(parts.train)
    train_set, v1, v2, _ = (apply_normalization(p, stats) for p in parts)
    model = fit_pipeline(train_set, v1, v2, cfg.pipeline())
    out = Path(args.out or cfg.output_dir)
    save_model_dir(out, model, stats, cfg.schema, cfg)
    report = model.train_report
    write_jsonl(out / "train_report.jsonl", report.records() if report else [])
    write_csv(out / "test.csv", parts.test)
    print(f"trained on {len(parts.train)} windows; view {model.view} "
          f"(gamma={model.mrwpn.gammas[model.view]:g}) threshold={model.threshold:.6g} "
          f"validation F1={model.validation_f1:.4f}")
    print(f"artifacts written to {out}")
    return EXIT_OK


def _histogram(scores, labels, bins: int):
    s = np.asarray(scores, dtype=np.float64)
    finite = s[np.isfinite(s)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    normal, _ = np.histogram(s[labels == 0], edges)
    anomaly, _ = np.histogram(s[labels == 1], edges)
    for a, b, cn, ca in zip(edges[:-1], edges[1:], normal, anomaly):
        yield {"bin_lo": float(a), "bin_hi": float(b), "normal": int(cn), "anomaly": int(ca)}


def cmd_detect(args) -> int:
    model, meta = load_model_dir(args.model_dir)
    data = _normalized(meta, _load_data(args.data, meta["schema"]))
    drift = None
    if args.drift:
        drift = DriftSpec(args.drift_fraction, args.drift_mean, args.drift_variance)
        data = inject_drift(data, drift, seed=args.seed)
    scores = model.scores(data.windows)
    pred = (scores < model.threshold).astype(np.int64)
    out = Path(args.out) if args.out else Path(args.model_dir) / "detect"
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "detections.jsonl", (
        {"window_id": i, "score": float(s), "label": int(p), "true_label": int(y),
         "view_index": model.view, "threshold": model.threshold}
        for i, (s, p, y) in enumerate(zip(scores, pred, data.labels))))
    m = compute_metrics(pred, data.labels)
    metrics = {"windows": len(data), "anomalies": int(data.labels.sum()),
               "predicted_anomalies": int(pred.sum()), **m._asdict(),
               "drift": None if drift is None else vars(drift) | {"seed": args.seed}}
    write_json(out / "metrics.json", metrics)
    write_jsonl(out / "histogram.jsonl", _histogram(scores, data.labels, args.bins))
    print(f"precision={m.precision:.4f} recall={m.recall:.4f} f1={m.f1:.4f}"
          + (" (drifted)" if drift else ""))
    return EXIT_OK


GRID_KEYS = ("j0", "m", "encoder_sizes", "P")


def _load_grid(path) -> dict:
    try:
        grid = json.loads(_require(path, "grid").read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(grid, dict):
        raise ConfigError("grid must be an object mapping keys to lists")
    unknown = sorted(set(grid) - set(GRID_KEYS))
    if unknown:
        raise ConfigError(f"grid: unknown key(s) {', '.join(unknown)}")
    for k, v in grid.items():
        if not isinstance(v, list) or not v:
            raise ConfigError(f"grid.{k}: expected a non-empty list")
    return grid


def grid_cells(grid: dict):
    keys = [k for k in GRID_KEYS if k in grid]
    for combo in itertools.product(*(grid[k] for k in keys)):
        yield dict(zip(keys, combo))


def _apply_cell(cfg: RunConfig, cell: dict) -> RunConfig:
    cfg = replace(cfg, mrwpn=replace(cfg.mrwpn), autoencoder=replace(cfg.autoencoder),
                  split=replace(cfg.split))
    if "j0" in cell:
        cfg.mrwpn.j0 = int(cell["j0"])
    if "m" in cell:
        cfg.mrwpn.m = int(cell["m"])
    if "encoder_sizes" in cell:
        cfg.autoencoder.encoder_sizes = list(cell["encoder_sizes"])
        cfg.autoencoder.decoder_sizes = None
    if "P" in cell:
        cfg.split.P = float(cell["P"])
    return cfg


def cell_hash(cfg: RunConfig, cell: dict, repeats: int) -> str:
    body = json.dumps({"config": cfg.to_dict(), "cell": cell, "repeats": repeats},
                      sort_keys=True)
    return hashlib.sha256(body.encode()).hexdigest()[:16]


def best_cell(rows):
    """Highest mean F1; ties go to the smaller j0."""
    return max(rows, key=lambda r: (r["f1_mean"], -r["cell"].get("j0", 0)))


def cmd_benchmark(args) -> int:
    cfg = load_config(_require(args.config, "config"))
    if args.seed is not None:
        cfg.seed = args.seed
    repeats = args.repeats if args.repeats is not None else cfg.repeats
    grid = _load_grid(args.grid) if args.grid else {}
    data = load_csv(_require(cfg.dataset, "dataset"), cfg.schema.to_schema())
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells_path = out / "cells.jsonl"
    done = {}
    if cells_path.exists():
        for line in cells_path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                done[rec["hash"]] = rec
    rows = []
    ae_cache = {}
    for cell in grid_cells(grid):
        cell_cfg = _apply_cell(cfg, cell)
        h = cell_hash(cell_cfg, cell, repeats)
        if h in done:
            log.info("skipping completed cell %s", cell)
            rows.append(done[h])
            continue
        drift = cell_cfg.drift.to_spec() if cell_cfg.drift is not None else None
        pipe = replace(cell_cfg.pipeline(), early_warning=False)
        report = run_experiment(data, cell_cfg.split.P, pipe, drift, repeats,
                                base_seed=cell_cfg.seed, ae_cache=ae_cache)
        rec = {"hash": h, "cell": cell, **report.summary()}
        rows.append(rec)
        done[h] = rec
        write_jsonl(cells_path, done.values())
        write_jsonl(out / f"repeats-{h}.jsonl", report.records())
        print(f"{json.dumps(cell)}  f1={rec['f1_mean']:.4f} ± {rec['f1_std']:.4f}")
    if not rows:
        raise ConfigError("grid produced no cells")
    best = best_cell(rows)
    write_json(out / "best.json", best)
    print(f"best cell: {json.dumps(best['cell'])}  f1={best['f1_mean']:.4f}")
    return EXIT_OK


def cmd_earlywarn(args) -> int:
    model, meta = load_model_dir(args.model_dir)
    if model.ew_mrwpn is None:
        raise InputError(f"{args.model_dir}: model has no early-warning density network")
    data = _normalized(meta, _load_data(args.data, meta["schema"]))
    s = args.s
    if data.L < 2 * s:
        raise InputError(f"windows of length {data.L} are shorter than 2s = {2 * s}")
    cfg = EarlyWarningConfig(window=s, alert_threshold=args.delta, view=args.view)
    delta_thr = cfg.alert_threshold if cfg.alert_threshold is not None else model.ew_alert_threshold
    view = model.view if cfg.view is None else cfg.view
    out = Path(args.out) if args.out else Path(args.model_dir) / "earlywarn"
    out.mkdir(parents=True, exist_ok=True)
    trace, alerts = [], []
    for w, window in enumerate(data.windows):
        dens = model.timestep_densities(window)[:, view]
        ts, deltas = rolling_deltas(dens, s, cfg.log_floor)
        by_t = dict(zip(ts.tolist(), deltas.tolist()))
        for t, p in enumerate(dens):
            d = by_t.get(t)
            trace.append(f"{w},{t},{p!r},{math.log(max(p, cfg.log_floor))!r},"
                         f"{'' if d is None else repr(d)}")
            if d is not None and d > delta_thr:
                alerts.append({"window_id": w, "t": t, "delta": d, "threshold": delta_thr,
                               "true_label": int(data.labels[w])})
    atomic_write_text(out / "trace.csv",
                      "window_id,t,density,log_density,delta\n" + "\n".join(trace) + "\n")
    write_jsonl(out / "alerts.jsonl", alerts)
    flagged = len({a["window_id"] for a in alerts})
    print(f"{len(alerts)} alerts in {flagged} of {len(data)} windows "
          f"(s={s}, delta={delta_thr:.6g}, view {view})")
    return EXIT_OK


def cmd_synth(args) -> int:
    ds = make_sine_corpus(args.n_normal, args.n_anomaly, args.L, seed=args.seed,
                          noise=args.noise, burst_len=args.burst_len or args.L,
                          phase_spread=args.phase_spread)
    if args.kind == "step":
        # anomalies keep the clean sine but jump to a new level halfway through
        clean = make_sine_corpus(args.n_normal + args.n_anomaly, 0, args.L, seed=args.seed,
                                 noise=args.noise, phase_spread=args.phase_spread)
        labels = np.zeros(len(clean), dtype=np.int64)
        labels[:args.n_anomaly] = 1
        w = clean.windows.copy()
        w[:args.n_anomaly, args.L // 2:, :] += args.step
        ds = TimeSeriesDataset(w, labels, "sine-step")
    write_csv(args.out, ds)
    print(f"wrote {len(ds)} windows ({int(ds.labels.sum())} anomalous) to {args.out}")
    return EXIT_OK


# entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rwpnn", description="Wavelet-density anomaly detection on time-series windows.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit autoencoder, density network and threshold")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="model directory (default: config output_dir)")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="score windows with a trained model")
    d.add_argument("model_dir")
    d.add_argument("data")
    d.add_argument("--drift", action="store_true", help="inject Gaussian drift before scoring")
    d.add_argument("--drift-fraction", type=float, default=DriftSpec.fraction)
    d.add_argument("--drift-mean", type=float, default=DriftSpec.mean)
    d.add_argument("--drift-variance", type=float, default=DriftSpec.variance)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--bins", type=int, default=20)
    d.add_argument("--out")
    d.set_defaults(func=cmd_detect)

    b = sub.add_parser("benchmark", help="repeated runs over a hyperparameter grid")
    b.add_argument("--config", required=True)
    b.add_argument("--grid", help="JSON object of lists over " + ", ".join(GRID_KEYS))
    b.add_argument("--repeats", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--out")
    b.set_defaults(func=cmd_benchmark)

    e = sub.add_parser("earlywarn", help="per-timestep density trace and precursor alerts")
    e.add_argument("model_dir")
    e.add_argument("data")
    e.add_argument("-s", type=int, default=5, help="rolling-mean window (default 5)")
    e.add_argument("-delta", "--delta", type=float, dest="delta",
                   help="alert threshold (default: fitted training quantile)")
    e.add_argument("--view", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_earlywarn)

    s = sub.add_parser("synth", help="write a synthetic sine corpus as CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--kind", choices=("noise", "step"), default="noise")
    s.add_argument("--n-normal", type=int, default=200)
    s.add_argument("--n-anomaly", type=int, default=40)
    s.add_argument("--L", type=int, default=64)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--burst-len", type=int, help="noise burst length (default: whole window)")
    s.add_argument("--phase-spread", type=float, default=0.0)
    s.add_argument("--step", type=float, default=1.5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as exc:
        print(f"error: not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, ConfigError, DatasetError, ModelFileError, NotFittedError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
