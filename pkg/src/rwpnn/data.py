"""Dataset ingestion, normalization, splitting, drift injection and metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .binio import atomic_write_text

VARIANCE_FLOOR = 1e-12


class DatasetError(ValueError):
    pass


@dataclass
class TimeSeriesDataset:
    """Windows of shape (N, L, n) with 0/1 labels (1 = anomaly)."""
    windows: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64)
        if self.windows.ndim == 2:
            self.windows = self.windows[:, :, None]
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.windows.ndim != 3:
            raise DatasetError(f"windows must be (N, L, n), got {self.windows.shape}")
        if self.labels.shape[0] != self.windows.shape[0]:
            raise DatasetError(
                f"{self.labels.shape[0]} labels for {self.windows.shape[0]} windows")
        if not np.isin(self.labels, (0, 1)).all():
            raise DatasetError("labels must be 0 (normal) or 1 (anomaly)")

    def __len__(self):
        return self.windows.shape[0]

    @property
    def L(self) -> int:
        return self.windows.shape[1]

    @property
    def n(self) -> int:
        return self.windows.shape[2]

    @property
    def anomaly_fraction(self) -> float:
        return float(self.labels.mean()) if len(self) else 0.0

    def subset(self, idx, name: str | None = None) -> "TimeSeriesDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return TimeSeriesDataset(self.windows[idx], self.labels[idx], name or self.name)

    @staticmethod
    def concat(parts, name: str = "dataset") -> "TimeSeriesDataset":
        parts = [p for p in parts if len(p)]
        return TimeSeriesDataset(np.concatenate([p.windows for p in parts]),
                                 np.concatenate([p.labels for p in parts]), name)


# CSV ---------------------------------------------------------------------

@dataclass
class CsvSchema:
    """One window per row: a label cell then L*n values, timestep-major
    (all n features of step 1, then step 2, ...)."""
    L: int
    n: int = 1
    label_column: int = 0
    label_map: dict = field(default_factory=lambda: {"0": 0, "1": 1})
    header: bool = False
    delimiter: str = ","


def _parse_label(cell: str, schema: CsvSchema, row: int) -> int:
    key = cell.strip()
    if key in schema.label_map:
        return int(schema.label_map[key])
    try:
        # accept "1.0" for "1"
        alt = str(int(float(key)))
    except ValueError:
        alt = None
    if alt is not None and alt in schema.label_map:
        return int(schema.label_map[alt])
    raise DatasetError(f"row {row}: unknown label value {cell!r}")


def load_csv(path, schema: CsvSchema, name: str | None = None) -> TimeSeriesDataset:
    width = schema.L * schema.n
    windows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        for row_no, row in enumerate(reader, start=1):
            if schema.header and row_no == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width + 1:
                raise DatasetError(
                    f"row {row_no}: expected {width + 1} cells, found {len(row)}")
            label = _parse_label(row[schema.label_column], schema, row_no)
            cells = row[:schema.label_column] + row[schema.label_column + 1:]
            try:
                values = [float(c) for c in cells]
            except ValueError:
                bad = next(c for c in cells if not _is_float(c))
                raise DatasetError(f"row {row_no}: non-numeric cell {bad!r}") from None
            windows.append(values)
            labels.append(label)
    if not windows:
        raise DatasetError(f"{path}: no data rows")
    arr = np.asarray(windows).reshape(-1, schema.L, schema.n)
    return TimeSeriesDataset(arr, np.asarray(labels), name or str(path))


def _is_float(c: str) -> bool:
    try:
        float(c)
        return True
    except ValueError:
        return False


def write_csv(path, dataset: TimeSeriesDataset) -> None:
    lines = []
    flat = dataset.windows.reshape(len(dataset), -1)
    for label, row in zip(dataset.labels, flat):
        lines.append(",".join([str(int(label))] + [repr(float(v)) for v in row]))
    atomic_write_text(path, "\n".join(lines) + "\n")


# normalization -------------------------------------------------------------

@dataclass
class NormStats:
    lo: np.ndarray
    hi: np.ndarray

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["lo"], dtype=np.float64), np.asarray(d["hi"], dtype=np.float64))


def fit_normalization(dataset: TimeSeriesDataset) -> NormStats:
    flat = dataset.windows.reshape(-1, dataset.n)
    return NormStats(flat.min(axis=0), flat.max(axis=0))


def apply_normalization(dataset: TimeSeriesDataset, stats: NormStats) -> TimeSeriesDataset:
    """Min-max scale with clamping to [0, 1]; constant dimensions go to 0.5."""
    span = stats.hi - stats.lo
    flat = span < 1e-9
    z = np.clip((dataset.windows - stats.lo) / np.where(flat, 1.0, span), 0.0, 1.0)
    z = np.where(flat, 0.5, z)
    return replace(dataset, windows=z)


def normalize(dataset: TimeSeriesDataset) -> tuple[TimeSeriesDataset, NormStats]:
    """Normalize ``dataset`` with statistics fitted on itself (pass the
    training portion here and reuse the stats for the other splits)."""
    stats = fit_normalization(dataset)
    return apply_normalization(dataset, stats), stats


# split ---------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    P: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.P < 1.0:
            raise ValueError(f"split parameter P must lie in (0, 1), got {self.P}")


class Splits(NamedTuple):
    train: TimeSeriesDataset
    v1: TimeSeriesDataset
    v2: TimeSeriesDataset
    test: TimeSeriesDataset


def _floor_share(frac: float, count: int) -> int:
    # 0.2 * 200 evaluates to 39.999..., so round before flooring
    return int(math.floor(round(frac * count, 9)))


def split_counts(n_normal: int, n_anomaly: int, P: float):
    """(train, v1, test-normal, v2, test-anomaly) sizes."""
    n_train = _floor_share(1.0 - P, n_normal)
    rest = n_normal - n_train
    n_v1 = _floor_share(1.0 - P, rest)
    n_v2 = _floor_share(1.0 - P, n_anomaly)
    return n_train, n_v1, rest - n_v1, n_v2, n_anomaly - n_v2


def split(dataset: TimeSeriesDataset, spec: SplitSpec) -> Splits:
    normal = np.flatnonzero(dataset.labels == 0)
    anomaly = np.flatnonzero(dataset.labels == 1)
    if normal.size == 0 or anomaly.size == 0:
        raise DatasetError("split needs both normal and anomalous windows")
    rng = np.random.default_rng(spec.seed)
    normal = rng.permutation(normal)
    anomaly = rng.permutation(anomaly)
    n_train, n_v1, _, n_v2, _ = split_counts(normal.size, anomaly.size, spec.P)
    name = dataset.name
    return Splits(
        dataset.subset(normal[:n_train], f"{name}/train"),
        dataset.subset(normal[n_train:n_train + n_v1], f"{name}/v1"),
        dataset.subset(anomaly[:n_v2], f"{name}/v2"),
        dataset.subset(np.concatenate([normal[n_train + n_v1:], anomaly[n_v2:]]), f"{name}/test"),
    )


# drift ---------------------------------------------------------------------

@dataclass(frozen=True)
class DriftSpec:
    fraction: float = 0.3
    mean: float = 0.3
    variance: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"drift fraction must lie in [0, 1], got {self.fraction}")
        if not self.variance > 0.0:
            raise ValueError(f"drift variance must be positive, got {self.variance}")


def inject_drift(dataset: TimeSeriesDataset, spec: DriftSpec, seed: int = 0) -> TimeSeriesDataset:
    """Add Gaussian noise to floor(fraction * N) randomly chosen windows.

    Values are not clamped afterwards.
    """
    rng = np.random.default_rng(seed)
    N = len(dataset)
    count = _floor_share(spec.fraction, N)
    chosen = rng.choice(N, size=count, replace=False)
    windows = dataset.windows.copy()
    shape = (count,) + windows.shape[1:]
    if spec.variance < VARIANCE_FLOOR:
        noise = np.full(shape, spec.mean)
    else:
        noise = rng.normal(spec.mean, math.sqrt(spec.variance), size=shape)
    windows[chosen] += noise
    return replace(dataset, windows=windows)


# metrics -------------------------------------------------------------------

class Metrics(NamedTuple):
    precision: float
    recall: float
    f1: float


def compute_metrics(predictions, labels) -> Metrics:
    """Precision, recall and F1 with anomaly (1) as the positive class."""
    pred = np.asarray(predictions).astype(bool).reshape(-1)
    true = np.asarray(labels).astype(bool).reshape(-1)
    if pred.shape != true.shape:
        raise ValueError(f"{pred.size} predictions for {true.size} labels")
    tp = int(np.sum(pred & true))
    pp = int(pred.sum())
    ap = int(true.sum())
    precision = tp / pp if pp else 0.0
    recall = tp / ap if ap else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Metrics(precision, recall, f1)


# synthetic corpus ----------------------------------------------------------

def make_sine_corpus(n_normal: int = 200, n_anomaly: int = 40, L: int = 64,
                     seed: int = 0, noise: float = 0.05, burst_len: int = 16,
                     burst_scale: float = 1.0, period_jitter: float = 0.0,
                     phase_spread: float = 2 * np.pi) -> TimeSeriesDataset:
    """Sines with phase drawn from [0, phase_spread); anomalous windows carry
    a burst of uniform noise over ``burst_len`` consecutive steps."""
    rng = np.random.default_rng(seed)
    N = n_normal + n_anomaly
    t = np.arange(L)
    periods = rng.uniform(1 - period_jitter, 1 + period_jitter, size=N) * L / 3.0
    phases = rng.uniform(0, phase_spread, size=N)
    x = np.sin(2 * np.pi * t[None, :] / periods[:, None] + phases[:, None])
    x += noise * rng.standard_normal((N, L))
    labels = np.zeros(N, dtype=np.int64)
    labels[n_normal:] = 1
    for r in range(n_normal, N):
        start = rng.integers(0, L - burst_len + 1)
        x[r, start:start + burst_len] = rng.uniform(-burst_scale, burst_scale, burst_len) * 1.5
    order = rng.permutation(N)
    return TimeSeriesDataset(x[order, :, None], labels[order], "sine-burst")


def make_sine_windows(count: int, L: int = 64, seed: int = 0, noise: float = 0.0,
                      period_jitter: float = 0.0):
    """Clean sine windows already scaled into [0, 1]."""
    rng = np.random.default_rng(seed)
    t = np.arange(L)
    periods = rng.uniform(1 - period_jitter, 1 + period_jitter, size=count) * L / 3.0
    phases = rng.uniform(0, 2 * np.pi, size=count)
    x = np.sin(2 * np.pi * t[None, :] / periods[:, None] + phases[:, None])
    x = 0.5 + 0.45 * x + noise * rng.standard_normal((count, L))
    return x[:, :, None]
