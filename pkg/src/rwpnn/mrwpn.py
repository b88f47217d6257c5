"""Multi-receptive-field wavelet probabilistic network.

One coefficient column per forgetting factor. Coefficients are held as
``scale[i] * raw[:, i]`` so that the decay of every frame is a single
scalar multiply and an update only writes the relevant rows.
"""

from __future__ import annotations

import copy
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import binio
from .wavelet import (FrameGrid, SplineOrder, build_grid, find_relevant_frames,
                      frame_values)

DEFAULT_GAMMAS = tuple(1.0 / p for p in (1, 10, 100, 500, 1000))

MAGIC = b"MRWPN\x00\x00\x01"
VERSION = 1

# fold the lazy scale back into the raw coefficients before it underflows
_RESCALE_BELOW = 1e-200


@dataclass(frozen=True)
class ReceptiveFieldSet:
    gammas: tuple[float, ...] = DEFAULT_GAMMAS

    def __post_init__(self):
        g = tuple(float(a) for a in self.gammas)
        object.__setattr__(self, "gammas", g)
        if not g:
            raise ValueError("receptive field set must not be empty")
        if any(not (0.0 < a <= 1.0) for a in g):
            raise ValueError(f"forgetting factors must lie in (0, 1]: {g}")
        if any(a <= b for a, b in zip(g, g[1:])):
            raise ValueError(f"forgetting factors must be strictly descending: {g}")

    def __len__(self):
        return len(self.gammas)

    @classmethod
    def from_windows(cls, sizes: Sequence[float]) -> "ReceptiveFieldSet":
        """Build from effective window sizes P, with alpha = 1/P."""
        return cls(tuple(1.0 / p for p in sizes))


@dataclass
class DensityEstimate:
    per_view: np.ndarray
    relevant_count: int


class MrwpnModel:
    def __init__(self, grid: FrameGrid, fields: ReceptiveFieldSet | Sequence[float] = DEFAULT_GAMMAS):
        if not isinstance(fields, ReceptiveFieldSet):
            fields = ReceptiveFieldSet(tuple(fields))
        self.grid = grid
        self.fields = fields
        self.points_seen = 0
        g = len(fields)
        self._alpha = np.asarray(fields.gammas, dtype=np.float64)
        self._raw = np.zeros((grid.total_count, g), dtype=np.float64)
        self._scale = np.ones(g, dtype=np.float64)
        self._full = self._alpha == 1.0
        # rows holding nonzero values in the alpha == 1 views
        self._touched = np.empty(0, dtype=np.int64)

    @classmethod
    def create(cls, j0: int, m: int, n: int, gammas=DEFAULT_GAMMAS) -> "MrwpnModel":
        return cls(build_grid(j0, SplineOrder(m), n), ReceptiveFieldSet(tuple(gammas)))

    @property
    def gammas(self) -> tuple[float, ...]:
        return self.fields.gammas

    @property
    def n_views(self) -> int:
        return len(self.fields)

    @property
    def coefficients(self) -> np.ndarray:
        """Materialized coefficient matrix, shape (M, |gammas|)."""
        return self._raw * self._scale[None, :]

    def copy(self) -> "MrwpnModel":
        return copy.deepcopy(self)

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.grid.n:
            raise ValueError(
                f"input has dimension {x.shape[0]}, model expects {self.grid.n}")
        return x

    def _relevant(self, x: np.ndarray):
        b = find_relevant_frames(self.grid, x)
        phi = frame_values(self.grid, self.grid.translations[b], x)
        return b, phi

    def update_online(self, x) -> None:
        """Absorb one point: decay every coefficient, then add alpha*Phi(x)
        at the relevant frames."""
        x = self._check(x)
        b, phi = self._relevant(x)
        alpha = self._alpha
        partial = ~self._full
        if partial.any():
            cols = np.flatnonzero(partial)
            new_scale = self._scale[cols] * (1.0 - alpha[cols])
            if b.size:
                self._raw[np.ix_(b, cols)] += (phi[:, None] * alpha[None, cols]) / new_scale[None, :]
            self._scale[cols] = new_scale
            low = cols[new_scale < _RESCALE_BELOW]
            if low.size:
                self._raw[:, low] *= self._scale[None, low]
                self._scale[low] = 1.0
        if self._full.any():
            cols = np.flatnonzero(self._full)
            self._raw[np.ix_(self._touched, cols)] = 0.0
            self._raw[np.ix_(b, cols)] = phi[:, None]
            self._touched = b
        self.points_seen += 1

    def update_many(self, points: Iterable) -> None:
        for x in points:
            self.update_online(x)

    def estimate_density(self, x) -> DensityEstimate:
        x = self._check(x)
        b, phi = self._relevant(x)
        if b.size == 0:
            return DensityEstimate(np.zeros(self.n_views), 0)
        w = self._raw[b] * self._scale[None, :]
        return DensityEstimate((w * phi[:, None]).sum(axis=0), int(b.size))

    def estimate_many(self, points) -> np.ndarray:
        """Densities for each row of ``points``, shape (N, |gammas|)."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None] if self.grid.n == 1 else points[None, :]
        out = np.empty((points.shape[0], self.n_views))
        for r, x in enumerate(points):
            out[r] = self.estimate_density(x).per_view
        return out

    def view(self, i: int) -> "MrwpnModel":
        """A single-view model holding column ``i`` of this one."""
        single = MrwpnModel(self.grid, ReceptiveFieldSet((self.gammas[i],)))
        single._raw = self._raw[:, [i]].copy()
        single._scale = self._scale[[i]].copy()
        single._touched = self._touched.copy()
        single.points_seen = self.points_seen
        return single


def update_batch(grid: FrameGrid, data) -> np.ndarray:
    """Stationary coefficient estimate: the mean of Phi_k over the sample."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None] if grid.n == 1 else data[None, :]
    if data.shape[0] == 0:
        raise ValueError("batch coefficient estimate needs at least one point")
    if data.shape[1] != grid.n:
        raise ValueError(f"data has dimension {data.shape[1]}, grid expects {grid.n}")
    w = np.zeros(grid.total_count)
    for x in data:
        b = find_relevant_frames(grid, x)
        w[b] += frame_values(grid, grid.translations[b], x)
    return w / data.shape[0]


def density_from_coefficients(grid: FrameGrid, w: np.ndarray, x) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    b = find_relevant_frames(grid, x)
    return float(np.dot(w[b], frame_values(grid, grid.translations[b], x)))


def ensemble_equivalence_check(model: MrwpnModel, stream) -> bool:
    """Feed ``stream`` to a copy of ``model`` and to one single-view model
    per forgetting factor; True when every column matches bit for bit."""
    stream = list(stream)
    multi = model.copy()
    singles = [model.view(i) for i in range(model.n_views)]
    for x in stream:
        multi.update_online(x)
        for s in singles:
            s.update_online(x)
    coef = multi.coefficients
    return all(np.array_equal(coef[:, [i]], s.coefficients) for i, s in enumerate(singles))


def save_model(model: MrwpnModel, path) -> None:
    binio.atomic_write_bytes(path, dumps(model))


def dumps(model: MrwpnModel) -> bytes:
    g = model.grid
    head = struct.pack("<IIIIQ", g.j0, g.m, g.n, model.n_views, model.points_seen)
    body = (np.asarray(model.gammas, dtype="<f8").tobytes()
            + np.ascontiguousarray(model.coefficients, dtype="<f8").tobytes())
    return binio.pack(MAGIC, VERSION, head + body)


def loads(blob: bytes) -> MrwpnModel:
    r = binio.Reader(binio.unpack(blob, MAGIC, VERSION))
    j0, m, n, g, seen = r.take("IIIIQ")
    gammas = tuple(r.f64_array(g))
    model = MrwpnModel(build_grid(j0, SplineOrder(m), n), ReceptiveFieldSet(gammas))
    coef = r.f64_array(model.grid.total_count * g).reshape(model.grid.total_count, g)
    model._raw = coef.copy()
    model.points_seen = seen
    if model._full.any():
        model._touched = np.flatnonzero(np.any(coef[:, model._full] != 0.0, axis=1))
    return model


def load_model(path) -> MrwpnModel:
    with open(path, "rb") as fh:
        return loads(fh.read())
