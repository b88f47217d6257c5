"""B-spline scaling functions and the radial frame lattice.

Frames are indexed row-major over dimensions, k ascending, so the first
dimension is the most significant digit of the flat index (the same order
as ``itertools.product``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

DEFAULT_FRAME_BUDGET = 10**7


class FrameBudgetError(ValueError):
    """Raised when a lattice would hold more frames than the configured budget."""


@dataclass(frozen=True)
class SplineOrder:
    m: int

    def __post_init__(self):
        if self.m not in (2, 3, 4):
            raise ValueError(f"B-spline order must be 2, 3 or 4, got {self.m}")

    @property
    def u(self) -> int:
        # boundary pad: one frame per side for linear/quadratic, two for cubic
        return 2 if self.m == 4 else 1

    @property
    def name(self) -> str:
        return {2: "linear", 3: "quadratic", 4: "cubic"}[self.m]


def bspline_eval(order: SplineOrder | int, x):
    """Closed-form B-spline N_m(x), supported on [0, m].

    Accepts a scalar or an array; returns the same shape.
    """
    m = order.m if isinstance(order, SplineOrder) else int(order)
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    if m == 2:
        out = np.where((x >= 0) & (x < 1), x, out)
        out = np.where((x >= 1) & (x < 2), 2.0 - x, out)
    elif m == 3:
        out = np.where((x >= 0) & (x < 1), 0.5 * x**2, out)
        out = np.where((x >= 1) & (x < 2), 0.75 - (x - 1.5) ** 2, out)
        out = np.where((x >= 2) & (x < 3), 0.5 * (x - 3.0) ** 2, out)
    elif m == 4:
        x2 = x * x
        x3 = x2 * x
        out = np.where((x >= 0) & (x < 1), x3 / 6.0, out)
        out = np.where((x >= 1) & (x < 2), (-3 * x3 + 12 * x2 - 12 * x + 4) / 6.0, out)
        out = np.where((x >= 2) & (x < 3), (3 * x3 - 24 * x2 + 60 * x - 44) / 6.0, out)
        out = np.where((x >= 3) & (x < 4), (4.0 - x) ** 3 / 6.0, out)
    else:
        raise ValueError(f"unsupported B-spline order {m}")
    # rounding in the cubic middle pieces can dip a hair below zero at knots
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FrameGrid:
    j0: int
    order: SplineOrder
    n: int
    translations: np.ndarray = field(repr=False, compare=False)

    @property
    def m(self) -> int:
        return self.order.m

    @property
    def u(self) -> int:
        return self.order.u

    @property
    def per_dim_count(self) -> int:
        return 2**self.j0 + 2 * self.u + 1

    @property
    def total_count(self) -> int:
        return self.per_dim_count**self.n

    M = total_count

    @property
    def k_min(self) -> int:
        return -self.u

    @property
    def k_max(self) -> int:
        return 2**self.j0 + self.u

    @property
    def scale(self) -> float:
        return 2.0 ** (self.n * self.j0 / 2.0)

    def flat_index(self, k) -> int:
        idx = 0
        for kd in k:
            idx = idx * self.per_dim_count + (int(kd) - self.k_min)
        return idx

    def support(self, frame_index: int) -> np.ndarray:
        """Per-dimension [low, high] support box, shape (n, 2)."""
        k = self.translations[frame_index].astype(np.float64)
        h = self.m / 2.0
        return np.stack([(k - h) / 2.0**self.j0, (k + h) / 2.0**self.j0], axis=1)


def build_grid(j0: int, order: SplineOrder | int, n: int,
               budget: int = DEFAULT_FRAME_BUDGET) -> FrameGrid:
    if not isinstance(order, SplineOrder):
        order = SplineOrder(int(order))
    if j0 < 1:
        raise ValueError(f"resolution j0 must be >= 1, got {j0}")
    if n < 1:
        raise ValueError(f"dimension n must be >= 1, got {n}")
    m1 = 2**j0 + 2 * order.u + 1
    total = m1**n
    if total > budget:
        raise FrameBudgetError(
            f"frame budget exceeded: M1^n = {m1}^{n} = {total} > {budget}")
    ks = np.arange(-order.u, 2**j0 + order.u + 1, dtype=np.int64)
    if n == 1:
        translations = ks[:, None]
    else:
        mesh = np.meshgrid(*([ks] * n), indexing="ij")
        translations = np.stack([g.ravel() for g in mesh], axis=1)
    translations.setflags(write=False)
    return FrameGrid(j0=j0, order=order, n=n, translations=translations)


def _check_point(grid: FrameGrid, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != grid.n:
        raise ValueError(f"point has dimension {x.shape[0]}, grid expects {grid.n}")
    return x


def frame_values(grid: FrameGrid, k: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Radial frame values for translation rows ``k`` (shape (c, n)) at x."""
    r = np.sqrt(np.sum((2.0**grid.j0 * x - k) ** 2, axis=-1))
    return grid.scale * bspline_eval(grid.order, r + grid.m / 2.0)


def radial_frame_eval(grid: FrameGrid, frame_index: int, x) -> float:
    if not 0 <= frame_index < grid.total_count:
        raise IndexError(
            f"frame index {frame_index} out of range [0, {grid.total_count})")
    x = _check_point(grid, x)
    k = grid.translations[frame_index]
    return float(frame_values(grid, k[None, :], x)[0])


def relevant_k_ranges(grid: FrameGrid, x: np.ndarray) -> list[np.ndarray]:
    """Per-dimension translations whose (closed) support contains x_d."""
    z = 2.0**grid.j0 * x
    h = grid.m / 2.0
    lo = np.maximum(np.ceil(z - h), grid.k_min)
    hi = np.minimum(np.floor(z + h), grid.k_max)
    return [np.arange(int(a), int(b) + 1, dtype=np.int64) if a <= b
            else np.empty(0, dtype=np.int64) for a, b in zip(lo, hi)]


def find_relevant_frames(grid: FrameGrid, x) -> np.ndarray:
    """Flat indices of frames whose support box contains x, ascending.

    Computes the 1-D candidate lists per dimension and takes their
    Cartesian product, which is equivalent to scanning every frame.
    """
    x = _check_point(grid, x)
    if not np.all(np.isfinite(x)):
        return np.empty(0, dtype=np.int64)
    ranges = relevant_k_ranges(grid, x)
    if any(r.size == 0 for r in ranges):
        return np.empty(0, dtype=np.int64)
    idx = np.zeros(1, dtype=np.int64)
    for r in ranges:
        idx = (idx[:, None] * grid.per_dim_count + (r - grid.k_min)[None, :]).ravel()
    return idx


def relevant_frames_bruteforce(grid: FrameGrid, x) -> np.ndarray:
    """Reference scan testing the support box of every frame."""
    x = _check_point(grid, x)
    h = grid.m / 2.0
    step = 2.0**-grid.j0
    k = grid.translations
    inside = (x >= step * (k - h)) & (x <= step * (k + h))
    return np.flatnonzero(inside.all(axis=1)).astype(np.int64)


def iter_translations(grid: FrameGrid):
    return itertools.product(range(grid.k_min, grid.k_max + 1), repeat=grid.n)
