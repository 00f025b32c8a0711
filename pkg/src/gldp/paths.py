"""Time grids, volatility scenarios and G-Brownian sample paths.

A scenario is a piecewise-constant squared-volatility control on the cells of
a :class:`TimeGrid`. Under a scenario, ``dB = sigma(t) dW`` and the quadratic
variation increment is exactly ``sigma(t)^2 dt``, so the bounds
``dt * sigma_lo_sq <= d<B> <= dt * sigma_hi_sq`` hold with zero tolerance.

The standard Gaussian driver depends only on ``(seed, path_index)``. All
scenarios reuse it, which couples the scenarios through common random numbers.
Each path has its own counter-based (Philox) stream, so batches come out the
same whatever order or chunking generates them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gcore import VolBounds

__all__ = [
    "TimeGrid",
    "Scenario",
    "GPath",
    "make_time_grid",
    "scenario_family",
    "sign_tracking_scenario",
    "build_g_path",
    "gaussian_increments",
    "check_qv_bounds",
    "coarsen_path",
]


@dataclass(frozen=True)
class TimeGrid:
    s: float
    T: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.s) and math.isfinite(self.T)):
            raise ValueError("grid endpoints must be finite")
        if self.s < 0.0:
            raise ValueError(f"start time must be >= 0, got {self.s}")
        if not self.s < self.T:
            raise ValueError(f"empty time interval: s={self.s} >= T={self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return (self.T - self.s) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return self.s + self.dt * np.arange(self.n_steps + 1)

    @property
    def horizon(self) -> float:
        return self.T - self.s

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.s, self.T, self.n_steps * int(factor))


def make_time_grid(s: float, T: float, n_steps: int) -> TimeGrid:
    return TimeGrid(float(s), float(T), n_steps)


@dataclass(frozen=True)
class Scenario:
    """Squared-volatility control, one value per grid cell."""

    id: int
    var_path: np.ndarray = field(repr=False)
    label: str = ""

    def __post_init__(self):
        arr = np.asarray(self.var_path, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "var_path", arr)

    def check(self, bounds: VolBounds) -> None:
        if np.any(self.var_path < bounds.sigma_lo_sq) or np.any(self.var_path > bounds.sigma_hi_sq):
            raise ValueError(f"scenario {self.id} leaves [{bounds.sigma_lo_sq}, {bounds.sigma_hi_sq}]")

    def qv_increments(self, grid: TimeGrid) -> np.ndarray:
        if self.var_path.shape != (grid.n_steps,):
            raise ValueError(
                f"scenario {self.id} has {self.var_path.size} cells, grid has {grid.n_steps}")
        return self.var_path * grid.dt


def scenario_family(bounds: VolBounds, grid: TimeGrid, n_random: int = 0,
                    seed: int = 0) -> list[Scenario]:
    """Finite proxy for the set of volatility laws.

    The family holds the two constant extremes, one bang-bang control that
    alternates between them on every cell (starting high), and ``n_random``
    controls with i.i.d. uniform cell values in the volatility interval.
    """
    n = grid.n_steps
    lo, hi = bounds.sigma_lo_sq, bounds.sigma_hi_sq
    bang = np.where(np.arange(n) % 2 == 0, hi, lo)
    family = [
        Scenario(0, np.full(n, lo), "const_lo"),
        Scenario(1, np.full(n, hi), "const_hi"),
        Scenario(2, bang, "bang_bang"),
    ]
    if n_random:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x5CE1])))
        draws = rng.random((int(n_random), n))
        for j in range(int(n_random)):
            var = np.clip(lo + (hi - lo) * draws[j], lo, hi)
            family.append(Scenario(3 + j, var, f"random_{j}"))
    return family


def sign_tracking_scenario(values, bounds: VolBounds, scenario_id: int) -> Scenario:
    """Bang-bang control that is high where ``values >= 0`` and low elsewhere.

    For a driver ``g`` this is the scenario attaining ``sigma^2 g = 2 G(g)`` on
    every cell.
    """
    v = np.asarray(values, dtype=float)
    return Scenario(scenario_id, np.where(v >= 0.0, bounds.sigma_hi_sq, bounds.sigma_lo_sq),
                    "sign_tracking")


def _stream(seed: int, path_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(path_index),))
    return np.random.Generator(np.random.Philox(ss))


def gaussian_increments(grid: TimeGrid, seed: int, path_indices) -> np.ndarray:
    """Brownian increments ``dW`` (variance ``dt``), one row per path index."""
    idx = np.atleast_1d(np.asarray(path_indices, dtype=np.int64))
    out = np.empty((idx.size, grid.n_steps))
    sq = math.sqrt(grid.dt)
    for row, p in enumerate(idx):
        out[row] = _stream(seed, int(p)).standard_normal(grid.n_steps)
    out *= sq
    return out


@dataclass(frozen=True)
class GPath:
    b_incr: np.ndarray
    qv_incr: np.ndarray
    b: np.ndarray
    qv: np.ndarray
    scenario_id: int = -1
    path_index: int = -1


def _cumulate(incr: np.ndarray) -> np.ndarray:
    out = np.zeros(incr.shape[:-1] + (incr.shape[-1] + 1,))
    np.cumsum(incr, axis=-1, out=out[..., 1:])
    return out


def build_g_path(scenario: Scenario, grid: TimeGrid, seed: int, path_index: int) -> GPath:
    qv_incr = scenario.qv_increments(grid)
    dw = gaussian_increments(grid, seed, [path_index])[0]
    b_incr = np.sqrt(scenario.var_path) * dw
    return GPath(b_incr, qv_incr, _cumulate(b_incr), _cumulate(qv_incr),
                 scenario.id, int(path_index))


def check_qv_bounds(path: GPath, grid: TimeGrid, bounds: VolBounds) -> bool:
    """Exact check of the quadratic-variation bounds on every grid increment.

    Per-cell bounds are checked on the stored increments. For arbitrary pairs
    ``j < k`` the bounds then follow, because ``qv`` is the cumulative sum of
    those increments.
    """
    inc = np.asarray(path.qv_incr)
    lo = bounds.sigma_lo_sq * grid.dt
    hi = bounds.sigma_hi_sq * grid.dt
    return bool(np.all(inc >= lo) and np.all(inc <= hi) and path.qv[0] == 0.0 and path.b[0] == 0.0)


def coarsen_path(path: GPath, factor: int) -> GPath:
    """Aggregate a fine path onto a grid ``factor`` times coarser."""
    factor = int(factor)
    n = path.b_incr.size
    if n % factor:
        raise ValueError(f"{n} steps not divisible by {factor}")
    b_incr = path.b_incr.reshape(-1, factor).sum(axis=1)
    qv_incr = path.qv_incr.reshape(-1, factor).sum(axis=1)
    return GPath(b_incr, qv_incr, path.b[::factor].copy(), path.qv[::factor].copy(),
                 path.scenario_id, path.path_index)
