"""Empirical capacity decay curves, candidate-family rate infima, slope fits."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .coeffs import CoefficientSet
from .convex import ConvexPenalty
from .forward import BLOWUP_LIMIT, BlowUpError
from .gcore import ScenarioSamples, VolBounds, capacity
from .paths import Scenario, TimeGrid, gaussian_increments

__all__ = [
    "EventSpec",
    "LDPCurve",
    "exit_ball",
    "terminal_above",
    "empirical_ldp_curve",
    "theoretical_rate_inf",
    "fit_slope",
    "SPEEDS",
]

SPEEDS = ("eps2", "eps")
_KINDS = ("exit_ball", "terminal_above")
_TARGETS = ("forward_minus_x", "backward_y")


@dataclass(frozen=True)
class EventSpec:
    """A closed path event.

    ``exit_ball``: the deviation (``X - x0``, or ``Y - Y_s``) reaches
    ``radius`` in absolute value at some grid node. ``terminal_above``: the
    process itself (``X_T`` or ``Y_T``) ends at or above ``level``.
    """

    kind: str
    radius: float = math.nan
    level: float = math.nan
    applied_to: str = "forward_minus_x"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unsupported event kind {self.kind!r}")
        if self.applied_to not in _TARGETS:
            raise ValueError(f"unsupported event target {self.applied_to!r}")
        if self.kind == "exit_ball" and not self.radius > 0:
            raise ValueError("exit_ball radius must be > 0")
        if self.kind == "terminal_above" and not math.isfinite(self.level):
            raise ValueError("terminal_above level must be finite")

    def hits(self, sup_dev, terminal):
        """0/1 indicators from running ``sup |deviation|`` and terminal values."""
        if self.kind == "exit_ball":
            ok = np.asarray(sup_dev) >= self.radius
        else:
            ok = np.asarray(terminal) >= self.level
        return ok.astype(float)

    def contains(self, dev_path, origin: float) -> bool:
        """Membership test for a single deviation path (node values)."""
        dev_path = np.asarray(dev_path, dtype=float)
        if self.kind == "exit_ball":
            return bool(np.max(np.abs(dev_path)) >= self.radius)
        return bool(origin + dev_path[-1] >= self.level)

    def describe(self) -> dict:
        d = {"kind": self.kind, "applied_to": self.applied_to}
        if self.kind == "exit_ball":
            d["radius"] = self.radius
        else:
            d["level"] = self.level
        return d


def exit_ball(radius: float, applied_to: str = "forward_minus_x") -> EventSpec:
    return EventSpec("exit_ball", radius=float(radius), applied_to=applied_to)


def terminal_above(level: float, applied_to: str = "forward_minus_x") -> EventSpec:
    return EventSpec("terminal_above", level=float(level), applied_to=applied_to)


@dataclass
class LDPCurve:
    event: EventSpec
    speed: str
    rows: list = field(default_factory=list)

    def points(self):
        return [(r["eps"], r["eps_log_capacity"]) for r in self.rows]

    def smallest_feasible(self, min_hits: int = 10):
        """Row with the smallest eps whose worst-case hit count is at least ``min_hits``."""
        ok = [r for r in self.rows if r["n_hits"] >= min_hits]
        return min(ok, key=lambda r: r["eps"]) if ok else None

    def csv_rows(self):
        header = ["eps", "eps_log_capacity", "n_hits", "n_paths", "argmax_scenario_id",
                  "capacity", "speed"]
        return [header] + [[r[h] for h in header] for r in self.rows]


def _speed_factor(eps: float, speed: str) -> float:
    if speed == "eps2":
        return eps * eps
    if speed == "eps":
        return eps
    raise ValueError(f"unknown speed {speed!r}")


def _simulate_event(spec, c, eps, x0, grid, scen_var, dW, field_=None, y_ref=0.0):
    """Per-(scenario, path) running sup of |deviation| and terminal value."""
    S, P = scen_var.shape[0], dW.shape[0]
    dt = grid.dt
    sq = np.sqrt(scen_var)
    X = np.full((S, P), float(x0))
    sup_dev = np.zeros((S, P))
    val = X
    if field_ is not None:
        val = np.full((S, P), field_.interp(0, np.array([x0]))[0])
    for k in range(grid.n_steps):
        dB = sq[:, k, None] * dW[None, :, k]
        dq = scen_var[:, k, None] * dt
        X = X + c.b(X) * dt + eps * c.h(X) * dq + eps * c.sigma(X) * dB
        if not np.all(np.abs(X) <= BLOWUP_LIMIT):
            raise BlowUpError(k + 1)
        if field_ is None:
            val = X
            np.maximum(sup_dev, np.abs(X - x0), out=sup_dev)
        else:
            val = field_.interp(k + 1, X)
            np.maximum(sup_dev, np.abs(val - y_ref), out=sup_dev)
    return sup_dev, val


def empirical_ldp_curve(spec: EventSpec, c: CoefficientSet, p: ConvexPenalty, x0: float,
                        eps_ladder: Sequence[float], family: Sequence[Scenario], n_paths: int,
                        grid: TimeGrid, bounds: VolBounds, *, seed: int = 0,
                        speed: str = "eps2", chunk_size: int = 10000,
                        dx_target: float = 0.02, workers: int = 1) -> LDPCurve:
    """Capacity of ``spec`` along an eps ladder, scaled by the LDP speed.

    Each row carries ``speed(eps) * log C``, where ``C`` is the largest hit
    frequency over the scenarios. ``C = 0`` gives ``-inf``. ``n_hits`` counts
    the hits of the maximising scenario. Backward events read
    ``Y = u^eps(t, X_t)`` off the VI field. The penalty is only used there.
    Paths run in fixed chunks; ``workers`` threads share the chunks, which
    leaves the results unchanged.
    """
    from .vi import _field_bundle, default_window

    eps_ladder = [float(e) for e in eps_ladder]
    if len(eps_ladder) < 3:
        raise ValueError("eps ladder needs at least 3 entries")
    if n_paths < 1000:
        raise ValueError("n_paths must be >= 1000")
    _speed_factor(1.0, speed)
    for sc in family:
        sc.check(bounds)
    ids = [sc.id for sc in family]
    scen_var = np.stack([sc.var_path for sc in family])
    if scen_var.shape[1] != grid.n_steps:
        raise ValueError("scenario length does not match the grid")
    chunks = [np.arange(a, min(a + chunk_size, n_paths)) for a in range(0, n_paths, chunk_size)]

    curve = LDPCurve(spec, speed)
    for e in eps_ladder:
        fld, y_ref = None, 0.0
        if spec.applied_to == "backward_y":
            win = default_window(c, bounds, e, x0, grid.horizon)
            fld, _ = _field_bundle(c, p, bounds, e, win, dx_target, grid)
            y_ref = float(fld.interp(0, np.array([x0]))[0])

        def one(idx, e=e, fld=fld, y_ref=y_ref):
            dW = gaussian_increments(grid, seed, idx)
            sup_dev, term = _simulate_event(spec, c, e, x0, grid, scen_var, dW, fld, y_ref)
            return spec.hits(sup_dev, term)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                hits = list(pool.map(one, chunks))
        else:
            hits = [one(idx) for idx in chunks]
        ind = np.concatenate(hits, axis=1)
        est = capacity(ScenarioSamples((sid, ind[j]) for j, sid in enumerate(ids)), detail=True)
        j_max = ids.index(est.argmax_scenario_id)
        n_hits = int(np.sum(ind[j_max]))
        cap = float(est.value)
        scaled = _speed_factor(e, speed) * math.log(cap) if cap > 0 else -math.inf
        curve.rows.append({"eps": e, "eps_log_capacity": scaled, "n_hits": n_hits,
                           "n_paths": int(n_paths), "argmax_scenario_id": est.argmax_scenario_id,
                           "capacity": cap, "speed": speed})
    return curve


def _exit_indices(n_steps: int, size: int) -> list[int]:
    # round(N i / n): doubling n yields a superset of indices
    out = sorted({int(round(n_steps * i / size)) for i in range(1, size + 1)} - {0})
    return out


def _rate_value(res) -> float:
    if isinstance(res, (int, float)):
        return float(res)
    return math.inf if getattr(res, "infinite", False) else float(res.value)


def theoretical_rate_inf(spec: EventSpec, rate_fn: Callable, grid: TimeGrid,
                         candidate_family_size: int, *, lln=None, origin: float = 0.0,
                         flow: Callable | None = None) -> float:
    """Smallest rate over a family of candidate paths inside the event.

    Candidates are deviation paths starting at 0. ``rate_fn(path)`` returns
    a rate (float or a result carrying ``value``/``infinite``). ``lln`` is the
    deviation of the zero-rate path, ``origin`` the starting value of the
    process. ``flow(v, dt)`` advances a deviation along the uncontrolled
    dynamics and is used after an exit; without it, the path copies the LLN
    increments. The value is an upper bound for the true infimum.
    """
    if spec.kind not in _KINDS:
        raise ValueError(f"unsupported event kind {spec.kind!r}")
    if candidate_family_size < 1:
        raise ValueError("candidate_family_size must be >= 1")
    n = grid.n_steps
    t = grid.nodes - grid.s
    lln = np.zeros(n + 1) if lln is None else np.asarray(lln, dtype=float)
    if lln.shape != (n + 1,):
        raise ValueError("lln path must live on the grid nodes")

    def continue_from(path, j):
        for k in range(j, n):
            path[k + 1] = flow(path[k], grid.dt) if flow else path[k] + (lln[k + 1] - lln[k])
        return path

    cands = []
    if spec.contains(lln, origin):
        cands.append(lln.copy())
    idxs = _exit_indices(n, candidate_family_size)
    if spec.kind == "exit_ball":
        for j in idxs:
            for sign in (1.0, -1.0):
                path = np.empty(n + 1)
                path[: j + 1] = sign * spec.radius * t[: j + 1] / t[j]
                cands.append(continue_from(path, j))
    else:
        target = spec.level - origin
        starts = sorted({0} | {n - j for j in idxs} - {n})
        for j in starts:
            path = lln.copy()
            path[j:] = lln[j] + (target - lln[j]) * (t[j:] - t[j]) / (t[n] - t[j])
            cands.append(path)
    best = math.inf
    for path in cands:
        if not spec.contains(path, origin):
            continue
        best = min(best, _rate_value(rate_fn(path)))
    return best


def fit_slope(points) -> tuple[float, float, float]:
    """Least-squares line through ``(x, y)`` points: ``(slope, intercept, r^2)``."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise ValueError("fit_slope needs at least 3 (x, y) points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("fit_slope needs finite points")
    x, y = pts[:, 0], pts[:, 1]
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise ValueError("x values are all equal")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_res = float(np.sum((y - intercept - slope * x) ** 2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return slope, intercept, r2
