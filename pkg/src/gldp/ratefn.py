"""Action functional, controlled ODE and the rate functions of X and Y.

For a control pair ``(phi', eta')`` with ``eta'`` inside the volatility box,
the action is ``J = 1/2 int phi'^2 / eta' dr``. The controlled ODE is
``Psi' = b(Psi) + sigma(Psi) phi' + h(Psi) eta'``. The forward rate of a
path ``phit`` (``phit_s = 0``) is the least action of the controls that steer
``x0 + phit``. The backward rate of a path ``psi`` is the forward rate of the
preimage under ``phit -> u0(., x0 + phit)``.

In one dimension the infimum separates over grid cells. On each cell, and
for each candidate ``eta'``, the constraint fixes ``phi'``. The cell cost is
then minimised over ``eta'`` in the box.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .coeffs import CoefficientSet
from .convex import ConvexPenalty
from .forward import rk4_flow_step
from .gcore import VolBounds
from .paths import TimeGrid

__all__ = [
    "ControlPair",
    "RateResult",
    "InversionError",
    "PreimageError",
    "action_J",
    "controlled_ode",
    "controlled_step",
    "pointwise_eta_min",
    "lambda_rate",
    "lambda_prime",
    "invert_field",
]

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class InversionError(ArithmeticError):
    pass


class PreimageError(ValueError):
    pass


@dataclass(frozen=True)
class ControlPair:
    phi_dot: np.ndarray
    eta_dot: np.ndarray

    def check(self, bounds: VolBounds) -> bool:
        e = np.asarray(self.eta_dot)
        return bool(np.all(e >= bounds.sigma_lo_sq) and np.all(e <= bounds.sigma_hi_sq))


@dataclass
class RateResult:
    value: float
    optimal_control: ControlPair | None
    target: np.ndarray
    infinite: bool = False
    phi_tilde: np.ndarray | None = field(default=None, repr=False)
    note: str = ""

    def to_json(self) -> str:
        def arr(a):
            return [] if a is None else [float(v) for v in np.asarray(a)]

        ctrl = self.optimal_control
        doc = {
            "value": None if self.infinite else float(self.value),
            "infinite": bool(self.infinite),
            "phi_dot": arr(ctrl.phi_dot if ctrl else None),
            "eta_dot": arr(ctrl.eta_dot if ctrl else None),
            "target": arr(self.target),
        }
        if self.phi_tilde is not None:
            doc["phi_tilde"] = arr(self.phi_tilde)
        if self.note:
            doc["note"] = self.note
        return json.dumps(doc, indent=1, sort_keys=True)


def _infinite(target, note: str, phi_tilde=None) -> RateResult:
    return RateResult(math.inf, None, np.asarray(target, dtype=float), True, phi_tilde, note)


def action_J(ctrl: ControlPair, grid: TimeGrid, bounds: VolBounds | None = None) -> float:
    """``1/2 sum phi'^2 / eta' dt`` over cells; ``inf`` outside the box."""
    p = np.asarray(ctrl.phi_dot, dtype=float)
    v = np.asarray(ctrl.eta_dot, dtype=float)
    if p.shape != (grid.n_steps,) or v.shape != (grid.n_steps,):
        raise ValueError("controls must have one value per grid cell")
    if np.any(v <= 0.0):
        raise ValueError("eta' must be strictly positive")
    if bounds is not None and not ctrl.check(bounds):
        return math.inf
    return 0.5 * math.fsum((p * p / v * grid.dt).tolist())


def controlled_step(c: CoefficientSet, x, p, v, dt: float):
    """One RK4 step of the controlled ODE with controls frozen on the cell."""
    def rhs(y):
        return c.b(y) + c.sigma(y) * p + c.h(y) * v

    k1 = rhs(x)
    k2 = rhs(x + 0.5 * dt * k1)
    k3 = rhs(x + 0.5 * dt * k2)
    k4 = rhs(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def controlled_ode(c: CoefficientSet, x0: float, ctrl: ControlPair, grid: TimeGrid,
                   *, b_only: bool = False) -> np.ndarray:
    """RK4 solution of the controlled ODE with piecewise-constant controls.

    ``b_only=True`` drops both control terms, which leaves the uncontrolled
    drift flow.
    """
    p = np.asarray(ctrl.phi_dot, dtype=float)
    v = np.asarray(ctrl.eta_dot, dtype=float)
    out = np.empty(grid.n_steps + 1)
    out[0] = x = float(x0)
    for k in range(grid.n_steps):
        if b_only:
            x = rk4_flow_step(c.b, x, grid.dt)
        else:
            x = controlled_step(c, x, p[k], v[k], grid.dt)
        out[k + 1] = x
    return out


def pointwise_eta_min(a, h_val, sigma_val, bounds: VolBounds):
    """Minimise ``q(v) = (a - h v)^2 / (sigma^2 v)`` over the volatility box.

    ``q`` is convex in ``v > 0``, with stationary point ``|a / h|``. The
    stationary point is clamped to the box. With ``h = 0``, ``q`` is
    non-increasing, so the upper end is taken; that also settles the tie
    when ``a = h = 0``. Returns ``(v_star, cost)``, elementwise on arrays.
    """
    a = np.asarray(a, dtype=float)
    h_val = np.asarray(h_val, dtype=float)
    sigma_val = np.asarray(sigma_val, dtype=float)
    if np.any(sigma_val <= 0.0):
        raise ValueError("sigma must be > 0")
    lo, hi = bounds.sigma_lo_sq, bounds.sigma_hi_sq
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(h_val != 0.0, np.abs(a) / np.abs(np.where(h_val != 0.0, h_val, 1.0)), hi)
    v = np.clip(stat, lo, hi)
    cost = (a - h_val * v) ** 2 / (sigma_val * sigma_val * v)
    if v.ndim == 0:
        return float(v), float(cost)
    return v, cost


def _solve_phi_dot(c, x, x_next, v, dt, p0):
    """Newton solve of ``controlled_step(x, p, v) = x_next`` in ``p`` (per cell)."""
    p = np.array(p0, dtype=float)
    scale = np.maximum(1.0, np.abs(x_next))
    for _ in range(60):
        r = controlled_step(c, x, p, v, dt) - x_next
        if np.all(np.abs(r) <= 4e-16 * scale):
            break
        hstep = 1e-6 * np.maximum(1.0, np.abs(p))
        d = (controlled_step(c, x, p + hstep, v, dt) - controlled_step(c, x, p - hstep, v, dt)) / (2 * hstep)
        step = np.where(d != 0.0, r / np.where(d != 0.0, d, 1.0), 0.0)
        p = p - step
        if np.all(np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(p))):
            break
    return p


def _cell_cost(c, x, x_next, v, dt, p_guess):
    p = _solve_phi_dot(c, x, x_next, v, dt, p_guess)
    return p, p * p / v


def _invert_cells(c: CoefficientSet, bounds: VolBounds, psi: np.ndarray, dt: float):
    """Per-cell optimal ``(phi', eta', cost)`` for the exact RK4 constraint."""
    x, x_next = psi[:-1], psi[1:]
    b_x, h_x, s_x = c.b(x), c.h(x), c.sigma(x)
    a = (x_next - x) / dt - b_x
    v0, _ = pointwise_eta_min(a, h_x * np.ones_like(x), s_x * np.ones_like(x), bounds)
    v0 = np.atleast_1d(v0)
    lo, hi = bounds.sigma_lo_sq, bounds.sigma_hi_sq

    def guess(v):
        return (a - h_x * v) / s_x

    cands = [v0, np.full_like(v0, hi), np.full_like(v0, lo)]
    if hi > lo:
        aa, bb = np.full_like(v0, lo), np.full_like(v0, hi)
        for _ in range(80):
            if np.all(bb - aa <= 1e-12 * hi):
                break
            cc = bb - _GOLDEN * (bb - aa)
            dd = aa + _GOLDEN * (bb - aa)
            _, fc = _cell_cost(c, x, x_next, cc, dt, guess(cc))
            _, fd = _cell_cost(c, x, x_next, dd, dt, guess(dd))
            left = fc <= fd
            bb = np.where(left, dd, bb)
            aa = np.where(left, aa, cc)
        cands.append(0.5 * (aa + bb))
    best_v = best_p = best_cost = None
    # candidates in order of preference; ties keep the earlier (larger-v first among equals)
    for v in sorted(cands, key=lambda arr: -float(np.mean(arr))):
        p, cost = _cell_cost(c, x, x_next, v, dt, guess(v))
        if best_cost is None:
            best_v, best_p, best_cost = v, p, cost
            continue
        better = cost < best_cost
        best_v = np.where(better, v, best_v)
        best_p = np.where(better, p, best_p)
        best_cost = np.where(better, cost, best_cost)
    return best_p, best_v, best_cost


def lambda_rate(c: CoefficientSet, bounds: VolBounds, x0: float, target, grid: TimeGrid,
                *, psi_hat_b_only: bool = False, verify_tol: float = 1e-6) -> RateResult:
    """Forward rate of ``target`` (a path on the grid nodes starting at 0).

    Returns the optimal controls. Re-integrating them through
    :func:`controlled_ode` must reproduce ``x0 + target`` within
    ``verify_tol``, otherwise :class:`InversionError` is raised.

    ``psi_hat_b_only`` uses the drift-only dynamics instead: the rate is 0 on
    the uncontrolled flow and ``+inf`` elsewhere.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != (grid.n_steps + 1,):
        raise ValueError("target must have one value per grid node")
    if abs(target[0]) > 1e-12:
        raise ValueError("target must start at 0")
    if not np.all(np.isfinite(target)):
        return _infinite(target, "non-finite target")
    psi = x0 + target
    if psi_hat_b_only:
        flow = controlled_ode(c, x0, ControlPair(np.zeros(grid.n_steps), np.zeros(grid.n_steps)),
                              grid, b_only=True)
        if np.max(np.abs(flow - psi)) <= verify_tol:
            return RateResult(0.0, ControlPair(np.zeros(grid.n_steps),
                                               np.full(grid.n_steps, bounds.sigma_hi_sq)), target)
        return _infinite(target, "off the drift-only flow")
    if np.any(np.asarray(c.sigma(psi)) <= 0.0):
        raise ValueError("sigma must be bounded away from 0 along the target")
    p, v, cost = _invert_cells(c, bounds, psi, grid.dt)
    ctrl = ControlPair(np.asarray(p, dtype=float), np.asarray(v, dtype=float))
    recon = controlled_ode(c, x0, ctrl, grid)
    gap = float(np.max(np.abs(recon - psi)))
    if not gap <= verify_tol:
        raise InversionError(f"inversion failed: reconstruction gap {gap:.3g}")
    value = 0.5 * math.fsum((np.asarray(cost) * grid.dt).tolist())
    return RateResult(value, ctrl, target)


def invert_field(u_row: np.ndarray, x_nodes: np.ndarray, level: float):
    """Preimage of ``level`` under the piecewise-linear interpolant of a
    strictly monotone row, or ``None`` when the level is out of range.
    """
    inc = u_row[-1] > u_row[0]
    vals = u_row if inc else u_row[::-1]
    xs = x_nodes if inc else x_nodes[::-1]
    if level < vals[0] or level > vals[-1]:
        return None
    j = int(np.searchsorted(vals, level, side="left"))
    if j == 0:
        return float(xs[0])
    lo, hi = vals[j - 1], vals[j]
    w = (level - lo) / (hi - lo)
    return float(xs[j - 1] + w * (xs[j] - xs[j - 1]))


def lambda_prime(c: CoefficientSet, p: ConvexPenalty, bounds: VolBounds, x0: float, target_psi,
                 u0, grid: TimeGrid, **kwargs) -> RateResult:
    """Backward rate: forward rate of the preimage under ``u0(t, x0 + .)``.

    ``u0`` is a :class:`~gldp.vi.VIGrid` on the same time nodes. Every time
    slice must be strictly monotone in ``x``; otherwise :class:`PreimageError`
    is raised. An empty preimage gives an infinite rate, and so does a target
    that leaves the domain of ``p`` (the field never takes such values).
    """
    target_psi = np.asarray(target_psi, dtype=float)
    if target_psi.shape != (grid.n_steps + 1,) or u0.u.shape[0] != grid.n_steps + 1:
        raise ValueError("target and field must live on the grid nodes")
    if np.any(target_psi[:-1] < p.dom_lo) or np.any(target_psi[:-1] > p.dom_hi):
        return _infinite(target_psi, "target leaves the penalty domain")
    d = np.diff(u0.u, axis=1)
    mono = np.all(d > 0, axis=1) | np.all(d < 0, axis=1)
    if not np.all(mono):
        bad = int(np.argmin(mono))
        raise PreimageError(f"preimage not unique: u0(t_{bad}, .) is not strictly monotone")
    y = np.empty_like(target_psi)
    for k, level in enumerate(target_psi):
        pre = invert_field(u0.u[k], u0.x_nodes, float(level))
        if pre is None:
            return _infinite(target_psi, f"level {level:.6g} outside the field range at node {k}")
        y[k] = pre
    phi_tilde = y - x0
    if abs(phi_tilde[0]) > 1e-9 * max(1.0, abs(x0)):
        return _infinite(target_psi, "preimage does not start at x0", phi_tilde)
    phi_tilde[0] = 0.0
    res = lambda_rate(c, bounds, x0, phi_tilde, grid, **kwargs)
    res.target = target_psi
    res.phi_tilde = phi_tilde
    return res
