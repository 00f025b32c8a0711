"""Forward G-SDE per scenario, its small-noise limit, and the forward error.

The SDE ``dX = b(X) dt + eps h(X) d<B> + eps sigma(X) dB`` is stepped with
explicit Euler-Maruyama on the increments of a :class:`~gldp.paths.GPath`.
The noise-free limit ``phi' = b(phi)`` is integrated with classical RK4.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coeffs import CoefficientSet
from .gcore import ScenarioSamples, sublinear_expectation
from .paths import GPath, Scenario, TimeGrid

__all__ = [
    "ForwardSolution",
    "LimitForward",
    "BlowUpError",
    "BLOWUP_LIMIT",
    "solve_forward",
    "euler_maruyama",
    "solve_limit_ode",
    "rk4_flow_step",
    "forward_error",
    "forward_error_from_sups",
]

BLOWUP_LIMIT = 1e6


class BlowUpError(ArithmeticError):
    """State left the blow-up guard or became non-finite."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        super().__init__(f"blow-up at step {step}{': ' + detail if detail else ''}")


@dataclass(frozen=True)
class ForwardSolution:
    x0: float
    eps: float
    scenario_id: int
    path_index: int
    x: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class LimitForward:
    phi: np.ndarray

    @property
    def x0(self) -> float:
        return float(self.phi[0])


def euler_maruyama(c: CoefficientSet, eps: float, x0, b_incr: np.ndarray,
                   qv_incr: np.ndarray, dt: float) -> np.ndarray:
    """Vectorised Euler-Maruyama over a batch.

    ``b_incr`` has shape ``(..., n_steps)``; ``qv_incr`` broadcasts against it.
    Returns states with shape ``(..., n_steps + 1)``.
    """
    b_incr = np.asarray(b_incr, dtype=float)
    qv_incr = np.broadcast_to(np.asarray(qv_incr, dtype=float), b_incr.shape)
    n = b_incr.shape[-1]
    x = np.empty(b_incr.shape[:-1] + (n + 1,))
    x[..., 0] = x0
    cur = x[..., 0].copy()
    for k in range(n):
        cur = (cur + c.b(cur) * dt + eps * c.h(cur) * qv_incr[..., k]
               + eps * c.sigma(cur) * b_incr[..., k])
        if not np.all(np.abs(cur) <= BLOWUP_LIMIT):
            raise BlowUpError(k + 1, "state non-finite or beyond 1e6")
        x[..., k + 1] = cur
    return x


def solve_forward(c: CoefficientSet, eps: float, x0: float, path: GPath,
                  scenario: Scenario, grid: TimeGrid) -> ForwardSolution:
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    if path.b_incr.shape != (grid.n_steps,) or path.qv_incr.shape != (grid.n_steps,):
        raise ValueError("path length does not match the grid")
    x = euler_maruyama(c, eps, float(x0), path.b_incr, path.qv_incr, grid.dt)
    return ForwardSolution(float(x0), float(eps), scenario.id, path.path_index, x)


def rk4_flow_step(b, x, dt: float):
    """One RK4 step of ``x' = b(x)``."""
    k1 = b(x)
    k2 = b(x + 0.5 * dt * k1)
    k3 = b(x + 0.5 * dt * k2)
    k4 = b(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def solve_limit_ode(c: CoefficientSet, x0, grid: TimeGrid) -> LimitForward:
    """RK4 solution of ``phi' = b(phi)``, ``phi_s = x0``.

    ``x0`` may be an array, in which case ``phi`` has shape
    ``(n_steps + 1,) + x0.shape``.
    """
    x = np.asarray(x0, dtype=float)
    phi = np.empty((grid.n_steps + 1,) + x.shape)
    phi[0] = x
    for k in range(grid.n_steps):
        x = rk4_flow_step(c.b, x, grid.dt)
        phi[k + 1] = x
    return LimitForward(phi)


def forward_error_from_sups(sup_abs: dict, p: float) -> float:
    """Sublinear expectation of ``sup_t |X - phi|^p`` from per-path sups."""
    return sublinear_expectation(ScenarioSamples((sid, np.asarray(v) ** p)
                                                 for sid, v in sup_abs.items()))


def forward_error(batch: Sequence[ForwardSolution], phi: LimitForward, p: float = 2.0) -> float:
    """``E^[sup_t |X_t - phi_t|^p]`` with the sup over the scenarios in the batch."""
    if p < 2:
        raise ValueError("p must be >= 2")
    if not batch:
        raise ValueError("empty batch")
    groups: dict[int, list[float]] = {}
    for sol in batch:
        if sol.x.shape != phi.phi.shape:
            raise ValueError("forward path and limit path lengths differ")
        groups.setdefault(sol.scenario_id, []).append(float(np.max(np.abs(sol.x - phi.phi))))
    return forward_error_from_sups({sid: np.array(v) for sid, v in sorted(groups.items())}, p)
