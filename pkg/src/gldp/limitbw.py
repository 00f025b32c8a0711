"""Deterministic limit of the backward equation and its decreasing G-martingale.

The limit pair ``(psi, U)`` solves the backward differential inclusion

    -dpsi + U dt = [f(t, phi, psi, 0) + 2 G(g(t, phi, psi, 0))] dt,
    psi_T = Phi(phi_T),  U in dPi(psi),

which is stepped backward with a semi-implicit proximal Euler scheme. The
driver is explicit, evaluated at ``psi_{k+1}``, and the subdifferential is
implicit through one prox per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coeffs import CoefficientSet
from .convex import (ConvexPenalty, default_probes, project_domain, prox, subgradient_residual,
                     yosida)
from .forward import LimitForward
from .gcore import VolBounds, g_function
from .paths import GPath, TimeGrid

__all__ = [
    "LimitBackward",
    "LimitMartingale",
    "solve_limit_backward",
    "backward_sweep",
    "limit_driver_g",
    "martingale_increments",
    "build_limit_martingale",
    "graph_residuals",
]


@dataclass(frozen=True)
class LimitBackward:
    psi: np.ndarray
    u_sel: np.ndarray
    predictor: np.ndarray

    def penalty_integral(self, p: ConvexPenalty, grid: TimeGrid) -> float:
        """Left-point sum of ``Pi(psi_k) dt`` over the cells."""
        return float(np.sum(np.asarray(p.eval(self.psi[:-1])) * grid.dt))


@dataclass(frozen=True)
class LimitMartingale:
    m: np.ndarray


def backward_sweep(c: CoefficientSet, p: ConvexPenalty, bounds: VolBounds,
                   phi: np.ndarray, grid: TimeGrid):
    """Proximal backward Euler along ``phi`` (nodes on axis 0).

    Extra trailing axes of ``phi`` are treated as independent problems.
    Returns ``(psi, u_sel, predictor)``; ``u_sel`` and ``predictor`` live on
    cells.
    """
    phi = np.asarray(phi, dtype=float)
    n, dt = grid.n_steps, grid.dt
    t = grid.nodes
    psi = np.empty_like(phi)
    u_sel = np.empty((n,) + phi.shape[1:])
    pred = np.empty_like(u_sel)
    psi[n] = project_domain(p, c.Phi(phi[n]))
    zero = np.zeros(phi.shape[1:])
    for k in range(n - 1, -1, -1):
        nxt = psi[k + 1]
        drive = c.f(t[k], phi[k], nxt, zero) + 2.0 * g_function(c.g(t[k], phi[k], nxt, zero), bounds)
        pred[k] = nxt + dt * drive
        psi[k] = prox(p, dt, pred[k])
        u_sel[k] = yosida(p, dt, pred[k])
    return psi, u_sel, pred


def solve_limit_backward(c: CoefficientSet, p: ConvexPenalty, phi: LimitForward,
                         grid: TimeGrid, bounds: VolBounds) -> LimitBackward:
    """Solve the limit backward inclusion along the limit forward path.

    The terminal node is ``psi_T = Phi(phi_T)``. When that value lies
    outside the penalty domain, it is replaced by its projection onto the
    domain, so every node of ``psi`` is feasible.
    """
    if phi.phi.shape != (grid.n_steps + 1,):
        raise ValueError("limit path does not match the grid")
    psi, u_sel, pred = backward_sweep(c, p, bounds, phi.phi, grid)
    return LimitBackward(psi, u_sel, pred)


def graph_residuals(p: ConvexPenalty, lb: LimitBackward, probes=None) -> np.ndarray:
    """Subgradient residual of every ``(psi_k, u_k)`` pair (cells only)."""
    out = np.empty(lb.u_sel.shape[0])
    for k in range(out.size):
        pr = default_probes(lb.psi[k]) if probes is None else probes
        out[k] = subgradient_residual(p, float(lb.psi[k]), float(lb.u_sel[k]), pr)
    return out


def limit_driver_g(c: CoefficientSet, phi: LimitForward, psi: LimitBackward,
                   grid: TimeGrid) -> np.ndarray:
    """``g(t_k, phi_k, psi_k, 0)`` on the cells."""
    t = grid.nodes[:-1]
    return np.asarray(c.g(t, phi.phi[:-1], psi.psi[:-1], np.zeros(grid.n_steps)), dtype=float)


def martingale_increments(g_vals: np.ndarray, qv_incr, bounds: VolBounds, dt: float) -> np.ndarray:
    """``g d<B> - 2 G(g) dt`` per cell, written as
    ``g+ (d<B> - sigma_hi_sq dt) - g- (d<B> - sigma_lo_sq dt)``.

    The two forms agree exactly in real arithmetic. The second makes every
    increment non-positive in floating point, and exactly zero when ``d<B>``
    equals the matching extreme.
    """
    gp = np.maximum(g_vals, 0.0)
    gm = np.maximum(-g_vals, 0.0)
    qv = np.asarray(qv_incr, dtype=float)
    return gp * (qv - bounds.sigma_hi_sq * dt) - gm * (qv - bounds.sigma_lo_sq * dt)


def build_limit_martingale(c: CoefficientSet, phi: LimitForward, psi: LimitBackward,
                           path: GPath, grid: TimeGrid, bounds: VolBounds) -> LimitMartingale:
    g_vals = limit_driver_g(c, phi, psi, grid)
    inc = martingale_increments(g_vals, path.qv_incr, bounds, grid.dt)
    m = np.zeros(inc.shape[:-1] + (inc.shape[-1] + 1,))
    np.cumsum(inc, axis=-1, out=m[..., 1:])
    return LimitMartingale(m)
