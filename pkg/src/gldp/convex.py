"""Convex penalties, their proximal maps and Yosida approximations.

The subdifferential of a penalty is never stored as a set. Every consumer
works with the resolvent ``prox(p, lam, .) = (I + lam dPi)^{-1}`` and the
Yosida approximation ``(y - prox(y)) / lam``, both single-valued everywhere.
Membership of a pair ``(y, u)`` in the graph of the subdifferential is checked
by :func:`subgradient_residual` on a set of probe points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ConvexPenalty",
    "zero_penalty",
    "indicator_interval",
    "abs_scaled",
    "quadratic",
    "generic_penalty",
    "penalty_from_config",
    "prox",
    "yosida",
    "subgradient_residual",
    "default_probes",
    "project_domain",
]

_INF = math.inf
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ConvexPenalty:
    """Proper l.s.c. convex ``Pi`` with ``Pi >= Pi(0) = 0``.

    Use the factory functions rather than constructing this directly.
    """

    kind: str
    a: float = -_INF
    b: float = _INF
    kappa: float = 0.0
    user_eval: Optional[Callable] = None
    subgrad_bound: float = 1.0

    @property
    def dom_lo(self) -> float:
        return self.a

    @property
    def dom_hi(self) -> float:
        return self.b

    def eval(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "zero":
            out = np.zeros_like(y)
        elif self.kind == "indicator_interval":
            out = np.where((y >= self.a) & (y <= self.b), 0.0, _INF)
        elif self.kind == "abs_scaled":
            out = self.kappa * np.abs(y)
        elif self.kind == "quadratic":
            out = 0.5 * self.kappa * y * y
        else:
            out = np.asarray(self.user_eval(y), dtype=float)
            out = np.where((y >= self.a) & (y <= self.b), out, _INF)
        return float(out) if out.ndim == 0 else out

    def __call__(self, y):
        return self.eval(y)

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "indicator_interval":
            d.update(a=self.a, b=self.b)
        elif self.kind in ("abs_scaled", "quadratic"):
            d["kappa"] = self.kappa
        return d


def zero_penalty() -> ConvexPenalty:
    return ConvexPenalty("zero")


def indicator_interval(a: float, b: float) -> ConvexPenalty:
    """``Pi = 0`` on ``[a, b]`` and ``+inf`` outside; needs ``a <= 0 <= b``."""
    a, b = float(a), float(b)
    if not a <= 0.0 <= b:
        raise ValueError(f"indicator interval [{a}, {b}] must contain 0")
    return ConvexPenalty("indicator_interval", a=a, b=b)


def abs_scaled(kappa: float) -> ConvexPenalty:
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    return ConvexPenalty("abs_scaled", kappa=float(kappa))


def quadratic(kappa: float) -> ConvexPenalty:
    """``Pi(y) = kappa * y**2 / 2``."""
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    return ConvexPenalty("quadratic", kappa=float(kappa))


def generic_penalty(fn: Callable, dom_lo: float = -_INF, dom_hi: float = _INF,
                    subgrad_bound: float = 1.0) -> ConvexPenalty:
    """Wrap a user convex function (elementwise on arrays) as a penalty.

    ``subgrad_bound`` seeds the prox bracket and is doubled as needed.
    """
    if dom_lo > dom_hi:
        raise ValueError("empty domain")
    return ConvexPenalty("generic", a=float(dom_lo), b=float(dom_hi), user_eval=fn,
                         subgrad_bound=float(subgrad_bound))


def penalty_from_config(cfg) -> ConvexPenalty:
    """Build a penalty from ``{"kind": ..., <params>}`` or a bare tag."""
    if cfg is None:
        return zero_penalty()
    if isinstance(cfg, str):
        cfg = {"kind": cfg}
    kind = cfg.get("kind", "zero")
    if kind == "zero":
        return zero_penalty()
    if kind == "indicator_interval":
        return indicator_interval(cfg.get("a", -_INF), cfg.get("b", _INF))
    if kind == "abs_scaled":
        return abs_scaled(cfg["kappa"])
    if kind == "quadratic":
        return quadratic(cfg["kappa"])
    raise ValueError(f"unknown penalty kind {kind!r}")


def _shape_out(out):
    return float(out) if np.ndim(out) == 0 else out


def _generic_prox(p: ConvexPenalty, lam: float, y: np.ndarray) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y, dtype=float))

    def obj(v, yy):
        return p.eval(v) + (v - yy) ** 2 / (2.0 * lam)

    lo_dom, hi_dom = p.dom_lo, p.dom_hi
    s = max(p.subgrad_bound, 1e-8)
    half = lam * s * np.ones_like(y)
    lo = np.clip(y - half, lo_dom, hi_dom)
    hi = np.clip(y + half, lo_dom, hi_dom)
    # expand until the convex objective is bracketed: each end is either on
    # the domain boundary or the objective decreases into a non-empty interval
    for _ in range(200):
        eta = 1e-9 * np.maximum(1.0, hi - lo)
        wide = hi > lo
        f_lo, f_lo_in = obj(lo, y), obj(np.minimum(lo + eta, hi), y)
        f_hi, f_hi_in = obj(hi, y), obj(np.maximum(hi - eta, lo), y)
        left_ok = (lo <= lo_dom) | (wide & (f_lo >= f_lo_in))
        right_ok = (hi >= hi_dom) | (wide & (f_hi >= f_hi_in))
        if np.all(left_ok & right_ok):
            break
        half = np.where(left_ok & right_ok, half, 2.0 * half)
        lo = np.where(left_ok, lo, np.clip(y - half, lo_dom, hi_dom))
        hi = np.where(right_ok, hi, np.clip(y + half, lo_dom, hi_dom))
    else:
        raise ArithmeticError("prox bracketing did not terminate")

    a, b = lo.copy(), hi.copy()
    for _ in range(400):
        if not np.any(b - a > 1e-12):
            break
        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        left = obj(c, y) <= obj(d, y)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    v = 0.5 * (a + b)
    if not np.all(np.isfinite(obj(v, y))):
        raise ValueError("generic penalty has an empty effective domain")
    return v


def prox(p: ConvexPenalty, lam: float, y):
    """``argmin_v Pi(v) + (v - y)^2 / (2 lam)``; elementwise on arrays."""
    if not lam > 0:
        raise ValueError(f"prox step must be > 0, got {lam}")
    y = np.asarray(y, dtype=float)
    if p.kind == "zero":
        out = y * 1.0
    elif p.kind == "indicator_interval":
        out = np.clip(y, p.a, p.b)
    elif p.kind == "abs_scaled":
        t = lam * p.kappa
        out = np.sign(y) * np.maximum(np.abs(y) - t, 0.0)
    elif p.kind == "quadratic":
        out = y / (1.0 + lam * p.kappa)
    else:
        out = _generic_prox(p, lam, y).reshape(y.shape)
    return _shape_out(out)


def yosida(p: ConvexPenalty, lam: float, y):
    """``(y - prox(p, lam, y)) / lam``.

    Built-in kinds use closed forms that are mathematically identical but
    monotone in floating point, so the monotonicity of the subdifferential
    survives rounding.
    """
    if not lam > 0:
        raise ValueError(f"prox step must be > 0, got {lam}")
    y = np.asarray(y, dtype=float)
    if p.kind == "zero":
        out = np.zeros_like(y)
    elif p.kind == "indicator_interval":
        out = (y - np.clip(y, p.a, p.b)) / lam
    elif p.kind == "abs_scaled":
        out = np.clip(y / lam, -p.kappa, p.kappa)
    elif p.kind == "quadratic":
        out = p.kappa * (y / (1.0 + lam * p.kappa))
    else:
        out = (y - np.asarray(prox(p, lam, y))) / lam
    return _shape_out(out)


def project_domain(p: ConvexPenalty, y):
    """Nearest point of the closed domain ``[dom_lo, dom_hi]``."""
    return _shape_out(np.clip(np.asarray(y, dtype=float), p.dom_lo, p.dom_hi))


def default_probes(center=0.0, *, width: float = 10.0, n: int = 2001) -> np.ndarray:
    """Probe set for residual checks: a uniform sweep plus points near ``center``."""
    offsets = np.logspace(-8, 1, 37)
    return np.concatenate([np.linspace(-width, width, n),
                           center + offsets, center - offsets])


def subgradient_residual(p: ConvexPenalty, y: float, u: float, probes) -> float:
    """``max_v (u (v - y) + Pi(y) - Pi(v))^+`` over the probes.

    Zero means ``(y, u)`` passes the graph-membership test. A ``y`` outside
    the domain gives ``+inf``.
    """
    probes = np.asarray(probes, dtype=float).ravel()
    if probes.size == 0:
        raise ValueError("probes must be non-empty")
    py = p.eval(y)
    if not math.isfinite(py):
        return _INF
    pv = np.asarray(p.eval(probes), dtype=float)
    finite = np.isfinite(pv)
    if not np.any(finite):
        return 0.0
    gaps = u * (probes[finite] - y) + py - pv[finite]
    return float(max(0.0, np.max(gaps)))
