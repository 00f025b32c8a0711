"""Coefficient sets for the forward-backward system and their validation.

Coefficients are arbitrary user callables, so the boundedness and Lipschitz
assumptions are checked by probing, not symbolically. All callables must
accept numpy arrays elementwise and must not keep hidden mutable state: the
simulation code evaluates them on whole batches, possibly from several
threads.

``b, h, sigma, Phi`` take ``x``; ``f, g`` take ``(t, x, y, z)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gcore import VolBounds

__all__ = [
    "CoefficientSet",
    "ValidationReport",
    "validate_coefficients",
    "get_preset",
    "preset_bounds",
    "PRESET_NAMES",
]

Scalar1 = Callable[[np.ndarray], np.ndarray]
Driver = Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _zero1(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def _one1(x):
    return np.ones_like(np.asarray(x, dtype=float))


def _identity(x):
    return np.asarray(x, dtype=float) * 1.0


def _zero_driver(t, x, y, z):
    return np.zeros(np.broadcast(np.asarray(x), np.asarray(y), np.asarray(z)).shape)


@dataclass(frozen=True)
class CoefficientSet:
    b: Scalar1 = _zero1
    h: Scalar1 = _zero1
    sigma: Scalar1 = _one1
    Phi: Scalar1 = _identity
    f: Driver = _zero_driver
    g: Driver = _zero_driver
    lipschitz_L: float = 1.0
    bound_L: float = 1.0
    name: str = "custom"

    def replace(self, **changes) -> "CoefficientSet":
        return dataclasses.replace(self, **changes)


@dataclass
class ValidationReport:
    max_abs_b: float
    max_abs_h: float
    max_abs_sigma: float
    min_sigma: float
    lipschitz_quotients: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_abs_b": self.max_abs_b,
            "max_abs_h": self.max_abs_h,
            "max_abs_sigma": self.max_abs_sigma,
            "min_sigma": self.min_sigma,
            "lipschitz_quotients": dict(self.lipschitz_quotients),
            "failures": list(self.failures),
        }


def _quotient(num, den):
    den = np.asarray(den, dtype=float)
    mask = den > 1e-12
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(num[mask]) / den[mask]))


def validate_coefficients(c: CoefficientSet, probe_lo: float, probe_hi: float,
                          n_probes: int, seed: int, *, margin: float = 1e-6,
                          t_range: tuple[float, float] = (0.0, 1.0)) -> ValidationReport:
    """Probe boundedness and Lipschitz constants of a coefficient set.

    Boundedness of ``b, h, sigma`` is probed on a uniform grid plus random
    points of ``[probe_lo, probe_hi]``. Lipschitz quotients use random pairs:
    the drift block ``|db| + |dh| + |dsigma|`` is checked jointly against
    ``|dx|``, ``Phi`` against ``|dx|``, and ``f, g`` against
    ``|dx| + |dy| + |dz|`` at a common random time. The report carries
    failures instead of raising.
    """
    if not probe_lo < probe_hi:
        raise ValueError("probe_lo must be < probe_hi")
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0EF]))
    xs = np.concatenate([np.linspace(probe_lo, probe_hi, max(n_probes, 2)),
                         rng.uniform(probe_lo, probe_hi, n_probes)])
    b_vals = np.asarray(c.b(xs), dtype=float)
    h_vals = np.asarray(c.h(xs), dtype=float)
    s_vals = np.asarray(c.sigma(xs), dtype=float)
    report = ValidationReport(
        max_abs_b=float(np.max(np.abs(b_vals))),
        max_abs_h=float(np.max(np.abs(h_vals))),
        max_abs_sigma=float(np.max(np.abs(s_vals))),
        min_sigma=float(np.min(s_vals)),
    )
    bound = c.bound_L * (1.0 + margin)
    for name, val in (("b", report.max_abs_b), ("h", report.max_abs_h),
                      ("sigma", report.max_abs_sigma)):
        if not np.isfinite(val) or val > bound:
            report.failures.append(f"|{name}| reaches {val:.6g} > bound_L={c.bound_L}")
    if not report.min_sigma > 0.0:
        report.failures.append(f"sigma not bounded below by a positive constant (min {report.min_sigma:.6g})")

    x1 = rng.uniform(probe_lo, probe_hi, n_probes)
    x2 = rng.uniform(probe_lo, probe_hi, n_probes)
    y1 = rng.uniform(probe_lo, probe_hi, n_probes)
    y2 = rng.uniform(probe_lo, probe_hi, n_probes)
    z1 = rng.uniform(probe_lo, probe_hi, n_probes)
    z2 = rng.uniform(probe_lo, probe_hi, n_probes)
    t = rng.uniform(t_range[0], t_range[1], n_probes)
    dx = np.abs(x1 - x2)
    dxyz = dx + np.abs(y1 - y2) + np.abs(z1 - z2)

    drift_block = (np.abs(c.b(x1) - c.b(x2)) + np.abs(c.h(x1) - c.h(x2))
                   + np.abs(c.sigma(x1) - c.sigma(x2)))
    quotients = {
        "b+h+sigma": _quotient(drift_block, dx),
        "Phi": _quotient(np.asarray(c.Phi(x1)) - c.Phi(x2), dx),
        "f": _quotient(np.asarray(c.f(t, x1, y1, z1)) - c.f(t, x2, y2, z2), dxyz),
        "g": _quotient(np.asarray(c.g(t, x1, y1, z1)) - c.g(t, x2, y2, z2), dxyz),
    }
    report.lipschitz_quotients = quotients
    lip = c.lipschitz_L * (1.0 + margin)
    for name, q in quotients.items():
        if not np.isfinite(q) or q > lip:
            report.failures.append(f"Lipschitz quotient of {name} is {q:.6g} > L={c.lipschitz_L}")
    return report


# presets ------------------------------------------------------------------

def _flat() -> CoefficientSet:
    return CoefficientSet(lipschitz_L=1.0, bound_L=1.0, name="flat")


def _tanh_b(x):
    return np.tanh(x)


def _tanh_h(x):
    return 0.1 * np.cos(x)


def _tanh_sigma(x):
    return 1.0 + 0.5 * np.cos(x) ** 2


def _tanh_f(t, x, y, z):
    return -np.asarray(y, dtype=float) + np.sin(x)


def _tanh_g(t, x, y, z):
    return 0.5 * np.cos(y) + 0.0 * np.asarray(x, dtype=float)


def _tanh_drift() -> CoefficientSet:
    return CoefficientSet(b=_tanh_b, h=_tanh_h, sigma=_tanh_sigma, Phi=np.arctan,
                          f=_tanh_f, g=_tanh_g, lipschitz_L=2.0, bound_L=2.0,
                          name="tanh-drift")


def _classical() -> CoefficientSet:
    return _tanh_drift().replace(name="classical")


_PRESETS = {
    "flat": (_flat, VolBounds(1.0, 4.0)),
    "tanh-drift": (_tanh_drift, VolBounds(1.0, 4.0)),
    # same coefficients, no volatility uncertainty
    "classical": (_classical, VolBounds(1.0, 1.0)),
}

PRESET_NAMES = tuple(_PRESETS)


def get_preset(name: str) -> CoefficientSet:
    try:
        return _PRESETS[name][0]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}") from None


def preset_bounds(name: str) -> VolBounds:
    """Default volatility interval shipped with a preset."""
    if name not in _PRESETS:
        raise KeyError(f"unknown preset {name!r}")
    return _PRESETS[name][1]
