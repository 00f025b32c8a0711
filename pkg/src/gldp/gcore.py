"""G function, scenario-based sublinear expectation and capacity.

A sublinear expectation is represented as the supremum of linear expectations
over a family of probability measures. Here every measure is a volatility
scenario, and the linear expectation under a scenario is the sample mean of
the Monte Carlo draws generated under it. The family size is always reported
alongside an estimate, since nothing is claimed about how well a finite family
approximates the full set of measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "VolBounds",
    "ScenarioSamples",
    "SublinearEstimate",
    "g_function",
    "sublinear_expectation",
    "capacity",
    "scenario_means",
    "stable_mean",
]


@dataclass(frozen=True)
class VolBounds:
    """Volatility-uncertainty interval ``[sigma_lo_sq, sigma_hi_sq]``.

    Both values are variances per unit time. Only the non-degenerate case
    ``0 < sigma_lo_sq <= sigma_hi_sq`` is supported.
    """

    sigma_lo_sq: float
    sigma_hi_sq: float

    def __post_init__(self):
        lo, hi = float(self.sigma_lo_sq), float(self.sigma_hi_sq)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("sigma_lo_sq and sigma_hi_sq must be finite")
        if lo <= 0.0:
            raise ValueError(f"sigma_lo_sq must be > 0, got {lo}")
        if lo > hi:
            raise ValueError(f"sigma_lo_sq ({lo}) must not exceed sigma_hi_sq ({hi})")
        object.__setattr__(self, "sigma_lo_sq", lo)
        object.__setattr__(self, "sigma_hi_sq", hi)

    @property
    def sigma_hi(self) -> float:
        return math.sqrt(self.sigma_hi_sq)

    @property
    def sigma_lo(self) -> float:
        return math.sqrt(self.sigma_lo_sq)

    @property
    def is_classical(self) -> bool:
        return self.sigma_lo_sq == self.sigma_hi_sq


def g_function(a, bounds: VolBounds):
    """Evaluate ``G(a) = (sigma_hi_sq * a^+ - sigma_lo_sq * a^-) / 2``.

    Works elementwise on arrays; scalars in, float out.
    """
    arr = np.asarray(a, dtype=float)
    out = 0.5 * (bounds.sigma_hi_sq * np.maximum(arr, 0.0)
                 - bounds.sigma_lo_sq * np.maximum(-arr, 0.0))
    if out.ndim == 0:
        return float(out)
    return out


def stable_mean(values) -> float:
    """Correctly rounded mean (``math.fsum``), independent of summation order."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("cannot average an empty sample")
    return math.fsum(arr.tolist()) / arr.size


class ScenarioSamples:
    """Samples of one random variable, grouped by scenario id.

    Parameters
    ----------
    per_scenario : mapping or iterable of ``(scenario_id, samples)``
        Every id must be unique and every sample array non-empty.
    """

    def __init__(self, per_scenario: Mapping[int, Sequence[float]] | Iterable):
        items = per_scenario.items() if isinstance(per_scenario, Mapping) else per_scenario
        data: dict[int, np.ndarray] = {}
        for sid, samples in items:
            sid = int(sid)
            if sid in data:
                raise ValueError(f"duplicate scenario id {sid}")
            arr = np.asarray(samples, dtype=float).ravel()
            if arr.size == 0:
                raise ValueError(f"scenario {sid} has no samples")
            data[sid] = arr
        self._data = data

    def __len__(self) -> int:
        return len(self._data)

    def __iter__(self):
        return iter(self._data.items())

    def ids(self) -> list[int]:
        return list(self._data)

    def __getitem__(self, sid: int) -> np.ndarray:
        return self._data[sid]

    def map(self, fn) -> "ScenarioSamples":
        """Apply ``fn`` samplewise, keeping the scenario grouping."""
        return ScenarioSamples((sid, fn(arr)) for sid, arr in self._data.items())

    def combine(self, other: "ScenarioSamples", fn) -> "ScenarioSamples":
        if self.ids() != other.ids():
            raise ValueError("paired samples must share scenario ids")
        return ScenarioSamples((sid, fn(arr, other[sid])) for sid, arr in self)


@dataclass(frozen=True)
class SublinearEstimate:
    value: float
    argmax_scenario_id: int
    family_size: int
    means: dict


def scenario_means(samples: ScenarioSamples) -> dict[int, float]:
    if len(samples) == 0:
        raise ValueError("no scenarios")
    return {sid: stable_mean(arr) for sid, arr in samples}


def _sup(samples: ScenarioSamples) -> SublinearEstimate:
    means = scenario_means(samples)
    # first maximiser in id order, so ties resolve deterministically
    best = max(means, key=lambda sid: (means[sid], -sid))
    return SublinearEstimate(means[best], best, len(means), means)


def sublinear_expectation(samples: ScenarioSamples, *, detail: bool = False):
    """Maximum over scenarios of the per-scenario sample mean.

    With ``detail=True`` a :class:`SublinearEstimate` carrying the maximising
    scenario and the family size is returned instead of the bare float.
    """
    est = _sup(samples)
    return est if detail else est.value


def capacity(indicators: ScenarioSamples, *, detail: bool = False):
    """Maximum over scenarios of the hit frequency of an event."""
    for sid, arr in indicators:
        if not np.all((arr == 0.0) | (arr == 1.0)):
            raise ValueError(f"scenario {sid} carries non-indicator samples")
    est = _sup(indicators)
    return est if detail else est.value
