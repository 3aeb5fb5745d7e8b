"""Closed-form multifractal exponents of the Gibbs measure of a log-correlated field.

All functions are pure. ``beta2`` is the squared inverse temperature, ``q > 1``
the moment order and ``d`` the dimension. Boundary points of the piecewise
formulas belong to the branch on the larger-``beta2`` side; the formulas are
continuous, so this only matters for the regime label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import ParameterError

SUPPORTED_DIMS = (1, 2)


@dataclass(frozen=True)
class ModelParams:
    """Model parameters ``(beta2, q, d)``.

    Dimensions other than 1 and 2 are rejected unless ``allow_any_dim`` is
    set; the formulas themselves hold for every ``d``, only field synthesis is
    restricted.
    """

    beta2: float
    q: float
    d: int = 1
    allow_any_dim: bool = False

    def __post_init__(self):
        if not math.isfinite(self.beta2) or self.beta2 < 0:
            raise ParameterError(f"beta2 must be finite and >= 0, got {self.beta2!r}")
        if not math.isfinite(self.q) or self.q <= 1:
            raise ParameterError(f"q must be > 1, got {self.q!r}")
        if int(self.d) != self.d or self.d < 1:
            raise ParameterError(f"d must be a positive integer, got {self.d!r}")
        if not self.allow_any_dim and self.d not in SUPPORTED_DIMS:
            raise ParameterError(f"d must be 1 or 2, got {self.d!r}")

    @property
    def beta(self) -> float:
        return math.sqrt(self.beta2)


class RegimeLabel(str, Enum):
    HIGH_TEMP = "HighTemp"
    INTERMEDIATE = "Intermediate"
    FROZEN = "Frozen"


@dataclass(frozen=True)
class Regime:
    label: RegimeLabel
    boundary_pre: float
    boundary_freeze: float


def classify_regime(p: ModelParams) -> Regime:
    """Regime of the annealed exponent.

    >>> classify_regime(ModelParams(0.4, 2, 1)).label.value
    'HighTemp'
    """
    pre = 2 * p.d / (2 * p.q - 1)
    freeze = 2.0 * p.d
    if p.beta2 < pre:
        label = RegimeLabel.HIGH_TEMP
    elif p.beta2 < freeze:
        label = RegimeLabel.INTERMEDIATE
    else:
        label = RegimeLabel.FROZEN
    return Regime(label, pre, freeze)


# Branch functions of the annealed exponent, evaluated for any beta2.
def simple_scaling(beta2: float, q: float) -> float:
    return -beta2 * q * q / 2 + beta2 * q / 2


def prefreezing_branch(beta2: float, q: float, d: int) -> float:
    return (2 * d - beta2) ** 2 / (8 * beta2) - d * (q - 1)


def frozen_branch(q: float, d: int) -> float:
    return -d * (q - 1)


def annealed_exponent(p: ModelParams) -> float:
    """Decay exponent of ``E[Z(q beta) / Z(beta)^q]`` as eps -> 0."""
    label = classify_regime(p).label
    if label is RegimeLabel.HIGH_TEMP:
        return simple_scaling(p.beta2, p.q)
    if label is RegimeLabel.INTERMEDIATE:
        return prefreezing_branch(p.beta2, p.q, p.d)
    return frozen_branch(p.q, p.d)


def quenched_boundaries(p: ModelParams) -> tuple[float, float]:
    return 2 * p.d / p.q**2, 2.0 * p.d


def quenched_exponent(p: ModelParams) -> float:
    """Almost-sure decay exponent of ``Z(q beta) / Z(beta)^q``."""
    lo, hi = quenched_boundaries(p)
    if p.beta2 < lo:
        return simple_scaling(p.beta2, p.q)
    if p.beta2 < hi:
        return p.d - math.sqrt(2 * p.d) * p.beta * p.q + p.beta2 * p.q / 2
    return frozen_branch(p.q, p.d)


def participation_exponent(p: ModelParams) -> float:
    """Decay exponent of the expected participation sum ``E[sum_i w_i^q]``.

    Equals ``annealed_exponent + d(q-1)``. The probabilistic reading (chance
    that ``q`` independent Gibbs draws coincide) needs integer ``q``, but any
    real ``q > 1`` is accepted. The frozen-regime value 0 is the known limit
    and is slightly stronger than what is proven for the annealed exponent.
    """
    if classify_regime(p).label is RegimeLabel.FROZEN:
        return 0.0
    return annealed_exponent(p) + p.d * (p.q - 1)


def tilt_parameter(p: ModelParams) -> float:
    """Optimal tilt fraction ``c = min(1, (1/2 + d/beta2) / q)``."""
    if p.beta2 == 0:
        raise ParameterError("tilt parameter is undefined at beta2 = 0")
    return min(1.0, (0.5 + p.d / p.beta2) / p.q)


def girsanov_prefactor_exponent(beta2: float, q: float, c: float) -> float:
    """log-eps coefficient of the prefactor produced by tilting with fraction c."""
    return -(beta2 * q * q / 2) * (1 - (1 - c) ** 2) + beta2 * q / 2
