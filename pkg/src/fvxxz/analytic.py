"""Closed-form roughness of the quadratic chain and its asymptotics.

For Delta = 0 the second cumulant of the transferred segment magnetization is

    kappa2(ell, t) = 2 n(1-n) [ ell - exp(-Gamma t) * sum_{i,j in seg} |U_ij(t)|^2 ]

which for a translation-invariant kernel reduces to the relative-coordinate
sum ``sum_r (ell - |r|) p_r(t)``.  ``Gamma = 0`` is the unitary quench.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .freefermion import BesselKernel, Kernel, effective_velocity
from .model import ChainModel, DissipationSpec


class Evolution(str, enum.Enum):
    UNITARY = "Unitary"
    LINDBLAD = "Lindblad"


@dataclass
class RoughnessSeries:
    """W(ell, t) = sqrt(kappa2) on a time grid for one segment length."""

    ell: int
    times: np.ndarray
    W: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.W = np.asarray(self.W, dtype=float)
        if self.times.shape != self.W.shape or self.times.ndim != 1:
            raise ValueError("times and W must be 1-d arrays of equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.W < 0) or not np.all(np.isfinite(self.W)):
            raise ValueError("W must be finite and non-negative")


@dataclass(frozen=True)
class CrossoverScales:
    ell: int
    t_star: float
    t_gamma: float
    ell_c: float


def time_grid(kind: str = "geometric", t_min: float = 0.01, t_max: float = 1e3,
              points: int = 200, include_zero: bool = False) -> np.ndarray:
    if points < 2 or not t_max > t_min or t_min < 0:
        raise ValueError("invalid time grid")
    if kind == "geometric":
        if t_min <= 0:
            raise ValueError("geometric grid needs t_min > 0")
        grid = np.geomspace(t_min, t_max, points)
    elif kind == "linear":
        grid = np.linspace(t_min, t_max, points)
    else:
        raise ValueError(f"unknown grid kind {kind!r}")
    if include_zero and grid[0] > 0:
        grid = np.concatenate([[0.0], grid])
    return grid


def kappa2_lindblad_xx(ell: int, t, n_bar: float, Gamma: float, kernel: Kernel | None = None,
                       offset: int | None = None):
    """Second cumulant under Lindblad evolution with total rate ``Gamma``."""
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if Gamma < 0:
        raise ValueError("Gamma must be >= 0")
    kernel = BesselKernel() if kernel is None else kernel
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    memory = kernel.memory(ell, t, offset)
    if Gamma:
        memory = np.exp(-Gamma * t) * memory
    k2 = 2.0 * n_bar * (1.0 - n_bar) * (ell - memory)
    return float(k2) if k2.ndim == 0 else k2


def kappa2_unitary_xx(ell: int, t, n_bar: float, kernel: Kernel | None = None,
                      offset: int | None = None):
    """Second cumulant after a unitary quench from the steady state."""
    return kappa2_lindblad_xx(ell, t, n_bar, 0.0, kernel, offset)


def roughness_series(ell: int, times, n_bar: float, Gamma: float = 0.0,
                     kernel: Kernel | None = None, offset: int | None = None,
                     meta: dict | None = None) -> RoughnessSeries:
    kernel = BesselKernel() if kernel is None else kernel
    times = np.asarray(times, dtype=float)
    k2 = np.atleast_1d(kappa2_lindblad_xx(ell, times, n_bar, Gamma, kernel, offset))
    info = {"evolution": (Evolution.LINDBLAD if Gamma > 0 else Evolution.UNITARY).value,
            "n_bar": n_bar, "Gamma": Gamma, **kernel.describe()}
    info.update(meta or {})
    # negative values are roundoff at t ~ 0
    return RoughnessSeries(ell, times, np.sqrt(np.clip(k2, 0.0, None)), info)


def damped_connected_correlator(i: int, j: int, t, n_bar: float, Gamma: float,
                                kernel: Kernel):
    """<n_i(t) n_j>_SS - n^2 = n(1-n) exp(-Gamma t) |U_ij(t)|^2."""
    t = np.asarray(t, dtype=float)
    val = n_bar * (1.0 - n_bar) * np.exp(-Gamma * t) * kernel.pair_weight(i, j, t)
    return float(val) if np.ndim(val) == 0 else val


def fH_asymptote(x, n_bar: float, branch: str):
    """Unitary scaling-function asymptotes: ``growth`` (x << 1) or ``plateau``."""
    p = n_bar * (1.0 - n_bar)
    if branch == "growth":
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise ValueError("growth branch needs x > 0")
        val = np.sqrt(4.0 / np.pi * p * x)
        return float(val) if val.ndim == 0 else val
    if branch == "plateau":
        return math.sqrt(2.0 * p)
    raise ValueError(f"unknown branch {branch!r}")


class AsymptoteValue(NamedTuple):
    branch: str  # "growth", "plateau" or "crossover"
    value: float | None


def fL_asymptote(x: float, y: float, n_bar: float, small: float = 0.1,
                 large: float = 10.0) -> AsymptoteValue:
    """Two-parameter asymptote f_L(x, y); ``value`` is None in the crossover region."""
    if x < 0 or y < 0:
        raise ValueError("x and y must be >= 0")
    if x >= large or y >= large:
        return AsymptoteValue("plateau", fH_asymptote(x, n_bar, "plateau"))
    if x <= small and y <= small:
        if x == 0:
            return AsymptoteValue("growth", 0.0)
        return AsymptoteValue("growth", fH_asymptote(x, n_bar, "growth"))
    return AsymptoteValue("crossover", None)


def crossover_scales(ell: int, model: ChainModel, dissipation: DissipationSpec | None = None
                     ) -> CrossoverScales:
    """Coherent time ell / vbar, dissipative time 1/Gamma and threshold pi J / (2 Gamma)."""
    if ell < 1:
        raise ValueError("ell must be >= 1")
    vbar = effective_velocity(model.J, model.J2)
    t_star = ell / vbar if vbar > 0 else math.inf
    Gamma = 0.0 if dissipation is None else dissipation.Gamma
    t_gamma = math.inf if Gamma == 0 else 1.0 / Gamma
    ell_c = math.inf if Gamma == 0 else math.pi * model.J / (2.0 * Gamma)
    return CrossoverScales(ell=ell, t_star=t_star, t_gamma=t_gamma, ell_c=ell_c)


__all__ = [
    "Evolution", "RoughnessSeries", "CrossoverScales", "time_grid",
    "kappa2_lindblad_xx", "kappa2_unitary_xx", "roughness_series",
    "damped_connected_correlator", "fH_asymptote", "AsymptoteValue",
    "fL_asymptote", "crossover_scales",
]
