"""Family-Vicsek analysis of roughness families.

Curves are compared in log-log coordinates: ``x = t / ell^z`` and
``Y = W / ell^alpha``.  The collapse objective is the mean, over a common
log-x grid on the mutual support of all curves, of the across-curve variance
of ``ln Y`` (population variance).  Curves are interpolated with monotone
piecewise cubics in (ln x, ln Y).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize, minimize_scalar

from .analytic import CrossoverScales, RoughnessSeries

logger = logging.getLogger(__name__)

DEFAULT_T_MIN = 5.0
DEFAULT_X_MAX = 0.2
PLATEAU_GROWTH_TOL = 0.01
Z_BOUNDS = (0.5, 2.0)
COHERENT_RATIO = 5.0
DISSIPATIVE_RATIO = 4.0 / math.pi**2


class CollapseError(ValueError):
    """Raised for degenerate inputs to the collapse analysis."""


class Regime(str, enum.Enum):
    COHERENT = "CoherentCollapse"
    DISSIPATION_DOMINATED = "DissipationDominated"
    MIXED = "Mixed"


@dataclass
class RescaledCurve:
    ell: int
    x: np.ndarray
    Y: np.ndarray


@dataclass
class ScalingFit:
    alpha: float
    beta: float
    z: float
    objective: float
    window: tuple[float, float]
    x_star: float = math.nan
    uncertainty: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def alpha_over_beta(self) -> float:
        return self.alpha / self.beta if self.beta else math.nan


@dataclass
class RegimeReport:
    label: Regime
    ratio_max: float  # t_Gamma / t*(ell_max)
    ratio_min: float  # t_Gamma / t*(ell_min)
    objective_x: float
    objective_y: float
    residual_x: dict
    residual_y: dict

    @property
    def empirical(self) -> str:
        """Which rescaling collapses better: ``"x"`` (Jt/ell) or ``"y"`` (Gamma t)."""
        if not (np.isfinite(self.objective_x) or np.isfinite(self.objective_y)):
            return "undetermined"
        return "y" if self.objective_y < self.objective_x else "x"


def rescale(series: Sequence[RoughnessSeries], alpha: float, z: float, *,
            time_scale: float = 1.0, t_min: float = 0.0) -> list[RescaledCurve]:
    """Map each series to ``x = time_scale * t / ell^z`` and ``Y = W / ell^alpha``.

    Points with ``t <= t_min`` or non-positive ``t`` or ``W`` are dropped
    (they have no log coordinates).
    """
    if not series:
        raise CollapseError("no series given")
    curves = []
    for s in series:
        keep = (s.times > 0) & (s.times >= t_min) & (s.W > 0)
        if keep.sum() < 2:
            raise CollapseError(f"series ell={s.ell} has fewer than 2 usable points")
        curves.append(RescaledCurve(s.ell, time_scale * s.times[keep] / float(s.ell) ** z,
                                    s.W[keep] / float(s.ell) ** alpha))
    if len({c.ell for c in curves}) > 1:
        lo = max(c.x[0] for c in curves)
        hi = min(c.x[-1] for c in curves)
        if not lo < hi:
            raise CollapseError("x-ranges of the rescaled curves do not overlap")
    return curves


def _common_grid(curves, window, points):
    lo = max(c.x[0] for c in curves)
    hi = min(c.x[-1] for c in curves)
    if window is not None:
        lo = max(lo, window[0])
        hi = min(hi, window[1])
    if not lo < hi:
        raise CollapseError("fewer than 2 curves at every grid point")
    return np.linspace(math.log(lo), math.log(hi), points)


def _log_curves(curves, window, points):
    grid = _common_grid(curves, window, points)
    return np.array([PchipInterpolator(np.log(c.x), np.log(c.Y))(grid) for c in curves])


def collapse_objective(curves: Sequence[RescaledCurve], window: tuple[float, float] | None = None,
                       points: int = 64) -> float:
    """Mean across-curve variance of ln Y on the mutual log-x support."""
    if len(curves) < 2:
        raise CollapseError("objective needs at least two curves")
    logs = _log_curves(curves, window, points)
    return float(logs.var(axis=0).mean())


def curve_residuals(curves: Sequence[RescaledCurve], window=None, points: int = 64) -> dict:
    """Per-curve mean squared deviation of ln Y from the across-curve mean."""
    logs = _log_curves(curves, window, points)
    dev = ((logs - logs.mean(axis=0)) ** 2).mean(axis=1)
    return {c.ell: float(v) for c, v in zip(curves, dev)}


def _objective_or_inf(series, alpha, z, t_min, **kw) -> float:
    try:
        return collapse_objective(rescale(series, alpha, z, t_min=t_min), **kw)
    except CollapseError:
        return math.inf


def plateau_exponent(series: Sequence[RoughnessSeries], tol: float = PLATEAU_GROWTH_TOL
                     ) -> tuple[float, float, np.ndarray]:
    """alpha and intercept from ln W_sat against ln ell; W_sat is the last sample.

    Raises when any curve still grows by more than ``tol`` per decade of time
    at the end of its grid.
    """
    for s in series:
        t_end = s.times[-1]
        ref = np.interp(t_end / 10.0, s.times, s.W) if t_end / 10.0 >= s.times[0] else None
        if ref is None:
            # extrapolate the final log-slope over a decade
            slope = np.log(s.W[-1] / s.W[-2]) / np.log(s.times[-1] / s.times[-2])
            growth = 10.0**slope - 1.0
        else:
            growth = s.W[-1] / ref - 1.0 if ref > 0 else math.inf
        if growth > tol:
            raise CollapseError(f"no plateau detected for ell={s.ell} "
                                f"(still growing {100 * growth:.2f}% per decade)")
    ells = np.array([s.ell for s in series], dtype=float)
    wsat = np.array([s.W[-1] for s in series])
    slope, intercept = np.polyfit(np.log(ells), np.log(wsat), 1)
    return float(slope), float(intercept), wsat


def _fit_z(series, alpha, t_min, search, z_bounds, grid_points):
    if search == "grid":
        zs = np.linspace(*z_bounds, grid_points)
        vals = np.array([_objective_or_inf(series, alpha, z, t_min) for z in zs])
        if not np.isfinite(vals).any():
            raise CollapseError("no z in range gives overlapping curves")
        k = int(np.argmin(vals))  # first minimum, i.e. the smaller z on ties
        lo = zs[max(k - 1, 0)]
        hi = zs[min(k + 1, zs.size - 1)]
        if hi > lo:
            res = minimize_scalar(lambda z: _objective_or_inf(series, alpha, z, t_min),
                                  bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-6})
            if res.fun <= vals[k]:
                return float(res.x), float(res.fun)
        return float(zs[k]), float(vals[k])
    if search == "simplex":
        res = minimize(lambda v: _objective_or_inf(series, alpha, float(v[0]), t_min),
                       x0=[1.0], method="Nelder-Mead",
                       options={"xatol": 1e-6, "fatol": 1e-14})
        z = float(np.clip(res.x[0], *z_bounds))
        return z, _objective_or_inf(series, alpha, z, t_min)
    raise ValueError(f"unknown search {search!r}")


def _fit_growth(series, alpha, z, t_min, x_max):
    """Pooled ln Y = ln A + beta ln x over the growth window."""
    curves = rescale(series, alpha, z, t_min=t_min)
    x = np.concatenate([c.x for c in curves])
    Y = np.concatenate([c.Y for c in curves])
    keep = x <= x_max
    if keep.sum() < 3:
        return math.nan, math.nan, (math.nan, x_max)
    lx, ly = np.log(x[keep]), np.log(Y[keep])
    if np.ptp(ly) < 1e-9 * max(1.0, np.abs(ly).max()):
        return math.nan, math.nan, (float(x[keep].min()), x_max)
    beta, lnA = np.polyfit(lx, ly, 1)
    return float(beta), float(math.exp(lnA)), (float(x[keep].min()), x_max)


def _fit_once(series, *, t_min, x_max, search, z_bounds, grid_points, plateau_tol):
    alpha, intercept, wsat = plateau_exponent(series, plateau_tol)
    z, obj = _fit_z(series, alpha, t_min, search, z_bounds, grid_points)
    beta, A, window = _fit_growth(series, alpha, z, t_min, x_max)
    # plateau level in collapsed units
    C = float(np.mean(wsat / np.array([s.ell for s in series], float) ** alpha))
    x_star = (C / A) ** (1.0 / beta) if beta and np.isfinite(beta) and beta > 0 else math.nan
    return alpha, beta, z, obj, window, x_star, C, A


def fit_exponents(series: Sequence[RoughnessSeries], search: str = "grid", *,
                  t_min: float = DEFAULT_T_MIN, x_max: float = DEFAULT_X_MAX,
                  z_bounds: tuple[float, float] = Z_BOUNDS, grid_points: int = 151,
                  plateau_tol: float = PLATEAU_GROWTH_TOL, bootstrap: bool = True) -> ScalingFit:
    """Fit (alpha, beta, z) and the growth/plateau intersection x*.

    ``t_min`` removes the microscopic transient (in the units of the series
    times); ``x_max`` bounds the growth window in collapsed coordinates.
    """
    series = sorted(series, key=lambda s: s.ell)
    ells = [s.ell for s in series]
    if len(set(ells)) < 3:
        raise CollapseError("need at least 3 distinct segment lengths")
    if ells[-1] < 4 * ells[0]:
        raise CollapseError("segment lengths must span at least a factor 4")
    if not 0 < x_max:
        raise CollapseError("degenerate growth window")
    kw = dict(t_min=t_min, x_max=x_max, search=search, z_bounds=z_bounds,
              grid_points=grid_points, plateau_tol=plateau_tol)
    alpha, beta, z, obj, window, x_star, C, A = _fit_once(series, **kw)
    flags = []
    if not np.isfinite(beta):
        flags.append("beta_undefined")
    diagnostics = {"plateau_level": C, "growth_amplitude": A,
                   "residuals": curve_residuals(rescale(series, alpha, z, t_min=t_min))}
    uncertainty = {}
    if bootstrap and len(series) >= 4:
        samples = []
        for k in range(len(series)):
            subset = series[:k] + series[k + 1:]
            try:
                sub = _fit_once(subset, **kw)
                samples.append((sub[0], sub[1], sub[2], sub[5]))
            except CollapseError as exc:
                logger.info("bootstrap subset without ell=%d failed: %s", series[k].ell, exc)
        if samples:
            arr = np.array(samples)
            spread = {}
            for j, (name, val) in enumerate((("alpha", alpha), ("beta", beta), ("z", z),
                                             ("x_star", x_star))):
                col = arr[:, j][np.isfinite(arr[:, j])]
                lo, hi = (float(col.min()), float(col.max())) if col.size else (math.nan, math.nan)
                spread[name] = (lo, hi)
                uncertainty[name] = max(abs(hi - val), abs(val - lo))
            diagnostics["bootstrap"] = spread
    return ScalingFit(alpha, beta, z, obj, window, x_star, uncertainty, flags, diagnostics)


def classify_regime(series: Sequence[RoughnessSeries], scales: Sequence[CrossoverScales], *,
                    Gamma: float, coherent_ratio: float = COHERENT_RATIO,
                    dissipative_ratio: float = DISSIPATIVE_RATIO, t_min: float = 1.0
                    ) -> RegimeReport:
    """Label a family by t_Gamma / t* and compare the two one-parameter collapses.

    ``scales`` holds the crossover scales of every series.  The x collapse uses
    ``(alpha, z) = (1/2, 1)``; the y collapse uses ``alpha = 1/2`` with time
    measured as ``Gamma t``.  The default dissipative threshold ``4/pi^2`` is
    equivalent to ``ell_min >= pi J / (2 Gamma)`` for the nearest-neighbour chain.
    """
    t_star = [s.t_star for s in scales]
    if Gamma <= 0:
        ratio_max = ratio_min = math.inf
        label = Regime.COHERENT
    else:
        t_gamma = 1.0 / Gamma
        ratio_max = t_gamma / max(t_star)
        ratio_min = t_gamma / min(t_star)
        if ratio_max >= coherent_ratio:
            label = Regime.COHERENT
        elif ratio_min <= dissipative_ratio:
            label = Regime.DISSIPATION_DOMINATED
        else:
            label = Regime.MIXED
    obj_x = obj_y = math.nan
    res_x: dict = {}
    res_y: dict = {}
    if len(series) >= 2:
        try:
            cx = rescale(series, 0.5, 1.0, t_min=t_min)
            obj_x, res_x = collapse_objective(cx), curve_residuals(cx)
        except CollapseError:
            obj_x = math.inf
        if Gamma > 0:
            try:
                cy = rescale(series, 0.5, 0.0, time_scale=Gamma, t_min=t_min)
                obj_y, res_y = collapse_objective(cy), curve_residuals(cy)
            except CollapseError:
                obj_y = math.inf
    return RegimeReport(label, ratio_max, ratio_min, obj_x, obj_y, res_x, res_y)


__all__ = [
    "CollapseError", "Regime", "RescaledCurve", "ScalingFit", "RegimeReport", "rescale",
    "collapse_objective", "curve_residuals", "plateau_exponent", "fit_exponents",
    "classify_regime", "DEFAULT_T_MIN", "DEFAULT_X_MAX",
]
