"""Family-Vicsek scaling of magnetization fluctuations in driven-dissipative XXZ chains."""

__version__ = "0.1.0"

from .analytic import (Evolution, RoughnessSeries, crossover_scales, fH_asymptote, fL_asymptote,
                       kappa2_lindblad_xx, kappa2_unitary_xx, roughness_series, time_grid)
from .collapse import Regime, ScalingFit, classify_regime, collapse_objective, fit_exponents, rescale
from .freefermion import (BesselKernel, DispersionKernel, FiniteKernel, KernelVariant,
                          bessel_weight, effective_velocity, make_kernel)
from .model import Boundary, ChainModel, DissipationSpec, SegmentSpec, ness_diagonal

__all__ = [
    "Evolution", "RoughnessSeries", "crossover_scales", "fH_asymptote", "fL_asymptote",
    "kappa2_lindblad_xx", "kappa2_unitary_xx", "roughness_series", "time_grid",
    "Regime", "ScalingFit", "classify_regime", "collapse_objective", "fit_exponents", "rescale",
    "BesselKernel", "DispersionKernel", "FiniteKernel", "KernelVariant", "bessel_weight",
    "effective_velocity", "make_kernel",
    "Boundary", "ChainModel", "DissipationSpec", "SegmentSpec", "ness_diagonal",
]
