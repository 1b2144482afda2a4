"""Chain and reservoir parameters, and the product-form steady state.

The steady state of the gain/loss Lindbladian is diagonal in the sigma^z basis
and independent of the coherent couplings::

    rho_SS = prod_l diag(zeta, 1) / (1 + zeta),   zeta = gamma_p / gamma_l

Basis convention (shared with :mod:`fvxxz.oracle`): site 0 is the leftmost
tensor factor, the single-site basis is ``(up, down)``, and "occupied" in the
fermion language means spin up.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

DENSE_CAP = 10


class Boundary(str, enum.Enum):
    OPEN = "open"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class ChainModel:
    """Coherent parameters of the (J, Delta, J2) spin chain.

    ``J`` sets the energy unit; times are measured in ``1/J``.
    """

    L: int
    J: float = 1.0
    Delta: float = 0.0
    J2: float = 0.0
    boundary: Boundary = Boundary.OPEN

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"L must be an integer >= 2, got {self.L!r}")
        if not self.J > 0:
            raise ValueError(f"J must be positive, got {self.J!r}")
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @property
    def quadratic(self) -> bool:
        return self.Delta == 0.0


@dataclass(frozen=True)
class DissipationSpec:
    """Homogeneous loss (``gamma_l``) and gain (``gamma_p``) rates."""

    gamma_l: float
    gamma_p: float

    def __post_init__(self):
        if self.gamma_l < 0 or self.gamma_p < 0:
            raise ValueError("rates must be non-negative")

    @classmethod
    def from_zeta(cls, gamma_l: float, zeta: float) -> "DissipationSpec":
        return cls(gamma_l=gamma_l, gamma_p=zeta * gamma_l)

    @property
    def Gamma(self) -> float:
        return self.gamma_l + self.gamma_p

    @property
    def zeta(self) -> float:
        if self.gamma_l <= 0:
            raise ValueError("fugacity undefined for gamma_l = 0")
        return self.gamma_p / self.gamma_l

    @property
    def n_bar(self) -> float:
        z = self.zeta
        return z / (1.0 + z)


@dataclass(frozen=True)
class SegmentSpec:
    """Segment of ``ell`` consecutive sites starting at ``offset``."""

    ell: int
    offset: int

    @classmethod
    def centered(cls, ell: int, L: int) -> "SegmentSpec":
        return cls(ell=ell, offset=(L - ell) // 2).validated(L)

    def validated(self, L: int) -> "SegmentSpec":
        if self.ell < 1 or self.ell > L:
            raise ValueError(f"segment length {self.ell} outside [1, {L}]")
        if self.offset < 0 or self.offset + self.ell > L:
            raise ValueError(f"segment [{self.offset}, {self.offset + self.ell}) exceeds chain of {L} sites")
        return self

    @property
    def sites(self) -> range:
        return range(self.offset, self.offset + self.ell)


def ness_local_magnetization(d: DissipationSpec) -> float:
    """Uniform steady-state <sigma^z_l> = (zeta - 1) / (zeta + 1)."""
    z = d.zeta
    return (z - 1.0) / (z + 1.0)


def _occupations(L: int) -> np.ndarray:
    """(2^L, L) array, 1 where the site is spin up in the basis state."""
    idx = np.arange(2**L)
    bits = (idx[:, None] >> (L - 1 - np.arange(L))[None, :]) & 1
    return 1 - bits


def ness_diagonal(L: int, d: DissipationSpec, *, method: str = "product") -> np.ndarray:
    """Diagonal of rho_SS in the computational basis.

    ``method="product"`` builds the tensor product of one-site states;
    ``method="sectors"`` sums ``zeta^M`` over magnetization sectors.
    """
    z = d.zeta
    if method == "product":
        diag = np.ones(1)
        site = np.array([z, 1.0]) / (1.0 + z)
        for _ in range(L):
            diag = np.kron(diag, site)
        return diag
    if method == "sectors":
        up = _occupations(L).sum(axis=1)
        out = np.zeros(2**L)
        for M in range(L + 1):
            out[up == M] = z**M
        return out / (1.0 + z) ** L
    raise ValueError(f"unknown method {method!r}")


def ness_density_matrix(m: ChainModel | int, d: DissipationSpec, *, cap: int = DENSE_CAP,
                        method: str = "product") -> np.ndarray:
    """Dense steady-state density matrix on the 2^L Hilbert space.

    ``m`` may be a :class:`ChainModel` or a bare site count (the steady
    state does not depend on the couplings).
    """
    L = m.L if isinstance(m, ChainModel) else int(m)
    if L > cap:
        raise ValueError(f"L={L} exceeds dense cap {cap}")
    return np.diag(ness_diagonal(L, d, method=method))


def static_segment_variance(ell: int, n_bar: float) -> float:
    """Var_SS(N_ell) = ell * n_bar * (1 - n_bar) for the product steady state."""
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if not 0.0 <= n_bar <= 1.0:
        raise ValueError("n_bar must lie in [0, 1]")
    # <N^2> = ell n + ell (ell - 1) n^2, minus <N>^2
    return ell * n_bar * (1.0 - n_bar)


def segment_mean_magnetization(ell: int, d: DissipationSpec) -> float:
    """<Sigma_ell>_SS with Sigma_ell = (1/2) sum_{j in seg} sigma^z_j."""
    return 0.5 * ell * ness_local_magnetization(d)


__all__ = [
    "Boundary", "ChainModel", "DissipationSpec", "SegmentSpec", "DENSE_CAP",
    "ness_local_magnetization", "ness_diagonal", "ness_density_matrix",
    "static_segment_variance", "segment_mean_magnetization",
]
