"""Single-particle propagation kernels for the quadratic (Delta = 0) chain.

All roughness formulas only need the transition probabilities
``p_ij(t) = |U_ij(t)|^2`` of the single-particle propagator.  Three
variants are provided:

* :class:`BesselKernel` -- infinite chain, ``p_r = J_r(Jt)^2``;
* :class:`FiniteKernel` -- exact propagator of an ``L x L`` hopping matrix;
* :class:`DispersionKernel` -- translation-invariant kernel for the dispersion
  ``eps(k) = -J cos k - J2 cos 2k`` by uniform quadrature (FFT).
"""

from __future__ import annotations

import enum
import math

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammaln

from .model import Boundary, ChainModel

FINITE_CAP = 2048

# ascending series is used below this argument, backward recurrence above
_SERIES_MAX_X = 1.0
_SERIES_TERMS = 30
_RESCALE_AT = 1e200
_RESCALE_EVERY = 8


# --------------------------------------------------------------------------
# Bessel functions of the first kind, integer order
# --------------------------------------------------------------------------

def _bessel_series(nmax: int, x: np.ndarray) -> np.ndarray:
    """J_0..J_nmax from the ascending series; accurate for x < ~1."""
    n = np.arange(nmax + 1, dtype=float)[:, None]
    out = np.zeros((nmax + 1, x.size))
    pos = x > 0
    out[0, ~pos] = 1.0
    if not pos.any():
        return out
    xp = x[pos][None, :]
    lead = np.exp(n * np.log(xp / 2.0) - gammaln(n + 1.0))
    q = -(xp * xp) / 4.0
    term = np.ones_like(lead)
    total = np.ones_like(lead)
    for k in range(1, _SERIES_TERMS):
        term = term * q / (k * (n + k))
        total += term
    out[:, pos] = lead * total
    return out


def _bessel_miller(nmax: int, x: np.ndarray) -> np.ndarray:
    """J_0..J_nmax by backward recurrence, normalized with J_0 + 2 sum J_2k = 1."""
    top = max(float(nmax), float(x.max()))
    start = int(top + 30 + 10 * top ** (1.0 / 3.0))
    start += start % 2
    out = np.zeros((nmax + 1, x.size))
    upper = np.zeros(x.size)
    cur = np.full(x.size, 1e-30)
    norm = np.zeros(x.size)
    two_over_x = 2.0 / x
    for k in range(start, 0, -1):
        # cur = J_k (unnormalized)
        if k <= nmax:
            out[k] = cur
        if k % 2 == 0:
            norm += 2.0 * cur
        upper, cur = cur, k * two_over_x * cur - upper
        if k % _RESCALE_EVERY == 0:
            big = np.abs(cur) > _RESCALE_AT
            if big.any():
                s = np.where(big, 1.0 / _RESCALE_AT, 1.0)
                cur *= s
                upper *= s
                norm *= s
                if k <= nmax + 1:
                    out[k - 1:] *= s
    out[0] = cur
    norm += cur
    return out / norm


def bessel_j_band(nmax: int, x) -> np.ndarray:
    """J_n(x) for n = 0..nmax.

    Returns an array of shape ``(nmax + 1,) + np.shape(x)``.  Backward
    (Miller) recurrence is used for ``x >= 1``, the ascending series below.
    """
    if nmax < 0:
        raise ValueError("nmax must be >= 0")
    xa = np.asarray(x, dtype=float)
    flat = np.atleast_1d(xa).ravel()
    if np.any(flat < 0) or not np.all(np.isfinite(flat)):
        raise ValueError("Bessel argument must be finite and >= 0")
    out = np.empty((nmax + 1, flat.size))
    small = flat < _SERIES_MAX_X
    if small.any():
        out[:, small] = _bessel_series(nmax, flat[small])
    if (~small).any():
        out[:, ~small] = _bessel_miller(nmax, flat[~small])
    return out.reshape((nmax + 1,) + xa.shape)


def bessel_weight(r: int, x):
    """Return J_r(x)^2 (symmetric under r -> -r)."""
    r = abs(int(r))
    w = bessel_j_band(r, x)[r] ** 2
    return float(w) if np.ndim(w) == 0 else w


# --------------------------------------------------------------------------
# Kernels
# --------------------------------------------------------------------------

class KernelVariant(str, enum.Enum):
    BESSEL_INFINITE = "BesselInfinite"
    FINITE_EXACT = "FiniteExact"
    DISPERSION_QUADRATURE = "DispersionQuadrature"


class Kernel:
    """Common interface: ``memory(ell, t)`` returns sum_{i,j in seg} |U_ij(t)|^2."""

    variant: KernelVariant

    def memory(self, ell: int, t, offset: int | None = None) -> np.ndarray:
        raise NotImplementedError

    def pair_weight(self, i: int, j: int, t) -> np.ndarray:
        """|U_ij(t)|^2."""
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kernel": self.variant.value}


def _relative_memory(weights: np.ndarray, ell: int) -> np.ndarray:
    """sum_{r=-(ell-1)}^{ell-1} (ell - |r|) p_r from p_r, r >= 0 (axis 0)."""
    mult = np.concatenate([[ell], 2.0 * (ell - np.arange(1, ell))])
    return np.tensordot(mult, weights[:ell], axes=(0, 0))


class BesselKernel(Kernel):
    """Infinite nearest-neighbour chain: p_r(t) = J_r(Jt)^2."""

    variant = KernelVariant.BESSEL_INFINITE

    def __init__(self, J: float = 1.0):
        self.J = float(J)

    def weights(self, t, rmax: int) -> np.ndarray:
        return bessel_j_band(rmax, self.J * np.asarray(t, dtype=float)) ** 2

    def memory(self, ell, t, offset=None):
        return _relative_memory(self.weights(t, ell - 1), ell)

    def pair_weight(self, i, j, t):
        return bessel_weight(i - j, self.J * np.asarray(t, dtype=float))

    def describe(self):
        return {"kernel": self.variant.value, "J": self.J}


class FiniteKernel(Kernel):
    """Exact single-particle propagator of a finite chain.

    The hopping matrix has ``J/2`` on the first and ``J2/2`` on the second
    off-diagonals (wrapped for periodic boundaries).  It is diagonalized once;
    ``U(t) = V exp(-i w t) V^T`` for any ``t``.
    """

    variant = KernelVariant.FINITE_EXACT

    def __init__(self, model: ChainModel, cap: int = FINITE_CAP):
        if not model.quadratic:
            raise ValueError("finite kernel requires Delta = 0")
        if model.L > cap:
            raise ValueError(f"L={model.L} exceeds finite-kernel cap {cap}")
        self.model = model
        self.hopping = hopping_matrix(model)
        self.energies, self.vectors = np.linalg.eigh(self.hopping)

    @property
    def L(self) -> int:
        return self.model.L

    def propagator(self, t: float, rows=None) -> np.ndarray:
        v = self.vectors if rows is None else self.vectors[np.asarray(rows)]
        return (v * np.exp(-1j * self.energies * t)) @ self.vectors.T

    def matrix(self, t: float) -> np.ndarray:
        """|U_ij(t)|^2 as an L x L array."""
        return np.abs(self.propagator(t)) ** 2

    def memory(self, ell, t, offset=None):
        if offset is None:
            offset = (self.L - ell) // 2
        if ell < 1 or offset < 0 or offset + ell > self.L:
            raise ValueError(f"segment (ell={ell}, offset={offset}) exceeds chain of {self.L} sites")
        vs = self.vectors[offset:offset + ell]
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty(ts.size)
        for n, tn in enumerate(ts):
            u = (vs * np.exp(-1j * self.energies * tn)) @ vs.T
            out[n] = np.sum(u.real**2 + u.imag**2)
        return out.reshape(np.shape(t))

    def pair_weight(self, i, j, t):
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        vi, vj = self.vectors[i], self.vectors[j]
        out = np.array([abs(np.sum(vi * vj * np.exp(-1j * self.energies * tn))) ** 2 for tn in ts])
        return out.reshape(np.shape(t))

    def describe(self):
        m = self.model
        return {"kernel": self.variant.value, "L": m.L, "J": m.J, "J2": m.J2,
                "boundary": m.boundary.value}


def hopping_matrix(model: ChainModel) -> np.ndarray:
    L = model.L
    h = np.zeros((L, L))
    periodic = model.boundary is Boundary.PERIODIC
    for dist, amp in ((1, model.J / 2.0), (2, model.J2 / 2.0)):
        if amp == 0.0:
            continue
        for i in range(L):
            j = i + dist
            if j >= L:
                if not periodic:
                    continue
                j -= L
            if i == j:
                continue
            h[i, j] += amp
            h[j, i] += amp
    return h


def _dispersion(k, J, J2):
    return -J * np.cos(k) - J2 * np.cos(2 * k)


def required_grid(J: float, J2: float, r: int, t: float) -> int:
    """Grid-size heuristic below which the quadrature is rejected."""
    return int(math.ceil(4 * (abs(r) + abs(J) * t + 2 * abs(J2) * t)))


def dispersion_kernel(J: float, J2: float, r: int, t: float, nk: int = 256) -> complex:
    """U_r(t) = int dk/2pi exp(-i eps(k) t + i k r), uniform quadrature on [-pi, pi)."""
    if nk < 64 or nk % 2:
        raise ValueError("nk must be even and >= 64")
    if nk < required_grid(J, J2, r, t):
        raise ValueError(f"nk={nk} too small for r={r}, t={t}; need >= {required_grid(J, J2, r, t)}")
    k = -np.pi + 2 * np.pi * np.arange(nk) / nk
    return complex(np.mean(np.exp(-1j * _dispersion(k, J, J2) * t + 1j * k * r)))


class DispersionKernel(Kernel):
    """Translation-invariant kernel for eps(k) = -J cos k - J2 cos 2k.

    All U_r(t) at one time come from a single FFT of exp(-i eps(k) t); the
    grid is chosen large enough that the periodic images of the light cone do
    not overlap the requested range of r.
    """

    variant = KernelVariant.DISPERSION_QUADRATURE

    def __init__(self, J: float = 1.0, J2: float = 0.0, nk: int | None = None):
        self.J = float(J)
        self.J2 = float(J2)
        self.nk = nk

    def _grid(self, rmax: int, t: float) -> int:
        need = max(64, 2 * required_grid(self.J, self.J2, rmax, t) + 64)
        if self.nk is not None:
            if self.nk < need:
                raise ValueError(f"nk={self.nk} too small for r={rmax}, t={t}")
            return self.nk
        return 1 << (need - 1).bit_length()

    def amplitudes(self, t: float, rmax: int) -> np.ndarray:
        """U_r(t) for r = 0..rmax."""
        nk = self._grid(rmax, t)
        k = 2 * np.pi * np.arange(nk) / nk
        u = np.fft.ifft(np.exp(-1j * _dispersion(k, self.J, self.J2) * t))
        return u[: rmax + 1]

    def weights(self, t, rmax: int) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        w = np.stack([np.abs(self.amplitudes(tn, rmax)) ** 2 for tn in ts], axis=1)
        return w.reshape((rmax + 1,) + np.shape(t))

    def memory(self, ell, t, offset=None):
        return _relative_memory(self.weights(t, ell - 1), ell)

    def pair_weight(self, i, j, t):
        r = abs(i - j)
        return self.weights(t, r)[r]

    def describe(self):
        return {"kernel": self.variant.value, "J": self.J, "J2": self.J2}


# --------------------------------------------------------------------------
# Velocities
# --------------------------------------------------------------------------

def group_velocity(k, J: float, J2: float):
    return J * np.sin(k) + 2 * J2 * np.sin(2 * k)


def _velocity_breakpoints(J: float, J2: float, scan: int = 1024) -> list[float]:
    """0, pi and the sign changes of v(k) inside (0, pi)."""
    k = np.linspace(0.0, np.pi, scan + 2)[1:-1]
    v = group_velocity(k, J, J2)
    pts = [0.0]
    for a, b, va, vb in zip(k[:-1], k[1:], v[:-1], v[1:]):
        if va == 0.0:
            pts.append(float(a))
        elif va * vb < 0:
            pts.append(optimize.brentq(group_velocity, a, b, args=(J, J2), xtol=1e-15))
    pts.append(np.pi)
    return sorted(set(pts))


def effective_velocity(J: float, J2: float) -> float:
    """Momentum average of |v(k)|, v(k) = J sin k + 2 J2 sin 2k."""
    if J == 0 and J2 == 0:
        return 0.0
    scale = max(abs(J), abs(J2))
    pts = _velocity_breakpoints(J, J2)
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(lambda k: abs(group_velocity(k, J, J2)), a, b,
                                epsabs=1e-14 * scale, epsrel=1e-13, limit=200)
        total += val
    # |v| is even in k, so the [0, pi] integral is half the full period
    return total / np.pi


def max_group_velocity(J: float, J2: float) -> float:
    k = np.linspace(0.0, np.pi, 4097)
    k0 = k[np.argmax(np.abs(group_velocity(k, J, J2)))]
    res = optimize.minimize_scalar(lambda q: -abs(group_velocity(q, J, J2)),
                                   bounds=(max(0.0, k0 - 1e-3), min(np.pi, k0 + 1e-3)),
                                   method="bounded", options={"xatol": 1e-12})
    return float(max(-res.fun, np.abs(group_velocity(k, J, J2)).max()))


def make_kernel(variant: str | KernelVariant, *, J: float = 1.0, J2: float = 0.0,
                L: int | None = None, boundary: str = "open") -> Kernel:
    variant = KernelVariant(variant)
    if variant is KernelVariant.BESSEL_INFINITE:
        if J2 != 0:
            raise ValueError("Bessel kernel requires J2 = 0; use DispersionQuadrature")
        return BesselKernel(J)
    if variant is KernelVariant.DISPERSION_QUADRATURE:
        return DispersionKernel(J, J2)
    if L is None:
        raise ValueError("finite kernel needs L")
    return FiniteKernel(ChainModel(L=L, J=J, J2=J2, boundary=boundary))


__all__ = [
    "bessel_j_band", "bessel_weight", "KernelVariant", "Kernel", "BesselKernel",
    "FiniteKernel", "DispersionKernel", "hopping_matrix", "dispersion_kernel",
    "required_grid", "group_velocity", "effective_velocity", "max_group_velocity",
    "make_kernel", "FINITE_CAP",
]
