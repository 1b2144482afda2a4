"""Exact Lindblad dynamics of small chains and the counting-field generating function.

Vectorization is row-major (``vec(rho)[a * d + b] = rho[a, b]``, numpy's
``reshape``), so ``vec(A X B) = (A kron B^T) vec(X)`` and the generator reads

    -i (H kron 1 - 1 kron H^T) + sum_k [ A_k kron A_k^* - 1/2 (A_k^+ A_k kron 1)
                                         - 1/2 (1 kron (A_k^+ A_k)^T) ]

The generator commutes with the charge ``q = M(ket) - M(bra)`` (number of up
spins), so evolution is carried out block by block.  Diagonal operators --
the twisted steady state, ``N_ell rho``, product initial states -- live in the
``q = 0`` block of dimension ``binom(2L, L)``.

Two jump conventions are supported:

``"spin"``
    ``sqrt(gamma_l) sigma^-_l`` and ``sqrt(gamma_p) sigma^+_l``.
``"fermion"``
    the Jordan-Wigner dressed operators ``c_l``, ``c_l^+`` (a string
    ``prod_{m<l} (-sigma^z_m)`` in front).  The steady state is the same, and
    for Delta = 0 the Lindbladian is then quadratic, so the damped
    free-fermion kernel is exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .model import Boundary, ChainModel, DissipationSpec, SegmentSpec, ness_diagonal

logger = logging.getLogger(__name__)

HAMILTONIAN_CAP = 12
LIOUVILLE_CAP = 7
LIOUVILLE_HARD_CAP = 8
EIG_MAX_DIM = 1500
DEFAULT_R = 1e-2
R_BRACKET = (1e-4, 1e-1)
KAPPA2_FLOOR = 1e-8
KAPPA1_TOL = 1e-6


class ExtractionError(RuntimeError):
    """Cumulant extraction failed its consistency checks."""


# --------------------------------------------------------------------------
# Hilbert-space helpers
# --------------------------------------------------------------------------

def _bits(L: int) -> np.ndarray:
    """(2^L, L) array of spin-down flags; site 0 is the most significant bit."""
    idx = np.arange(2**L)
    return (idx[:, None] >> (L - 1 - np.arange(L))[None, :]) & 1


def _bonds(m: ChainModel):
    periodic = m.boundary is Boundary.PERIODIC
    for dist, amp in ((1, m.J), (2, m.J2)):
        if amp == 0.0:
            continue
        for i in range(m.L):
            j = i + dist
            if j >= m.L:
                if not periodic:
                    continue
                j -= m.L
            if i != j:
                yield i, j, amp


def hamiltonian_sparse(m: ChainModel) -> sp.csr_matrix:
    """H = sum_bonds (J_b/4)(sx sx + sy sy + Delta sz sz) as a sparse matrix."""
    L = m.L
    d = 2**L
    bits = _bits(L)
    spin = 1 - 2 * bits  # +1 up, -1 down
    idx = np.arange(d)
    diag = np.zeros(d)
    rows, cols, vals = [], [], []
    for i, j, amp in _bonds(m):
        diag += 0.25 * amp * m.Delta * spin[:, i] * spin[:, j]
        flip = bits[:, i] != bits[:, j]
        mask = (1 << (L - 1 - i)) | (1 << (L - 1 - j))
        rows.append(idx[flip])
        cols.append(idx[flip] ^ mask)
        vals.append(np.full(flip.sum(), 0.5 * amp))
    rows.append(idx)
    cols.append(idx)
    vals.append(diag)
    H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(d, d))
    return H.tocsr()


def build_hamiltonian(m: ChainModel, cap: int = HAMILTONIAN_CAP) -> np.ndarray:
    """Dense XXZ (+ next-nearest-neighbour) Hamiltonian."""
    if m.L > cap:
        raise ValueError(f"L={m.L} exceeds Hamiltonian cap {cap}")
    return hamiltonian_sparse(m).toarray()


def total_sz(L: int) -> np.ndarray:
    """Diagonal of S^z_tot = (1/2) sum_l sigma^z_l."""
    return 0.5 * (1 - 2 * _bits(L)).sum(axis=1)


def segment_sigma(L: int, seg: SegmentSpec) -> np.ndarray:
    """Diagonal of Sigma_ell = (1/2) sum_{j in seg} sigma^z_j."""
    spin = 1 - 2 * _bits(L)
    return 0.5 * spin[:, seg.offset:seg.offset + seg.ell].sum(axis=1)


def _lowering(L: int, site: int, string: bool) -> sp.csr_matrix:
    """sigma^-_site, optionally with the Jordan-Wigner string in front."""
    bits = _bits(L)
    d = 2**L
    src = np.nonzero(bits[:, site] == 0)[0]
    dst = src | (1 << (L - 1 - site))
    vals = np.ones(src.size)
    if string and site > 0:
        ups = (1 - bits[src, :site]).sum(axis=1)
        vals = (-1.0) ** ups
    return sp.csr_matrix((vals, (dst, src)), shape=(d, d))


def product_state(L: int, pattern: str = "up") -> np.ndarray:
    """Dense projector onto a product basis state (``"up"``, ``"down"`` or a u/d string)."""
    if pattern in ("up", "down"):
        pattern = pattern[0] * L
    if len(pattern) != L or set(pattern) - {"u", "d"}:
        raise ValueError("pattern must be 'up', 'down' or an L-character u/d string")
    index = int("".join("0" if c == "u" else "1" for c in pattern), 2)
    rho = np.zeros((2**L, 2**L))
    rho[index, index] = 1.0
    return rho


# --------------------------------------------------------------------------
# Liouvillian
# --------------------------------------------------------------------------

@dataclass
class Liouvillian:
    """Sparse generator on vectorized operators, with per-charge blocks cached."""

    model: ChainModel
    dissipation: DissipationSpec
    jumps: str
    generator: sp.csr_matrix
    _blocks: dict = field(default_factory=dict, repr=False)
    _eig: dict = field(default_factory=dict, repr=False)

    @property
    def L(self) -> int:
        return self.model.L

    @property
    def hilbert_dim(self) -> int:
        return 2**self.L

    @property
    def dim(self) -> int:
        return 4**self.L

    def dense(self, cap: int = 6) -> np.ndarray:
        if self.L > cap:
            raise ValueError(f"dense generator refused for L={self.L} > {cap}")
        return self.generator.toarray()

    def charge(self) -> np.ndarray:
        up = (1 - _bits(self.L)).sum(axis=1)
        return (up[:, None] - up[None, :]).ravel()

    def block(self, q: int):
        """(indices, generator restricted to charge q)."""
        if q not in self._blocks:
            idx = np.nonzero(self.charge() == q)[0]
            self._blocks[q] = (idx, self.generator[idx][:, idx].tocsr())
        return self._blocks[q]

    def diagonal_positions(self) -> np.ndarray:
        """Positions of vec(diagonal) entries inside the q = 0 block."""
        idx, _ = self.block(0)
        d = self.hilbert_dim
        return np.searchsorted(idx, np.arange(d) * (d + 1))

    def trace_residual(self) -> float:
        """max |vec(1)^T G|, zero for a trace-preserving generator."""
        d = self.hilbert_dim
        tr = np.zeros(self.dim)
        tr[np.arange(d) * (d + 1)] = 1.0
        return float(np.abs(self.generator.T @ tr).max())

    def stationarity_residual(self) -> float:
        """max |G vec(rho_SS)|."""
        d = self.hilbert_dim
        v = np.zeros(self.dim)
        v[np.arange(d) * (d + 1)] = ness_diagonal(self.L, self.dissipation)
        return float(np.abs(self.generator @ v).max())


def build_liouvillian(m: ChainModel, d: DissipationSpec | None = None, *, jumps: str = "spin",
                      cap: int = LIOUVILLE_CAP, allow_large: bool = False) -> Liouvillian:
    """Assemble the generator; ``d = None`` gives the closed (commutator) dynamics."""
    limit = LIOUVILLE_HARD_CAP if allow_large else cap
    if m.L > limit:
        raise ValueError(f"L={m.L} exceeds Liouville cap {limit}"
                         + ("" if allow_large else " (L=8 needs allow_large=True)"))
    if jumps not in ("spin", "fermion"):
        raise ValueError("jumps must be 'spin' or 'fermion'")
    d = DissipationSpec(0.0, 0.0) if d is None else d
    L = m.L
    dim = 2**L
    H = hamiltonian_sparse(m)
    eye = sp.identity(dim, format="csr")
    G = -1j * (sp.kron(H, eye) - sp.kron(eye, H.T))
    for site in range(L):
        lower = _lowering(L, site, string=(jumps == "fermion"))
        for rate, A in ((d.gamma_l, lower), (d.gamma_p, lower.T.tocsr())):
            if rate == 0:
                continue
            AdA = (A.T @ A).tocsr()  # A is real
            G = G + rate * (sp.kron(A, A) - 0.5 * sp.kron(AdA, eye) - 0.5 * sp.kron(eye, AdA.T))
    return Liouvillian(m, d, jumps, sp.csr_matrix(G))


# --------------------------------------------------------------------------
# Propagation
# --------------------------------------------------------------------------

@dataclass
class EvolutionResult:
    times: np.ndarray
    states: np.ndarray  # (n_times, dim[, k])
    diagnostics: dict


def _eig_block(Lv: Liouvillian, q: int, tol: float = 1e-11):
    """Cached eigendecomposition of block q, or None when ill-conditioned."""
    if q not in Lv._eig:
        _, A = Lv.block(q)
        mat = A.toarray()
        mu, V = np.linalg.eig(mat)
        cond = np.linalg.cond(V)
        scale = max(1.0, float(np.abs(mu).max()))
        if not np.isfinite(cond) or cond * np.finfo(float).eps * scale > tol:
            Lv._eig[q] = (None, cond)
        else:
            Lv._eig[q] = ((mu, V, np.linalg.inv(V)), cond)
    return Lv._eig[q]


def _propagate_block(Lv: Liouvillian, q: int, v0: np.ndarray, times: np.ndarray,
                     method: str, diag: dict) -> np.ndarray:
    idx, A = Lv.block(q)
    if method == "auto":
        method = "eig" if idx.size <= EIG_MAX_DIM else "expm"
    if method == "eig":
        decomp, cond = _eig_block(Lv, q)
        diag.setdefault("eig_condition", {})[q] = cond
        if decomp is None:
            logger.warning("generator block q=%d ill-conditioned (cond=%.2e); using expm", q, cond)
            diag.setdefault("fallback", []).append(q)
            method = "expm"
        else:
            mu, V, Vinv = decomp
            coeff = Vinv @ v0
            phases = np.exp(np.multiply.outer(times, mu))  # (nt, n)
            if coeff.ndim == 1:
                return (phases * coeff) @ V.T
            return np.einsum("tn,nk,mn->tmk", phases, coeff, V)
    if method != "expm":
        raise ValueError(f"unknown method {method!r}")
    out = np.empty((times.size,) + v0.shape, dtype=complex)
    v = v0.astype(complex)
    t_prev = 0.0
    for n, t in enumerate(times):
        if t > t_prev:
            v = expm_multiply(A * (t - t_prev), v)
        out[n] = v
        t_prev = t
    diag.setdefault("methods", {})[q] = "expm"
    return out


def evolve(Lv: Liouvillian, rho0, times, method: str = "auto") -> EvolutionResult:
    """exp(G t) vec(rho0) for every t in ``times`` (non-decreasing, >= 0).

    ``rho0`` is a density-like matrix (d x d) or a vectorized operator of
    length 4^L.  The result always has full length 4^L.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be a non-decreasing 1-d grid of t >= 0")
    v0 = np.asarray(rho0)
    if v0.ndim == 2 and v0.shape == (Lv.hilbert_dim, Lv.hilbert_dim):
        v0 = v0.reshape(-1)
    if v0.shape[0] != Lv.dim:
        raise ValueError("dimension mismatch between rho0 and generator")
    out = np.zeros((times.size,) + v0.shape, dtype=complex)
    charge = Lv.charge()
    diag: dict = {}
    nz = np.nonzero(np.abs(v0.reshape(Lv.dim, -1)).sum(axis=1))[0]
    for q in np.unique(charge[nz]):
        idx, _ = Lv.block(int(q))
        out[:, idx] = _propagate_block(Lv, int(q), v0[idx], times, method, diag)
    out[times == 0] = v0
    return EvolutionResult(times, out, diag)


def _evolve_diagonal(Lv: Liouvillian, diag0: np.ndarray, times: np.ndarray, method: str,
                     diag_info: dict) -> np.ndarray:
    """Evolve operators that start diagonal (columns of diag0); return the diagonals."""
    idx, _ = Lv.block(0)
    pos = Lv.diagonal_positions()
    v0 = np.zeros((idx.size,) + diag0.shape[1:], dtype=complex)
    v0[pos] = diag0
    states = _propagate_block(Lv, 0, v0, times, method, diag_info)
    states[times == 0] = v0
    return states[:, pos]


def expectation_trajectory(Lv: Liouvillian, rho0, ops_diag: np.ndarray, times,
                           method: str = "auto") -> np.ndarray:
    """Tr[O_k exp(G t)(rho0)] for diagonal observables and a diagonal rho0.

    ``ops_diag`` has shape (k, 2^L); returns (n_times, k).
    """
    rho0 = np.asarray(rho0)
    d0 = np.diag(rho0) if rho0.ndim == 2 else rho0
    if rho0.ndim == 2 and np.abs(rho0 - np.diag(d0)).max() > 0:
        raise ValueError("rho0 must be diagonal")
    diags = _evolve_diagonal(Lv, d0.astype(complex), np.asarray(times, float), method, {})
    return (diags @ np.asarray(ops_diag).T).real


# --------------------------------------------------------------------------
# Counting-field generating function
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QGFSample:
    lam: complex
    t: float
    G: complex


@dataclass
class CumulantSeries:
    times: np.ndarray
    kappa1: np.ndarray
    kappa2: np.ndarray
    extraction: dict


def _sigma_diag(Lv: Liouvillian, d: DissipationSpec, seg: SegmentSpec, centered: bool) -> np.ndarray:
    seg = seg.validated(Lv.L)
    sig = segment_sigma(Lv.L, seg)
    if centered:
        rho = ness_diagonal(Lv.L, d)
        sig = sig - float(rho @ sig)
    return sig


def qgf_values(Lv: Liouvillian, d: DissipationSpec, seg: SegmentSpec, lambdas, times,
               *, centered: bool = True, method: str = "auto", diagnostics: dict | None = None
               ) -> np.ndarray:
    """G(lambda, t) = Tr[e^{i lam S} e^{G t}(e^{-i lam S} rho_SS)] as an (n_lambda, n_times) array.

    ``S`` is the segment magnetization, centered on its steady-state mean when
    ``centered``.  Since S is diagonal, the twist is an elementwise phase.
    """
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=complex))
    times = np.asarray(times, dtype=float)
    sig = _sigma_diag(Lv, d, seg, centered)
    rho = ness_diagonal(Lv.L, d)
    twisted = np.exp(-1j * np.outer(sig, lambdas)) * rho[:, None]  # (2^L, n_lambda)
    diags = _evolve_diagonal(Lv, twisted, times, method, {} if diagnostics is None else diagnostics)
    readout = np.exp(1j * np.outer(sig, lambdas))
    G = np.einsum("tak,ak->kt", diags, readout)
    if not np.all(np.isfinite(G)):
        raise ExtractionError("non-finite generating-function values")
    return G


def qgf(Lv: Liouvillian, d: DissipationSpec, seg: SegmentSpec, lam: complex, times,
        *, centered: bool = True, method: str = "auto") -> list[QGFSample]:
    """Generating-function samples for one counting field."""
    if lam == 0:
        raise ValueError("|lambda| must be > 0")
    G = qgf_values(Lv, d, seg, [lam], times, centered=centered, method=method)[0]
    return [QGFSample(complex(lam), float(t), complex(g)) for t, g in zip(times, G)]


def cumulants_from_qgf(samples_r: list[QGFSample], samples_ir: list[QGFSample],
                       centering: bool = True) -> CumulantSeries:
    """kappa2 ~ [G(i r) - G(r)] / r^2 and kappa1 ~ Im ln G(r) / r."""
    if len(samples_r) != len(samples_ir):
        raise ValueError("sample lists differ in length")
    lam_r = samples_r[0].lam
    lam_i = samples_ir[0].lam
    r = abs(lam_r)
    if not np.isclose(abs(lam_i), r, rtol=1e-12) or not np.isclose(lam_i, 1j * r, rtol=1e-12) \
            or not np.isclose(lam_r, r, rtol=1e-12):
        raise ValueError("need samples at lambda = r and lambda = i r with the same r > 0")
    if not R_BRACKET[0] <= r <= R_BRACKET[1]:
        raise ValueError(f"r={r} outside {R_BRACKET}")
    times = np.array([s.t for s in samples_r])
    if np.any(times != np.array([s.t for s in samples_ir])):
        raise ValueError("sample times differ")
    Gr = np.array([s.G for s in samples_r])
    Gi = np.array([s.G for s in samples_ir])
    k2 = ((Gi - Gr) / r**2).real
    k1 = np.log(Gr).imag / r
    return CumulantSeries(times, k1, k2, {"r": r, "method": "phase-combination",
                                          "centered": centering})


@dataclass
class OracleRun:
    cumulants: CumulantSeries
    G: dict  # lambda -> complex array over times
    diagnostics: dict


def oracle_cumulants(model: ChainModel, d: DissipationSpec, seg: SegmentSpec, times, *,
                     r: float = DEFAULT_R, unitary: bool = False, jumps: str = "spin",
                     centered: bool = True, richardson_rtol: float = 1e-6,
                     method: str = "auto", allow_large: bool = False,
                     Lv: Liouvillian | None = None) -> OracleRun:
    """kappa1, kappa2 from the generating function with a Richardson halving check.

    The steady state is always that of ``d``; ``unitary=True`` switches the
    dissipator off for the evolution.
    """
    if centered is False and d.zeta != 1:
        raise ValueError("centering is required for zeta != 1")
    if not (R_BRACKET[0] <= r / 2 and r <= R_BRACKET[1]):
        raise ValueError(f"r={r} outside {R_BRACKET}")
    times = np.asarray(times, dtype=float)
    if Lv is None:
        Lv = build_liouvillian(model, None if unitary else d, jumps=jumps, allow_large=allow_large)
    lambdas = [r, 1j * r, r / 2, 1j * r / 2]
    diag: dict = {}
    G = qgf_values(Lv, d, seg, lambdas, times, centered=centered, method=method, diagnostics=diag)
    series = []
    for a, b in ((0, 1), (2, 3)):
        sr = [QGFSample(lambdas[a], t, g) for t, g in zip(times, G[a])]
        si = [QGFSample(lambdas[b], t, g) for t, g in zip(times, G[b])]
        series.append(cumulants_from_qgf(sr, si, centering=centered))
    full, half = series
    if np.any(full.kappa2 < -KAPPA2_FLOOR):
        raise ExtractionError(f"kappa2 below the numerical floor: {full.kappa2.min():.3e}")
    if centered and np.abs(full.kappa1).max() > KAPPA1_TOL:
        raise ExtractionError(f"centered kappa1 = {np.abs(full.kappa1).max():.3e} is not ~0")
    scale = max(float(np.abs(full.kappa2).max()), 1e-12)
    spread = float(np.abs(full.kappa2 - half.kappa2).max())
    diag["richardson_spread"] = spread
    if spread > richardson_rtol * scale:
        raise ExtractionError(f"Richardson check failed: |k2(r) - k2(r/2)| = {spread:.3e}")
    full.extraction.update({"richardson_spread": spread, "jumps": jumps,
                            "evolution": "Unitary" if unitary else "Lindblad"})
    return OracleRun(full, {lam: G[k] for k, lam in enumerate(lambdas)}, diag)


def two_time_kappa2(Lv: Liouvillian, d: DissipationSpec, seg: SegmentSpec, times,
                    method: str = "auto") -> np.ndarray:
    """kappa2 = 2(<N^2>_SS - Tr[N e^{Gt}(N rho_SS)]) from explicit two-time traces."""
    seg = seg.validated(Lv.L)
    N = (1 - _bits(Lv.L))[:, seg.offset:seg.offset + seg.ell].sum(axis=1).astype(float)
    rho = ness_diagonal(Lv.L, d)
    nn = expectation_trajectory(Lv, N * rho, N[None, :], times, method)[:, 0]
    return 2.0 * (float(rho @ N**2) - nn)


# --------------------------------------------------------------------------
# Relaxation to the steady state
# --------------------------------------------------------------------------

@dataclass
class RelaxationReport:
    converged: bool
    time: float | None
    times: np.ndarray
    magnetization: np.ndarray  # (n_times, L)
    target: float
    max_deviation: np.ndarray


def ness_relaxation_check(Lv: Liouvillian, rho_init, tol: float = 1e-8, *,
                          gamma_t_max: float = 60.0, gamma_dt: float = 0.5,
                          method: str = "auto") -> RelaxationReport:
    """Evolve rho_init until every <sigma^z_l> is within tol of (zeta-1)/(zeta+1)."""
    d = Lv.dissipation
    if d.Gamma <= 0:
        raise ValueError("relaxation needs Gamma > 0")
    target = (d.zeta - 1.0) / (d.zeta + 1.0)
    times = np.arange(0.0, gamma_t_max + 0.5 * gamma_dt, gamma_dt) / d.Gamma
    sz = (1 - 2 * _bits(Lv.L)).T.astype(float)
    mag = expectation_trajectory(Lv, rho_init, sz, times, method)
    dev = np.abs(mag - target).max(axis=1)
    ok = dev <= tol
    # first time after which every later sample stays converged
    tail = np.flip(np.logical_and.accumulate(np.flip(ok)))
    hit = np.nonzero(tail)[0]
    t_conv = float(times[hit[0]]) if hit.size else None
    if t_conv is None:
        logger.warning("no convergence to %.1e within Gamma t = %.1f", tol, gamma_t_max)
    return RelaxationReport(t_conv is not None, t_conv, times, mag, target, dev)


__all__ = [
    "HAMILTONIAN_CAP", "LIOUVILLE_CAP", "LIOUVILLE_HARD_CAP", "DEFAULT_R", "ExtractionError",
    "hamiltonian_sparse", "build_hamiltonian", "total_sz", "segment_sigma", "product_state",
    "Liouvillian", "build_liouvillian", "EvolutionResult", "evolve", "expectation_trajectory",
    "QGFSample", "CumulantSeries", "qgf_values", "qgf", "cumulants_from_qgf", "OracleRun",
    "oracle_cumulants", "two_time_kappa2", "RelaxationReport", "ness_relaxation_check",
]
