import itertools
import math

import numpy as np
import pytest

from fvxxz.analytic import (damped_connected_correlator, kappa2_lindblad_xx, kappa2_unitary_xx,
                            roughness_series)
from fvxxz.freefermion import FiniteKernel, hopping_matrix
from fvxxz.model import ChainModel, DissipationSpec, SegmentSpec, ness_diagonal
from fvxxz.oracle import (ExtractionError, QGFSample, build_hamiltonian, build_liouvillian,
                          cumulants_from_qgf, evolve, expectation_trajectory,
                          ness_relaxation_check, oracle_cumulants, product_state, qgf,
                          qgf_values, segment_sigma, total_sz, two_time_kappa2)

D = DissipationSpec(0.1, 0.05)


def _vec_diag(L, diag):
    v = np.zeros(4**L, complex)
    v[np.arange(2**L) * (2**L + 1)] = diag
    return v


# --------------------------------------------------------------------------
# Hamiltonian
# --------------------------------------------------------------------------

def test_two_site_xx_spectrum():
    E = np.linalg.eigvalsh(build_hamiltonian(ChainModel(L=2)))
    np.testing.assert_allclose(E, [-0.5, 0.0, 0.0, 0.5], atol=1e-15)


@pytest.mark.parametrize("boundary", ["open", "periodic"])
def test_hamiltonian_hermitian_and_conserves_sz(boundary):
    H = build_hamiltonian(ChainModel(L=6, Delta=0.7, J2=0.4, boundary=boundary))
    assert np.abs(H - H.conj().T).max() == 0
    Sz = np.diag(total_sz(6))
    assert np.abs(H @ Sz - Sz @ H).max() <= 1e-12


def test_free_fermion_spectrum_reconstruction():
    m = ChainModel(L=6)
    eps = np.linalg.eigvalsh(hopping_matrix(m))
    sums = sorted(sum(c) for n in range(7) for c in itertools.combinations(eps, n))
    np.testing.assert_allclose(np.linalg.eigvalsh(build_hamiltonian(m)), sums, atol=1e-12)


def test_ising_term_diagonal():
    H = build_hamiltonian(ChainModel(L=3, Delta=2.0))
    # all up: two bonds of (J/4) Delta
    assert H[0, 0] == pytest.approx(1.0)
    # up-down-up: two antiparallel bonds
    assert H[2, 2] == pytest.approx(-1.0)


def test_hamiltonian_cap():
    with pytest.raises(ValueError):
        build_hamiltonian(ChainModel(L=13))


# --------------------------------------------------------------------------
# Liouvillian
# --------------------------------------------------------------------------

@pytest.mark.parametrize("jumps", ["spin", "fermion"])
def test_liouvillian_invariants(jumps):
    Lv = build_liouvillian(ChainModel(L=4, Delta=1.0, J2=1.0), D, jumps=jumps)
    assert Lv.dim == 256
    assert Lv.trace_residual() <= 1e-10
    assert Lv.stationarity_residual() <= 1e-10


def test_closed_generator_spectrum_is_gap_set():
    m = ChainModel(L=3, Delta=0.6)
    E = np.linalg.eigvalsh(build_hamiltonian(m))
    mu = np.linalg.eigvals(build_liouvillian(m).dense())
    gaps = np.sort((-1j * (E[:, None] - E[None, :])).ravel().imag)
    assert np.abs(mu.real).max() <= 1e-12
    np.testing.assert_allclose(np.sort(mu.imag), gaps, atol=1e-12)


@pytest.mark.parametrize("jumps", ["spin", "fermion"])
def test_magnetization_relaxes_at_rate_gamma(jumps):
    d = DissipationSpec(0.3, 0.1)
    Lv = build_liouvillian(ChainModel(L=2, Delta=0.4), d, jumps=jumps)
    t = np.linspace(0, 8, 9)
    sz = expectation_trajectory(Lv, product_state(2, "uu"), total_sz(2)[None, :], t)[:, 0]
    target = (d.zeta - 1) / (d.zeta + 1)
    np.testing.assert_allclose(sz, 2 * 0.5 * (target + (1 - target) * np.exp(-d.Gamma * t)),
                               atol=1e-12)


def test_liouville_caps():
    with pytest.raises(ValueError):
        build_liouvillian(ChainModel(L=8), D)
    with pytest.raises(ValueError):
        build_liouvillian(ChainModel(L=9), D, allow_large=True)
    with pytest.raises(ValueError):
        build_liouvillian(ChainModel(L=3), D, jumps="bosonic")


# --------------------------------------------------------------------------
# evolution
# --------------------------------------------------------------------------

def test_evolve_identity_at_zero_and_trace():
    Lv = build_liouvillian(ChainModel(L=3, Delta=0.5), D)
    rho0 = product_state(3, "udu")
    res = evolve(Lv, rho0, [0.0, 0.7, 4.0])
    np.testing.assert_array_equal(res.states[0], rho0.reshape(-1))
    for v in res.states:
        assert np.trace(v.reshape(8, 8)) == pytest.approx(1.0, abs=1e-10)


def test_evolve_steady_state_is_fixed():
    Lv = build_liouvillian(ChainModel(L=4, Delta=1.0), D)
    v0 = _vec_diag(4, ness_diagonal(4, D))
    res = evolve(Lv, v0, [0.5, 3.0, 20.0])
    assert np.abs(res.states - v0).max() <= 1e-10


def test_evolve_methods_agree_on_coherences():
    L = 3
    Lv = build_liouvillian(ChainModel(L=L, Delta=0.8), D)
    rng = np.random.default_rng(4)
    A = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    rho = A @ A.conj().T
    rho /= np.trace(rho)
    t = [0.3, 1.1, 6.0]
    a = evolve(Lv, rho, t, method="eig").states
    b = evolve(Lv, rho, t, method="expm").states
    assert np.abs(a - b).max() <= 1e-10
    with pytest.raises(ValueError):
        evolve(Lv, rho, [1.0, 0.5])
    with pytest.raises(ValueError):
        evolve(Lv, np.eye(4), t)


def test_single_excitation_follows_propagator():
    m = ChainModel(L=5)
    Lv = build_liouvillian(m)
    fk = FiniteKernel(m)
    t = np.array([0.4, 1.5, 3.0])
    start = 1
    pattern = "".join("u" if k == start else "d" for k in range(5))
    occ = 1.0 - ((np.arange(32)[:, None] >> (4 - np.arange(5))) & 1)
    n = expectation_trajectory(Lv, product_state(5, pattern), occ.T, t)
    for k, tk in enumerate(t):
        np.testing.assert_allclose(n[k], fk.matrix(tk)[start], atol=1e-10)


# --------------------------------------------------------------------------
# generating function
# --------------------------------------------------------------------------

def test_qgf_trivial_values():
    m = ChainModel(L=4, Delta=0.3)
    Lv = build_liouvillian(m, D)
    seg = SegmentSpec.centered(2, 4)
    G = qgf_values(Lv, D, seg, [0.0, 0.4, 0.3j], [0.0, 1.0, 5.0])
    np.testing.assert_allclose(G[0], 1.0, atol=1e-13)
    np.testing.assert_allclose(G[:, 0], 1.0, atol=1e-14)
    with pytest.raises(ValueError):
        qgf(Lv, D, seg, 0.0, [1.0])


def test_qgf_symmetries():
    Lv = build_liouvillian(ChainModel(L=4, Delta=0.5), D)
    seg = SegmentSpec.centered(2, 4)
    lam = 0.3 + 0.2j
    G = qgf_values(Lv, D, seg, [lam, -np.conj(lam), 0.5j], [0.7, 3.0])
    np.testing.assert_allclose(G[1], np.conj(G[0]), atol=1e-13)
    assert np.abs(G[2].imag).max() <= 1e-13


def test_qgf_real_at_half_filling_and_matches_transfer_distribution():
    d = DissipationSpec(0.1, 0.1)
    Lv = build_liouvillian(ChainModel(L=4), d)
    seg = SegmentSpec.centered(2, 4)
    t = np.array([0.5, 2.0, 7.0])
    lam = 0.7
    G = qgf_values(Lv, d, seg, [lam], t)[0]
    assert np.abs(G.imag).max() <= 1e-12
    # explicit distribution of the transferred magnetization
    rho, sig = ness_diagonal(4, d), segment_sigma(4, seg)
    trans = np.stack([expectation_trajectory(Lv, np.eye(16)[a], np.eye(16), t)
                      for a in range(16)], axis=1)
    G_explicit = np.einsum("a,tab,ab->t", rho, trans,
                           np.exp(1j * lam * (sig[None, :] - sig[:, None])))
    np.testing.assert_allclose(G, G_explicit, atol=1e-12)


def test_cumulants_from_qgf_validation():
    s_r = [QGFSample(0.01, 1.0, 1.0 + 0j)]
    with pytest.raises(ValueError):
        cumulants_from_qgf(s_r, [QGFSample(0.02j, 1.0, 1.0 + 0j)])
    with pytest.raises(ValueError):
        cumulants_from_qgf([QGFSample(1.0, 1.0, 1.0 + 0j)], [QGFSample(1.0j, 1.0, 1.0 + 0j)])
    out = cumulants_from_qgf(s_r, [QGFSample(0.01j, 1.0, 1.0 + 0j)])
    assert out.kappa2[0] == 0.0 and out.extraction["r"] == 0.01


@pytest.fixture(scope="module")
def xx_run():
    m = ChainModel(L=6)
    seg = SegmentSpec.centered(2, 6)
    Lv = build_liouvillian(m, D, jumps="fermion")
    t = np.concatenate([[0.0], np.linspace(0.1, 10.0, 40)])
    return m, seg, Lv, t, oracle_cumulants(m, D, seg, t, Lv=Lv)


def test_oracle_matches_damped_kernel(xx_run):
    m, seg, Lv, t, run = xx_run
    ref = kappa2_lindblad_xx(2, t[1:], D.n_bar, D.Gamma, FiniteKernel(m))
    assert np.abs(run.cumulants.kappa2[1:] / ref - 1).max() <= 1e-6
    assert run.cumulants.kappa2[0] == pytest.approx(0.0, abs=1e-12)
    assert np.abs(run.cumulants.kappa1).max() <= 1e-10
    assert run.diagnostics["richardson_spread"] <= 1e-6 * run.cumulants.kappa2.max()


def test_two_time_route_matches_qgf(xx_run):
    m, seg, Lv, t, run = xx_run
    k2 = two_time_kappa2(Lv, D, seg, t)
    assert np.abs(k2 - run.cumulants.kappa2).max() <= 1e-8


def test_unitary_two_time_route_interacting():
    m = ChainModel(L=5, Delta=1.0)
    seg = SegmentSpec.centered(2, 5)
    t = np.linspace(0.2, 6.0, 12)
    run = oracle_cumulants(m, D, seg, t, unitary=True)
    k2 = two_time_kappa2(build_liouvillian(m), D, seg, t)
    assert np.abs(k2 - run.cumulants.kappa2).max() <= 1e-8
    assert run.cumulants.extraction["evolution"] == "Unitary"


def test_unitary_quench_matches_closed_form():
    m = ChainModel(L=6)
    seg = SegmentSpec.centered(3, 6)
    t = np.linspace(0.2, 5.0, 10)
    run = oracle_cumulants(m, D, seg, t, unitary=True)
    ref = kappa2_unitary_xx(3, t, D.n_bar, FiniteKernel(m))
    assert np.abs(run.cumulants.kappa2 / ref - 1).max() <= 1e-6


def test_spin_jumps_share_the_plateau():
    m = ChainModel(L=6)
    seg = SegmentSpec.centered(2, 6)
    run = oracle_cumulants(m, D, seg, [30 / D.Gamma])
    assert run.cumulants.kappa2[0] == pytest.approx(2 * D.n_bar * (1 - D.n_bar) * 2, rel=1e-6)


def test_fermion_jumps_reproduce_damped_correlator():
    m = ChainModel(L=6)
    Lv = build_liouvillian(m, D, jumps="fermion")
    rho = ness_diagonal(6, D)
    occ = 1 - ((np.arange(64)[:, None] >> (5 - np.arange(6))) & 1)
    t = np.array([0.5, 3.0])
    i, j = 2, 3
    nn = expectation_trajectory(Lv, occ[:, j] * rho, occ[:, i][None, :], t)[:, 0]
    conn = nn - D.n_bar**2
    ref = damped_connected_correlator(i, j, t, D.n_bar, D.Gamma, FiniteKernel(m))
    np.testing.assert_allclose(conn, ref, atol=1e-12)


def test_extraction_rejects_bad_r_and_uncentered():
    m = ChainModel(L=3)
    seg = SegmentSpec.centered(1, 3)
    with pytest.raises(ValueError):
        oracle_cumulants(m, D, seg, [1.0], r=0.5)
    with pytest.raises(ValueError):
        oracle_cumulants(m, D, seg, [1.0], centered=False)


def test_richardson_failure_is_reported():
    m = ChainModel(L=4, Delta=1.0)
    seg = SegmentSpec.centered(2, 4)
    with pytest.raises(ExtractionError):
        oracle_cumulants(m, D, seg, [2.0], r=0.1, richardson_rtol=1e-12)


# --------------------------------------------------------------------------
# relaxation and stationarity
# --------------------------------------------------------------------------

def test_relaxation_from_steady_state_is_immediate():
    Lv = build_liouvillian(ChainModel(L=3), D)
    rep = ness_relaxation_check(Lv, np.diag(ness_diagonal(3, D)))
    assert rep.converged and rep.time == 0.0


def test_relaxation_without_dissipation_rejected():
    Lv = build_liouvillian(ChainModel(L=3))
    with pytest.raises(ValueError):
        ness_relaxation_check(Lv, product_state(3))


def test_unitary_stationarity_identity():
    L = 6
    m = ChainModel(L=L, Delta=1.0)
    Lv = build_liouvillian(m)
    seg = SegmentSpec.centered(3, L)
    occ = 1 - ((np.arange(2**L)[:, None] >> (L - 1 - np.arange(L))) & 1)
    N = occ[:, seg.offset:seg.offset + seg.ell].sum(axis=1)
    rho = ness_diagonal(L, D)
    t = np.linspace(0.5, 8.0, 6)
    lhs = expectation_trajectory(Lv, rho, (N**2)[None, :].astype(float), t)[:, 0]
    assert np.abs(lhs - rho @ N**2).max() <= 1e-8


def test_dissipation_dominated_saturation_signature_large_segments():
    # analytic counterpart in the regime ell >> ell_c
    d = DissipationSpec.from_zeta(0.15, 0.5)
    t = np.linspace(0.01, 30.0, 3000)
    hits = []
    for ell in (100, 200, 400):
        W = roughness_series(ell, t, d.n_bar, d.Gamma).W
        hits.append(t[np.argmax(W >= 0.9 * math.sqrt(2 * d.n_bar * (1 - d.n_bar) * ell))])
    assert (max(hits) - min(hits)) / np.mean(hits) < 0.10


@pytest.mark.xfail(strict=True, reason="segments 2..4 at L=8 lie below ell_c = pi J/(2 Gamma) "
                                       "~ 7; saturation time still tracks t*")
def test_dissipation_dominated_saturation_at_L8():
    d = DissipationSpec.from_zeta(0.15, 0.5)
    m = ChainModel(L=8)
    Lv = build_liouvillian(m, d, allow_large=True)
    t = np.linspace(0.1, 12.0, 120)
    hits = []
    for ell in (2, 3, 4):
        run = oracle_cumulants(m, d, SegmentSpec.centered(ell, 8), t, Lv=Lv)
        W = np.sqrt(np.clip(run.cumulants.kappa2, 0, None))
        hits.append(t[np.argmax(W >= 0.9 * math.sqrt(2 * d.n_bar * (1 - d.n_bar) * ell))])
    assert (max(hits) - min(hits)) / np.mean(hits) < 0.10
