import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fvxxz.model import (Boundary, ChainModel, DissipationSpec, SegmentSpec, ness_density_matrix,
                         ness_diagonal, ness_local_magnetization, segment_mean_magnetization,
                         static_segment_variance, _occupations)


def test_chain_model_validation():
    with pytest.raises(ValueError):
        ChainModel(L=1)
    with pytest.raises(ValueError):
        ChainModel(L=4, J=0.0)
    m = ChainModel(L=4, boundary="periodic")
    assert m.boundary is Boundary.PERIODIC
    assert m.quadratic and not ChainModel(L=4, Delta=0.5).quadratic


def test_dissipation_derived_quantities():
    d = DissipationSpec(0.1, 0.05)
    assert d.Gamma == 0.1 + 0.05
    assert d.zeta == pytest.approx(0.5, rel=1e-15)
    assert d.n_bar == pytest.approx(1.0 / 3.0, rel=1e-15)
    assert ness_local_magnetization(d) == pytest.approx(-1.0 / 3.0, rel=1e-15)
    with pytest.raises(ValueError):
        DissipationSpec(0.0, 0.1).zeta
    with pytest.raises(ValueError):
        DissipationSpec(-0.1, 0.1)


@given(gl=st.floats(1e-3, 10.0), zeta=st.floats(1e-3, 1e3))
def test_n_bar_identity(gl, zeta):
    d = DissipationSpec.from_zeta(gl, zeta)
    assert 0.0 <= d.n_bar <= 1.0
    assert d.n_bar == pytest.approx(d.zeta / (1.0 + d.zeta), rel=1e-14)


def test_segment_spec():
    seg = SegmentSpec.centered(2, 6)
    assert seg.offset == 2 and list(seg.sites) == [2, 3]
    assert SegmentSpec.centered(3, 8).offset == 2
    with pytest.raises(ValueError):
        SegmentSpec(5, 3).validated(6)
    with pytest.raises(ValueError):
        SegmentSpec(0, 0).validated(6)


@pytest.mark.parametrize("L", range(1, 9))
def test_ness_product_equals_sector_sum(L):
    d = DissipationSpec(0.2, 0.07)
    a = ness_diagonal(L, d, method="product")
    b = ness_diagonal(L, d, method="sectors")
    assert np.abs(a - b).max() <= 1e-14
    assert a.sum() == pytest.approx(1.0, abs=1e-14)


def test_ness_single_site_and_zeta_one():
    d = DissipationSpec(0.2, 0.1)
    np.testing.assert_allclose(ness_diagonal(1, d), [1 / 3, 2 / 3], rtol=1e-15)
    rho = ness_density_matrix(6, DissipationSpec(0.3, 0.3))
    np.testing.assert_allclose(np.diag(rho), np.full(64, 1 / 64), rtol=1e-14)
    with pytest.raises(ValueError):
        ness_density_matrix(11, d)


def test_ness_magnetization_and_segment_moments():
    L, d = 6, DissipationSpec(0.1, 0.05)
    p = ness_diagonal(L, d)
    occ = _occupations(L)
    sz = 2 * occ - 1
    np.testing.assert_allclose(p @ sz, ness_local_magnetization(d), rtol=1e-13)
    N = occ[:, 1:4].sum(axis=1)
    var = p @ N**2 - (p @ N) ** 2
    assert var == pytest.approx(static_segment_variance(3, d.n_bar), rel=1e-13)
    assert p @ (0.5 * sz[:, 1:4].sum(axis=1)) == pytest.approx(segment_mean_magnetization(3, d))


@settings(max_examples=50)
@given(ell=st.integers(1, 400), n=st.floats(0.0, 1.0))
def test_static_variance_matches_moment_form(ell, n):
    moments = ell * n + ell * (ell - 1) * n**2 - (ell * n) ** 2
    assert static_segment_variance(ell, n) == pytest.approx(moments, abs=1e-9 * max(1, ell**2))
