"""Free Laplacian and biharmonic kernels, their small-mu series and channel averages."""

import math

import mpmath as mp
import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from biharmonic_resonance import kernels as K
from biharmonic_resonance.errors import DomainError, SingularityError



def mp_laplace(d, k, r):
    """(i/4) (k / (2 pi r))^nu H^(1)_nu(k r), nu = (d-2)/2, at 40 digits."""
    with mp.workdps(40):
        k = mp.mpc(k)
        r = mp.mpf(r)
        nu = mp.mpf(d - 2) / 2
        return mp.mpc(0, 1) / 4 * (k / (2 * mp.pi * r)) ** nu * mp.hankel1(nu, k * r)


def mp_biharm(d, mu, r):
    with mp.workdps(40):
        mu = mp.mpc(mu)
        return (mp_laplace(d, mu, r) - mp_laplace(d, 1j * mu, r)) / (2 * mu ** 2)


def rel(a, b):
    return abs(complex(a) - complex(b)) / abs(complex(b))


# ---------------------------------------------------------------------------
# Laplacian kernel
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("d", [5, 6, 7, 8, 9, 10])
def test_laplace_kernel_matches_hankel_oracle(d):
    for k in [0.3 + 0.2j, 2.0 + 0.01j, 1j * 0.7, 0.05 * np.exp(1j * np.pi / 8)]:
        for r in [0.1, 1.0, 7.5]:
            got = K.laplace_kernel(d, k, r)
            assert rel(got, mp_laplace(d, k, r)) < 1e-12


def test_laplace_kernel_decays_off_axis():
    r = np.array([10.0, 100.0, 1000.0])
    vals = np.abs(K.laplace_kernel(5, 1.0 + 0.5j, r))
    assert vals[-1] < 1e-200 or vals[-1] < vals[0] * 1e-100
    assert np.all(np.diff(vals) < 0)


def test_laplace_kernel_rejects_lower_half_plane():
    with pytest.raises(DomainError):
        K.laplace_kernel(5, 1.0 - 0.1j, 1.0)


# ---------------------------------------------------------------------------
# biharmonic kernel
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("d", [5, 6, 7, 8, 9])
@pytest.mark.parametrize("mu_abs", [1e-3, 3e-2, 0.5, 4.0])
def test_biharm_kernel_matches_splitting_oracle(d, mu_abs):
    p = K.SpectralPoint.on_ray(mu_abs)
    r = np.array([0.1, 0.9, 3.0, 10.0])
    got = K.biharm_kernel(d, p, r)
    for g, rr in zip(got, r):
        assert rel(g, mp_biharm(d, p.mu, rr)) < 1e-12


@pytest.mark.parametrize("d", [5, 6, 7, 8])
def test_series_and_closed_branch_agree_near_switch(d):
    p = K.SpectralPoint.on_ray(0.5)
    r = np.linspace(0.8, 4.0, 9)
    a = K.biharm_kernel(d, p, r, branch="series")
    b = K.biharm_kernel(d, p, r, branch="closed")
    assert np.max(np.abs(a - b) / np.abs(b)) < 1e-12


def test_boundary_point_values_and_lower_side_conjugate():
    up = K.SpectralPoint.boundary(0.7)
    lo = K.SpectralPoint.boundary(0.7, side="lower")
    r = np.array([0.5, 2.0])
    assert np.allclose(K.biharm_kernel(5, lo, r), np.conj(K.biharm_kernel(5, up, r)), rtol=1e-14)
    assert rel(K.biharm_kernel(5, up, r)[1], mp_biharm(5, 0.7, 2.0)) < 1e-12


def test_spectral_point_domain():
    with pytest.raises(DomainError):
        K.SpectralPoint(1.0)  # interior points need 0 < arg < pi/2
    with pytest.raises(DomainError):
        K.SpectralPoint(-1.0 + 1j)
    with pytest.raises(DomainError):
        K.SpectralPoint.boundary(-1.0)
    assert K.SpectralPoint.on_ray(2.0).z == pytest.approx((2.0 * np.exp(1j * np.pi / 8)) ** 4)


def test_biharm_kernel_rejects_low_dimension_and_bad_radius():
    p = K.SpectralPoint.on_ray(0.1)
    with pytest.raises(DomainError):
        K.biharm_kernel(4, p, 1.0)
    with pytest.raises(DomainError):
        K.biharm_kernel(5, p, 0.0)


# ---------------------------------------------------------------------------
# series coefficients
# ---------------------------------------------------------------------------


def _symbolic_alpha(d, nmax):
    """alpha_n from a symbolic series of the odd-dimensional closed form at r = 1."""
    k, r, mu = sp.symbols("k r mu", positive=True)
    G = sp.exp(sp.I * k * r) / (4 * sp.pi * r)
    for _ in range((d - 3) // 2):
        G = -sp.diff(G, r) / (2 * sp.pi * r)
    G1 = G.subs(r, 1)
    R0 = (G1.subs(k, mu) - G1.subs(k, sp.I * mu)) / (2 * mu ** 2)
    ser = sp.series(R0, mu, 0, nmax + 1).removeO()
    return [complex(sp.N(ser.coeff(mu, n), 30)) for n in range(nmax + 1)]


@pytest.mark.parametrize("d", [5, 7, 9])
def test_odd_series_coefficients_match_symbolic_expansion(d):
    alpha, beta = K.biharm_series(d)
    ref = _symbolic_alpha(d, 10)
    assert np.all(beta == 0)
    for n, a in enumerate(ref):
        if a == 0:
            assert alpha[n] == 0
        else:
            assert rel(alpha[n], a) < 1e-13


@pytest.mark.parametrize("d", [6, 8, 10])
def test_even_series_against_oracle_at_small_argument(d):
    for mu_abs in [1e-3, 1e-1]:
        p = K.SpectralPoint.on_ray(mu_abs)
        for r in [0.5, 2.0]:
            got = K.biharm_kernel(d, p, r, branch="series")
            assert rel(got, mp_biharm(d, p.mu, r)) < 1e-12


def test_named_coefficients_d5():
    t = K.expansion_coefficients(5)
    a = t.alpha
    assert t.coefficients == {"a0": a[0], "a1": a[1], "a2": a[3], "a3": a[4]}
    # a0 r^-1 is the kernel of (-Delta)^-2 in R^5
    assert t.coefficients["a0"].real == pytest.approx(K.riesz_constant(5, 4), rel=1e-14)
    assert a[2] == 0
    assert t.coefficients["a0"].imag == 0 and t.coefficients["a3"].imag == 0


def test_named_coefficients_d6_log_pair():
    t = K.expansion_coefficients(6)
    c = t.coefficients
    assert c["c2"] == c["c4"] == t.beta[4]
    assert c["c2"] != 0
    mu = 1e-3 * np.exp(1j * np.pi / 8)
    assert t.c_of_mu(mu) == pytest.approx(c["c2"] * np.log(mu) + c["c3"], rel=1e-15)
    # the second-stage kernel is |x - y|^2
    assert t.g2.terms == ((1.0, 2.0, 0),)


def test_named_coefficients_d7_d8_and_high():
    t7 = K.expansion_coefficients(7)
    assert set(t7.coefficients) == {"b0", "b1", "b2"}
    assert t7.coefficients["b1"] == t7.alpha[3]
    t8 = K.expansion_coefficients(8)
    assert t8.coefficients["d1"] == t8.coefficients["d3"] == t8.beta[4]
    t9 = K.expansion_coefficients(9)
    assert t9.coefficients["C(d)"] == t9.alpha[5]
    with pytest.raises(DomainError):
        K.expansion_coefficients(7).c_of_mu(0.1)


@pytest.mark.parametrize("d", [5, 6, 7, 8, 9])
def test_leading_coefficient_is_riesz_kernel(d):
    a0 = K.biharm_series(d)[0][0]
    assert a0.real == pytest.approx(K.riesz_constant(d, 4), rel=1e-13)
    assert a0.imag == pytest.approx(0.0, abs=1e-20)


# ---------------------------------------------------------------------------
# angular averages
# ---------------------------------------------------------------------------


radii = st.floats(min_value=0.05, max_value=5.0)


@given(r=radii, s=radii, d=st.integers(5, 10))
def test_spherical_mean_of_squared_distance(r, s, d):
    # mean of |r w - s e1|^2 is r^2 + s^2; its dipole average is -2 r s / d
    ker = K.PowerLogKernel(((1.0, 2.0, 0),))
    assert K.radial_average(d, ker, r, s).real == pytest.approx(r * r + s * s, rel=1e-12)
    assert K.radial_average(d, ker, r, s, l=1).real == pytest.approx(-2 * r * s / d, rel=1e-10, abs=1e-13)


@given(r=radii, s=radii, d=st.integers(5, 10))
def test_newtonian_mean_value_property(r, s, d):
    # |x - y|^(2-d) is harmonic away from the diagonal
    if abs(r - s) < 1e-3 * max(r, s):
        return
    ker = K.PowerLogKernel(((1.0, float(2 - d), 0),))
    got = K.radial_average(d, ker, r, s).real
    assert got == pytest.approx(max(r, s) ** (2 - d), rel=1e-9)


@given(r=radii, s=radii, d=st.integers(5, 9))
def test_average_symmetric_in_radii(r, s, d):
    ker = K.PowerLogKernel(((1.0, float(4 - d), 0), (0.3, 1.0, 1)))
    assert K.radial_average(d, ker, r, s) == K.radial_average(d, ker, s, r)


@given(r=radii, s=radii, p=st.sampled_from([-1.0, 1.0, 3.0]))
def test_riesz_mean_matches_quadrature(r, s, p):
    if abs(r - s) < 1e-3:
        return
    ker = K.PowerLogKernel(((1.0, p, 0),))
    assert K.riesz_mean(5, p, r, s) == pytest.approx(K.radial_average(5, ker, r, s).real, rel=1e-9)


def test_average_rejects_nonintegrable_singularity():
    ker = K.PowerLogKernel(((1.0, -4.0, 0),))
    with pytest.raises(SingularityError):
        K.radial_average(5, ker, 1.0, 1.0)


@pytest.mark.parametrize("l", [0, 1, 2])
def test_channel_green_matches_averaged_kernel(l):
    d = 5
    mu = 0.8 * np.exp(1j * np.pi / 8)
    p = K.SpectralPoint(mu)
    r, s = 0.7, 1.9
    quad = K.radial_average(d, lambda D: K.biharm_kernel(d, p, D), r, s, l=l, singular_power=4.0 - d)
    closed = K.biharm_channel_green(d, l, mu, min(r, s), max(r, s))
    assert rel(closed, quad) < 1e-9


def test_log_corrected_slope_recovers_power():
    mu = np.geomspace(1e-4, 1e-1, 20)
    assert K.log_corrected_slope(mu, mu ** 3, False) == pytest.approx(3.0)
    assert K.log_corrected_slope(mu, mu ** 2 * np.log(mu), True) == pytest.approx(2.0, abs=1e-6)
    mixed = mu ** 6 * ((0.3 + 0.1j) * np.log(mu) + 2.0 - 1j)
    assert K.log_corrected_slope(mu, mixed, True) == pytest.approx(6.0, abs=1e-6)


def test_sphere_area():
    assert K.sphere_area(3) == pytest.approx(4 * math.pi)
    assert K.sphere_area(5) == pytest.approx(8 * math.pi ** 2 / 3)


@pytest.mark.parametrize("d", [5, 6, 7, 8, 9])
def test_kernel_order_law(d):
    mus = np.geomspace(1e-3, 1e-1, 25)
    rows = K.kernel_order_law(d, 2.0, mus)
    assert [r.label for r in rows] == [g.label for g in K.expansion_coefficients(d).groups]
    assert rows[0].decades >= 1.5
    for row in rows:
        if row.resolved:
            assert abs(row.slope - row.next_order) <= 0.1, row


def test_order_law_drops_samples_below_rounding_floor():
    rows = K.kernel_order_law(9, 0.5, np.geomspace(1e-3, 1e-1, 25))
    assert not rows[-1].resolved
    assert rows[-1].to_dict()["decades"] == 0.0
