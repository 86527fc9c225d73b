"""Radial grids, potentials and the Nystrom operators built on them."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from biharmonic_resonance import kernels as K
from biharmonic_resonance.discretization import (
    Bump,
    Discretization,
    RadialProblem,
    assemble_P,
    beta_requirement,
    build_grid,
    channel_moments,
    default_grid,
)
from biharmonic_resonance.errors import DomainError, ValidationError

from helpers import case


def small_problem(d=5, channels=(0, 1), alpha=-3.0):
    return RadialProblem(d, (Bump("poly", 1.0, 0.8),), (alpha,), channels=channels)


@pytest.fixture(scope="module")
def small():
    prob = small_problem()
    grid = default_grid(prob, N=48)
    return Discretization(prob, grid)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@given(d=st.integers(5, 10), k=st.integers(0, 8), R=st.floats(0.5, 6.0),
       scheme=st.sampled_from(["gauss", "graded"]))
def test_grid_integrates_radial_monomials(d, k, R, scheme):
    g = build_grid(48, R, scheme, d, breakpoints=(0.3 * R,))
    exact = K.sphere_area(d) * R ** (d + k) / (d + k)
    assert np.sum(g.weights * g.nodes ** k) == pytest.approx(exact, rel=1e-12)


def test_grid_respects_breakpoints_and_size():
    g = build_grid(60, 2.0, "gauss", 5, breakpoints=(0.2, 1.8))
    assert g.size == 60
    assert 0.2 in np.round(g.panels, 14) and 1.8 in np.round(g.panels, 14)
    assert g.nodes[-1] < 2.0


def test_grid_validation():
    with pytest.raises(DomainError):
        build_grid(1, 1.0)
    with pytest.raises(DomainError):
        build_grid(20, -1.0)
    with pytest.raises(DomainError):
        build_grid(20, 1.0, scheme="trapezoid")


def test_grid_key_and_scaling():
    g = build_grid(24, 1.0, dimension=6)
    h = g.scaled(2.0)
    assert h.key == g.key
    assert np.allclose(h.weights, 2 * g.weights)
    assert build_grid(24, 1.0, dimension=7).key != g.key


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------


def test_bump_profiles():
    b = Bump("poly", 1.0, 0.5)
    assert b(1.0) == 1.0 and b(1.5) == 0.0 and b(0.4) == 0.0
    assert b(1.25) == pytest.approx((1 - 0.25) ** 4)
    assert b.support == (0.5, 1.5)
    gb = Bump("gaussian", 0.0, 1.0)
    assert gb(1.0) == pytest.approx(math.exp(-1))
    with pytest.raises(ValidationError):
        Bump("box", 1.0, 1.0)
    with pytest.raises(ValidationError):
        Bump("poly", 1.0, 0.0)


def test_problem_validation():
    b = Bump("poly", 1.0, 0.5)
    with pytest.raises(DomainError):
        RadialProblem(4, (b,), (1.0,))
    with pytest.raises(ValidationError):
        RadialProblem(5, (b,), (1.0, 2.0))
    with pytest.raises(ValidationError):
        RadialProblem(5, (b,), (1.0,), beta=beta_requirement(5))
    with pytest.raises(ValidationError):
        RadialProblem(5, (b,), (1.0,), channels=(0, 0))
    assert beta_requirement(6) == 14.0 and beta_requirement(11) == 11.0


def test_problem_round_trip_and_copies():
    p = RadialProblem(6, (Bump("poly", 1.0, 0.5), Bump("gaussian", 0.0, 0.3)), (-2.0, 1.5),
                      channels=(0, 1))
    assert RadialProblem.from_dict(p.to_dict()) == p
    assert p.with_alpha((1.0, 1.0)).alpha == (1.0, 1.0)
    assert p.with_channels((1,)).channels == (1,)
    assert p.breakpoints == (0.5, 1.5)
    r = np.linspace(0, 3, 7)
    assert np.allclose(p.V(r), -2.0 * p.bumps[0](r) + 1.5 * p.bumps[1](r))
    assert np.allclose(p.v(r) ** 2 * p.U(r), p.V(r))


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def test_discretization_drops_inactive_nodes(small):
    assert np.all(small.V != 0)
    assert small.size == 2 * small.n_active
    assert np.allclose(small.vhat, np.sqrt(np.abs(small.V) * small.w))


@pytest.mark.parametrize("d", [5, 7])
def test_vG0v_matches_riesz_mean(d):
    prob = small_problem(d, channels=(0,))
    disc = Discretization(prob, default_grid(prob, N=36))
    A = disc.T0().entries - np.diag(disc.U)
    a0 = K.biharm_series(d)[0][0].real
    i, j = np.triu_indices(disc.n_active, 1)
    sel = slice(0, None, 37)
    ref = a0 * K.riesz_mean(d, 4.0 - d, disc.r[i[sel]], disc.r[j[sel]]) * disc.vhat[i[sel]] * disc.vhat[j[sel]]
    assert np.allclose(A[i[sel], j[sel]], ref, rtol=1e-10, atol=0)


def test_channel_one_block_matches_direct_average(small):
    ker = K.PowerLogKernel(((1.0, -1.0, 0), (0.5, 1.0, 0)))
    A = small.vGv(ker).entries
    blk = small.block(1)
    n = small.n_active
    for i, j in [(3, 17), (10, 30), (0, n - 1)]:
        ref = K.radial_average(5, ker, small.r[i], small.r[j], l=1).real * small.vhat[i] * small.vhat[j]
        assert A[blk, blk][i, j] == pytest.approx(ref, rel=1e-9)
    # channels do not couple
    assert np.all(A[small.block(0), blk] == 0)


@pytest.mark.parametrize("mu_abs", [3e-3, 0.3, 2.0])
def test_M_is_complex_symmetric(small, mu_abs):
    M = small.M(K.SpectralPoint.on_ray(mu_abs))
    assert M.symmetry_defect() < 1e-14
    assert not M.is_hermitian()
    assert small.T0().is_hermitian()


@pytest.mark.parametrize("mu_abs", [1e-2, 0.2, 1.5])
def test_M_minus_T0_two_routes(small, mu_abs):
    p = K.SpectralPoint.on_ray(mu_abs)
    direct = small.M_minus_T0(p)
    diff = small.M(p).entries - small.T0().entries
    scale = np.max(np.abs(direct))
    assert np.max(np.abs(direct - diff)) < 1e-10 * max(scale, 1.0)


def test_M_minus_T0_against_kernel_quadrature(small):
    d = 5
    p = K.SpectralPoint.on_ray(0.05)
    a0 = K.biharm_series(d)[0][0]
    direct = small.M_minus_T0(p)

    def delta(D):
        return K.biharm_kernel(d, p, D) - a0 / D

    for l, (i, j) in [(0, (4, 30)), (1, (12, 12))]:
        quad = K.radial_average(d, delta, small.r[i], small.r[j], l=l)
        k = small.channels.index(l)
        got = direct[small.block(k), small.block(k)][i, j]
        assert got == pytest.approx(quad * small.vhat[i] * small.vhat[j], rel=1e-8)


def test_boundary_point_lower_side_is_conjugate(small):
    up = small.M(K.SpectralPoint.boundary(0.4)).entries
    lo = small.M(K.SpectralPoint.boundary(0.4, side="lower")).entries
    assert np.allclose(lo, up.conj(), rtol=0, atol=1e-15 * np.abs(up).max())


def test_projection_is_rank_one_orthogonal(small):
    P = small.P().entries
    assert np.allclose(P @ P, P, atol=1e-14)
    assert np.allclose(P, P.T)
    assert np.trace(P) == pytest.approx(1.0)
    assert np.allclose(P[small.block(1)], 0)
    assert np.allclose(P @ small.radial_vector(small.vhat, 0), small.radial_vector(small.vhat, 0))
    with pytest.raises(DomainError):
        Discretization(small.problem.with_channels((1,)), small.grid).P()


def test_assemblers_agree_with_discretization(small):
    assert np.array_equal(assemble_P(small.problem, small.grid).entries, small.P().entries)


def test_moment_cache_is_symmetric_and_reused():
    r = np.linspace(0.2, 2.0, 9)
    m1 = channel_moments(6, 0, r, r)
    assert channel_moments(6, 0, r, r) is m1
    assert np.allclose(m1.pow_avg, np.transpose(m1.pow_avg, (0, 2, 1)))
    m2 = channel_moments(6, 0, r[:4], r)
    assert np.allclose(m2.pow_avg, m1.pow_avg[:, :4, :])
    assert np.allclose(m2.log_avg, m1.log_avg[:, :4, :])


def test_kernel_to_points_matches_block(small):
    p = K.SpectralPoint.on_ray(0.1)
    row = small.kernel_to_points(0, small.r[5:6], p)[0]
    blk = small.vR0v(p).entries[small.block(0), small.block(0)][5]
    assert np.allclose(row * small.vhat[5] * small.vhat, blk, rtol=1e-13)


def test_dimension_mismatch_rejected():
    prob = small_problem()
    with pytest.raises(ValidationError):
        Discretization(prob, build_grid(20, 2.0, dimension=6))


def test_fixture_grid_is_positive_definite_on_free_part():
    # the static operator vG0v is positive on the radial channel
    c = case(5, "Regular")
    A = c.disc.T0().entries - np.diag(np.tile(c.disc.U, len(c.disc.channels)))
    ev = np.linalg.eigvalsh(A[c.disc.block(0), c.disc.block(0)])
    assert ev.min() > -1e-12 * ev.max()
