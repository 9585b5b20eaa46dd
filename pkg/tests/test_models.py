"""Tests for the restricted-problem potentials and the Jacobi reduction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parabolic_lab.models import (
    DomainError,
    ModelId,
    ModelParams,
    PolarState,
    eval_potential,
    interaction_potential,
    jacobi_residual,
    multipole_bracket,
    primaries,
    reduce_jacobi,
    reduced_angular_momentum,
    reduced_angular_momentum_newton,
    reduced_series_value,
    sitnikov_eccentric_anomaly,
    sitnikov_rho,
)

RC3BP = ModelParams(ModelId.RC3BP, mu=0.1, jacobi_J=6.0)
RPC4BP = ModelParams(ModelId.RPC4BP, mu=0.1, jacobi_J=6.0, G0=3.0)


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(mu=0.6)
    with pytest.raises(ValueError):
        ModelParams(ModelId.SITNIKOV, eps=1.0)
    with pytest.raises(ValueError):
        ModelParams(jacobi_J=1.0)
    with pytest.raises(ValueError):
        ModelParams(G0=0.0)
    # the Jacobi threshold does not apply to the axial problem
    assert not ModelParams(ModelId.SITNIKOV, jacobi_J=1.0).planar
    assert ModelParams("RPC4BP").model_id is ModelId.RPC4BP


def test_polar_state_rejects_bad_input():
    with pytest.raises(ValueError):
        PolarState(0.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        PolarState(1.0, np.nan, 0.0, 1.0)


@pytest.mark.parametrize("params", [RC3BP, RPC4BP])
def test_centre_of_mass_at_origin(params):
    masses, dist, angle = primaries(params)
    assert masses.sum() == pytest.approx(1.0)
    com = np.sum(masses * dist * np.exp(1j * angle))
    assert abs(com) < 1e-15


def test_triangle_has_unit_sides():
    _, dist, angle = primaries(RPC4BP)
    z = dist * np.exp(1j * angle)
    sides = np.abs(z - np.roll(z, 1))
    np.testing.assert_allclose(sides, 1.0, rtol=1e-14)


@given(st.floats(-0.5, 0.5).filter(lambda u: abs(u) > 1e-6))
def test_multipole_bracket_matches_direct_formula(u):
    direct = (1.0 + u) ** -0.5 - 1.0
    assert multipole_bracket(u) == pytest.approx(direct, rel=1e-9)


def test_multipole_bracket_small_argument():
    # direct subtraction loses everything here
    assert multipole_bracket(1e-17) == pytest.approx(-5e-18, rel=1e-12)


@given(r=st.floats(3.0, 200.0), phi=st.floats(0, 2 * np.pi))
def test_potential_matches_sum_over_primaries(r, phi):
    masses, dist, angle = primaries(RC3BP)
    direct = sum(m / np.abs(r * np.exp(1j * phi) - d * np.exp(1j * a)) for m, d, a in zip(masses, dist, angle))
    assert interaction_potential(r, phi, RC3BP) == pytest.approx(direct - 1.0 / r, rel=1e-8, abs=1e-15)


def test_potential_decays_as_quadrupole():
    # centre of mass at the origin kills the dipole, so U ~ r^{-3}
    r = np.array([100.0, 200.0])
    U = np.abs(eval_potential(r, 0.3, RC3BP))
    assert np.log(U[0] / U[1]) / np.log(2.0) == pytest.approx(3.0, abs=0.02)


def test_potential_domain():
    with pytest.raises(DomainError):
        eval_potential(0.9, 0.0, RC3BP)
    # RPC4BP rescales the radius by G0^2
    with pytest.raises(DomainError):
        eval_potential(0.1, 0.0, RPC4BP)
    assert np.isfinite(eval_potential(0.2, 0.0, RPC4BP))


@given(t=st.floats(-20, 20), eps=st.floats(0, 0.9))
def test_kepler_equation_solved(t, eps):
    E = sitnikov_eccentric_anomaly(t, eps)
    assert E - eps * np.sin(E) == pytest.approx(t, abs=1e-12)


def test_sitnikov_rho_circular_and_extremes():
    t = np.linspace(0, 2 * np.pi, 7)
    np.testing.assert_allclose(sitnikov_rho(t, 0.0), 0.5)
    assert sitnikov_rho(0.0, 0.2) == pytest.approx(0.4)
    assert sitnikov_rho(np.pi, 0.2) == pytest.approx(0.6)


@given(r=st.floats(5.0, 500.0), y=st.floats(-0.5, 0.5), phi=st.floats(0, 2 * np.pi))
def test_reduced_momentum_solves_jacobi_equation(r, y, phi):
    G = reduced_angular_momentum(r, y, phi, RC3BP)
    assert abs(jacobi_residual(r, y, phi, G, RC3BP)) < 1e-12 * max(1.0, G**2 / r**2)
    assert G == pytest.approx(reduced_angular_momentum_newton(r, y, phi, RC3BP), rel=1e-11)


@settings(max_examples=30)
@given(r=st.floats(50.0, 500.0), y=st.floats(-0.1, 0.1), phi=st.floats(0, 2 * np.pi))
def test_series_agrees_with_closed_form(r, y, phi):
    exact = reduce_jacobi(r, y, phi, RC3BP)
    D = abs(0.5 * y**2 - 1 / r - RC3BP.jacobi_J)
    w = 2 * D / r**2
    # the truncated binomial tail is O(r^2 w^5)
    assert abs(reduced_series_value(r, y, phi, RC3BP) - exact) < 10 * r**2 * w**5 + 1e-12


def test_far_field_limit_of_reduced_hamiltonian():
    # H_red = h + G_tilde^2 / (2 r^2) with G_tilde -> J
    r, y = 1e4, 0.01
    H = reduce_jacobi(r, y, 0.0, RC3BP)
    h = 0.5 * y**2 - 1 / r
    assert H == pytest.approx(h + RC3BP.jacobi_J**2 / (2 * r**2), rel=1e-6)
