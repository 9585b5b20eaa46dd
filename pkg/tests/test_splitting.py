"""Tests for the homoclinic orbits, Melnikov modes and splitting functions."""

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parabolic_lab.models import ModelId, ModelParams, sitnikov_rho
from parabolic_lab.splitting import (
    AliasingError,
    SplittingFunction,
    UnderflowError,
    WindowError,
    default_pullback,
    entry_coordinate,
    fit_linearity,
    fit_sin_law,
    fourier_coeffs,
    homoclinic_orbit,
    kepler_residual,
    mass_moment,
    melnikov_mode,
    melnikov_potential,
    mode_ratios,
    rc3bp_sigma,
    rc3bp_splitting,
    rpc4bp_closed_form,
    sitnikov_energy_splitting,
    sitnikov_homoclinic,
    sitnikov_melnikov_sigma,
    sitnikov_rho_series,
    tau_of_u,
    time_energy_pullback,
)

RC3BP = ModelParams(ModelId.RC3BP, mu=1e-3, jacobi_J=6.0)


@given(st.floats(-1e6, 1e6))
def test_tau_solves_cubic(u):
    tau = tau_of_u(u)
    assert tau**3 + 3 * tau == pytest.approx(6 * u, rel=1e-12, abs=1e-12)


@given(st.floats(-50, 50))
def test_homoclinic_orbit_solves_kepler(u):
    res = kepler_residual(u)
    r, _, _ = homoclinic_orbit(u)
    assert np.max(np.abs(res)) < 1e-12 * max(1.0, r**-3)


def test_homoclinic_perihelion():
    r, y, alpha = homoclinic_orbit(0.0)
    assert (r, y, alpha) == pytest.approx((0.5, 0.0, np.pi))
    # the orbit sweeps an angle pi on each side of perihelion
    _, _, a_plus = homoclinic_orbit(1e9)
    _, _, a_minus = homoclinic_orbit(-1e9)
    assert abs(a_plus) < 1e-2 and abs(a_minus) < 1e-2


def test_mass_moments_vanish_at_dipole_order():
    for model, mu in ((ModelId.RC3BP, 0.1), (ModelId.RPC4BP, 0.1)):
        assert abs(mass_moment(ModelParams(model, mu=mu), 1, 1)) < 1e-40
    with pytest.raises(ValueError):
        mass_moment(ModelParams(ModelId.SITNIKOV), 2, 0)


def test_mode_underflow_guard():
    params = ModelParams(ModelId.RPC4BP, mu=0.1, G0=20.0)
    with pytest.raises(UnderflowError):
        melnikov_mode(params, 1)


def test_rpc4bp_modes_approach_closed_forms():
    # the l = 2, 3 ratios tend to one; l = 1 converges much more slowly
    low, high = mode_ratios(1e-3, 2.5), mode_ratios(1e-3, 3.5)
    for l in (2, 3):
        assert abs(high[l] - 1) < abs(low[l] - 1)
        assert abs(high[l] - 1) < 0.5 / 3.5
    with pytest.raises(ValueError):
        rpc4bp_closed_form(4, 1e-3, 3.0)


def test_equal_mass_modes_cancel():
    # at mu = 1/3 the triangle is symmetric under rotation by 2 pi/3;
    # the float 1/3 leaves 1 - 3 mu ~ 1e-16
    L1_equal = abs(melnikov_mode(ModelParams(ModelId.RPC4BP, mu=1.0 / 3.0, G0=3.0), 1))
    L1_generic = abs(melnikov_mode(ModelParams(ModelId.RPC4BP, mu=0.3, G0=3.0), 1))
    assert L1_equal < 1e-14 * L1_generic


def test_melnikov_potential_and_fourier_analysis():
    params = ModelParams(ModelId.RPC4BP, mu=1e-3, G0=3.0)
    with pytest.raises(ValueError):
        melnikov_potential(0.0, ModelParams(ModelId.RPC4BP, mu=1e-3, G0=2.0))
    fn = SplittingFunction("test", {0: mpmath.mpf(1), 1: mpmath.mpf("0.5"), 3: mpmath.mpf("-0.25")}, 0.5)
    coeffs = fourier_coeffs(fn, 4)
    assert [float(coeffs[l]) for l in range(5)] == pytest.approx([1.0, 0.5, 0.0, -0.25, 0.0], abs=1e-30)
    with pytest.raises(AliasingError):
        fourier_coeffs(fn, 4, points=16)
    value = melnikov_potential(0.3, params)
    modes_sum = sum(float(melnikov_mode(params, l)) * np.cos(l * 0.3) for l in range(5))
    assert float(value) == pytest.approx(modes_sum, rel=1e-12)
    with pytest.raises(ValueError):
        SplittingFunction("empty", {}, 0.0)


def test_rc3bp_first_harmonic_dominates():
    sigma, rest = rc3bp_sigma(RC3BP)
    assert sigma > 0
    assert rest < 1e-20 * sigma


@given(q=st.floats(0.05, 0.2))
def test_pullback_inverts_entry_coordinate(q):
    pb = default_pullback(RC3BP)
    u = pb.g(q)
    assert entry_coordinate(u) == pytest.approx(q, rel=1e-12)


def test_pullback_windows():
    pb = default_pullback(RC3BP)
    with pytest.raises(WindowError):
        pb.g(1.0)
    with pytest.raises(WindowError):
        time_energy_pullback((2.0, 1.0), RC3BP)
    with pytest.raises(WindowError):
        time_energy_pullback((100.0, 200.0), RC3BP)
    # the leading inverse is u = 1/(3 q^3)
    q = np.array([0.05, 0.1])
    np.testing.assert_allclose(pb.g(q) * 3 * q**3, 1.0, rtol=0.1)
    with pytest.raises(WindowError):
        rc3bp_splitting(0.01, RC3BP)


@given(t=st.floats(0, 2 * np.pi), eps=st.floats(0.0, 0.3))
def test_bessel_series_matches_kepler_solution(t, eps):
    assert sitnikov_rho_series(t, eps) == pytest.approx(sitnikov_rho(t, eps), abs=1e-14)


@given(st.floats(0.1, 300.0))
def test_sitnikov_homoclinic_zero_energy(u):
    z, y = sitnikov_homoclinic(u)
    assert 0.5 * y**2 - (z**2 + 0.25) ** -0.5 == pytest.approx(0.0, abs=1e-11)
    zm, ym = sitnikov_homoclinic(-u)
    assert (zm, ym) == pytest.approx((-z, y))


def test_sitnikov_sigma_sign_convention():
    peri = sitnikov_melnikov_sigma("pericentre")
    assert peri < 0
    assert sitnikov_melnikov_sigma("apocentre") == pytest.approx(-peri)
    with pytest.raises(ValueError):
        sitnikov_melnikov_sigma("elsewhere")


def test_sitnikov_splitting_vanishes_for_circular_primaries():
    assert abs(sitnikov_energy_splitting(1.0, 0.0)[0]) < 1e-10
    with pytest.raises(ValueError):
        sitnikov_energy_splitting(1.0, 0.3)


@settings(max_examples=20)
@given(A=st.floats(0.1, 5), c0=st.floats(-1, 1), b2=st.floats(-0.1, 0.1))
def test_sin_law_fit_recovers_harmonics(A, c0, b2):
    u = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    fit = fit_sin_law(u, c0 + A * np.sin(u) + b2 * np.cos(2 * u), 0.1)
    assert fit.amplitude == pytest.approx(A, rel=1e-10)
    assert fit.phase_defect < 1e-10
    with pytest.raises(AliasingError):
        fit_sin_law(u[:5], np.sin(u[:5]), 0.1)


def test_linearity_fit():
    eps = np.array([0.02, 0.04, 0.08])
    lin = fit_linearity(eps, -1.0 * eps + 0.5 * eps**2)
    assert (lin.sigma, lin.quadratic) == pytest.approx((-1.0, 0.5))
    assert lin.remainder_ratio == pytest.approx(0.04)
