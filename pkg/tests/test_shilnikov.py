"""Tests for the Shilnikov boundary-value problem near the parabolic point."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parabolic_lab import normalform as nf
from parabolic_lab.shilnikov import (
    PI_OVER_16,
    InversionError,
    ShilnikovCache,
    G_closed,
    core_maps,
    diagonal_curves,
    g_density,
    integral_pi_over_16,
    invert_stable,
    local_map,
    passage_time,
    picard_solve,
    rate_fit,
    remainder_from_series,
    shilnikov_maps,
    simpson_time,
    solve_s_star,
    solve_s_star_core,
)

box = st.floats(0.02, 0.1)
times = st.floats(300.0, 1e6)


def test_pi_over_16():
    assert PI_OVER_16 == pytest.approx(np.pi / 16, rel=1e-15)
    assert abs(integral_pi_over_16() - np.pi / 16) < 1e-10
    assert G_closed(np.inf) == pytest.approx(np.pi / 16, rel=1e-15)
    assert G_closed(-np.inf) == 0.0


@given(st.floats(-30, 30))
def test_G_closed_is_antiderivative(sigma):
    h = 1e-4
    fd = (G_closed(sigma + h) - G_closed(sigma - h)) / (2 * h)
    assert fd == pytest.approx(g_density(sigma), rel=1e-6, abs=1e-11)
    # symmetry of the density
    assert G_closed(sigma) + G_closed(-sigma) == pytest.approx(np.pi / 16, rel=1e-14)


@given(xi=box, eta=box, T=times)
def test_core_s_star_realises_time(xi, eta, T):
    s = solve_s_star_core(xi, eta, T)
    assert passage_time(xi, eta, s) == pytest.approx(T, rel=1e-12)


@settings(max_examples=30)
@given(xi=box, eta=box, T=times)
def test_core_partials_match_finite_differences(xi, eta, T):
    d = core_maps(xi, eta, T)
    for var, name in (("xi", "dx_dxi"), ("eta", "dx_deta")):
        h = 1e-6 * (xi if var == "xi" else eta)
        args_p = (xi + h, eta) if var == "xi" else (xi, eta + h)
        args_m = (xi - h, eta) if var == "xi" else (xi, eta - h)
        fx = (core_maps(*args_p, T)["x_T"] - core_maps(*args_m, T)["x_T"]) / (2 * h)
        fy = (core_maps(*args_p, T)["y_T"] - core_maps(*args_m, T)["y_T"]) / (2 * h)
        assert d[name] == pytest.approx(fx, rel=1e-5)
        assert d["dy_d" + var] == pytest.approx(fy, rel=1e-5)


@given(u=box, T=times)
def test_core_is_reversible(u, T):
    # exchanging xi and eta exchanges x_T and y_T
    d1 = core_maps(u, 0.07, T)
    d2 = core_maps(0.07, u, T)
    assert d1["x_T"] == pytest.approx(d2["y_T"], rel=1e-12)
    assert d1["dx_dxi"] == pytest.approx(d2["dy_deta"], rel=1e-10)


def test_leading_order_decay():
    # x_T (xi eta) -> xi (pi/16T)^{2/3} as T grows
    T = np.array([1e6, 1e8])
    d = core_maps(0.1, 0.1, T)
    lead = 0.1 * (PI_OVER_16 / T) ** (2 / 3) / 0.01
    np.testing.assert_allclose(d["x_T"], lead, rtol=2e-2)
    assert abs(d["x_T"][1] / lead[1] - 1) < abs(d["x_T"][0] / lead[0] - 1)


def test_picard_without_remainder_is_exact_core():
    s = float(solve_s_star_core(0.05, 0.08, 2000.0))
    sol = picard_solve(0.05, 0.08, s)
    d = core_maps(0.05, 0.08, 2000.0)
    assert sol.x_T == pytest.approx(float(d["x_T"]), rel=1e-14)
    assert sol.y_T == pytest.approx(float(d["y_T"]), rel=1e-14)
    assert simpson_time(sol) == pytest.approx(2000.0, rel=1e-8)
    with pytest.raises(ValueError):
        picard_solve(-0.05, 0.08, s)


def test_minimum_time_is_enforced():
    with pytest.raises(ValueError):
        solve_s_star(0.1, 0.1, 100.0)


@pytest.fixture(scope="module")
def small_remainder():
    N, K = 8, 2
    R = nf.FourierTaylorSeries.from_coeffs({(2, 2, 0, "c"): 0.3, (3, 2, 1, "c"): 0.2}, N, K)
    return remainder_from_series(R)


def test_picard_with_remainder_satisfies_boundary_conditions(small_remainder):
    assert small_remainder.order == 4
    sol = picard_solve(0.05, 0.06, 4.0, remainder=small_remainder)
    assert sol.q[0] == pytest.approx(0.05, rel=1e-15)
    assert sol.p[-1] == pytest.approx(0.06, rel=1e-13)
    assert sol.last_update < 1e-13
    # the remainder shifts the endpoints only at relative order |z|^2
    free = picard_solve(0.05, 0.06, 4.0)
    assert abs(sol.x_T / free.x_T - 1) < 0.05


def test_maps_with_remainder_hit_the_time(small_remainder):
    ev = shilnikov_maps(0.05, 0.06, 400.0, remainder=small_remainder)
    sol = picard_solve(0.05, 0.06, ev.s_star, remainder=small_remainder)
    assert sol.T == pytest.approx(400.0, rel=1e-10)
    core = shilnikov_maps(0.05, 0.06, 400.0)
    np.testing.assert_allclose(ev.jac, core.jac, rtol=0.1)


@given(q=box, eta=box, T=times)
def test_invert_stable_round_trip(q, eta, T):
    y = core_maps(q, eta, T)["y_T"]
    assert invert_stable(q, y, T) == pytest.approx(eta, rel=1e-9)


def test_invert_stable_domain():
    with pytest.raises(InversionError):
        invert_stable(0.05, -1e-3, 1000.0)


@given(q=box, eta=box, T=st.floats(300.0, 1e5))
def test_local_map_preserves_weighted_area(q, eta, T):
    p = float(core_maps(q, eta, T)["y_T"])
    q_out, p_out, jac = local_map(q, p, T)
    ratio = np.linalg.det(jac) * ((q_out + p_out) / (q + p)) ** -3
    assert ratio == pytest.approx(1.0, rel=1e-8)


def test_diagonal_curves_are_reflections():
    minus, plus = diagonal_curves(1000.0, (0.02, 0.1), n=11)
    np.testing.assert_allclose(minus[:, ::-1], plus, rtol=1e-13)


def test_rate_fit_recovers_power():
    T = np.array([1e3, 2e3, 4e3])
    assert rate_fit(T, 3.0 * T**-0.75) == pytest.approx(-0.75)


def test_cache_round_trip(tmp_path):
    path = str(tmp_path / "cache.csv")
    cache = ShilnikovCache(path)
    first = cache.get_or_compute("RC3BP", 1e-3, 1000.0, 0.05, 0.06)
    assert cache.get_or_compute("RC3BP", 1e-3, 1000.0, 0.05, 0.06) is first
    cache.save()
    loaded = ShilnikovCache.load(path)
    again = loaded.get_or_compute("RC3BP", 1e-3, 1000.0, 0.05, 0.06)
    assert again.x_T == first.x_T and np.array_equal(again.jac, first.jac)
    assert loaded.digest() == cache.digest()
    with open(path, "a") as handle:
        handle.write("RC3BP,0.001,0.1,2000.0,0.05,0.05,1,1,1,1,0,0,1\n")
    with pytest.raises(ValueError):
        ShilnikovCache.load(path)
