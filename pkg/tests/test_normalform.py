"""Tests for the Fourier-Taylor algebra and the normal-form pipeline."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parabolic_lab import normalform as nf
from parabolic_lab.mcgehee import normal_chart_hamiltonian
from parabolic_lab.models import ModelId, ModelParams
from parabolic_lab.normalform import FourierTaylorSeries as FTS

N, K = 8, 3
RC3BP = ModelParams(ModelId.RC3BP, mu=1e-3)

coef = st.floats(-1, 1, allow_nan=False).filter(lambda c: abs(c) > 1e-3)


@st.composite
def series(draw, min_degree=1, max_degree=3, max_k=2, terms=4):
    """Random real series with few terms of low degree."""
    out = {}
    for _ in range(draw(st.integers(1, terms))):
        deg = draw(st.integers(min_degree, max_degree))
        l = draw(st.integers(0, deg))
        k = draw(st.integers(0, max_k))
        par = "c" if k == 0 else draw(st.sampled_from("cs"))
        out[(l, deg - l, k, par)] = draw(coef)
    return FTS.from_coeffs(out, N, K)


points = st.tuples(st.floats(0.05, 0.5), st.floats(0.05, 0.5), st.floats(0, 2 * np.pi))


def test_resonant_cubic():
    q3 = FTS.monomial(3, 0, N, K)
    F = nf.solve_homological(q3, "resonant_poly")
    assert F.coeffs == pytest.approx({(3, 0, 0, "c"): -1.0 / 3.0})


def test_resonant_monomial_raises():
    with pytest.raises(nf.ResonanceError):
        nf.solve_homological(FTS.monomial(2, 2, N, K), "resonant_poly")
    with pytest.raises(nf.ResonanceError):
        nf.solve_homological(FTS.monomial(1, 0, N, K), "periodic_zero_mean")
    with pytest.raises(ValueError):
        nf.solve_homological(FTS.monomial(1, 0, N, K), "unknown")


def test_caps_are_enforced():
    with pytest.raises(nf.CapOverflowError):
        FTS.from_coeffs({(9, 0, 0, "c"): 1.0}, N, K)
    with pytest.raises(nf.CapOverflowError):
        FTS.monomial(1, 0, N, K) + FTS.monomial(1, 0, N + 1, K)


@given(series(), points)
def test_real_coefficients_round_trip(S, z):
    T = FTS.from_coeffs(S.coeffs, N, K)
    assert T(*z) == pytest.approx(S(*z), abs=1e-13)


@given(series(), series(), points)
def test_product_matches_pointwise_product(F, G, z):
    # harmonics 1 + 2 fit under K = 3, so nothing is truncated
    F, G = F.recapped(N, 1).recapped(N, K), G.recapped(N, 2).recapped(N, K)
    assert F.product(G)(*z) == pytest.approx(F(*z) * G(*z), rel=1e-10, abs=1e-12)
    assert F.product(G)(*z) == pytest.approx(G.product(F)(*z), rel=1e-12, abs=1e-14)


@given(series(), series())
def test_bracket_is_antisymmetric(F, G):
    lhs = nf.poisson_bracket(F, G)
    rhs = nf.poisson_bracket(G, F)
    assert (lhs + rhs).max_abs() < 1e-12


@given(series(max_degree=2), points)
def test_bracket_matches_weighted_formula(F, z):
    q, p, t = z
    G = nf.kepler_normal_part(N, K)
    value = nf.poisson_bracket(F, G)(*z)
    w = (q + p) ** 3
    # {F, -qp + I} = (q+p)^3 (p F_p - q F_q) + F_t
    expected = w * (p * F.diff_p()(*z) - q * F.diff_q()(*z)) + F.diff_t()(*z)
    assert value == pytest.approx(expected, rel=1e-10, abs=1e-12)


@given(series(max_k=0))
def test_resonant_poly_solves_its_equation(h):
    h = h - FTS.from_coeffs({key: v for key, v in h.coeffs.items() if key[0] == key[1]}, N, K)
    F = nf.solve_homological(h, "resonant_poly")
    q, p = nf.coordinate("q", N, K), nf.coordinate("p", N, K)
    lhs = q.product(F.diff_q()) - p.product(F.diff_p())
    assert (lhs + h).max_abs() < 1e-12


@given(series())
def test_periodic_zero_mean_solves_its_equation(h):
    h = h.oscillating_part()
    F = nf.solve_homological(h, "periodic_zero_mean")
    assert (F.diff_t() - h).max_abs() < 1e-12
    assert F.mean_part().max_abs() == 0.0


@pytest.mark.parametrize("k", [1, 2, 3])
def test_Lk_triangular_inverts_apply_Lk(k):
    coeffs = {(2, 0, 1, "c"): 0.7, (3, 0, 2, "s"): -0.4, (4, 0, 1, "s"): 0.25}
    h = FTS.from_coeffs(coeffs, N, K)
    f = nf.solve_homological(h, "Lk_triangular", k_index=k)
    residual = nf.apply_Lk(f, k) - h
    # the top degrees are lost to truncation
    assert residual.truncated(N - 3).max_abs() < 1e-12


@given(series(min_degree=2))
def test_lie_transform_keeps_linear_part(F):
    q = nf.coordinate("q", N, K)
    image = nf.lie_transform(q, F)
    assert image.min_degree() == 1
    assert image.degree_part(1).max_abs() == pytest.approx(1.0)


def test_lie_transform_rejects_degree_zero_generator():
    F = FTS.time_series([0.0, 1.0], [0.0], N, K)
    with pytest.raises(nf.NonTerminatingError):
        nf.lie_transform(nf.kepler_normal_part(N, K), F)


@given(series())
def test_swap_and_time_reversal_are_involutions(S):
    assert (S.swap().swap() - S).max_abs() == 0.0
    assert (S.time_reversed().time_reversed() - S).max_abs() == 0.0


def test_coefficient_file_round_trip(tmp_path):
    H = nf.mcgehee_series(RC3BP, 8, 4)
    path = tmp_path / "coeffs.csv"
    nf.write_coefficients(H, path)
    back = nf.read_coefficients(path, 8, 4)
    assert (back - H.without_action()).max_abs() <= 1e-15 * H.max_abs()


@settings(max_examples=15, deadline=None)
@given(Q=st.floats(0.005, 0.03), P=st.floats(0.005, 0.03), t=st.floats(0, 2 * np.pi))
def test_series_matches_closed_form(Q, P, t):
    H = nf.mcgehee_series(RC3BP, 10, 8)
    assert H(Q, P, t) == pytest.approx(normal_chart_hamiltonian(Q, P, t, RC3BP), rel=1e-6, abs=1e-14)


def test_series_truncation_error_is_degree_twelve():
    # even class: the first dropped degree above the cap 10 is 12
    H = nf.mcgehee_series(RC3BP, 10, 8)
    err = [abs(H(s, 0.7 * s, 0.4) - normal_chart_hamiltonian(s, 0.7 * s, 0.4, RC3BP)) for s in (0.04, 0.02)]
    assert np.log2(err[0] / err[1]) == pytest.approx(12.0, abs=0.3)


def test_reversibility_keeps_even_cosine_class():
    H = nf.mcgehee_series(RC3BP, 10, 8)
    assert H.parity_class(1e-15) == {("E", "+")}
    sit = nf.mcgehee_series(ModelParams(ModelId.SITNIKOV, eps=0.2), 10, 4)
    assert ("D", "+") not in sit.parity_class(1e-15)


def test_normal_form_kills_low_degrees():
    H = nf.mcgehee_series(RC3BP, 10, 4)
    H6, chain = nf.normal_form(H, 6)
    assert len(chain) == len(chain.annotations) > 0
    assert nf.killable_residual(H, 6) > 1e-3
    assert nf.killable_residual(H6, 6) < 1e-12
    with pytest.raises(ValueError):
        nf.normal_form(H.without_action(), 6)


def test_invariant_graph_order_check():
    H = nf.mcgehee_series(RC3BP, 8, 4)
    with pytest.raises(nf.OrderMismatchError):
        nf.invariant_graph(H, 6)


def test_graphs_are_invariant():
    H = nf.mcgehee_series(RC3BP, 10, 4)
    gs, gu = nf.invariant_graphs(H, 6)
    assert nf.stable_graph_defect(H, gs, 6) < 1e-12
    assert nf.unstable_graph_defect(H, gu, 6) < 1e-12
    # reversibility maps one graph onto the other
    assert (gs.swap().time_reversed() - gu).max_abs() < 1e-12


def test_local_reduction_removes_boundary_terms():
    with nf.working_precision(30):
        assert nf.working_digits() == 30
    assert nf.working_digits() is None
    L = nf.local_normal_form(RC3BP, order=4, max_harmonic=4, digits=30)
    assert L.boundary_residual < 1e-25
    assert L.remainder.degree_part(2).max_abs() == 0.0
    assert L.remainder.truncated(L.truncation).max_abs() == L.remainder.max_abs()
