"""Tests for the Henon renormalization, the cone diagnostics and the lambda-lemma demo."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parabolic_lab.flow import LAMBDA_LIMIT
from parabolic_lab.renorm import (
    GlobalModel,
    NoTangencyError,
    RenormDivergenceError,
    SingularSystemError,
    cone_diagnostics,
    cone_exponent,
    fixed_point_system,
    henon,
    henon_fixed_points,
    henon_jacobian,
    lambda_failure_demo,
    line_of_tangencies,
    renorm_report,
    renormalized_map,
    rescaling,
    return_map_offsets,
    solve_renorm_fixed_point,
    tangency_wedge,
    write_error_surface,
)

T_REF = 2e5


@pytest.fixture(scope="module")
def scaling():
    return rescaling(T_REF)


@given(kappa=st.floats(-1.0, 10.0))
def test_henon_fixed_points(kappa):
    pts = henon_fixed_points(kappa)
    assert len(pts) == 2
    for fp in pts:
        Q, P = henon(fp.P, fp.P, kappa)
        assert (float(Q), float(P)) == pytest.approx((fp.P, fp.P), abs=1e-12)
        assert abs(np.prod(fp.eigenvalues)) == pytest.approx(1.0)
    # the outer point is a saddle for kappa > -1
    if kappa > -0.99:
        assert pts[0].hyperbolic


def test_henon_fixed_points_absent_below_fold():
    assert henon_fixed_points(-1.5) == []


@given(P=st.floats(-10, 10))
def test_henon_is_area_preserving(P):
    assert np.linalg.det(henon_jacobian(P)) == pytest.approx(1.0)


def test_fixed_point_solves_system(scaling):
    fp = scaling.fixed
    F, _ = fixed_point_system(np.array([fp.xi, fp.eta, fp.eps]), T_REF, GlobalModel())
    assert np.max(np.abs(F)) < 1e-12
    assert fp.residual < 1e-12 < fp.seed_residual
    # the tangency point is a fixed point of the return map at eps*
    xi2, eta2 = return_map_offsets(fp.xi, fp.eta, fp.eps, T_REF)
    assert (float(xi2), float(eta2)) == pytest.approx((fp.xi, fp.eta), abs=1e-10)


def test_fixed_point_guards():
    with pytest.raises(SingularSystemError):
        solve_renorm_fixed_point(T_REF, GlobalModel(c=0.0))
    # below T ~ 4.5e4 the fixed point does not exist for the default model
    with pytest.raises(RenormDivergenceError):
        solve_renorm_fixed_point(1e4)


@given(Q=st.floats(-3, 3), P=st.floats(-3, 3))
def test_offsets_round_trip(scaling, Q, P):
    xi, eta = scaling.to_offsets(Q, P)
    Q2, P2 = scaling.from_offsets(xi, eta)
    assert (float(Q2), float(P2)) == pytest.approx((Q, P), abs=1e-12)


def test_renormalized_map_approaches_henon():
    errors, defects = [], []
    for T in (1e5, 4e5, 1.6e6):
        rep = renorm_report(T, 0.0)
        errors.append(rep.sup_error)
        defects.append(rep.det_defect)
    assert errors[0] > errors[1] > errors[2]
    assert defects[0] > defects[1] > defects[2]
    # the error is dominated by the determinant defect
    assert errors[2] == pytest.approx(2 * defects[2], rel=0.1)


def test_renormalized_origin_is_fixed_at_kappa_zero(scaling):
    Q2, P2 = renormalized_map(np.array([0.0]), np.array([0.0]), 0.0, T_REF, scaling)
    assert (float(Q2[0]), float(P2[0])) == pytest.approx((0.0, 0.0), abs=1e-8)
    # off kappa = 0 the origin maps to (0, kappa) up to higher-order terms
    _, P2 = renormalized_map(np.array([0.0]), np.array([0.0]), 0.5, T_REF, scaling)
    assert float(P2[0]) == pytest.approx(0.5, abs=1e-3)


def test_report_outputs(tmp_path, scaling):
    rep = renorm_report(T_REF, 1.0, scaling=scaling)
    data = json.loads(rep.to_json())
    assert data["T"] == T_REF and "errors" not in data
    path = tmp_path / "surface.csv"
    write_error_surface(path, rep)
    lines = path.read_text().splitlines()
    assert lines[0] == "Q,P,err_Q,err_P"
    assert len(lines) == 1 + 41 * 41


@settings(max_examples=20, deadline=None)
@given(xi=st.floats(-0.04, 0.04), eta=st.floats(-0.04, 0.04), T=st.floats(1e3, 1e6))
def test_cone_weighted_product_is_one(xi, eta, T):
    cd = cone_diagnostics(xi, eta, T)
    assert cd.weighted_product == pytest.approx(1.0, rel=1e-10)
    assert cd.lambda_plus > 1 > abs(cd.lambda_minus)
    assert np.linalg.norm(cd.v_minus) == pytest.approx(1.0)


def test_cone_exponent_on_renorm_sweep():
    T = (1e5, 2e5, 4e5, 8e5, 1.6e6)
    assert cone_exponent(T) == pytest.approx(5.0 / 3.0, abs=0.1)


def test_line_of_tangencies():
    xi, eta, slope = line_of_tangencies(1.6e6, np.linspace(-0.02, 0.02, 5))
    for x, e in zip(xi, eta):
        assert abs(tangency_wedge(x, e, 1.6e6)) < 1e-9
    assert np.max(np.abs(slope)) < 0.2
    # at T = 1e5 the branch does not reach the edge of the entry section
    with pytest.raises(NoTangencyError):
        line_of_tangencies(1e5)


@pytest.mark.parametrize("q0", [0.05, 0.1, 0.2])
def test_lambda_failure_demo(q0):
    v, dist = lambda_failure_demo(q0)
    assert dist < 1e-6
    assert v @ LAMBDA_LIMIT == pytest.approx(1.0)


def test_lambda_failure_demo_domain():
    with pytest.raises(ValueError):
        lambda_failure_demo(0.5)
