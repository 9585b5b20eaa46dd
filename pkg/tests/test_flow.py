"""Tests for the compactified flow, its return map and the local manifolds."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parabolic_lab.flow import (
    LAMBDA_LIMIT,
    ChartExitError,
    SectionPoint,
    Trajectory,
    area_defect,
    finite_difference_jacobian,
    integrate,
    involution_defect,
    local_manifold_series,
    normal_chart_field,
    normal_chart_field_jacobian,
    poincare_map,
    reflect,
    transport_along_stable_axis,
    invariance_defect,
)
from parabolic_lab.mcgehee import McGeheeState
from parabolic_lab.models import ModelId, ModelParams

RC3BP = ModelParams(ModelId.RC3BP, mu=1e-3)
KEPLER = ModelParams(ModelId.RC3BP, mu=0.0)
section = st.floats(0.03, 0.2)


def test_tolerance_range_is_enforced():
    with pytest.raises(ValueError):
        integrate(McGeheeState(0.1, 0.1, 0.0), 0.1, RC3BP, tol=1e-16)


def test_trajectory_requires_monotone_times():
    t = np.array([0.0, 1.0, 0.5])
    with pytest.raises(ValueError):
        Trajectory(t, t, t, t, t, 1e-12)


def test_kepler_energy_is_conserved(tmp_path):
    traj = integrate(McGeheeState(0.1, 0.12, 0.0), 0.5, KEPLER, n_samples=25)
    assert np.ptp(traj.K) < 1e-11
    traj.to_csv(tmp_path / "orbit.csv")
    header = (tmp_path / "orbit.csv").read_text().splitlines()[0]
    assert header == "t,q,p,phi,K"


def test_leaving_the_chart_raises():
    with pytest.raises(ChartExitError):
        poincare_map(SectionPoint(0.3, 0.3), RC3BP)


@settings(max_examples=15, deadline=None)
@given(q=section, p=section)
def test_return_map_preserves_weighted_area(q, p):
    assert area_defect(SectionPoint(q, p), RC3BP) < 1e-8


@settings(max_examples=15, deadline=None)
@given(q=section, p=section)
def test_return_map_is_reversible(q, p):
    assert involution_defect(SectionPoint(q, p), RC3BP) < 1e-8


@settings(max_examples=10, deadline=None)
@given(q=section, p=section)
def test_inverse_map_undoes_forward_map(q, p):
    image = poincare_map(SectionPoint(q, p), RC3BP)
    back = poincare_map(image, RC3BP, inverse=True)
    assert (back.q, back.p) == pytest.approx((q, p), abs=1e-10)


def test_variational_jacobian_matches_finite_differences():
    pt = SectionPoint(0.1, 0.12)
    J = poincare_map(pt, RC3BP, with_jacobian=True).jacobian
    np.testing.assert_allclose(J, finite_difference_jacobian(pt, RC3BP), atol=1e-6)


def test_reflect_is_an_involution():
    pt = SectionPoint(0.1, 0.2)
    assert reflect(reflect(pt)).z.tolist() == pt.z.tolist()


def test_manifold_order_is_capped():
    with pytest.raises(ValueError):
        local_manifold_series(RC3BP, 13)


def test_manifold_invariance_improves_with_order():
    t = np.linspace(0.0, 6.0, 7)
    defects = []
    for order in (4, 6, 8):
        series = local_manifold_series(RC3BP, order)
        defects.append(float(np.max(np.abs(invariance_defect(series, np.array([0.02]), t)))))
    assert defects[0] > defects[1] > defects[2]
    assert defects[2] < 1e-12


def test_unperturbed_manifolds_are_phase_independent():
    series = local_manifold_series(KEPLER, 6)
    p = np.array([0.05])
    assert series.stable_q(p, 0.3) == pytest.approx(series.stable_q(p, 2.0), abs=1e-15)
    assert series.unstable_p(p, 0.3) == pytest.approx(series.unstable_p(p, 2.0), abs=1e-15)
    # reversibility swaps the two branches
    assert series.stable_q(p, 0.3) == pytest.approx(series.unstable_p(p, 0.3), rel=1e-12)


@given(Q=st.floats(0.01, 0.2), P=st.floats(0.01, 0.2))
def test_normal_chart_field_jacobian(Q, P):
    h = 1e-7
    fd = np.column_stack([
        (normal_chart_field((Q + h, P)) - normal_chart_field((Q - h, P))) / (2 * h),
        (normal_chart_field((Q, P + h)) - normal_chart_field((Q, P - h))) / (2 * h),
    ])
    np.testing.assert_allclose(normal_chart_field_jacobian(Q, P), fd, rtol=1e-6, atol=1e-12)


@pytest.mark.parametrize("q0", [0.05, 0.1, 0.2])
def test_transported_vector_tends_to_fixed_direction(q0):
    v, Q = transport_along_stable_axis(q0)
    assert Q == pytest.approx(q0 * np.exp(-30.0), rel=1e-8)
    assert np.linalg.norm(v - LAMBDA_LIMIT) < 1e-6
