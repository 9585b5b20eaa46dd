"""Tests for the model splitting function and the tangency sequence."""

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parabolic_lab.models import ModelId, ModelParams
from parabolic_lab.shilnikov import core_maps
from parabolic_lab.tangency import (
    SeedFailureError,
    SplittingModel,
    TABLE_COLUMNS,
    delta_fn,
    diagonal,
    find_tangency,
    fit_global_map,
    leading_diagonal_constant,
    phase_equation_roots,
    tangency_seed,
    write_tangency_table,
)

MODEL = SplittingModel()


@settings(max_examples=30)
@given(q=st.floats(0.05, 0.2), mu=st.floats(1e-4, 1e-2))
def test_splitting_derivatives(q, mu):
    M, _, _ = MODEL.derivatives(q, mu)
    Mm, Mm_q, Mm_qq = MODEL.derivatives_mp(q, mu)
    # the double phase loses ~1e-11 absolute, amplified by dpsi/dq
    assert M == pytest.approx(float(Mm), abs=1e-9 * mu)
    # the phase oscillates on a scale ~1e-7 in q, so differentiate in multiprecision
    with mpmath.workdps(40):
        x = mpmath.mpf(q)
        h = x * mpmath.mpf("1e-15")
        plus, minus = MODEL.derivatives_mp(x + h, mu), MODEL.derivatives_mp(x - h, mu)
        fd1 = (plus[0] - minus[0]) / (2 * h)
        fd2 = (plus[1] - minus[1]) / (2 * h)
    assert float(Mm_q) == pytest.approx(float(fd1), rel=1e-12)
    assert float(Mm_qq) == pytest.approx(float(fd2), rel=1e-12)


@given(q=st.floats(0.05, 0.2), n=st.floats(1e3, 1e5))
def test_diagonal_is_symmetric_core(q, n):
    y, y1, _ = diagonal(q, n)
    d = core_maps(q, q, n)
    assert y == pytest.approx(float(d["x_T"]), rel=1e-13)
    assert y1 == pytest.approx(float(d["dx_dxi"] + d["dx_deta"]), rel=1e-10)


def test_diagonal_leading_order():
    # y_n(q, q) q / c_n -> 1; the ratio is only 0.78 at n = 1e3
    gaps = [abs(diagonal(0.1, n)[0] * 0.1 / leading_diagonal_constant(n) - 1) for n in (1e3, 1e5, 1e7)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-4


def test_phase_equation_roots():
    roots = phase_equation_roots()
    for r in roots:
        if r.x is not None:
            assert np.tan(r.x) == pytest.approx(-48.0 * r.x, rel=1e-6)
    left = [r.x for r in roots if r.family == "left"]
    assert all(x is not None for x in left)
    # the "right" family has tan >= 0 against -48 x < 0: never a root
    assert all(r.x is None for r in roots if r.family == "right")


def test_seed_window():
    q0, mu0 = tangency_seed(1000.0)
    assert 0.075 <= q0 <= 0.15 and mu0 > 0
    with pytest.raises(SeedFailureError):
        tangency_seed(1000.0, model=SplittingModel(phase_constant=1e-6))


def test_argument_guards():
    with pytest.raises(ValueError):
        find_tangency(10.0)
    with pytest.raises(ValueError):
        find_tangency(1000.0, a=0.2)


@pytest.mark.parametrize("n", [1e3, 1e4])
def test_tangency_is_a_certified_double_zero(n):
    rec = find_tangency(n)
    assert rec.certified, rec.certificate()
    value, slope = delta_fn(rec.q_n, rec.mu_n, n)
    assert abs(value) < 1e-10 * rec.scale
    # mu_n matches 2 (pi/16n)^{2/3} to leading order
    assert rec.mu_ratio == pytest.approx(1.0, abs=0.3)
    # delta grows quadratically away from q_n at fixed mu_n
    h = 1e-7
    for side in (-1, 1):
        v, _ = delta_fn(rec.q_n + side * h, rec.mu_n, n)
        assert v == pytest.approx(rec.beta_n * h**2, rel=0.05)


def test_tangency_table(tmp_path):
    path = tmp_path / "tangency.csv"
    write_tangency_table(path, [find_tangency(1e3)])
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(TABLE_COLUMNS)
    assert len(lines) == 2 and "np." not in lines[1]


def test_global_map_is_area_preserving():
    params = ModelParams(ModelId.RC3BP, mu=1e-3, jacobi_J=10.0)
    fit = fit_global_map(params, points=3)
    assert fit.L > 1
    # the quadratic fit on a 3x3 grid carries ~1e-5 residual, limiting the
    # determinant check to about one percent
    assert fit.residual < 1e-4
    assert fit.area_ratio == pytest.approx(1.0, abs=0.02)
    with pytest.raises(ValueError):
        fit_global_map(params, radius=0.1)
