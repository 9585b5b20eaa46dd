"""Integration of the compactified flow and the return map on ``{phi = 0}``.

Time is the McGehee clock ``s``: ``(q, p)' = (q + p)^3 (-K_p, K_q)`` and the
phase advances at the constant rate ``2^{7/2}`` (decreasing for the planar
models, whose reduced time is ``-phi``; increasing for Sitnikov, whose phase
is the physical time).  One return to the section therefore takes the fixed
clock time ``2 pi / 2^{7/2}``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .config import DEFAULTS
from .mcgehee import CHART_SCALE, CLOCK, ENERGY_SCALE, McGeheeState, eval_K, grad_K, hessian_K
from .models import ModelId, ModelParams
from . import normalform as nf

RETURN_TIME = 2.0 * np.pi / CLOCK


class ChartExitError(RuntimeError):
    """The trajectory left the tracked sector box."""


class StepUnderflowError(RuntimeError):
    """The trajectory reached the near-origin guard, where the clock stalls."""


@dataclass
class Trajectory:
    """Sampled orbit ``(s, q, p, phi)`` with the value of ``K`` at each sample."""

    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    K: np.ndarray
    tolerance: float
    jacobian: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        steps = np.diff(self.times)
        if len(steps) and not (np.all(steps > 0) or np.all(steps < 0)):
            raise ValueError("sample times must be strictly monotone")

    @property
    def final(self) -> McGeheeState:
        return McGeheeState(float(self.q[-1]), float(self.p[-1]), float(self.phi[-1]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["t", "q", "p", "phi", "K"])
            for row in zip(self.times, self.q, self.p, self.phi, self.K):
                writer.writerow([repr(float(v)) for v in row])


@dataclass
class SectionPoint:
    """Point of the section ``{phi = 0}`` with an optional return-map Jacobian."""

    q: float
    p: float
    jacobian: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not (np.isfinite(self.q) and np.isfinite(self.p)):
            raise ValueError("section point must be finite")

    @property
    def z(self) -> np.ndarray:
        return np.array([self.q, self.p])


def phase_rate(params: ModelParams) -> float:
    """``dphi/ds``."""
    return CLOCK if params.model_id is ModelId.SITNIKOV else -CLOCK


def vector_field(s, z, params: ModelParams):
    """``(q', p', phi')`` in the clock ``s``."""
    q, p, phi = z[0], z[1], z[2]
    _, K_q, K_p, _ = grad_K(q, p, phi, params)
    w = (q + p) ** 3
    return np.array([-w * K_p, w * K_q, phase_rate(params)])


def vector_field_jacobian(q, p, phi, params: ModelParams) -> np.ndarray:
    """Analytic ``d(q', p')/d(q, p)`` from the closed-form gradient and Hessian."""
    _, K_q, K_p, _ = grad_K(q, p, phi, params)
    (K_qq, K_qp), (K_pq, K_pp) = hessian_K(q, p, phi, params)
    u = q + p
    w, w_u = u**3, 3.0 * u**2
    return np.array(
        [
            [-w_u * K_p - w * K_pq, -w_u * K_p - w * K_pp],
            [w_u * K_q + w * K_qq, w_u * K_q + w * K_qp],
        ]
    )


def _box(chart=DEFAULTS.chart):
    return chart.sector_lo - chart.chart_margin, chart.sector_hi + chart.chart_margin


def integrate(
    state: McGeheeState,
    t_span: float,
    params: ModelParams,
    tol: float = DEFAULTS.tolerances.flow_tol,
    with_jacobian: bool = False,
    n_samples: Optional[int] = None,
    check_chart: bool = True,
) -> Trajectory:
    """Integrate the flow for the clock duration ``t_span`` (may be negative).

    Uses the embedded 8(5,3) Dormand-Prince pair with step rejection on the
    local error ``tol``.  With ``with_jacobian`` the variational equations
    are transported alongside.

    Raises
    ------
    ChartExitError
        If the orbit leaves the sector box (with margin).
    StepUnderflowError
        If ``q + p`` falls below the near-origin guard.
    """
    if not 1e-14 <= tol <= 1e-6:
        raise ValueError("tol must lie in [1e-14, 1e-6]")
    lo, hi = _box()
    guard = DEFAULTS.chart.near_origin_guard

    def rhs(s, y):
        f = vector_field(s, y[:3], params)
        if not with_jacobian:
            return f
        A = vector_field_jacobian(y[0], y[1], y[2], params)
        M = y[3:].reshape(2, 2)
        return np.concatenate([f, (A @ M).ravel()])

    def near_origin(s, y):
        return y[0] + y[1] - guard

    near_origin.terminal = True

    def leave_box(s, y):
        return min(y[0] - lo, hi - y[0], y[1] - lo, hi - y[1])

    leave_box.terminal = True

    events = [near_origin] + ([leave_box] if check_chart else [])
    y0 = [state.q, state.p, state.phi]
    if with_jacobian:
        y0 = y0 + [1.0, 0.0, 0.0, 1.0]
    t_eval = None if n_samples is None else np.linspace(0.0, t_span, n_samples)
    sol = solve_ivp(
        rhs, (0.0, t_span), y0, method="DOP853", rtol=tol, atol=tol,
        events=events, t_eval=t_eval, dense_output=False,
    )
    if sol.status == 1:
        if len(sol.t_events[0]):
            raise StepUnderflowError("orbit reached the near-origin guard q + p = %g" % guard)
        raise ChartExitError("orbit left the sector box")
    if sol.status != 0:
        raise RuntimeError(sol.message)
    q, p, phi = sol.y[0], sol.y[1], sol.y[2]
    K = eval_K(q, p, phi, params)
    jac = sol.y[3:, -1].reshape(2, 2) if with_jacobian else None
    return Trajectory(sol.t, q, p, phi, K, tol, jac)


def poincare_map(
    pt: SectionPoint,
    params: ModelParams,
    tol: float = DEFAULTS.tolerances.flow_tol,
    with_jacobian: bool = False,
    inverse: bool = False,
) -> SectionPoint:
    """Return map of ``{phi = 0}`` (or its inverse), the phase advancing by ``2 pi``."""
    span = -RETURN_TIME if inverse else RETURN_TIME
    traj = integrate(McGeheeState(pt.q, pt.p, 0.0), span, params, tol, with_jacobian)
    return SectionPoint(float(traj.q[-1]), float(traj.p[-1]), traj.jacobian)


def reflect(pt: SectionPoint) -> SectionPoint:
    """Time-reversal involution ``R(q, p) = (p, q)`` on the section."""
    return SectionPoint(pt.p, pt.q)


def area_weight(q, p):
    return (q + p) ** -3.0


def area_defect(pt: SectionPoint, params: ModelParams, tol: float = DEFAULTS.tolerances.flow_tol) -> float:
    """``|det DP(z) w(P z) / w(z) - 1|`` for ``w = (q + p)^{-3}``."""
    image = poincare_map(pt, params, tol, with_jacobian=True)
    ratio = np.linalg.det(image.jacobian) * area_weight(image.q, image.p) / area_weight(pt.q, pt.p)
    return float(abs(ratio - 1.0))


def involution_defect(pt: SectionPoint, params: ModelParams, tol: float = DEFAULTS.tolerances.flow_tol) -> float:
    """``|R P R (z) - P^{-1}(z)|``."""
    lhs = reflect(poincare_map(reflect(pt), params, tol))
    rhs = poincare_map(pt, params, tol, inverse=True)
    return float(np.hypot(lhs.q - rhs.q, lhs.p - rhs.p))


def finite_difference_jacobian(pt: SectionPoint, params: ModelParams, step: float = 1e-6, tol: float = 1e-13):
    """Central differences of the return map, for cross-checks."""
    cols = []
    for dq, dp in ((step, 0.0), (0.0, step)):
        plus = poincare_map(SectionPoint(pt.q + dq, pt.p + dp), params, tol)
        minus = poincare_map(SectionPoint(pt.q - dq, pt.p - dp), params, tol)
        cols.append([(plus.q - minus.q) / (2 * step), (plus.p - minus.p) / (2 * step)])
    return np.array(cols).T


# local invariant manifolds ------------------------------------------------

@dataclass
class ManifoldSeries:
    """Graphs of the local manifolds in the normal chart.

    ``P = gamma_s(Q, t)`` is the stable and ``Q = gamma_u(P, t)`` the
    unstable manifold, with ``(Q, P) = 2^{-7/6} (p, q)`` and ``t`` the
    reduced time.
    """

    gamma_s: nf.FourierTaylorSeries
    gamma_u: nf.FourierTaylorSeries
    order: int
    params: ModelParams

    def _time(self, phi):
        return phi if self.params.model_id is ModelId.SITNIKOV else -np.asarray(phi)

    def stable_q(self, p, phi):
        """McGehee ``q`` on the stable manifold above ``p``."""
        Q = CHART_SCALE * np.asarray(p, float)
        return self.gamma_s.evaluate(Q, 0.0, self._time(phi)) / CHART_SCALE

    def unstable_p(self, q, phi):
        """McGehee ``p`` on the unstable manifold above ``q``."""
        P = CHART_SCALE * np.asarray(q, float)
        return self.gamma_u.evaluate(0.0, P, self._time(phi)) / CHART_SCALE


def local_manifold_series(
    params: ModelParams,
    order: int,
    max_harmonic: int = DEFAULTS.normalform.max_harmonic,
    digits: Optional[int] = None,
) -> ManifoldSeries:
    """Order-``order`` graphs of the local stable and unstable manifolds.

    Raises
    ------
    ValueError
        If ``order > 12``.
    normalform.OrderMismatchError
        If the invariance equations cannot be met at some order.
    """
    if order > 12:
        raise ValueError("local_manifold_series supports order <= 12")
    with nf.working_precision(digits):
        H = nf.mcgehee_series(params, order + 3, max_harmonic)
        gamma_s, gamma_u = nf.invariant_graphs(H, order)
    # leave the multiprecision backend: rebuilding converts to extended precision
    gamma_s = nf.FourierTaylorSeries(gamma_s.max_degree, max_harmonic, gamma_s.data)
    gamma_u = nf.FourierTaylorSeries(gamma_u.max_degree, max_harmonic, gamma_u.data)
    return ManifoldSeries(gamma_s, gamma_u, order, params)


def normal_chart_gradient(Q, P, t, params: ModelParams):
    """``(K, K_Q, K_P, K_t)`` in the normal chart from the closed form."""
    c = CHART_SCALE
    phase = t if params.model_id is ModelId.SITNIKOV else -t
    K, K_q, K_p, K_phi = grad_K(P / c, Q / c, phase, params)
    scale = ENERGY_SCALE
    sign = 1.0 if params.model_id is ModelId.SITNIKOV else -1.0
    return scale * K, scale * K_p / c, scale * K_q / c, scale * sign * K_phi


def invariance_defect(series: ManifoldSeries, Q, t) -> np.ndarray:
    """Defect of the stable-graph invariance identity, from the closed-form ``K``."""
    g = series.gamma_s
    P = g.evaluate(Q, 0.0, t)
    g_Q = g.diff_q().evaluate(Q, 0.0, t)
    g_t = g.diff_t().evaluate(Q, 0.0, t)
    _, K_Q, K_P, _ = normal_chart_gradient(Q, P, t, series.params)
    w = (Q + P) ** 3
    return -w * K_Q - g_Q * w * K_P - g_t


# failure of the classical lambda lemma ------------------------------------

def normal_chart_field(z, K=None):
    """Vector field of ``-QP`` (or of a series ``K``) in the normal chart."""
    Q, P = z
    w = (Q + P) ** 3
    if K is None:
        return np.array([-w * Q, w * P])
    return np.array([w * K.diff_p()(Q, P, 0.0), -w * K.diff_q()(Q, P, 0.0)])


def normal_chart_field_jacobian(Q, P) -> np.ndarray:
    """Analytic Jacobian of the truncated field ``(-(Q+P)^3 Q, (Q+P)^3 P)``."""
    u = Q + P
    w, w_u = u**3, 3.0 * u**2
    return np.array([[-w - w_u * Q, -w_u * Q], [w_u * P, w + w_u * P]])


def transport_along_stable_axis(q0: float, horizon: float = 30.0, v0=(0.0, 1.0), tol: float = 1e-12):
    """Transport a tangent vector along ``{P = 0}`` under the truncated flow.

    The clock is reparametrised by ``ds = Q(t)^3 dt``, in which the
    variational equation has constant coefficients; the state ``Q`` obeys
    ``dQ/ds = -Q``.

    Returns
    -------
    tuple
        ``(direction, Q_final)`` with the unit transported vector.
    """

    def rhs(s, y):
        Q, v = y[0], y[1:]
        A = normal_chart_field_jacobian(Q, 0.0) / Q**3
        return np.concatenate([[-Q], A @ v])

    sol = solve_ivp(rhs, (0.0, horizon), [q0, *v0], method="DOP853", rtol=tol, atol=tol * 1e-30)
    v = sol.y[1:, -1]
    return v / np.linalg.norm(v), float(sol.y[0, -1])


LAMBDA_LIMIT = np.array([-3.0, 5.0]) / np.sqrt(34.0)
