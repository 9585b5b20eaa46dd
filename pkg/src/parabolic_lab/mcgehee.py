"""McGehee compactification of the reduced flow.

With ``x = sqrt(2/r)`` the point at infinity becomes the origin, and the
rotation ``q = (x - y)/sqrt(2)``, ``p = (x + y)/sqrt(2)`` diagonalises the
quadratic part, ``K = -qp + O_4``.  The pulled-back area form is singular,

    dr ^ dy = -2^{7/2} (q + p)^{-3} dq ^ dp,

so the flow of ``K`` is ``(q', p') = (q + p)^3 (-K_p, K_q)`` in the clock
``s`` where ``dphi/ds = -2^{7/2}``.  In this orientation ``{q = 0}`` is the
stable branch and ``{p = 0}`` the unstable one.

A second chart, the *normal chart*, swaps and rescales the variables,
``(Q, P) = 2^{-7/6} (p, q)``, so that ``{P = 0}`` is stable, the time is
``t = tau`` and the equations take the form ``Q' = (Q+P)^3 dK/dP``,
``P' = -(Q+P)^3 dK/dQ`` with ``K = 2^{-7/3} H_red = -QP + O_4``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import (
    ModelId,
    ModelParams,
    primaries,
    sitnikov_eccentric_anomaly,
)

SQRT2 = np.sqrt(2.0)
CLOCK = 2.0**3.5
CHART_SCALE = 2.0 ** (-7.0 / 6.0)
ENERGY_SCALE = 2.0 ** (-7.0 / 3.0)


@dataclass(frozen=True)
class McGeheeState:
    """Point ``(q, p, phi)``; the physical branch has ``q + p > 0``."""

    q: float
    p: float
    phi: float

    def __post_init__(self) -> None:
        if not self.q + self.p > 0:
            raise ValueError("q + p must be positive on the physical branch")

    @property
    def x(self) -> float:
        return (self.q + self.p) / SQRT2

    @property
    def weight(self) -> float:
        return (self.q + self.p) ** -3


def to_mcgehee(r, y):
    """Map ``(r, y)`` to ``(q, p)``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("r must be positive")
    x = np.sqrt(2.0 / r)
    return (x - y) / SQRT2, (x + y) / SQRT2


def from_mcgehee(q, p):
    """Inverse of :func:`to_mcgehee`."""
    x = (q + p) / SQRT2
    y = (p - q) / SQRT2
    return 2.0 / x**2, y


def area_weight(q, p):
    """Signed density of ``dr ^ dy`` with respect to ``dq ^ dp``."""
    return -(2.0**3.5) / (q + p) ** 3


def to_normal_chart(q, p):
    return CHART_SCALE * p, CHART_SCALE * q


def from_normal_chart(Q, P):
    return P / CHART_SCALE, Q / CHART_SCALE


def _planar_potential_x(x, phi, params: ModelParams):
    """``U`` and its partials in ``(x, phi)`` for the planar models."""
    masses, dist, angle = primaries(params)
    U = 0.0
    U_x = 0.0
    U_phi = 0.0
    half_x2 = 0.5 * x * x
    for m_j, d_j, psi_j in zip(masses, dist, angle):
        if m_j == 0.0 or d_j == 0.0:
            continue
        c = np.cos(phi - psi_j)
        s = np.sin(phi - psi_j)
        rho = d_j * half_x2
        u = rho * (rho - 2.0 * c)
        g = np.expm1(-0.5 * np.log1p(u))
        g_u = -0.5 * (1.0 + u) ** -1.5
        U = U + m_j * g
        U_x = U_x + m_j * g_u * (2.0 * rho - 2.0 * c) * d_j * x
        U_phi = U_phi + m_j * g_u * 2.0 * rho * s
    return half_x2 * U, x * U + half_x2 * U_x, half_x2 * U_phi


def _sitnikov_terms(x, t, eps: float):
    E = sitnikov_eccentric_anomaly(t, eps)
    rho = 0.5 * (1.0 - eps * np.cos(E))
    rho_t = 0.5 * eps * np.sin(E) / (1.0 - eps * np.cos(E))
    A = 1.0 + 0.25 * x**4 * rho**2
    V = -0.5 * x**2 / np.sqrt(A)
    V_x = -x / np.sqrt(A) + 0.25 * x**5 * rho**2 * A**-1.5
    V_t = 0.125 * x**6 * rho * rho_t * A**-1.5
    return V, V_x, V_t


def hamiltonian_xy(x, y, phi, params: ModelParams):
    """Reduced Hamiltonian and its partials in ``(x, y, phi)``.

    Returns
    -------
    tuple
        ``(H, H_x, H_y, H_phi)``; arrays and complex input are supported.
    """
    if params.model_id is ModelId.SITNIKOV:
        V, V_x, V_t = _sitnikov_terms(x, phi, params.eps)
        return 0.5 * y**2 + V, V_x, y, V_t
    J = params.jacobi_J
    U, U_x, U_phi = _planar_potential_x(x, phi, params)
    D = 0.5 * y**2 - 0.5 * x**2 - U - J
    w = 0.5 * D * x**4
    S = np.sqrt(1.0 - w)
    H = J + 2.0 * D / (1.0 + S)
    H_y = y / S
    H_x = (-x - U_x) / S + 2.0 * D**2 * x**3 / (S * (1.0 + S) ** 2)
    H_phi = -U_phi / S
    return H, H_x, H_y, H_phi


def eval_K(q, p, phi, params: ModelParams):
    """Hamiltonian ``K(q, p, phi) = H_red`` in McGehee variables.

    ``K = -qp + O_4`` near the origin; in the Kepler limit ``K`` does not
    depend on ``phi``.
    """
    x = (q + p) / SQRT2
    y = (p - q) / SQRT2
    return hamiltonian_xy(x, y, phi, params)[0]


def grad_K(q, p, phi, params: ModelParams):
    """``(K, K_q, K_p, K_phi)`` from the closed-form partials."""
    x = (q + p) / SQRT2
    y = (p - q) / SQRT2
    H, H_x, H_y, H_phi = hamiltonian_xy(x, y, phi, params)
    return H, (H_x - H_y) / SQRT2, (H_x + H_y) / SQRT2, H_phi


def hessian_K(q, p, phi, params: ModelParams, step: float = 1e-30):
    """Second partials of ``K`` by complex-step differentiation of the gradient.

    The gradient is analytic in ``(q, p)``, so the imaginary part of a
    complex evaluation gives derivatives exact to rounding.

    Returns
    -------
    ndarray
        ``[[K_qq, K_qp], [K_pq, K_pp]]``.
    """
    _, kq_q, kp_q, _ = grad_K(q + 1j * step, p, phi, params)
    _, kq_p, kp_p, _ = grad_K(q, p + 1j * step, phi, params)
    return np.array(
        [
            [np.imag(kq_q) / step, np.imag(kq_p) / step],
            [np.imag(kp_q) / step, np.imag(kp_p) / step],
        ]
    )


def quartic_bound(params: ModelParams, phi: float = 0.0, box: float = 0.2, n: int = 41):
    """Sampled sup of ``|K + qp| / (|q| + |p|)^4`` over ``(0, box]^2``."""
    grid = np.linspace(box / n, box, n)
    Q, P = np.meshgrid(grid, grid, indexing="ij")
    vals = np.abs(eval_K(Q, P, phi, params) + Q * P) / (np.abs(Q) + np.abs(P)) ** 4
    return float(np.max(vals))


def normal_chart_hamiltonian(Q, P, t, params: ModelParams):
    """``K`` in the normal chart: ``2^{-7/3} H_red`` at time ``t = tau``."""
    q, p = from_normal_chart(Q, P)
    phase = t if params.model_id is ModelId.SITNIKOV else -t
    return ENERGY_SCALE * eval_K(q, p, phase, params)
