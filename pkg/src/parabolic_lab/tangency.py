"""Secondary homoclinic tangencies after ``n`` passages near the saddle.

The unstable manifold, pushed once around the homoclinic loop, meets the
entry transversal ``{q = a}`` in the graph ``p = M_mu(q)``.  After ``n``
further passages the stable side of the local map is the curve
``p = y_n(q, q)`` (the diagonal of the Shilnikov map), and a quadratic
tangency is a double zero of

    delta(q, mu; n) = M_mu(q) - y_n(q, q).

``M_mu(q) = mu A sin(k q^-3) / (2q)`` is the splitting model with phase
constant ``k`` and amplitude ``A`` taken from the defaults.  At a double
zero ``cos(k q^-3) = 0`` to leading order, so the solver is seeded at the
crest ``k q^-3 = pi/2 + 2 pi m`` closest to ``q = a``.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Optional

import mpmath
import numpy as np
from scipy.optimize import brentq

from .config import DEFAULTS
from .flow import SectionPoint, poincare_map
from .mcgehee import from_normal_chart, to_normal_chart
from .models import ModelParams
from .shilnikov import PI_OVER_16, core_maps


class SeedFailureError(RuntimeError):
    """No crest of the splitting phase lies in ``[3a/4, 3a/2]``."""


class NewtonDivergenceError(RuntimeError):
    """Newton on the tangency system failed to converge."""


class GridExitError(RuntimeError):
    """A sample of the global map left the chart or missed the section."""


class IllConditionedFitError(RuntimeError):
    """The least-squares design matrix is numerically rank deficient."""


@dataclass(frozen=True)
class SplittingModel:
    """``M_mu(q) = mu A sin(k q^-3) / (2q)``."""

    phase_constant: float = DEFAULTS.tangency.phase_constant
    amplitude: float = DEFAULTS.tangency.amplitude

    def phase(self, q):
        return self.phase_constant * np.asarray(q, float) ** -3

    def derivatives(self, q, mu):
        """``(M, M_q, M_qq)`` at ``(q, mu)``."""
        q = np.asarray(q, float)
        psi = self.phase(q)
        d1 = -3.0 * psi / q
        d2 = 12.0 * psi / q**2
        s, c = np.sin(psi), np.cos(psi)
        k = 0.5 * mu * self.amplitude
        M = k * s / q
        M_q = k * (c * d1 / q - s / q**2)
        M_qq = k * (-s * d1**2 / q + c * d2 / q - 2.0 * c * d1 / q**2 + 2.0 * s / q**3)
        return M, M_q, M_qq

    def derivatives_mp(self, q, mu, dps: int = 40):
        """As :meth:`derivatives`, with the phase reduced in multiprecision.

        ``k q^-3`` is of order ``10^5`` on the default window, so a double
        phase carries an absolute error of about ``1e-11`` that the
        factor ``dpsi/dq`` amplifies in ``M_q``.
        """
        with mpmath.workdps(dps):
            q = mpmath.mpf(q)
            mu = mpmath.mpf(mu)
            psi = mpmath.mpf(self.phase_constant) / q**3
            d1 = -3 * psi / q
            d2 = 12 * psi / q**2
            s, c = mpmath.sin(psi), mpmath.cos(psi)
            k = mu * mpmath.mpf(self.amplitude) / 2
            M = k * s / q
            M_q = k * (c * d1 / q - s / q**2)
            M_qq = k * (-s * d1**2 / q + c * d2 / q - 2 * c * d1 / q**2 + 2 * s / q**3)
            return M, M_q, M_qq


def diagonal(q, n: float, step: float = 1e-5):
    """``(y, y', y'')`` of ``y_n(q, q)`` from the closed-form core maps.

    ``y'`` is exact; ``y''`` is a central difference of ``y'``.
    """
    q = np.asarray(q, float)

    def first(x):
        d = core_maps(x, x, n)
        return d["y_T"], d["dy_dxi"] + d["dy_deta"]

    y, y1 = first(q)
    h = step * q
    y2 = (first(q + h)[1] - first(q - h)[1]) / (2.0 * h)
    return y, y1, y2


def delta_fn(q, mu, n, model: SplittingModel = SplittingModel()):
    """``delta = M_mu(q) - y_n(q, q)`` and ``d delta / dq``.

    Scalar ``q`` (including ``mpmath.mpf``) uses the multiprecision phase;
    arrays use double precision.
    """
    if np.ndim(q) == 0:
        M, M_q, _ = model.derivatives_mp(q, mu)
        y, y1, _ = diagonal(float(q), n)
        return float(M - mpmath.mpf(float(y))), float(M_q - mpmath.mpf(float(y1)))
    M, M_q, _ = model.derivatives(q, mu)
    y, y1, _ = diagonal(q, n)
    return M - y, M_q - y1


def leading_diagonal_constant(n: float) -> float:
    """``(pi / 16 n)^{2/3}``: ``y_n(q, q) ~ c_n / q``."""
    return (PI_OVER_16 / n) ** (2.0 / 3.0)


# phase equation ----------------------------------------------------------

@dataclass
class PhaseRoot:
    k: int
    family: str
    x: Optional[float]


def phase_equation_roots(slope: float = 48.0, k_max: int = 7) -> list[PhaseRoot]:
    """Roots of ``tan x = -slope x`` searched on two interval families.

    ``"left"``: ``((k - 1/2) pi, k pi)`` for ``k >= 1``, where ``tan < 0``.
    ``"right"``: ``[k pi, (k + 1/2) pi)`` for odd ``k``, where ``tan >= 0``.
    A family member with no sign change of ``tan x + slope x`` is
    reported with ``x = None``.
    """
    out = []

    def f(x):
        return np.sin(x) + slope * x * np.cos(x)

    for k in range(1, k_max + 1):
        lo, hi = (k - 0.5) * np.pi + 1e-12, k * np.pi
        out.append(PhaseRoot(k, "left", brentq(f, lo, hi, xtol=1e-15) if f(lo) * f(hi) < 0 else None))
    for k in range(1, k_max + 1, 2):
        lo, hi = k * np.pi, (k + 0.5) * np.pi - 1e-12
        out.append(PhaseRoot(k, "right", brentq(f, lo, hi, xtol=1e-15) if f(lo) * f(hi) < 0 else None))
    return out


# tangency solve ----------------------------------------------------------

@dataclass
class TangencyRecord:
    """Certified double zero of ``delta`` for one ``n``."""

    n: float
    q_n: float
    mu_n: float
    alpha_n: float
    beta_n: float
    tau_n: float
    residual_value: float
    residual_slope: float
    scale: float
    seed: tuple = field(default=(0.0, 0.0))
    iterations: int = 0

    @property
    def mu_ratio(self) -> float:
        """``mu_n / (2 (pi/16n)^{2/3})``."""
        return self.mu_n / (2.0 * leading_diagonal_constant(self.n))

    @property
    def beta_ratio(self) -> float:
        """``beta_n / (1152 mu_n q_n^-9)``."""
        return self.beta_n / (1152.0 * self.mu_n * self.q_n**-9)

    def certificate(self) -> dict:
        """Pass/fail flags of the relative tangency certificate."""
        return {
            "value": abs(self.residual_value) < 1e-10 * self.scale,
            "slope": abs(self.residual_slope) < 1e-8 * self.scale,
            "quadratic": self.beta_n != 0.0 and np.isfinite(self.beta_n),
            "unfolding": self.alpha_n != 0.0 and np.isfinite(self.alpha_n),
        }

    @property
    def certified(self) -> bool:
        return all(self.certificate().values())


def tangency_seed(n: float, a: float = 0.1, model: SplittingModel = SplittingModel()):
    """Crest ``k q^-3 = pi/2 + 2 pi m`` nearest ``q = a`` and the matching ``mu``.

    Raises
    ------
    SeedFailureError
        If the crest falls outside ``[3a/4, 3a/2]``.
    """
    target = model.phase_constant * a**-3
    m = np.round((target - 0.5 * np.pi) / (2.0 * np.pi))
    psi0 = 0.5 * np.pi + 2.0 * np.pi * m
    q0 = (model.phase_constant / psi0) ** (1.0 / 3.0)
    if not 0.75 * a <= q0 <= 1.5 * a:
        raise SeedFailureError(f"crest at q = {q0:.6g} is outside [3a/4, 3a/2]")
    y0 = diagonal(q0, n)[0]
    mu0 = 2.0 * q0 * y0 / model.amplitude
    return float(q0), float(mu0)


def certificate_scale(mu: float, n: float, a: float, model: SplittingModel, points: int = 401) -> float:
    """``max(|M|, |y_n|)`` over ``[a/2, 2a]``."""
    grid = np.linspace(0.5 * a, 2.0 * a, points)
    M = model.derivatives(grid, mu)[0]
    y = diagonal(grid, n)[0]
    return float(max(np.max(np.abs(M)), np.max(np.abs(y))))


def find_tangency(n: float, a: float = 0.1, model: SplittingModel = SplittingModel(),
                  tol: float = 1e-15, max_iter: int = 50) -> TangencyRecord:
    """Newton on ``F = (delta, d delta / dq)`` in ``(q, mu)``.

    ``alpha_n = d delta / d mu`` and ``beta_n = (1/2) d^2 delta / dq^2`` at
    the root, so that ``delta ~ alpha_n (mu - mu_n) + beta_n (q - q_n)^2``.
    """
    if n < DEFAULTS.tangency.n_min:
        raise ValueError(f"n must be at least {DEFAULTS.tangency.n_min:g}")
    if a > 0.15:
        raise ValueError("a must not exceed 0.15")
    q0, mu0 = tangency_seed(n, a, model)
    with mpmath.workdps(40):
        q, mu = mpmath.mpf(q0), mpmath.mpf(mu0)
        for it in range(1, max_iter + 1):
            M, M_q, M_qq = model.derivatives_mp(q, mu)
            y, y1, y2 = (mpmath.mpf(float(v)) for v in diagonal(float(q), n))
            F = mpmath.matrix([M - y, M_q - y1])
            J = mpmath.matrix([[M_q - y1, M / mu], [M_qq - y2, M_q / mu]])
            dq, dmu = mpmath.lu_solve(J, -F)
            q, mu = q + dq, mu + dmu
            if abs(dq) < tol * q and abs(dmu) < tol * abs(mu):
                break
        else:
            raise NewtonDivergenceError(f"no convergence for n = {n:g}")
        M, M_q, M_qq = model.derivatives_mp(q, mu)
        y, y1, y2 = (mpmath.mpf(float(v)) for v in diagonal(float(q), n))
        residual_value, residual_slope = float(M - y), float(M_q - y1)
        alpha = float(M / mu)
        beta = float((M_qq - y2) / 2)
        q, mu = float(q), float(mu)
    if not 0.75 * a <= q <= 1.5 * a:
        raise NewtonDivergenceError(f"root q = {q:.6g} left [3a/4, 3a/2]")
    tau = mu / (2.0 * leading_diagonal_constant(n))
    return TangencyRecord(
        n=float(n), q_n=float(q), mu_n=float(mu), alpha_n=float(alpha), beta_n=float(beta),
        tau_n=float(tau), residual_value=residual_value, residual_slope=residual_slope,
        scale=certificate_scale(mu, n, a, model), seed=(q0, mu0), iterations=it,
    )


TABLE_COLUMNS = ("n", "q_n", "mu_n", "alpha_n", "beta_n", "residual_value", "residual_slope")


def write_tangency_table(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for rec in records:
            row = asdict(rec)
            writer.writerow({k: row[k] for k in TABLE_COLUMNS})


# global map --------------------------------------------------------------

@dataclass
class GlobalMapFit:
    """Quadratic fit of the ``L``-fold return map from ``(0, a_tilde)`` to ``(a_n, 0)``.

    ``coef_Q`` and ``coef_P`` multiply the monomials
    ``1, x, y, x^2, x y, y^2``; ``b, c`` come from the first component,
    ``d`` and ``e`` (the ``y`` slope, zero at a tangency) from the second.
    """

    L: int
    a_n: float
    a_tilde: float
    p_n: float
    coef_Q: np.ndarray
    coef_P: np.ndarray
    residual: float
    radius: float
    area_ratio: float

    @property
    def b(self) -> float:
        return float(self.coef_Q[1])

    @property
    def c(self) -> float:
        return float(self.coef_Q[2])

    @property
    def d(self) -> float:
        return float(self.coef_P[1])

    @property
    def e(self) -> float:
        return float(self.coef_P[2])

    @property
    def curvature(self) -> float:
        return float(self.coef_P[5])


def _iterate(Q: float, P: float, L: int, params: ModelParams, tol: float):
    q, p = from_normal_chart(Q, P)
    pt = SectionPoint(float(q), float(p))
    for _ in range(L):
        pt = poincare_map(pt, params, tol)
    return to_normal_chart(pt.q, pt.p)


def homoclinic_return_count(params: ModelParams, a: float, a_tilde: float, max_returns: int = 2000,
                            tol: float = 1e-12) -> tuple[int, float, float]:
    """Returns ``L`` after which the unstable-branch point ``(0, a_tilde)`` is closest to ``{Q = a}``.

    Only the incoming branch (``P < a_tilde`` after the excursion) counts.
    """
    q, p = from_normal_chart(0.0, a_tilde)
    pt = SectionPoint(float(q), float(p))
    best = None
    left = False
    for L in range(1, max_returns + 1):
        try:
            pt = poincare_map(pt, params, tol)
        except RuntimeError as exc:
            raise GridExitError(f"homoclinic excursion left the chart at return {L}") from exc
        Q, P = to_normal_chart(pt.q, pt.p)
        left = left or P > 1.5 * a_tilde
        if left and P < a_tilde:
            gap = abs(Q - a)
            if best is None or gap < best[0]:
                best = (gap, L, Q, P)
            elif Q < a:
                break
    if best is None:
        raise GridExitError("the homoclinic excursion never reached the entry section")
    return best[1], float(best[2]), float(best[3])


def fit_global_map(params: ModelParams, a: float = 0.05, a_tilde: float = 0.05, radius: float = 1e-3,
                   points: int = 5, tol: float = 1e-12) -> GlobalMapFit:
    """Sample the ``L``-fold return map on a grid around ``(0, a_tilde)`` and fit quadratics.

    Raises
    ------
    GridExitError
        If the homoclinic excursion misses the section.
    IllConditionedFitError
        If the design matrix is rank deficient.
    """
    if radius > 1e-2:
        raise ValueError("window radius must be at most 1e-2")
    L, a_n, p_n = homoclinic_return_count(params, a, a_tilde, tol=tol)
    s = np.linspace(-radius, radius, points)
    X, Y = np.meshgrid(s, s, indexing="ij")
    X, Y = X.ravel(), Y.ravel()
    out = np.array([_iterate(x, a_tilde + y, L, params, tol) for x, y in zip(X, Y)])
    design = np.column_stack([np.ones_like(X), X, Y, X * X, X * Y, Y * Y])
    if np.linalg.matrix_rank(design / radius ** np.array([0, 1, 1, 2, 2, 2])) < 6:
        raise IllConditionedFitError("global-map design matrix is rank deficient")
    cQ, *_ = np.linalg.lstsq(design, out[:, 0], rcond=None)
    cP, *_ = np.linalg.lstsq(design, out[:, 1], rcond=None)
    resid = float(max(np.max(np.abs(design @ cQ - out[:, 0])), np.max(np.abs(design @ cP - out[:, 1]))))
    det = cQ[1] * cP[2] - cQ[2] * cP[1]
    # the return map preserves (Q + P)^-3 dQ ^ dP
    weight = ((a_n + p_n) / a_tilde) ** -3
    return GlobalMapFit(L, float(a_n), float(a_tilde), float(p_n), cQ, cP, resid, radius,
                        float(det * weight))
