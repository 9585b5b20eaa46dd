"""Renormalization of the return map at a homoclinic tangency.

The return map is the composition of the local passage and a global map.
With entry offset ``xi`` on ``{q = a + xi}`` and exit offset ``eta`` on
``{p = a_tilde + eta}``, the Shilnikov maps give

    exit   x(xi, eta) = x_T(a + xi, a_tilde + eta),
    entry  y(xi, eta) = y_T(a + xi, a_tilde + eta),

and the global map sends ``(x, a_tilde + eta)`` to
``(a + b x + c eta, eps + d x - eta^2)``.  In the offsets ``(xi, eta)``
the return map is ``(xi, eta) -> (xi', eta')`` with ``xi' = b x + c eta``
and ``y(xi', eta') = eps + d x - eta^2``.

At a fixed point ``(xi*, eta*, eps*)`` where the image of the exit leaf is
tangent to the entry leaf, the affine change

    (xi, eta) = (xi* - alpha Q / (d gamma), eta* + alpha P),
    eps = eps* + alpha^2 kappa,

with ``alpha = dy/deta`` and ``gamma = (dx/dxi) / alpha`` turns the return
map into ``(-c d gamma P, kappa - Q - P^2)`` up to ``O(T^{-2/3})``, and
``-c d gamma -> 1`` as ``T`` grows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .config import DEFAULTS
from .flow import LAMBDA_LIMIT, transport_along_stable_axis
from .shilnikov import InversionError, core_maps, invert_stable, local_map


class RenormDivergenceError(RuntimeError):
    """Newton on the renormalization fixed-point system did not converge."""


class SingularSystemError(ValueError):
    """The leading Jacobian is singular (``c`` too small)."""


class ChartLeaveError(RuntimeError):
    """A renormalized sample left the domain of the Shilnikov maps."""


class NoTangencyError(RuntimeError):
    """The tangency condition has no root in the requested window."""


# Henon family -------------------------------------------------------------

def henon(Q, P, kappa):
    """Conservative Henon map ``(Q, P) -> (P, kappa - Q - P^2)``."""
    Q = np.asarray(Q, float)
    P = np.asarray(P, float)
    return P, kappa - Q - P * P


def henon_jacobian(P) -> np.ndarray:
    return np.array([[0.0, 1.0], [-1.0, -2.0 * float(P)]])


@dataclass(frozen=True)
class HenonFixedPoint:
    """Diagonal fixed point ``Q = P`` with ``P^2 + 2P - kappa = 0``."""

    kappa: float
    P: float
    eigenvalues: tuple
    hyperbolic: bool


def henon_fixed_points(kappa: float) -> list[HenonFixedPoint]:
    """Both diagonal fixed points ``P = -1 -/+ sqrt(1 + kappa)`` for ``kappa >= -1``."""
    if kappa < -1.0:
        return []
    root = np.sqrt(1.0 + kappa)
    out = []
    for P in (-1.0 - root, -1.0 + root):
        ev = np.linalg.eigvals(henon_jacobian(P))
        ev = tuple(sorted(ev, key=lambda z: -abs(z)))
        hyperbolic = bool(np.all(np.abs(np.imag(ev)) < 1e-14) and abs(abs(ev[0]) - 1.0) > 1e-12)
        out.append(HenonFixedPoint(kappa, float(P), ev, hyperbolic))
    return out


# fixed point ------------------------------------------------------------

@dataclass(frozen=True)
class GlobalModel:
    """``(x, a_tilde + y) -> (a + b x + c y, eps + d x - y^2)``."""

    b: float = DEFAULTS.global_map.b
    c: float = DEFAULTS.global_map.c
    d: float = DEFAULTS.global_map.d
    a: float = DEFAULTS.physics.a
    a_tilde: float = DEFAULTS.physics.a_tilde


def _core(xi, eta, T, model: GlobalModel):
    return core_maps(model.a + np.asarray(xi, float), model.a_tilde + np.asarray(eta, float), T)


def fixed_point_system(z, T: float, model: GlobalModel):
    """Fixed-point equations ``F(xi, eta, eps)`` and their Jacobian.

    ``F1 = xi - (b x + c eta)``, ``F2 = y - (eps + d x - eta^2)`` and the
    tangency condition ``F3 = d(image)/d eta ^ d(entry leaf)/d xi``.
    """
    xi, eta, eps = z
    m = _core(xi, eta, T, model)
    b, c, d = model.b, model.c, model.d
    x, y = float(m["x_T"]), float(m["y_T"])
    x_xi, x_eta, y_xi, y_eta = (float(m[k]) for k in ("dx_dxi", "dx_deta", "dy_dxi", "dy_deta"))
    Qe = b * x_eta + c
    Pe = d * x_eta - 2.0 * eta
    F = np.array([xi - b * x - c * eta, y - eps - d * x + eta * eta, Pe - y_xi * Qe])
    # second derivatives enter only F3's Jacobian row and are O(T^-2/3) there
    return F, np.array([
        [1.0 - b * x_xi, -Qe, 0.0],
        [y_xi - d * x_xi, y_eta - d * x_eta + 2.0 * eta, -1.0],
        [0.0, -2.0, 0.0],
    ])


def fixed_point_seed(T: float, model: GlobalModel):
    """Leading-order seed from the values and slopes of the maps at ``(0, 0)``."""
    m = _core(0.0, 0.0, T, model)
    b, c, d = model.b, model.c, model.d
    x_eta, y_xi = float(m["dx_deta"]), float(m["dy_dxi"])
    eta0 = 0.5 * (d * x_eta - y_xi * (b * x_eta + c))
    xi0 = b * float(m["x_T"]) + c * eta0
    eps0 = float(m["y_T"]) - d * float(m["x_T"]) + eta0 * eta0
    return np.array([xi0, eta0, eps0])


def _inside(z, model: GlobalModel) -> bool:
    return bool(model.a + z[0] > 0.05 * model.a and model.a_tilde + z[1] > 0.05 * model.a_tilde)


def _check_domain(z, model: GlobalModel) -> None:
    if not _inside(z, model):
        raise RenormDivergenceError(f"seed {z} lies outside the sections")


@dataclass
class FixedPoint:
    T: float
    xi: float
    eta: float
    eps: float
    residual: float
    seed_residual: float
    iterations: int


def solve_renorm_fixed_point(T: float, model: GlobalModel = GlobalModel(), tol: float = 1e-15,
                             max_iter: int = 60) -> FixedPoint:
    """Newton solve of the fixed-point and tangency equations.

    The Jacobian is taken by central differences of ``F`` (step ``1e-8``),
    which resolves the second derivatives in the tangency row.  Steps are
    damped to keep both sections inside the chart.

    Raises
    ------
    SingularSystemError
        If ``|c|`` is below ``1e-8``: the leading Jacobian is singular.
    RenormDivergenceError
        If Newton does not converge.
    """
    if abs(model.c) < 1e-8:
        raise SingularSystemError("c must be nonzero")
    z = fixed_point_seed(T, model)
    _check_domain(z, model)
    seed_res = float(np.max(np.abs(fixed_point_system(z, T, model)[0])))
    h = 1e-8
    for it in range(1, max_iter + 1):
        F = fixed_point_system(z, T, model)[0]
        J = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            J[:, j] = (fixed_point_system(z + e, T, model)[0] - fixed_point_system(z - e, T, model)[0]) / (2 * h)
        step = np.linalg.solve(J, -F)
        # damp until the trial stays in the chart and the residual drops
        lam, norm = 1.0, float(np.max(np.abs(F)))
        while lam > 1e-4:
            trial = z + lam * step
            if _inside(trial, model):
                F_trial = fixed_point_system(trial, T, model)[0]
                if float(np.max(np.abs(F_trial))) < norm or norm < 1e-14:
                    break
            lam *= 0.5
        else:
            raise RenormDivergenceError(f"line search failed at T = {T:g}")
        z = trial
        if np.max(np.abs(lam * step)) < tol:
            break
    else:
        raise RenormDivergenceError(f"fixed point did not converge at T = {T:g}")
    res = float(np.max(np.abs(fixed_point_system(z, T, model)[0])))
    if not np.isfinite(res) or res > 1e-12:
        raise RenormDivergenceError(f"fixed-point residual {res:.3g} at T = {T:g}")
    return FixedPoint(T, float(z[0]), float(z[1]), float(z[2]), res, seed_res, it)


# renormalized map -------------------------------------------------------

@dataclass
class Rescaling:
    """Affine data of the renormalization at one ``T``."""

    fixed: FixedPoint
    alpha: float
    gamma: float
    model: GlobalModel

    @property
    def det_defect(self) -> float:
        """``|1 + c d gamma|``."""
        return abs(1.0 + self.model.c * self.model.d * self.gamma)

    def to_offsets(self, Q, P):
        """``(Q, P) -> (xi, eta)``."""
        return (self.fixed.xi - self.alpha * np.asarray(Q) / (self.model.d * self.gamma),
                self.fixed.eta + self.alpha * np.asarray(P))

    def from_offsets(self, xi, eta):
        return (-(np.asarray(xi) - self.fixed.xi) * self.model.d * self.gamma / self.alpha,
                (np.asarray(eta) - self.fixed.eta) / self.alpha)

    def eps(self, kappa: float) -> float:
        return self.fixed.eps + self.alpha**2 * kappa


def rescaling(T: float, model: GlobalModel = GlobalModel()) -> Rescaling:
    fp = solve_renorm_fixed_point(T, model)
    m = _core(fp.xi, fp.eta, T, model)
    alpha = float(m["dy_deta"])
    gamma = float(m["dx_dxi"]) / alpha
    return Rescaling(fp, alpha, gamma, model)


def return_map_offsets(xi, eta, eps: float, T: float, model: GlobalModel = GlobalModel()):
    """Return map in the offsets ``(xi, eta)``; vectorised.

    Raises
    ------
    ChartLeaveError
        If an image has no preimage under the entry map.
    """
    m = _core(xi, eta, T, model)
    x = m["x_T"]
    xi_new = model.b * x + model.c * np.asarray(eta)
    y_target = eps + model.d * x - np.asarray(eta) ** 2
    q = model.a + xi_new
    if np.any(q <= 0) or np.any(y_target <= 0):
        raise ChartLeaveError("return-map image left the entry strip")
    try:
        eta_abs = invert_stable(q, y_target, T)
    except InversionError as exc:
        raise ChartLeaveError(str(exc)) from exc
    return xi_new, eta_abs - model.a_tilde


def renormalized_map(Q, P, kappa: float, T: float, scaling: Optional[Rescaling] = None):
    """The return map conjugated by the rescaling, at ``eps = eps* + alpha^2 kappa``."""
    scaling = rescaling(T) if scaling is None else scaling
    xi, eta = scaling.to_offsets(Q, P)
    xi2, eta2 = return_map_offsets(xi, eta, scaling.eps(kappa), T, scaling.model)
    return scaling.from_offsets(xi2, eta2)


def _grid(points: int, half_width: float):
    s = np.linspace(-half_width, half_width, points)
    Q, P = np.meshgrid(s, s, indexing="ij")
    return Q.ravel(), P.ravel()


@dataclass
class RenormReport:
    """Convergence record of the renormalized map at one ``(T, kappa)``."""

    T: float
    kappa: float
    xi: float
    eta: float
    eps: float
    alpha: float
    gamma: float
    sup_error: float
    det_defect: float
    probe_error: float
    max_to_median: float
    fixed_point_residual: float
    seed_residual: float
    errors: Optional[np.ndarray] = field(default=None, repr=False)

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("errors")
        return json.dumps(d, indent=2)


def renorm_report(T: float, kappa: float, model: GlobalModel = GlobalModel(),
                  scaling: Optional[Rescaling] = None) -> RenormReport:
    """Sup error against Henon on the test grid and the outer probe."""
    cfg = DEFAULTS.renorm
    scaling = rescaling(T, model) if scaling is None else scaling
    Q, P = _grid(cfg.grid_points, cfg.grid_half_width)
    Q2, P2 = renormalized_map(Q, P, kappa, T, scaling)
    HQ, HP = henon(Q, P, kappa)
    err = np.column_stack([Q, P, Q2 - HQ, P2 - HP])
    norms = np.max(np.abs(err[:, 2:]), axis=1)
    Qp, Pp = _grid(cfg.probe_points, cfg.probe_half_width)
    try:
        Qp2, Pp2 = renormalized_map(Qp, Pp, kappa, T, scaling)
        HQp, HPp = henon(Qp, Pp, kappa)
        probe = float(max(np.max(np.abs(Qp2 - HQp)), np.max(np.abs(Pp2 - HPp))))
    except ChartLeaveError:
        probe = float("nan")
    fp = scaling.fixed
    return RenormReport(
        T=T, kappa=kappa, xi=fp.xi, eta=fp.eta, eps=fp.eps, alpha=scaling.alpha, gamma=scaling.gamma,
        sup_error=float(np.max(norms)), det_defect=scaling.det_defect, probe_error=probe,
        max_to_median=float(np.max(norms) / np.median(norms)), fixed_point_residual=fp.residual,
        seed_residual=fp.seed_residual, errors=err,
    )


def write_error_surface(path, report: RenormReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Q", "P", "err_Q", "err_P"])
        writer.writerows(report.errors.tolist())


def renormalized_fixed_point(kappa: float, T: float, scaling: Optional[Rescaling] = None,
                             step: float = 1e-6):
    """Newton for the fixed point of the renormalized map near the Henon one.

    Returns ``(Q, P, eigenvalues)`` with the eigenvalues from a central
    difference Jacobian.
    """
    scaling = rescaling(T) if scaling is None else scaling
    target = henon_fixed_points(kappa)[0]
    z = np.array([target.P, target.P])

    def F(v):
        out = renormalized_map(v[0], v[1], kappa, T, scaling)
        return np.array([float(out[0]) - v[0], float(out[1]) - v[1]])

    def jac(v):
        J = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = step
            J[:, j] = (F(v + e) - F(v - e)) / (2 * step)
        return J

    for _ in range(30):
        dz = np.linalg.solve(jac(z), -F(z))
        z = z + dz
        if np.max(np.abs(dz)) < 1e-13:
            break
    D = jac(z) + np.eye(2)
    ev = np.linalg.eigvals(D)
    return float(z[0]), float(z[1]), tuple(sorted(ev, key=lambda w: -abs(w)))


# cone fields -------------------------------------------------------------

@dataclass
class ConeDiagnostics:
    """Eigen-structure of the local passage map at one entry point."""

    T: float
    lambda_plus: float
    lambda_minus: float
    v_minus: np.ndarray
    leaf_slope: float
    leaf_angle: float
    weighted_product: float
    product: float


def cone_diagnostics(xi: float, eta: float, T: float, model: GlobalModel = GlobalModel()) -> ConeDiagnostics:
    """Expansion rate and contracting direction of ``DPsi_loc`` at the entry point of ``(xi, eta)``.

    The entry point is ``(a + xi, y(xi, eta))``.  The local map preserves
    ``(q + p)^-3 dq ^ dp``, so ``lambda_+ lambda_-`` times the weight
    ratio is one.  ``leaf_slope`` is ``dy/dxi``, the slope of the
    horizontal leaf ``xi -> (xi, y(xi, eta))``; ``leaf_angle`` is the angle
    between ``v_-`` and ``(1, leaf_slope)``.
    """
    m = _core(xi, eta, T, model)
    q, p = model.a + xi, float(m["y_T"])
    q_out, p_out, J = local_map(q, p, T)
    # the Jacobian entries reach T^{5/3}; the determinant is taken from the
    # factorised form x_xi / y_eta instead of from J
    det = float(m["dx_dxi"] / m["dy_deta"])
    half = 0.5 * float(np.trace(J))
    lam_plus = half + np.sign(half) * np.sqrt(half * half - det)
    lam_minus = det / lam_plus
    v_minus = np.array([J[0, 1], lam_minus - J[0, 0]])
    v_minus /= np.linalg.norm(v_minus)
    if v_minus[0] < 0:
        v_minus = -v_minus
    slope = float(m["dy_dxi"])
    leaf = np.array([1.0, slope]) / np.hypot(1.0, slope)
    angle = float(np.arccos(np.clip(abs(v_minus @ leaf), -1.0, 1.0)))
    product = float(lam_plus * lam_minus)
    weight = ((q_out + p_out) / (q + p)) ** -3
    return ConeDiagnostics(T, float(lam_plus), float(lam_minus), v_minus, slope, angle,
                           product * weight, product)


def cone_exponent(T_values, xi: float = 0.0, eta: float = 0.0, model: GlobalModel = GlobalModel()) -> float:
    """Fitted exponent of ``lambda_+`` against ``T``."""
    T_values = np.asarray(T_values, float)
    lam = [cone_diagnostics(xi, eta, T, model).lambda_plus for T in T_values]
    return float(np.polyfit(np.log(T_values), np.log(lam), 1)[0])


# line of tangencies ------------------------------------------------------

def tangency_wedge(xi, eta, T: float, model: GlobalModel = GlobalModel()):
    """``d(Psi_glob o Psi^u)/d eta ^ (1, dy/dxi)`` at ``(xi, eta)``."""
    m = _core(xi, eta, T, model)
    Qe = model.b * m["dx_deta"] + model.c
    Pe = model.d * m["dx_deta"] - 2.0 * np.asarray(eta)
    return Qe * m["dy_dxi"] - Pe


def line_of_tangencies(T: float, xi_values=None, model: GlobalModel = GlobalModel(),
                       scan: int = 64):
    """``eta*(xi)`` solving ``tangency_wedge = 0`` over entry offsets in ``(-a/2, a/2)``.

    The wedge has a second root near the edge of the exit section; the
    branch kept is the sign change closest to ``eta = 0``.

    Returns
    -------
    tuple
        ``(xi_values, eta_star, slope)``, with ``slope`` the finite-difference
        ``d eta* / d xi``.

    Raises
    ------
    NoTangencyError
        If the wedge does not change sign for ``|eta| < a_tilde / 2``.
    """
    if xi_values is None:
        xi_values = np.linspace(-0.45 * model.a, 0.45 * model.a, 19)
    xi_values = np.asarray(xi_values, float)
    grid = np.linspace(-0.5 * model.a_tilde, 0.5 * model.a_tilde, scan + 1)
    eta_star = np.empty_like(xi_values)
    for i, xi in enumerate(xi_values):
        f = lambda e: float(tangency_wedge(xi, e, T, model))  # noqa: E731
        vals = np.array([f(e) for e in grid])
        flips = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
        if flips.size == 0:
            raise NoTangencyError(f"no tangency at xi = {xi:g}")
        k = flips[np.argmin(np.abs(grid[flips]))]
        eta_star[i] = brentq(f, grid[k], grid[k + 1], xtol=1e-16)
    return xi_values, eta_star, np.gradient(eta_star, xi_values)


# lambda lemma ------------------------------------------------------------

def lambda_failure_demo(q0: float, horizon: float = 30.0):
    """Transported unit vector along the stable axis from ``q0`` and its distance to ``(-3, 5)/sqrt(34)``."""
    if not 0.0 < q0 <= 0.2:
        raise ValueError("q0 must lie in (0, 0.2]")
    v, _ = transport_along_stable_axis(q0, horizon)
    return v, float(np.linalg.norm(v - LAMBDA_LIMIT))
