"""Shilnikov boundary-value maps near the degenerate saddle.

All quantities live in the normal chart, where ``K = -qp + R`` and
``{p = 0}``, ``{q = 0}`` are the stable and unstable branches.  In the
rescaled time ``ds = (q + p)^3 dt`` the linear part is hyperbolic, and an
orbit entering with ``q(0) = xi`` and leaving with ``p(s*) = eta`` solves

    q(s) = xi e^{-s} + int_0^s e^{-(s - u)} R_p du,
    p(s) = eta e^{s - s*} - int_{s*}^s e^{s - u} R_q du.

The passage time in the chart clock is ``T = int_0^{s*} (q + p)^{-3} ds``.
For ``R = 0`` everything is explicit through

    G(sigma) = int_{-inf}^sigma (e^u + e^{-u})^{-3} du,

and this closed-form core is what the vectorised helpers below evaluate.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_simpson, simpson
from scipy.optimize import brentq

PI_OVER_16 = np.pi / 16.0


class NoContractionError(RuntimeError):
    """Picard updates stopped shrinking."""


class GridResolutionError(RuntimeError):
    """The s-grid is too coarse for the requested tolerance."""


class InversionError(RuntimeError):
    """A Shilnikov map could not be inverted on the requested strip."""


def G_closed(sigma):
    """Closed form of ``int_{-inf}^sigma (e^u + e^{-u})^{-3} du``."""
    sigma = np.asarray(sigma, dtype=float)
    e = np.exp(-np.abs(sigma))
    # e^s (e^{2s}-1)/(e^{2s}+1)^2 is odd in s; write it with e = e^{-|s|}.
    rational = np.sign(sigma) * e * (1.0 - e**2) / (1.0 + e**2) ** 2
    arctan = np.where(sigma >= 0, 0.5 * np.pi - np.arctan(e), np.arctan(e))
    return 0.125 * (rational + arctan)


def g_density(sigma):
    """Integrand ``(e^s + e^{-s})^{-3}``."""
    a = np.abs(np.asarray(sigma, dtype=float))
    e = np.exp(-2.0 * a)
    return np.exp(-3.0 * a) / (1.0 + e) ** 3


def _sigma_pair(xi, eta, s):
    shift = 0.5 * np.log(eta / xi)
    return 0.5 * s + shift, -0.5 * s + shift


def passage_time(xi, eta, s):
    """Chart-clock passage time of the integrable core for given ``s*``."""
    sp, sm = _sigma_pair(xi, eta, s)
    return (xi * eta) ** -1.5 * np.exp(1.5 * s) * (G_closed(sp) - G_closed(sm))


def leading_s_star(xi, eta, T):
    """Leading-order ``s*`` from ``e^{-s*} = (pi/16T)^{2/3} / (xi eta)``."""
    return -np.log((PI_OVER_16 / np.asarray(T)) ** (2.0 / 3.0) / (xi * eta))


def _log_time_partials(xi, eta, s):
    sp, sm = _sigma_pair(xi, eta, s)
    dG = G_closed(sp) - G_closed(sm)
    gp, gm = g_density(sp), g_density(sm)
    F_s = 1.5 + 0.5 * (gp + gm) / dG
    skew = 0.5 * (gp - gm) / dG
    return dG, gp, gm, F_s, skew


def solve_s_star_core(xi, eta, T, tol: float = 1e-15, maxiter: int = 60):
    """Vectorised Newton solve of ``passage_time(xi, eta, s) = T``.

    Newton runs on ``log T(s)``, which is increasing and concave enough
    for the leading-order seed to converge for every ``T > 0``.
    """
    xi, eta, T = np.broadcast_arrays(
        np.asarray(xi, float), np.asarray(eta, float), np.asarray(T, float)
    )
    s = np.maximum(leading_s_star(xi, eta, T), 1e-3)
    logT = np.log(T)
    for _ in range(maxiter):
        dG, _, _, F_s, _ = _log_time_partials(xi, eta, s)
        F = -1.5 * np.log(xi * eta) + 1.5 * s + np.log(dG) - logT
        step = F / F_s
        s = np.maximum(s - step, 0.5 * s)
        if np.max(np.abs(step)) < tol * max(1.0, float(np.max(s))):
            break
    return s


def core_maps(xi, eta, T):
    """Integrable-core Shilnikov data, vectorised.

    Returns
    -------
    dict
        ``s_star``, ``x_T``, ``y_T`` and the four first partials
        ``dx_dxi``, ``dx_deta``, ``dy_dxi``, ``dy_deta``, all written so that
        the small quantities carry no cancellation.
    """
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    s = solve_s_star_core(xi, eta, T)
    dG, gp, gm, F_s, skew = _log_time_partials(xi, eta, s)
    es = np.exp(-s)
    return {
        "s_star": s,
        "x_T": xi * es,
        "y_T": eta * es,
        "dx_dxi": es * gm / (dG * F_s),
        "dy_deta": es * gp / (dG * F_s),
        "dx_deta": -(xi / eta) * es * (1.5 - skew) / F_s,
        "dy_dxi": -(eta / xi) * es * (1.5 + skew) / F_s,
    }


@dataclass
class ShilnikovSolution:
    """Boundary-value path on ``[0, s*]`` with ``q(0) = xi``, ``p(s*) = eta``."""

    xi: float
    eta: float
    s_star: float
    s: np.ndarray
    q: np.ndarray
    p: np.ndarray
    t: np.ndarray
    sweeps: int
    last_update: float
    remainder_order: Optional[int] = None

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def x_T(self) -> float:
        return float(self.q[-1])

    @property
    def y_T(self) -> float:
        return float(self.p[0])


@dataclass
class ShilnikovEval:
    """Values and Jacobian of the Shilnikov maps at one ``(xi, eta, T)``.

    ``jac`` is ``[[dx/dxi, dx/deta], [dy/dxi, dy/deta]]``.
    """

    xi: float
    eta: float
    T: float
    s_star: float
    x_T: float
    y_T: float
    jac: np.ndarray
    a: float = 0.1

    def stable_map(self) -> tuple[float, float]:
        return self.xi, self.y_T

    def unstable_map(self) -> tuple[float, float]:
        return self.x_T, self.eta


RemainderGrad = Callable[[np.ndarray, np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def remainder_from_series(series) -> RemainderGrad:
    """Wrap a normal-chart series ``R`` as a function returning ``(R_q, R_p)``."""
    dq = series.diff_q()
    dp = series.diff_p()

    def grad(q, p, t):
        return dq.evaluate(q, p, t), dp.evaluate(q, p, t)

    grad.order = series.min_degree()
    return grad


def _grid_size(s_star: float) -> int:
    n = max(800, int(40 * s_star))
    return n + (n % 2 == 0)


def picard_solve(
    xi: float,
    eta: float,
    s_star: float,
    tol: float = 1e-13,
    remainder: Optional[RemainderGrad] = None,
    max_sweeps: int = 200,
    t0: float = 0.0,
) -> ShilnikovSolution:
    """Fixed point of the Shilnikov integral operator on a uniform s-grid.

    The chart time ``t(s)`` entering a time-dependent remainder is refreshed
    once per sweep from the current path.

    Raises
    ------
    NoContractionError
        If an update fails to shrink for several consecutive sweeps.
    """
    if not (xi > 0 and eta > 0 and s_star > 0):
        raise ValueError("xi, eta and s_star must be positive")
    n = _grid_size(s_star)
    s = np.linspace(0.0, s_star, n)
    q = xi * np.exp(-s)
    p = eta * np.exp(s - s_star)
    sweeps = 0
    update = 0.0
    growth = 0

    def clock(q, p):
        return t0 + cumulative_simpson((q + p) ** -3, x=s, initial=0.0)

    t = clock(q, p)
    if remainder is None:
        return ShilnikovSolution(xi, eta, s_star, s, q, p, t, 1, 0.0, None)
    for sweeps in range(1, max_sweeps + 1):
        R_q, R_p = remainder(q, p, t)
        fwd = cumulative_simpson(np.exp(s) * R_p, x=s, initial=0.0)
        bwd = cumulative_simpson(np.exp(-s) * R_q, x=s, initial=0.0)
        bwd = bwd[-1] - bwd
        q_new = np.exp(-s) * (xi + fwd)
        p_new = np.exp(s) * (eta * np.exp(-s_star) + bwd)
        prev = update
        update = float(max(np.max(np.abs(q_new - q)), np.max(np.abs(p_new - p))))
        q, p = q_new, p_new
        t = clock(q, p)
        if update < tol:
            break
        growth = growth + 1 if (sweeps > 2 and update >= prev) else 0
        if growth >= 3:
            raise NoContractionError(f"Picard update stalled at {update:.3e}")
    else:
        raise NoContractionError(f"no convergence after {max_sweeps} sweeps")
    return ShilnikovSolution(
        xi, eta, s_star, s, q, p, t, sweeps, update, getattr(remainder, "order", None)
    )


def solve_s_star(
    xi: float,
    eta: float,
    T: float,
    remainder: Optional[RemainderGrad] = None,
    tol: float = 1e-13,
    T0: float = 200.0,
) -> float:
    """Rescaled passage time ``s*`` realising chart-clock time ``T``."""
    if T < T0:
        raise ValueError(f"T = {T} is below the supported minimum {T0}")
    s0 = float(solve_s_star_core(xi, eta, T))
    if remainder is None:
        return s0

    def mismatch(s):
        return np.log(picard_solve(xi, eta, s, tol, remainder).T / T)

    lo, hi = s0 - 0.05, s0 + 0.05
    while mismatch(lo) > 0:
        lo -= 0.1
    while mismatch(hi) < 0:
        hi += 0.1
    return brentq(mismatch, lo, hi, xtol=1e-14, rtol=1e-14)


def shilnikov_maps(
    xi: float,
    eta: float,
    T: float,
    remainder: Optional[RemainderGrad] = None,
    a: float = 0.1,
    step: Optional[float] = None,
) -> ShilnikovEval:
    """Evaluate ``x_T``, ``y_T`` and their Jacobian.

    Without a remainder the closed-form core gives exact partials.  With
    one, the partials come from central differences of Picard solutions
    with step ``0.1/T`` scaled to the box.
    """
    if remainder is None:
        d = core_maps(xi, eta, T)
        jac = np.array([[d["dx_dxi"], d["dx_deta"]], [d["dy_dxi"], d["dy_deta"]]], float)
        return ShilnikovEval(xi, eta, T, float(d["s_star"]), float(d["x_T"]), float(d["y_T"]), jac, a)

    def values(u, v):
        s = solve_s_star(u, v, T, remainder)
        sol = picard_solve(u, v, s, remainder=remainder)
        return s, sol.x_T, sol.y_T

    s, x_T, y_T = values(xi, eta)
    h = step if step is not None else max(0.1 / T, 1e-6) * a
    cols = []
    for du, dv in ((h, 0.0), (0.0, h)):
        _, xp, yp = values(xi + du, eta + dv)
        _, xm, ym = values(xi - du, eta - dv)
        cols.append(((xp - xm) / (2 * h), (yp - ym) / (2 * h)))
    jac = np.array([[cols[0][0], cols[1][0]], [cols[0][1], cols[1][1]]])
    return ShilnikovEval(xi, eta, T, s, x_T, y_T, jac, a)


def invert_stable(q, y, T, eta_bracket: tuple[float, float] | None = None):
    """Solve ``y_T(q, eta) = y`` for ``eta`` (vectorised Newton).

    ``y_T`` depends on ``eta`` only through ``eta e^{-s*}``, which is
    increasing in ``eta``; Newton starts from the leading-order inverse.
    """
    q = np.asarray(q, float)
    y = np.asarray(y, float)
    if np.any(y <= 0) or np.any(q <= 0):
        raise InversionError("the stable Shilnikov map only reaches y > 0")
    # leading order: y_T ~ (pi/16T)^{2/3}/q, independent of eta
    eta = np.full(np.broadcast(q, y).shape, 0.1)
    if eta_bracket is not None:
        eta = np.full_like(eta, 0.5 * sum(eta_bracket))
    for _ in range(80):
        d = core_maps(q, eta, T)
        step = (d["y_T"] - y) / d["dy_deta"]
        eta_new = eta - step
        eta = np.where(eta_new <= 0, 0.5 * eta, eta_new)
        # y_T carries ~1e-16 relative rounding, so eta is only defined to
        # about eps * y / (dy/deta); stop at a few multiples of that floor
        floor = 64.0 * np.finfo(float).eps * np.abs(y / d["dy_deta"])
        if np.all(np.abs(step) <= np.maximum(floor, 1e-15 * np.abs(eta))):
            break
    else:
        raise InversionError("Newton inversion of y_T did not converge")
    return eta


def local_map(q: float, p: float, T: float):
    """Local passage map ``Psi^u_T o (Psi^s_T)^{-1}`` with its Jacobian.

    The entry point ``(q, p)`` is written as ``(xi, y_T(xi, eta))``; the
    exit point is ``(x_T(xi, eta), eta)``.

    Returns
    -------
    tuple
        ``(q_out, p_out, jac)`` where ``jac`` is the 2x2 derivative.
    """
    eta = float(invert_stable(q, p, T))
    d = core_maps(q, eta, T)
    # D(Psi^s) = [[1, 0], [y_xi, y_eta]],  D(Psi^u) = [[x_xi, x_eta], [0, 1]]
    inv_s = np.array([[1.0, 0.0], [-d["dy_dxi"] / d["dy_deta"], 1.0 / d["dy_deta"]]])
    D_u = np.array([[d["dx_dxi"], d["dx_deta"]], [0.0, 1.0]])
    return float(d["x_T"]), eta, D_u @ inv_s


def local_map_eigenvalues(q: float, p: float, T: float):
    """Eigenvalues of the local-map Jacobian, largest first."""
    _, _, jac = local_map(q, p, T)
    vals = np.linalg.eigvals(jac)
    return vals[np.argsort(-np.abs(vals))]


def diagonal_curves(T: float, q_range: tuple[float, float], n: int = 101):
    """Tabulate ``gamma^- = {(q, y_T(q, q))}`` and ``gamma^+ = {(x_T(p, p), p)}``."""
    lo, hi = q_range
    grid = np.linspace(lo, hi, n)
    d = core_maps(grid, grid, T)
    minus = np.column_stack([grid, d["y_T"]])
    plus = np.column_stack([d["x_T"], grid])
    return minus, plus


@dataclass
class ShilnikovCache:
    """Disk-backed table of solved ``(model, mu, a, T, xi, eta)`` entries."""

    path: Optional[str] = None
    entries: dict = field(default_factory=dict)

    FIELDS = ("model", "mu", "a", "T", "xi", "eta", "s_star", "x_T", "y_T", "j11", "j12", "j21", "j22")

    @staticmethod
    def key(model: str, mu: float, a: float, T: float, xi: float, eta: float) -> tuple:
        return (model, repr(float(mu)), repr(float(a)), repr(float(T)), repr(float(xi)), repr(float(eta)))

    def get_or_compute(self, model: str, mu: float, T: float, xi: float, eta: float, a: float = 0.1, **kw):
        k = self.key(model, mu, a, T, xi, eta)
        if k not in self.entries:
            self.entries[k] = shilnikov_maps(xi, eta, T, a=a, **kw)
        return self.entries[k]

    def _rows(self):
        for k in sorted(self.entries):
            ev = self.entries[k]
            yield list(k) + [repr(float(v)) for v in (ev.s_star, ev.x_T, ev.y_T, *ev.jac.ravel())]

    def digest(self) -> str:
        h = hashlib.sha256()
        for row in self._rows():
            h.update(",".join(row).encode())
        return h.hexdigest()

    def save(self, path: Optional[str] = None) -> str:
        path = path or self.path
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(self.FIELDS)
            writer.writerows(self._rows())
        with open(path + ".sha256", "w") as handle:
            handle.write(self.digest() + "\n")
        return path

    @classmethod
    def load(cls, path: str) -> "ShilnikovCache":
        cache = cls(path=path)
        if not os.path.exists(path):
            return cache
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            next(reader)
            for row in reader:
                k = tuple(row[:6])
                s_star, x_T, y_T, *jac = (float(v) for v in row[6:])
                cache.entries[k] = ShilnikovEval(
                    float(row[4]), float(row[5]), float(row[3]), s_star, x_T, y_T,
                    np.array(jac).reshape(2, 2), float(row[2]),
                )
        expected = open(path + ".sha256").read().strip() if os.path.exists(path + ".sha256") else None
        if expected is not None and expected != cache.digest():
            raise ValueError(f"cache checksum mismatch for {path}")
        return cache


def rate_fit(T_values, defects) -> float:
    """Least-squares slope of ``log defect`` against ``log T``."""
    return float(np.polyfit(np.log(np.asarray(T_values, float)), np.log(np.abs(defects)), 1)[0])


def integral_pi_over_16(tol: float = 1e-13) -> float:
    """Quadrature of ``int_R (e^u + e^{-u})^{-3} du``."""
    from scipy.integrate import quad

    val, _ = quad(lambda u: g_density(u), -np.inf, np.inf, epsabs=tol, epsrel=tol)
    return val


def simpson_time(sol: ShilnikovSolution) -> float:
    """Recompute the passage time of a Picard path with composite Simpson."""
    return float(simpson((sol.q + sol.p) ** -3, x=sol.s))
