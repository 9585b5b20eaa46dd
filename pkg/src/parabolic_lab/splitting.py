"""Melnikov potentials and splitting functions along the parabolic orbit.

The zero-energy Kepler orbit with unit angular momentum is explicit in the
variable ``tau``:

    u = (tau + tau^3/3) / 2,   r_h = (1 + tau^2) / 2,
    exp(i alpha_h) = (tau - i) / (tau + i).

For the planar models the harmonic ``l`` of the Melnikov potential is an
oscillatory integral of size ``exp(-l G0^3 / 3)``.  Writing the potential as
a multipole sum, each term becomes a kernel integral that is evaluated on
the shifted line ``Im tau = -/+ beta``; there the integrand decays like a
Gaussian and carries no cancellation, so ordinary double precision
resolves modes far below the double-precision epsilon of the potential.
The mass moments multiplying the kernels are computed in multiprecision,
which keeps factors such as ``(1 - 3 mu)`` exact near ``mu = 1/3``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import mpmath
import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq
from scipy.special import jvp

from .models import ModelId, ModelParams
from .normalform import _legendre_fourier

MP_DIGITS = 50


class UnderflowError(ArithmeticError):
    """A requested mode falls below the representable range."""


class AliasingError(ValueError):
    """The sampling grid is too coarse for the requested number of modes."""


class NewtonDivergenceError(RuntimeError):
    """The root finder for the tangency curve did not converge."""


class WindowError(ValueError):
    """The requested abscissa lies outside the validated window."""


# the parabolic orbit --------------------------------------------------------

def tau_of_u(u):
    """Real root of ``tau^3 + 3 tau - 6 u = 0`` (Cardano, cancellation free)."""
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    A = np.cbrt(3.0 * a + np.sqrt(9.0 * a * a + 1.0))
    return np.sign(u) * (A - 1.0 / A)


def homoclinic_orbit(u):
    """Zero-energy Kepler orbit with unit angular momentum at time ``u``.

    Returns
    -------
    tuple
        ``(r_h, y_h, alpha_h)`` with ``alpha_h`` in ``(-pi, pi]``; the
        perihelion ``r_h = 1/2`` is at ``u = 0`` and ``alpha_h(0) = pi``.
    """
    tau = tau_of_u(u)
    w = 1.0 + tau * tau
    r = 0.5 * w
    y = 2.0 * tau / w
    # adding 0.0 turns -0.0 into +0.0, keeping alpha(0) = pi
    alpha = np.arctan2(-2.0 * tau + 0.0, tau * tau - 1.0)
    return r, y, alpha


def kepler_residual(u) -> np.ndarray:
    """Residuals of ``r' = y``, ``y' = r^-3 - r^-2``, ``alpha' = r^-2`` and of the energy."""
    u = np.asarray(u, dtype=float)
    r, y, _ = homoclinic_orbit(u)
    tau = tau_of_u(u)
    du_dtau = 0.5 * (1.0 + tau * tau)
    # d/du = (1/du_dtau) d/dtau, differentiated in closed form
    dr = tau / du_dtau
    dy = 2.0 * (1.0 - tau * tau) / (1.0 + tau * tau) ** 2 / du_dtau
    dalpha = 2.0 / (1.0 + tau * tau) / du_dtau
    energy = 0.5 * y * y + 0.5 / r**2 - 1.0 / r
    return np.array([dr - y, dy - (r**-3 - r**-2), dalpha - r**-2, energy])


# multipole kernels ----------------------------------------------------------

def mass_moment(params: ModelParams, n: int, ell: int, dps: int = MP_DIGITS):
    """Cosine moment ``a_{n,l} sum_j m_j d_j^n cos(l psi_j)`` in multiprecision.

    ``P_n(cos x) = sum_l a_{n,l} cos(l x)``; sine moments vanish for the
    symmetric configurations treated here.
    """
    coeff = _legendre_fourier(n).get(ell)
    if coeff is None:
        return mpmath.mpf(0)
    with mpmath.workdps(dps):
        mu = mpmath.mpf(params.mu)
        if params.model_id is ModelId.RC3BP:
            # (distance, polar angle, mass)
            bodies = [(mu, mpmath.pi, 1 - mu), (1 - mu, 0, mu)]
            total = sum(m * d**n * mpmath.cos(ell * psi) for d, psi, m in bodies)
        elif params.model_id is ModelId.RPC4BP:
            s3 = mpmath.sqrt(3)
            xs = [s3 * mu, -(s3 / 2 - s3 * mu), -(s3 / 2 - s3 * mu)]
            ys = [mpmath.mpf(0), mpmath.mpf(1) / 2, -mpmath.mpf(1) / 2]
            ms = [1 - 2 * mu, mu, mu]
            total = mpmath.mpf(0)
            for x, y, m in zip(xs, ys, ms):
                d = mpmath.sqrt(x * x + y * y)
                psi = mpmath.atan2(y, x)
                total += m * d**n * mpmath.cos(ell * psi)
        else:
            raise ValueError("mass moments are defined for the planar models")
        return mpmath.mpf(coeff.numerator) / coeff.denominator * total


def _max_distance(params: ModelParams) -> float:
    from .models import primaries

    return float(np.max(primaries(params)[1]))


@dataclass(frozen=True)
class KernelTable:
    """``K_{n,l}(G0) = int G0^{-2n} r_h(v)^{-n-1} cos(l theta(v)) dv`` for ``n <= n_max``.

    ``theta = alpha_h - sense G0^3 v``.
    """

    G0: float
    ell: int
    sense: int
    values: np.ndarray
    beta: float


@lru_cache(maxsize=256)
def kernel_table(G0: float, ell: int, sense: int = 1, n_max: int = 90, d_max: float = 0.6,
                 points: int = 6001) -> KernelTable:
    """Contour quadrature of the multipole kernels of harmonic ``ell >= 1``.

    The line ``Im tau = -sense beta`` is chosen so that the multipole sum
    converges at least like ``2^{-n}`` on it.
    """
    if ell < 1:
        raise ValueError("contour kernels need ell >= 1")
    beta = float(np.sqrt(max(1.0 - 4.0 * d_max / G0**2, 0.0)))
    beta = min(beta, 0.95)
    if beta <= 0.2:
        raise ValueError("G0 too small for the multipole contour")
    omega = ell * G0**3
    # Gaussian decay exp(-omega beta s^2 / 2); cut where it is below 1e-40
    half = np.sqrt(2.0 * 92.0 / (omega * beta)) + 1.0
    s = np.linspace(-half, half, points)
    tau = s - 1j * sense * beta
    v = 0.5 * (tau + tau**3 / 3.0)
    r = 0.5 * (1.0 + tau**2)
    rot = ((tau - 1j) / (tau + 1j)) ** ell
    base = rot * np.exp(-1j * sense * omega * v) * 0.5 * (1.0 + tau**2)
    values = np.empty(n_max + 1)
    power = 1.0 / r
    ds = s[1] - s[0]
    for n in range(n_max + 1):
        integrand = base * power
        # composite trapezoid: exponentially accurate for an analytic, decaying integrand
        values[n] = float(np.real(np.sum(integrand) * ds)) * (G0 ** (-2 * n) if n else 1.0)
        power = power / r
    return KernelTable(G0, ell, sense, values, beta)


def melnikov_mode(params: ModelParams, ell: int, G0: Optional[float] = None, sense: int = 1,
                  n_max: int = 90, dps: int = MP_DIGITS):
    """Harmonic ``ell`` of the scaled Melnikov potential.

    ``L(z) = int V(r_h(v), z - sense G0^3 v + alpha_h(v)) dv`` with
    ``V = G0^2 U(G0^2 r, phi)``; the result is an ``mpmath.mpf``.

    Raises
    ------
    UnderflowError
        If the leading exponential falls below ``1e-300``.
    """
    G0 = params.G0 if G0 is None else G0
    if ell * G0**3 / 3.0 > 690.0:
        raise UnderflowError("mode below 1e-300")
    if ell == 0:
        return melnikov_mean(params, G0, n_max, dps)
    table = kernel_table(float(G0), ell, sense, n_max, _max_distance(params) + 1e-12)
    with mpmath.workdps(dps):
        total = mpmath.mpf(0)
        for n in range(max(ell, 2), n_max + 1):
            if (n - ell) % 2:
                continue
            total += mass_moment(params, n, ell, dps) * mpmath.mpf(table.values[n])
        return total


def melnikov_mean(params: ModelParams, G0: float, n_max: int = 60, dps: int = MP_DIGITS):
    """Mean ``L^[0]`` by real-axis quadrature (no oscillation)."""
    with mpmath.workdps(dps):
        moments = [mass_moment(params, n, 0, dps) if n % 2 == 0 and n >= 2 else mpmath.mpf(0)
                   for n in range(n_max + 1)]

    def integrand(tau_):
        r = 0.5 * (1.0 + tau_ * tau_)
        R = G0**2 * r
        acc = 0.0
        for n in range(2, n_max + 1, 2):
            term = float(moments[n]) * R ** (-n - 1)
            acc += term
            if abs(term) < 1e-18 * abs(acc):
                break
        return G0**2 * acc * r

    value, _ = quad(integrand, -np.inf, np.inf, epsabs=0.0, epsrel=1e-13, limit=400)
    return mpmath.mpf(value)


@dataclass
class SplittingFunction:
    """Fourier description of a splitting function ``sum_l c_l cos(l z)``.

    ``amplitude`` is the leading (non-mean) coefficient used for the
    sin-law; ``remainder`` bounds everything else.
    """

    model: str
    modes: dict
    amplitude: float
    remainder: float = 0.0
    grid: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self.modes:
            raise ValueError("a splitting function needs at least one mode")

    def __call__(self, z):
        """Value at ``z``, accumulated in multiprecision."""
        z = np.atleast_1d(np.asarray(z, float))
        with mpmath.workdps(MP_DIGITS):
            out = [sum(c * mpmath.cos(l * mpmath.mpf(zz)) for l, c in self.modes.items()) for zz in z]
        return out


def melnikov_potential(z_phase, params: ModelParams, l_max: int = 4, sense: int = 1):
    """RPC4BP Melnikov potential ``L(z)`` summed from its harmonics (multiprecision)."""
    if not 2.5 <= params.G0 <= 4.5:
        raise ValueError("G0 must lie in [2.5, 4.5]")
    fn = melnikov_splitting(params, l_max, sense)
    values = fn(z_phase)
    return values[0] if np.ndim(z_phase) == 0 else values


def melnikov_splitting(params: ModelParams, l_max: int = 4, sense: int = 1) -> SplittingFunction:
    """Harmonics ``L^[0..l_max]`` of the Melnikov potential as a :class:`SplittingFunction`."""
    modes = {l: melnikov_mode(params, l, sense=sense) for l in range(l_max + 1)}
    lead = max(range(1, l_max + 1), key=lambda l: abs(modes[l]))
    rest = sum(abs(modes[l]) for l in range(1, l_max + 1) if l != lead)
    return SplittingFunction(params.model_id.value, modes, float(modes[lead]), float(rest))


def fourier_coeffs(splitting: SplittingFunction, l_max: int, points: Optional[int] = None):
    """Discrete cosine analysis of a splitting function sampled on a uniform grid.

    Raises
    ------
    AliasingError
        If fewer than ``8 l_max`` samples are requested.
    """
    points = 8 * max(l_max, 1) if points is None else points
    if points < 8 * l_max:
        raise AliasingError("need at least 8 samples per retained mode")
    with mpmath.workdps(MP_DIGITS):
        z = [2 * mpmath.pi * j / points for j in range(points)]
        f = [sum(c * mpmath.cos(l * zz) for l, c in splitting.modes.items()) for zz in z]
        out = {}
        for l in range(l_max + 1):
            acc = sum(fj * mpmath.cos(l * zz) for fj, zz in zip(f, z))
            out[l] = acc / points * (1 if l == 0 else 2)
    return out


# closed forms of the RPC4BP modes -----------------------------------------

def rpc4bp_closed_form(ell: int, mu: float, G0: float) -> float:
    """Leading asymptotics of ``L^[1..3]`` for the Lagrange-triangle primaries."""
    e = np.exp(-ell * G0**3 / 3.0)
    if ell == 1:
        return 0.5 * np.sqrt(1.5 * np.pi) * mu * (1 - 3 * mu) * (1 - 2 * mu) * G0**-1.5 * e
    if ell == 2:
        return 4.0 * np.sqrt(np.pi) * mu * (1 - 3 * mu) * G0**0.5 * e
    if ell == 3:
        return -27.0 * np.sqrt(2.0 * np.pi) * mu**2 * (1 - 2 * mu) * G0**1.5 * e
    raise ValueError("closed forms are known for ell = 1, 2, 3")


def mode_ratios(mu: float, G0: float, modes=(1, 2, 3)) -> dict:
    """``L^[l] / closed form`` for the RPC4BP."""
    params = ModelParams(model_id=ModelId.RPC4BP, mu=mu, G0=G0)
    out = {}
    for l in modes:
        out[l] = float(melnikov_mode(params, l) / mpmath.mpf(rpc4bp_closed_form(l, mu, G0)))
    return out


@dataclass
class TangencyCurvePoint:
    G0: float
    mu: mpmath.mpf
    mu_hat: float
    third_derivative: float


def tangency_system(G0: float, delta, dps: int = MP_DIGITS):
    """``-L^[1] + 3 L^[3]`` at ``mu = 1/3 + delta`` (the condition at ``z = pi/2``)."""
    with mpmath.workdps(dps):
        mu = mpmath.mpf(1) / 3 + mpmath.mpf(delta)
        params = _MpParams(mu, G0)
        return -_mode_mp(params, 1, dps=dps) + 3 * _mode_mp(params, 3, dps=dps)


@dataclass(frozen=True)
class _MpParams:
    mu: object
    G0: float
    model_id: ModelId = ModelId.RPC4BP


def _mode_mp(params: _MpParams, ell: int, n_max: int = 90, dps: int = MP_DIGITS):
    table = kernel_table(float(params.G0), ell, 1, n_max, 0.6)
    total = mpmath.mpf(0)
    for n in range(max(ell, 2), n_max + 1):
        if (n - ell) % 2:
            continue
        total += mass_moment(params, n, ell, dps) * mpmath.mpf(table.values[n])
    return total


def rpc4bp_tangency_curve(G0: float, dps: Optional[int] = None) -> TangencyCurvePoint:
    """Solve ``-L^[1] + 3 L^[3] = 0`` for ``mu`` near ``1/3``.

    Returns ``mu = 1/3 + mu_hat G0^3 exp(-2 G0^3/3)`` together with the
    third-derivative nondegeneracy quantity ``L^[1] - 27 L^[3]``.  The
    offset ``mu - 1/3`` is resolved only if the working precision exceeds
    ``2 G0^3 / 3`` in natural-log units, so the default digit count grows
    with ``G0``.
    """
    if dps is None:
        dps = MP_DIGITS + int(2.0 * G0**3 / (3.0 * np.log(10.0)))
    with mpmath.workdps(dps):
        scale = mpmath.mpf(G0) ** 3 * mpmath.exp(-2 * mpmath.mpf(G0) ** 3 / 3)

        norm = 3 * abs(_mode_mp(_MpParams(mpmath.mpf(1) / 3, G0), 3, dps=dps))

        def f(mu_hat):
            return tangency_system(G0, mu_hat * scale, dps) / norm

        guess = mpmath.mpf(12) * mpmath.sqrt(3)
        try:
            mu_hat = mpmath.findroot(f, (guess, guess * mpmath.mpf("0.9")), solver="secant", tol=1e-24)
        except ValueError as exc:
            raise NewtonDivergenceError(f"no tangency root at G0={G0}") from exc
        mu = mpmath.mpf(1) / 3 + mu_hat * scale
        params = _MpParams(mu, G0)
        third = _mode_mp(params, 1, dps=dps) - 27 * _mode_mp(params, 3, dps=dps)
    return TangencyCurvePoint(G0, mu, float(mu_hat), float(third))


@dataclass
class MuHatFit:
    """``mu_hat(G0) = mu_hat_inf + c1 G0^{-3/2} + c2 G0^{-3}`` fitted to solved points.

    The mode asymptotics are saddle-point expansions in ``(l G0^3)^{-1/2}``,
    hence the powers of ``G0^{-3/2}``.
    """

    G0: np.ndarray
    mu_hat: np.ndarray
    limit: float
    coefficients: np.ndarray
    max_residual: float


def fit_mu_hat(G0_values) -> MuHatFit:
    G0 = np.asarray(G0_values, float)
    mu_hat = np.array([rpc4bp_tangency_curve(g).mu_hat for g in G0])
    M = np.column_stack([np.ones_like(G0), G0**-1.5, G0**-3.0])
    coef, *_ = np.linalg.lstsq(M, mu_hat, rcond=None)
    return MuHatFit(G0, mu_hat, float(coef[0]), coef, float(np.max(np.abs(M @ coef - mu_hat))))


MODE_COLUMNS = ("model", "mu", "G0", "l", "L_l", "asymptotic_ratio")


def mode_table(mu: float, G0_values, modes=(1, 2, 3)) -> list[dict]:
    """RPC4BP mode values and their ratios to the closed forms."""
    rows = []
    for G0 in G0_values:
        params = ModelParams(model_id=ModelId.RPC4BP, mu=mu, G0=G0)
        for l in modes:
            value = melnikov_mode(params, l)
            ratio = float(value / mpmath.mpf(rpc4bp_closed_form(l, mu, G0)))
            rows.append({"model": "rpc4bp", "mu": mu, "G0": G0, "l": l,
                         "L_l": mpmath.nstr(value, 17), "asymptotic_ratio": ratio})
    return rows


def write_mode_table(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MODE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


# RC3BP --------------------------------------------------------------------

def rc3bp_modes(params: ModelParams, l_max: int = 3) -> dict:
    """Harmonics ``L_l`` of the physical-time Melnikov potential of the RC3BP.

    The reduced angular momentum is ``J`` and the orbit is retrograde in
    the rotating frame, so the kernel phase is ``alpha_h + J^3 v``.  The
    physical-time integral carries an extra factor ``J`` relative to the
    scaled one.  Harmonics below the double range are dropped.
    """
    J = params.jacobi_J
    scaled = ModelParams(model_id=ModelId.RC3BP, mu=params.mu, jacobi_J=J, G0=J)
    out = {}
    for l in range(1, l_max + 1):
        try:
            out[l] = melnikov_mode(scaled, l, G0=J, sense=-1) * J
        except UnderflowError:
            break
    return out


def rc3bp_energy_splitting(phase, params: ModelParams):
    """``E^u - E^s = dL/dphase = -sum_l l L_l sin(l phase)`` to first order in ``mu``."""
    phase = np.asarray(phase, float)
    modes = rc3bp_modes(params)
    return -sum(l * float(c) * np.sin(l * phase) for l, c in modes.items())


def rc3bp_sigma(params: ModelParams) -> tuple[float, float]:
    """``(sigma_J, E_J)`` with ``E^u - E^s = mu (sigma_J sin(phase) + E_J(phase))``.

    ``sigma_J = -L_1 / mu``; ``E_J`` is the sup norm of the harmonics
    ``l >= 2`` of the energy splitting divided by ``mu``.
    """
    modes = rc3bp_modes(params)
    sigma = -float(modes[1]) / params.mu
    rest = sum(l * abs(float(modes[l])) for l in modes if l > 1) / params.mu
    return sigma, rest


ENTRY_SCALE = 2.0 ** (-5.0 / 3.0)


def entry_coordinate_tau(tau):
    """Scaled normal-chart coordinate ``2^{-5/3}(x + y)`` of the orbit at ``tau``.

    With ``r = J^2 r_h`` the physical coordinate is this value divided by
    ``J``; the scaled one is ``J``-free.
    """
    w = 1.0 + tau * tau
    return ENTRY_SCALE * (2.0 / np.sqrt(w) + 2.0 * tau / w)


def _entry_coordinate_dtau(tau):
    w = 1.0 + tau * tau
    return ENTRY_SCALE * (-2.0 * tau * w**-1.5 + 2.0 * (1.0 - tau * tau) / w**2)


def entry_coordinate(u):
    """Entry coordinate at orbit time ``u``."""
    return entry_coordinate_tau(tau_of_u(u))


@dataclass
class Pullback:
    """Inverse ``g`` of the entry coordinate ``f`` on a monotone window of orbit times.

    ``phase(q) = J^3 g(q)`` is the physical time at which the homoclinic
    orbit crosses ``{Q = q / J}``; to leading order ``g(q) = 1/(3 q^3)``.
    """

    u_window: tuple
    J: float
    f_range: tuple

    def g(self, q, tol: float = 1e-15, max_iter: int = 60):
        """Newton inversion in ``tau`` seeded by the leading inverse."""
        q = np.asarray(q, float)
        if np.any(q < self.f_range[0]) or np.any(q > self.f_range[1]):
            raise WindowError("q outside the image of the pullback window")
        tau = np.cbrt(6.0 / (3.0 * q**3))
        for _ in range(max_iter):
            step = (entry_coordinate_tau(tau) - q) / _entry_coordinate_dtau(tau)
            tau = tau - step
            if np.all(np.abs(step) <= tol * np.abs(tau)):
                break
        return 0.5 * (tau + tau**3 / 3.0)

    def phase(self, q):
        return self.J**3 * self.g(q)

    def phase_constant(self, q) -> np.ndarray:
        """``c`` in ``phase = (c J / q)^3``."""
        q = np.asarray(q, float)
        return np.cbrt(self.phase(q)) * q / self.J


def time_energy_pullback(u_window, params: ModelParams, a: float = 0.1, samples: int = 2001) -> Pullback:
    """Check that ``f`` is monotone on ``u_window`` with image covering ``[a/2, 2a]``.

    Raises
    ------
    WindowError
        If the map is not monotone on the window or misses ``[a/2, 2a]``.
    """
    u0, u1 = u_window
    if not 0 < u0 < u1:
        raise WindowError("need 0 < u0 < u1")
    tau = tau_of_u(np.geomspace(u0, u1, samples))
    if np.any(_entry_coordinate_dtau(tau) >= 0):
        raise WindowError("entry coordinate is not monotone on the window")
    f1, f0 = float(entry_coordinate(u1)), float(entry_coordinate(u0))
    if f1 > a / 2 or f0 < 2 * a:
        raise WindowError("window image does not cover [a/2, 2a]")
    return Pullback((u0, u1), params.jacobi_J, (f1, f0))


def default_pullback(params: ModelParams, a: float = 0.1) -> Pullback:
    # leading inverse u = 1/(3 q^3), padded by a factor 2 in q on each side
    return time_energy_pullback((1.0 / (3.0 * (4 * a) ** 3), 1.0 / (3.0 * (a / 4) ** 3)), params, a)


def rc3bp_splitting(q, params: ModelParams, a: float = 0.1):
    """``M_mu(q; J) = (mu / 2q) (sigma_J sin(phase(q)) + E_J)`` over ``q in [a/2, 2a]``.

    Raises
    ------
    WindowError
        If ``q`` leaves the window.
    """
    q = np.asarray(q, float)
    if np.any(q < a / 2 - 1e-15) or np.any(q > 2 * a + 1e-15):
        raise WindowError("q outside [a/2, 2a]")
    phase = default_pullback(params, a).phase(q)
    return rc3bp_energy_splitting(phase, params) / (2.0 * q)


# Sitnikov -----------------------------------------------------------------

def sitnikov_rho_series(t, eps: float, terms: Optional[int] = None):
    """Half-distance ``(1 - eps cos E)/2`` from its Bessel series in ``t``.

    The ``k``-th coefficient is ``O(eps^k)``, so by default the series is cut
    where ``eps^k`` drops below ``1e-17``.
    """
    t = np.asarray(t, float)
    if eps == 0.0:
        return np.full_like(t, 0.5)
    if terms is None:
        terms = int(np.ceil(17.0 / -np.log10(eps))) + 2
    k = np.arange(1, terms + 1)
    coeff = -2.0 * eps * jvp(k, k * eps) / k
    return 0.5 * (1.0 + 0.5 * eps**2 + np.cos(np.multiply.outer(t, k)) @ coeff)


def _sitnikov_rhs(eps: float):
    def rhs(t, z):
        rho = sitnikov_rho_series(t, eps)
        return [z[1], -z[0] * (z[0] ** 2 + rho**2) ** -1.5]

    return rhs


@lru_cache(maxsize=4)
def _sitnikov_homoclinic(t_max: float = 400.0):
    """Zero-energy orbit of ``y^2/2 - (z^2 + 1/4)^{-1/2}`` through ``z = 0`` at time 0."""
    sol = solve_ivp(_sitnikov_rhs(0.0), (0.0, t_max), [0.0, 2.0], method="DOP853",
                    rtol=1e-13, atol=1e-14, dense_output=True)
    return sol.sol


def sitnikov_homoclinic(u):
    """``(z_h(u), y_h(u))``; odd and even in ``u`` respectively."""
    u = np.asarray(u, float)
    z, y = _sitnikov_homoclinic()(np.abs(u))
    return np.sign(u) * z, y


def sitnikov_melnikov_sigma(origin: str = "pericentre") -> float:
    """First-order amplitude ``sigma_eps`` in ``E^u - E^s = eps sigma_eps sin u + O(eps^2)``.

    The half-distance of the primaries is ``(1 - eps cos t)/2 + O(eps^2)``,
    so the perturbing Hamiltonian is ``-(cos t / 4)(z^2 + 1/4)^{-3/2}``.
    With the section point ``z_h(u)`` at ``t = 0`` the energy splitting is
    ``eps int dH1/dt = -eps (C/4) sin u`` with
    ``C = int (z_h^2 + 1/4)^{-3/2} cos s ds > 0``.

    Parameters
    ----------
    origin : {"pericentre", "apocentre"}
        Position of the primaries at ``t = 0``.  Moving the time origin to
        the apocentre shifts the perturbation phase by ``pi`` and flips the
        sign, giving ``sigma = +C/4``.
    """
    if origin not in ("pericentre", "apocentre"):
        raise ValueError("origin must be 'pericentre' or 'apocentre'")
    sol = _sitnikov_homoclinic()

    def f(s):
        z = sol(s)[0] if s < 400.0 else (4.5 * s * s) ** (1.0 / 3.0)
        return (z * z + 0.25) ** -1.5

    head, _ = quad(lambda s: f(s) * np.cos(s), 0.0, 40.0 * np.pi, limit=800, epsabs=1e-14, epsrel=1e-13)
    tail, _ = quad(f, 40.0 * np.pi, np.inf, weight="cos", wvar=1.0, limlst=200)
    C = 2.0 * (head + tail)
    return -0.25 * C if origin == "pericentre" else 0.25 * C


def _escape_energy(z0, y0, eps, direction, z_far, t0=0.0):
    """Energy ``y^2/2 - 1/|z|`` once ``|z|`` first reaches ``z_far`` (or the orbit turns back)."""

    def reach(t, s):
        return abs(s[0]) - z_far

    reach.terminal = True

    # escaping branches of the homoclinic family keep y > 0 in forward time
    def turn(t, s):
        return s[1]

    turn.terminal = True
    span = (t0, t0 + direction * 40.0 * z_far**1.5)
    rhs = _sitnikov_rhs(eps)
    sol = solve_ivp(rhs, span, [z0, y0], method="DOP853", rtol=1e-12, atol=1e-13,
                    events=[reach, turn])
    z, y = sol.y[0, -1], sol.y[1, -1]
    t = sol.t[-1]
    if len(sol.t_events[1]) and not len(sol.t_events[0]):
        return -1.0 / abs(z)  # bounded: below the parabolic level
    rho = sitnikov_rho_series(t, eps)
    return 0.5 * y * y - (z * z + rho**2) ** -0.5


def sitnikov_manifold_momentum(u: float, eps: float, branch: str, z_far: float = 60.0) -> float:
    """Momentum ``y`` at ``(z_h(u), t = 0)`` on the stable (``'s'``) or unstable (``'u'``) branch.

    The stable branch escapes to ``+inf`` forward in time and the unstable
    branch to ``-inf`` backward in time; each is found by solving
    ``h_inf(y) = 0`` for its parabolic escape energy.
    """
    z0, y_h = sitnikov_homoclinic(u)
    z0, y_h = float(z0), float(y_h)
    direction = 1.0 if branch == "s" else -1.0

    def h(y):
        return _escape_energy(z0, y, eps, direction, z_far)

    width = 0.1 * y_h
    lo, hi = y_h - width, y_h + width
    f_lo, f_hi = h(lo), h(hi)
    while f_lo * f_hi > 0:
        width *= 2
        lo, hi = y_h - width, y_h + width
        f_lo, f_hi = h(lo), h(hi)
    return brentq(h, lo, hi, xtol=1e-14, rtol=1e-14)


def sitnikov_energy_splitting(u, eps: float, z_far: float = 60.0) -> np.ndarray:
    """Nonperturbative ``E^u - E^s`` in time-energy coordinates ``E = y_h (y - y_h)``."""
    if eps > 0.2:
        raise ValueError("eps must be <= 0.2")
    out = []
    for uu in np.atleast_1d(u):
        _, y_h = sitnikov_homoclinic(uu)
        ys = sitnikov_manifold_momentum(uu, eps, "s", z_far)
        yu = sitnikov_manifold_momentum(uu, eps, "u", z_far)
        out.append(float(y_h) * (yu - ys))
    return np.array(out)


SITNIKOV_GRID = np.pi / 16 + np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False)


@dataclass
class SinLawFit:
    """Least-squares harmonic fit of a sampled energy splitting.

    ``amplitude`` and ``cos_part`` are the first-harmonic coefficients;
    ``phase_defect = |cos_part / amplitude|`` measures the departure of the
    first harmonic from ``sin u``; ``residual`` is the RMS of
    ``values - amplitude sin u`` relative to ``|amplitude|``.
    """

    eps: float
    amplitude: float
    cos_part: float
    residual: float
    coefficients: np.ndarray = field(repr=False, default=None)

    @property
    def phase_defect(self) -> float:
        return abs(self.cos_part / self.amplitude)


def fit_sin_law(u: np.ndarray, values: np.ndarray, eps: float, harmonics: int = 3) -> SinLawFit:
    """Fit ``c0 + sum_k a_k sin(k u) + b_k cos(k u)`` to sampled values."""
    u = np.asarray(u, float)
    if u.size < 2 * harmonics + 1:
        raise AliasingError("too few samples for the requested harmonics")
    cols = [np.ones_like(u)]
    for k in range(1, harmonics + 1):
        cols += [np.sin(k * u), np.cos(k * u)]
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), values, rcond=None)
    A = coef[1]
    residual = float(np.sqrt(np.mean((values - A * np.sin(u)) ** 2)) / abs(A))
    return SinLawFit(eps, float(A), float(coef[2]), residual, coef)


@dataclass
class LinearityFit:
    """``A(eps) = sigma eps + c eps^2`` fitted over an eps sweep."""

    sigma: float
    quadratic: float
    eps_max: float

    @property
    def remainder_ratio(self) -> float:
        return abs(self.quadratic * self.eps_max / self.sigma)


def fit_linearity(eps_values, amplitudes) -> LinearityFit:
    e = np.asarray(eps_values, float)
    M = np.column_stack([e, e * e])
    (sigma, c), *_ = np.linalg.lstsq(M, np.asarray(amplitudes, float), rcond=None)
    return LinearityFit(float(sigma), float(c), float(e.max()))


def sitnikov_splitting(u, eps: float, z_far: float = 60.0):
    """``E^u - E^s`` at ``u`` together with the first-order prediction ``eps sigma sin u``.

    Returns
    -------
    tuple
        ``(value, leading, remainder_estimate)``.
    """
    value = sitnikov_energy_splitting(u, eps, z_far)
    lead = eps * sitnikov_melnikov_sigma() * np.sin(np.atleast_1d(u))
    return value, lead, np.abs(value - lead)
