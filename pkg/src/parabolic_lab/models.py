"""Physical models and the Jacobi-constant reduction.

Three restricted problems are supported:

* ``RC3BP``   circular restricted three-body problem, masses 1-mu and mu,
* ``SITNIKOV`` massless body on the axis of two equal primaries on an
  elliptic orbit of eccentricity eps,
* ``RPC4BP``  restricted four-body problem with primaries 1-2mu, mu, mu in a
  rotating Lagrange triangle.

For the two planar problems the interaction potential ``U = V - 1/r`` is
written in the rotating angle ``phi = alpha - t``.  Fixing the Jacobi
constant removes the angular momentum and leaves a Hamiltonian in
``(r, y)`` whose time is ``tau = -phi``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import newton

from .config import DEFAULTS


class ModelId(str, Enum):
    RC3BP = "RC3BP"
    SITNIKOV = "Sitnikov"
    RPC4BP = "RPC4BP"


class DomainError(ValueError):
    """Evaluation point collides with (or is too close to) a primary."""


class ReductionInvalidError(ValueError):
    """The equation defining the reduced angular momentum has no real root."""


@dataclass(frozen=True)
class ModelParams:
    """Parameters of one restricted problem.

    Parameters
    ----------
    model_id : ModelId
        Which problem.
    mu : float
        Mass parameter, in (0, 1/2].  ``mu = 0`` is accepted as the Kepler
        limit of the planar problems.
    eps : float
        Eccentricity of the Sitnikov primaries, in [0, 1).
    jacobi_J : float
        Jacobi level of the planar problems; must be at least the configured
        validity threshold (5 by default).
    G0 : float
        Rescaled angular momentum used by the four-body splitting analysis.
    """

    model_id: ModelId = ModelId.RC3BP
    mu: float = DEFAULTS.physics.mu
    eps: float = 0.0
    jacobi_J: float = DEFAULTS.physics.jacobi_J
    G0: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "model_id", ModelId(self.model_id))
        if not 0.0 <= self.mu <= 0.5:
            raise ValueError(f"mu must lie in [0, 1/2], got {self.mu}")
        if not 0.0 <= self.eps < 1.0:
            raise ValueError(f"eps must lie in [0, 1), got {self.eps}")
        if self.model_id is not ModelId.SITNIKOV and self.jacobi_J < DEFAULTS.physics.min_jacobi:
            raise ValueError(
                f"jacobi_J = {self.jacobi_J} is below the reduction threshold "
                f"{DEFAULTS.physics.min_jacobi}"
            )
        if self.G0 <= 0:
            raise ValueError("G0 must be positive")

    @property
    def planar(self) -> bool:
        return self.model_id is not ModelId.SITNIKOV


@dataclass(frozen=True)
class PolarState:
    """Point ``(r, alpha, y, G)`` of the planar problem in polar coordinates."""

    r: float
    alpha: float
    y: float
    G: float

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError("r must be positive")
        if not np.all(np.isfinite([self.r, self.alpha, self.y, self.G])):
            raise ValueError("non-finite component")


@dataclass(frozen=True)
class ReducedState:
    """Point ``(r, y, phi)`` of the Jacobi-reduced flow."""

    r: float
    y: float
    phi: float

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError("r must be positive")


def primaries(params: ModelParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Masses, distances to the origin and polar angles of the primaries.

    Angles are measured in the rotating frame so that the potential depends
    on ``phi - angle``.
    """
    mu = params.mu
    if params.model_id is ModelId.RC3BP:
        masses = np.array([1.0 - mu, mu])
        dist = np.array([mu, 1.0 - mu])
        angle = np.array([np.pi, 0.0])
    elif params.model_id is ModelId.RPC4BP:
        # Unit-side triangle, centre of mass at the origin.
        s3 = np.sqrt(3.0)
        xs = np.array([s3 * mu, -(s3 / 2 - s3 * mu), -(s3 / 2 - s3 * mu)])
        ys = np.array([0.0, 0.5, -0.5])
        masses = np.array([1.0 - 2.0 * mu, mu, mu])
        dist = np.hypot(xs, ys)
        angle = np.arctan2(ys, xs)
    else:
        raise ValueError("Sitnikov primaries are not planar")
    return masses, dist, angle


def multipole_bracket(u):
    """Return ``(1+u)**(-1/2) - 1`` without cancellation for small ``u``."""
    return np.expm1(-0.5 * np.log1p(u))


def interaction_potential(r, phi, params: ModelParams):
    """Interaction potential ``U = V - 1/r`` of a planar model.

    Works for arrays and for complex arguments (used by complex-step
    differentiation downstream).
    """
    if not params.planar:
        raise ValueError("interaction_potential is defined for planar models")
    masses, dist, angle = primaries(params)
    r = np.asarray(r)
    total = 0.0
    for m_j, d_j, psi_j in zip(masses, dist, angle):
        if m_j == 0.0 or d_j == 0.0:
            continue
        rho = d_j / r
        u = rho * (rho - 2.0 * np.cos(phi - psi_j))
        total = total + m_j * multipole_bracket(u)
    return total / r


def sitnikov_eccentric_anomaly(t, eps: float, tol: float = 1e-14):
    """Solve Kepler's equation ``E - eps sin E = t`` by Newton iteration."""
    t = np.asarray(t, dtype=float)
    E = t + eps * np.sin(t)
    for _ in range(50):
        step = (E - eps * np.sin(E) - t) / (1.0 - eps * np.cos(E))
        E = E - step
        if np.max(np.abs(step)) < tol:
            break
    return E


def sitnikov_rho(t, eps: float):
    """Distance of each Sitnikov primary to the axis of motion.

    Two primaries of mass 1/2 on a Kepler ellipse of unit semi-major axis
    (relative orbit) and period 2 pi; each sits at half the mutual distance.
    """
    E = sitnikov_eccentric_anomaly(t, eps)
    return 0.5 * (1.0 - eps * np.cos(E))


def eval_potential(r, phi, params: ModelParams):
    """Evaluate the model potential.

    Parameters
    ----------
    r : float or ndarray
        Radius (RC3BP), axis coordinate ``z`` (Sitnikov) or rescaled radius
        ``r_tilde`` (RPC4BP).
    phi : float or ndarray
        Rotating angle ``alpha - t`` for the planar models, time for Sitnikov.
    params : ModelParams

    Returns
    -------
    float or ndarray
        ``U`` for RC3BP, ``-1/sqrt(z^2 + rho^2)`` for Sitnikov and
        ``G0^2 U(G0^2 r_tilde, phi)`` for RPC4BP.

    Raises
    ------
    DomainError
        If the point is not outside the primaries' orbits.
    """
    if params.model_id is ModelId.SITNIKOV:
        rho = sitnikov_rho(phi, params.eps)
        return -1.0 / np.sqrt(np.asarray(r) ** 2 + rho**2)
    scale = params.G0**2 if params.model_id is ModelId.RPC4BP else 1.0
    r_phys = scale * np.asarray(r, dtype=float)
    if np.any(r_phys <= 1.0):
        raise DomainError("radius must exceed the primaries' orbital radius")
    return scale * interaction_potential(r_phys, phi, params)


def kepler_energy(r, y, phi, params: ModelParams):
    """Value ``h = y^2/2 - 1/r - U`` entering the reduction."""
    return 0.5 * y**2 - 1.0 / r - interaction_potential(r, phi, params)


def reduced_angular_momentum(r, y, phi, params: ModelParams):
    """Closed-form root ``G_tilde`` of the Jacobi equation.

    ``G_tilde`` solves ``G^2/(2 r^2) + G + h = J``; it equals minus the
    physical angular momentum and tends to ``J`` far from the primaries.
    """
    D = kepler_energy(r, y, phi, params) - params.jacobi_J
    w = 2.0 * D / r**2
    disc = 1.0 - w
    if np.any(np.real(disc) <= 0):
        raise ReductionInvalidError("no real root for the reduced angular momentum")
    return -w / (1.0 + np.sqrt(disc)) * r**2


def jacobi_residual(r, y, phi, G_tilde, params: ModelParams):
    """``H_pol - G - J`` at the physical momentum ``G = -G_tilde``."""
    h_pol = 0.5 * y**2 + G_tilde**2 / (2.0 * r**2) - 1.0 / r - interaction_potential(r, phi, params)
    return h_pol + G_tilde - params.jacobi_J


def reduced_angular_momentum_newton(r, y, phi, params: ModelParams, tol: float = 1e-14):
    """Newton solve of the Jacobi equation, started on the ``G ~ J`` branch."""
    J = params.jacobi_J
    h = kepler_energy(r, y, phi, params)

    def f(G):
        return G**2 / (2.0 * r**2) + G + h - J

    def fp(G):
        return G / r**2 + 1.0

    G = newton(f, J - h, fprime=fp, tol=tol, maxiter=100)
    if abs(G - J) > 0.5 * J + abs(h):
        raise ReductionInvalidError("Newton iterate left the G ~ J branch")
    return G


def reduce_jacobi(r, y, phi, params: ModelParams):
    """Reduced Hamiltonian ``H_red = J - G_tilde`` (time ``tau = -phi``).

    For the Sitnikov model there is nothing to reduce and the axial
    Hamiltonian ``y^2/2 - 1/sqrt(z^2 + rho(t)^2)`` is returned with
    ``phi`` playing the role of time.

    Raises
    ------
    ReductionInvalidError
        If the Jacobi equation has no real root at this state.
    """
    if params.model_id is ModelId.SITNIKOV:
        return 0.5 * y**2 + eval_potential(r, phi, params)
    return params.jacobi_J - reduced_angular_momentum(r, y, phi, params)


def reduced_series_value(r, y, phi, params: ModelParams, terms: int = 4):
    """Truncated binomial series of ``H_red`` in ``(h - J)/r^2``.

    Used as an accuracy cross-check of the closed form.
    """
    D = kepler_energy(r, y, phi, params) - params.jacobi_J
    w = 2.0 * D / r**2
    total = 0.0
    coeff = 1.0
    for k in range(1, terms + 1):
        # coefficients of 1 - sqrt(1 - w) = sum c_k w^k
        coeff = 0.5 if k == 1 else coeff * (2 * k - 3) / (2 * k)
        total = total + coeff * w**k
    return params.jacobi_J + r**2 * total
