"""Fourier-Taylor series over the singular bracket and the formal normal form.

A series is a truncated sum ``sum c[l, m, k] q^l p^m e^{ikt}`` with
``l + m <= max_degree`` and ``|k| <= max_harmonic``, plus an optional
multiple of the action ``I`` conjugate to ``t``.  The bracket is

    {F, G} = (q + p)^3 (F_q G_p - F_p G_q) + (F_t G_I - F_I G_t),

and ``ad_F H = {H, F}``, so that ``H o Phi_F = sum ad_F^j H / j!`` where
``Phi_F`` is the time-one flow of ``F``.

Coefficients are stored as complex exponentials in extended precision
(``numpy.clongdouble``); real series satisfy ``c[l, m, -k] = conj c[l, m, k]``.
The public coefficient view uses ``(l, m, k, parity)`` keys with parity
``"c"`` for ``cos(kt)`` and ``"s"`` for ``sin(kt)``.
"""

from __future__ import annotations

import contextlib
import csv
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Iterable, Optional

import gmpy2
import numpy as np

from .models import ModelId, ModelParams, primaries, sitnikov_rho

DTYPE = np.clongdouble
_WORKING = {"dps": None}


def working_digits() -> Optional[int]:
    """Decimal digits of the multiprecision backend, or ``None`` for extended."""
    return _WORKING["dps"]


def _bits(dps: int) -> int:
    return int(dps * 3.33) + 8


def set_working_digits(dps: Optional[int]) -> None:
    """Select the coefficient arithmetic.

    ``None`` uses ``numpy.clongdouble``; an integer switches to ``gmpy2``
    complex numbers with that many digits.  The J = 10 expansions reach
    coefficients near 1e10 by degree 10, so absolute residuals of 1e-12
    need more than the 19 digits of extended precision.
    """
    _WORKING["dps"] = None if dps is None else int(dps)
    if dps is not None:
        gmpy2.get_context().precision = _bits(dps)


@contextlib.contextmanager
def working_precision(dps: Optional[int]):
    old_dps, old_bits = _WORKING["dps"], gmpy2.get_context().precision
    set_working_digits(dps)
    try:
        yield
    finally:
        _WORKING["dps"] = old_dps
        gmpy2.get_context().precision = old_bits


def _mpfr(value):
    """Exact conversion of a real number (including ``longdouble``) to ``gmpy2``."""
    if isinstance(value, Fraction):
        return gmpy2.mpfr(gmpy2.mpq(value.numerator, value.denominator))
    if isinstance(value, np.longdouble):
        hi = float(value)
        return gmpy2.mpfr(hi) + gmpy2.mpfr(float(value - np.longdouble(hi)))
    return gmpy2.mpfr(value)


def _scalar(value):
    """Convert a number to the active backend."""
    if _WORKING["dps"] is None:
        if isinstance(value, Fraction):
            return DTYPE(np.longdouble(value.numerator) / np.longdouble(value.denominator))
        if isinstance(value, type(gmpy2.mpc())):
            return DTYPE(complex(value))
        return DTYPE(value)
    if isinstance(value, type(gmpy2.mpc())):
        return value
    if isinstance(value, np.clongdouble):
        return gmpy2.mpc(_mpfr(value.real), _mpfr(value.imag))
    if isinstance(value, (complex, np.complexfloating)):
        return gmpy2.mpc(complex(value))
    return gmpy2.mpc(_mpfr(value))


def _zeros(shape):
    if _WORKING["dps"] is None:
        return np.zeros(shape, dtype=DTYPE)
    out = np.empty(shape, dtype=object)
    out.fill(gmpy2.mpc(0))
    return out


def _as_backend(array):
    if _WORKING["dps"] is None:
        array = np.asarray(array)
        if array.dtype == object:
            return np.array([complex(v) for v in array.ravel()], dtype=DTYPE).reshape(array.shape)
        return np.array(array, dtype=DTYPE)
    array = np.asarray(array)
    if array.dtype == object:
        return array.copy()
    flat = [_scalar(v) for v in array.ravel()]
    return np.array(flat, dtype=object).reshape(array.shape)


def _ratio(num: int, den: int = 1):
    return _scalar(Fraction(num, den))


def _root_of_two(num: int, den: int):
    """``2^(num/den)`` at working precision."""
    if _WORKING["dps"] is None:
        return np.longdouble(2) ** (np.longdouble(num) / den)
    return gmpy2.mpfr(2) ** (gmpy2.mpfr(num) / den)


class CapOverflowError(ValueError):
    """Caps of the operands differ, or a strict operation would truncate."""


class ResonanceError(ValueError):
    """A homological equation hit a resonant monomial or a nonzero mean."""


class NonTerminatingError(ValueError):
    """A generator carries terms that do not raise the degree."""


class OrderMismatchError(ValueError):
    """Manifold data is incompatible with the requested straightening order."""


class FourierTaylorSeries:
    """Truncated Fourier-Taylor series in ``(q, p, t)`` plus ``action * I``.

    Parameters
    ----------
    max_degree : int
        Total-degree cap in ``(q, p)``.
    max_harmonic : int
        Fourier cap in ``t``.
    data : ndarray, optional
        Complex coefficient cube of shape ``(N+1, N+1, 2K+1)``.
    action : float
        Coefficient of the action variable ``I``.
    """

    __slots__ = ("max_degree", "max_harmonic", "data", "action")

    def __init__(self, max_degree: int, max_harmonic: int, data=None, action: float = 0.0):
        self.max_degree = int(max_degree)
        self.max_harmonic = int(max_harmonic)
        shape = (self.max_degree + 1, self.max_degree + 1, 2 * self.max_harmonic + 1)
        if data is None:
            data = _zeros(shape)
        else:
            data = _as_backend(data)
            if data.shape != shape:
                raise ValueError(f"data shape {data.shape} does not match caps {shape}")
        l, m = np.indices(shape[:2])
        data[(l + m) > self.max_degree] = 0
        self.data = data
        self.action = float(action)

    # construction -----------------------------------------------------
    @classmethod
    def zeros_like(cls, other: "FourierTaylorSeries") -> "FourierTaylorSeries":
        return cls(other.max_degree, other.max_harmonic)

    @classmethod
    def monomial(cls, l: int, m: int, N: int, K: int, coeff=1.0, k: int = 0, parity: str = "c"):
        out = cls(N, K)
        out._add_real_term(l, m, k, parity, coeff)
        return out

    @classmethod
    def from_coeffs(cls, coeffs: dict, max_degree: int, max_harmonic: int, action: float = 0.0):
        out = cls(max_degree, max_harmonic, action=action)
        for (l, m, k, parity), value in coeffs.items():
            if l + m > max_degree or k > max_harmonic:
                raise CapOverflowError(f"term {(l, m, k)} exceeds caps")
            out._add_real_term(l, m, k, parity, value)
        return out

    @classmethod
    def time_series(cls, cos_coeffs, sin_coeffs, N: int, K: int):
        """Series depending on ``t`` only."""
        out = cls(N, K)
        for k, c in enumerate(cos_coeffs[: K + 1]):
            out._add_real_term(0, 0, k, "c", c)
        for k, s in enumerate(sin_coeffs[: K + 1]):
            if k:
                out._add_real_term(0, 0, k, "s", s)
        return out

    def _add_real_term(self, l, m, k, parity, value):
        K = self.max_harmonic
        value = _scalar(value)
        if k == 0:
            if parity == "c":
                self.data[l, m, K] += value
            return
        if parity == "c":
            self.data[l, m, K + k] += value / 2
            self.data[l, m, K - k] += value / 2
        elif parity == "s":
            self.data[l, m, K + k] += -1j * value / 2
            self.data[l, m, K - k] += 1j * value / 2
        else:
            raise ValueError("parity must be 'c' or 's'")

    def copy(self) -> "FourierTaylorSeries":
        return FourierTaylorSeries(self.max_degree, self.max_harmonic, self.data.copy(), self.action)

    # views --------------------------------------------------------------
    @property
    def coeffs(self) -> dict:
        """Real coefficients keyed by ``(l, m, k, parity)``; zeros omitted."""
        out = {}
        K = self.max_harmonic
        for l, m, j in zip(*np.nonzero(self.data)):
            k = j - K
            if k < 0:
                continue
            c = self.data[l, m, j]
            if k == 0:
                if c.real != 0:
                    out[(int(l), int(m), 0, "c")] = float(c.real)
                continue
            if c.real != 0:
                out[(int(l), int(m), int(k), "c")] = float(2 * c.real)
            if c.imag != 0:
                out[(int(l), int(m), int(k), "s")] = float(-2 * c.imag)
        return out

    def degrees(self) -> np.ndarray:
        l, m = np.indices(self.data.shape[:2])
        return l + m

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.max_abs() <= tol and self.action == 0

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.data))) if self.data.size else 0.0

    def min_degree(self) -> Optional[int]:
        nz = np.nonzero(np.any(self.data != 0, axis=2))
        if not len(nz[0]):
            return None
        return int(np.min(nz[0] + nz[1]))

    def degree_part(self, r: int) -> "FourierTaylorSeries":
        out = FourierTaylorSeries.zeros_like(self)
        mask = self.degrees() == r
        out.data[mask] = self.data[mask]
        return out

    def mean_part(self) -> "FourierTaylorSeries":
        out = FourierTaylorSeries.zeros_like(self)
        K = self.max_harmonic
        out.data[:, :, K] = self.data[:, :, K]
        return out

    def oscillating_part(self) -> "FourierTaylorSeries":
        out = self.copy()
        out.action = 0.0
        out.data[:, :, self.max_harmonic] = 0
        return out

    def without_action(self) -> "FourierTaylorSeries":
        out = self.copy()
        out.action = 0.0
        return out

    def truncated(self, max_degree: int) -> "FourierTaylorSeries":
        out = self.copy()
        out.data[self.degrees() > max_degree] = 0
        return out

    def recapped(self, max_degree: int, max_harmonic: Optional[int] = None) -> "FourierTaylorSeries":
        K = self.max_harmonic if max_harmonic is None else max_harmonic
        out = FourierTaylorSeries(max_degree, K, action=self.action)
        n = min(max_degree, self.max_degree) + 1
        k = min(K, self.max_harmonic)
        out.data[:n, :n, K - k : K + k + 1] = self.data[:n, :n, self.max_harmonic - k : self.max_harmonic + k + 1]
        out.data[out.degrees() > max_degree] = 0
        return out

    def parity_class(self, tol: float = 0.0) -> set:
        """Set of ``(degree parity, t-parity)`` tags present.

        Degree parity is ``"E"`` (even) or ``"D"`` (odd); t-parity is ``"+"``
        for cosine content and ``"-"`` for sine content.
        """
        tags = set()
        for (l, m, k, par), v in self.coeffs.items():
            if abs(v) <= tol:
                continue
            tags.add(("E" if (l + m) % 2 == 0 else "D", "+" if par == "c" else "-"))
        return tags

    # arithmetic -----------------------------------------------------------
    def _check(self, other: "FourierTaylorSeries") -> None:
        if (self.max_degree, self.max_harmonic) != (other.max_degree, other.max_harmonic):
            raise CapOverflowError("series caps differ")

    def __add__(self, other):
        if isinstance(other, FourierTaylorSeries):
            self._check(other)
            return FourierTaylorSeries(
                self.max_degree, self.max_harmonic, self.data + other.data, self.action + other.action
            )
        out = self.copy()
        out.data[0, 0, self.max_harmonic] += _scalar(other)
        return out

    __radd__ = __add__

    def __neg__(self):
        return FourierTaylorSeries(self.max_degree, self.max_harmonic, -self.data, -self.action)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, FourierTaylorSeries):
            return self.product(other)
        return FourierTaylorSeries(
            self.max_degree, self.max_harmonic, self.data * _scalar(other), self.action * float(np.real(complex(other)))
        )

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / scalar)

    def product(self, other: "FourierTaylorSeries", strict: bool = False) -> "FourierTaylorSeries":
        """Truncated product; the action parts must vanish."""
        self._check(other)
        if self.action or other.action:
            raise ValueError("product of series containing the action is not polynomial in I")
        N, K = self.max_degree, self.max_harmonic
        out = np.zeros_like(self.data)
        overflow = 0.0
        rows = np.nonzero(np.any(self.data != 0, axis=2))
        g_rows = np.nonzero(np.any(other.data != 0, axis=2))
        g_top = int(np.max(g_rows[0] + g_rows[1])) if len(g_rows[0]) else -1
        g_ks = np.nonzero(np.any(other.data != 0, axis=(0, 1)))[0]
        if g_top < 0:
            return FourierTaylorSeries(N, K)
        g_lo, g_hi = int(g_ks.min()) - K, int(g_ks.max()) - K
        for l1, m1 in zip(*rows):
            room = N - l1 - m1
            if room < 0:
                continue
            sub = other.data[: room + 1, : room + 1, :]
            for j1 in np.nonzero(self.data[l1, m1])[0]:
                k1 = j1 - K
                c = self.data[l1, m1, j1]
                # target harmonic k1 + k2 must stay in [-K, K]
                lo = max(-K, k1 + g_lo)
                hi = min(K, k1 + g_hi)
                if lo > hi:
                    continue
                src = slice(lo - k1 + K, hi - k1 + K + 1)
                dst = slice(lo + K, hi + K + 1)
                out[l1 : l1 + room + 1, m1 : m1 + room + 1, dst] += sub[:, :, src] * c
                if strict and g_top > room:
                    overflow = max(overflow, float(np.max(np.abs(other.data[room + 1 :]))) if room + 1 <= N else 0.0)
        if strict and overflow > 0:
            raise CapOverflowError("product exceeds the degree cap")
        return FourierTaylorSeries(N, K, out)

    def power(self, n: int) -> "FourierTaylorSeries":
        out = FourierTaylorSeries.zeros_like(self) + 1.0
        for _ in range(n):
            out = out.product(self)
        return out

    # calculus -----------------------------------------------------------
    def diff_q(self) -> "FourierTaylorSeries":
        out = FourierTaylorSeries.zeros_like(self)
        l = np.arange(1, self.max_degree + 1, dtype=float)[:, None, None]
        out.data[:-1] = self.data[1:] * l
        return out

    def diff_p(self) -> "FourierTaylorSeries":
        out = FourierTaylorSeries.zeros_like(self)
        m = np.arange(1, self.max_degree + 1, dtype=float)[None, :, None]
        out.data[:, :-1] = self.data[:, 1:] * m
        return out

    def diff_t(self) -> "FourierTaylorSeries":
        K = self.max_harmonic
        ik = 1j * np.arange(-K, K + 1, dtype=float)
        return FourierTaylorSeries(self.max_degree, K, self.data * ik)

    def integrate_t(self) -> "FourierTaylorSeries":
        """Zero-mean antiderivative in ``t``."""
        K = self.max_harmonic
        k = np.arange(-K, K + 1, dtype=float)
        if np.any(self.data[:, :, K] != 0):
            raise ResonanceError("series has a nonzero t-mean")
        inv = _zeros(2 * K + 1)
        for j, kk in enumerate(k):
            if kk:
                inv[j] = _scalar(1.0) / _scalar(1j * kk)
        return FourierTaylorSeries(self.max_degree, K, self.data * inv)

    def integrate_q(self) -> "FourierTaylorSeries":
        """Antiderivative in ``q`` vanishing at ``q = 0``."""
        out = FourierTaylorSeries.zeros_like(self)
        l = np.arange(1, self.max_degree + 1, dtype=float)[:, None, None]
        out.data[1:] = self.data[:-1] / l
        out.data[out.degrees() > self.max_degree] = 0
        return out

    def integrate_p(self) -> "FourierTaylorSeries":
        return self.swap().integrate_q().swap()

    def shift_q(self, n: int = 1) -> "FourierTaylorSeries":
        """Multiply by ``q^n`` (negative ``n`` divides exactly)."""
        out = FourierTaylorSeries.zeros_like(self)
        if n >= 0:
            out.data[n:] = self.data[: self.max_degree + 1 - n]
        else:
            if np.any(self.data[:-n] != 0):
                raise OrderMismatchError(f"series is not divisible by q^{-n}")
            out.data[: self.max_degree + 1 + n] = self.data[-n:]
        out.data[out.degrees() > self.max_degree] = 0
        return out

    def swap(self) -> "FourierTaylorSeries":
        """Exchange the roles of ``q`` and ``p``."""
        return FourierTaylorSeries(
            self.max_degree, self.max_harmonic, np.swapaxes(self.data, 0, 1).copy(), self.action
        )

    def time_reversed(self) -> "FourierTaylorSeries":
        return FourierTaylorSeries(self.max_degree, self.max_harmonic, self.data[:, :, ::-1].copy(), self.action)

    def restrict_p0(self) -> "FourierTaylorSeries":
        out = FourierTaylorSeries.zeros_like(self)
        out.data[:, 0] = self.data[:, 0]
        return out

    def restrict_q0(self) -> "FourierTaylorSeries":
        out = FourierTaylorSeries.zeros_like(self)
        out.data[0] = self.data[0]
        return out

    # evaluation ---------------------------------------------------------
    def evaluate(self, q, p, t, I=0.0):
        """Real value at points; arrays broadcast."""
        q, p, t = np.broadcast_arrays(np.asarray(q, float), np.asarray(p, float), np.asarray(t, float))
        shape = q.shape
        q, p, t = q.ravel(), p.ravel(), t.ravel()
        N, K = self.max_degree, self.max_harmonic
        qp = q[None, :] ** np.arange(N + 1)[:, None]
        pp = p[None, :] ** np.arange(N + 1)[:, None]
        ek = np.exp(1j * np.outer(np.arange(-K, K + 1), t))
        data = self.data.astype(np.complex128)
        val = np.einsum("lmk,ln,mn,kn->n", data, qp, pp, ek, optimize=True).real
        val = val + self.action * np.asarray(I, float)
        return val.reshape(shape)

    def __call__(self, q, p, t, I=0.0):
        return self.evaluate(q, p, t, I)

    def __repr__(self) -> str:
        return (
            f"FourierTaylorSeries(N={self.max_degree}, K={self.max_harmonic}, "
            f"terms={len(self.coeffs)}, action={self.action})"
        )


def sum_cubed(N: int, K: int) -> FourierTaylorSeries:
    """The weight ``(q + p)^3`` as a series."""
    coeffs = {(3 - j, j, 0, "c"): comb(3, j) for j in range(4)}
    return FourierTaylorSeries.from_coeffs(coeffs, N, K)


def coordinate(name: str, N: int, K: int) -> FourierTaylorSeries:
    if name == "q":
        return FourierTaylorSeries.monomial(1, 0, N, K)
    if name == "p":
        return FourierTaylorSeries.monomial(0, 1, N, K)
    raise ValueError(name)


def kepler_normal_part(N: int, K: int) -> FourierTaylorSeries:
    """``N = -qp + I``."""
    out = FourierTaylorSeries.monomial(1, 1, N, K, -1.0)
    out.action = 1.0
    return out


def poisson_bracket(F: FourierTaylorSeries, G: FourierTaylorSeries) -> FourierTaylorSeries:
    """Singular bracket ``{F, G}`` truncated to the common caps.

    Raises
    ------
    CapOverflowError
        If the caps of the operands differ.
    """
    F._check(G)
    core = F.without_action()
    other = G.without_action()
    spatial = core.diff_q().product(other.diff_p()) - core.diff_p().product(other.diff_q())
    out = sum_cubed(F.max_degree, F.max_harmonic).product(spatial)
    if G.action:
        out = out + G.action * core.diff_t()
    if F.action:
        out = out - F.action * other.diff_t()
    return out


def _divide_by_sum_cubed(h: FourierTaylorSeries, tol: float) -> FourierTaylorSeries:
    """Exact division of a series by ``(q + p)^3``, harmonic by harmonic."""
    N = h.max_degree
    out = FourierTaylorSeries.zeros_like(h)
    for r in range(N + 1):
        l = np.arange(r + 1)
        block = h.data[l, r - l, :].copy()  # coefficient of q^l p^(r-l)
        if not np.any(block != 0):
            continue
        if r < 3:
            raise ResonanceError(f"degree-{r} term is not divisible by (q+p)^3")
        quotient = block
        for _ in range(3):
            # divide sum_l c_l z^l by (z + 1), z = q/p
            deg = quotient.shape[0] - 1
            b = _zeros((deg,) + block.shape[1:])
            b[deg - 1] = quotient[deg]
            for j in range(deg - 1, 0, -1):
                b[j - 1] = quotient[j] - b[j]
            rem = quotient[0] - b[0]
            scale = max(1.0, float(np.max(np.abs(quotient))))
            if np.max(np.abs(rem)) > tol * scale:
                raise ResonanceError("series is not in (q+p)^3 times a polynomial")
            quotient = b
        s = r - 3
        l2 = np.arange(s + 1)
        out.data[l2, s - l2, :] = quotient
    return out


def solve_homological(h: FourierTaylorSeries, kind: str, k_index: int = 1, tol: float = 1e-12):
    """Solve one of the three homological equations.

    Parameters
    ----------
    h : FourierTaylorSeries
        Right-hand side.
    kind : {"resonant_poly", "periodic_zero_mean", "Lk_triangular"}
        ``resonant_poly``: ``q F_q - p F_p = -h`` with ``h`` time independent.
        ``periodic_zero_mean``: ``F_t = h`` with zero-mean ``F``.
        ``Lk_triangular``: ``L_k F = h`` for a series in ``q`` only, where
        ``L_k f = k q^{3-k} f - q^{4-k} f_q + q^{-k} f_t``.
    k_index : int
        The index ``k`` of ``L_k``.

    Raises
    ------
    ResonanceError
        On a resonant monomial ``q^m p^m`` or a nonzero mean.
    """
    N, K = h.max_degree, h.max_harmonic
    if kind == "resonant_poly":
        if np.any(np.abs(h.oscillating_part().data) > tol):
            raise ResonanceError("resonant_poly needs a time-independent right-hand side")
        out = FourierTaylorSeries.zeros_like(h)
        for l in range(N + 1):
            for m in range(N + 1 - l):
                c = h.data[l, m, K]
                if c == 0:
                    continue
                if l == m:
                    if abs(c) > tol:
                        raise ResonanceError(f"resonant monomial q^{l} p^{m}")
                    continue
                out.data[l, m, K] = -c / (l - m)
        return out
    if kind == "periodic_zero_mean":
        if np.any(np.abs(h.data[:, :, K]) > tol):
            raise ResonanceError("right-hand side has a nonzero t-mean")
        clean = h.copy()
        clean.data[:, :, K] = 0
        return clean.integrate_t()
    if kind == "Lk_triangular":
        if np.any(h.data[:, 1:] != 0):
            raise ValueError("Lk_triangular acts on series in q only")
        k = int(k_index)
        coeff = h.data[:, 0, :]
        f = np.zeros_like(coeff)
        harmonics = np.arange(-K, K + 1)
        for d in range(N + 1):
            for j, w in enumerate(harmonics):
                if w == 0:
                    # (k - n) f_{n,0} = h_{n+3-k,0}
                    n = d + k - 3
                    if 0 <= n <= N and coeff[d, j] != 0:
                        if n == k:
                            raise ResonanceError("L_k has a kernel at q^k")
                        f[n, j] = coeff[d, j] / (k - n)
                    continue
                n = d + k
                if n > N:
                    continue
                lower = (3 - d) * f[n - 3, j] if n - 3 >= 0 else 0.0
                f[n, j] = (coeff[d, j] - lower) / (1j * w)
        out = FourierTaylorSeries.zeros_like(h)
        out.data[:, 0, :] = f
        return out
    raise ValueError(f"unknown homological kind {kind!r}")


def apply_Lk(f: FourierTaylorSeries, k: int) -> FourierTaylorSeries:
    """Evaluate ``L_k f`` for a series in ``q`` only (polynomial part)."""
    lin = f.shift_q(3 - k) * k
    drift = f.diff_q().shift_q(4 - k)
    time = f.diff_t().shift_q(-k)
    return lin - drift + time


def lie_transform(H: FourierTaylorSeries, F: FourierTaylorSeries, max_terms: int = 64) -> FourierTaylorSeries:
    """``H o Phi_F = sum_j ad_F^j H / j!`` truncated at the caps.

    Raises
    ------
    NonTerminatingError
        If ``F`` has degree-zero terms (they never raise the degree).
    """
    if F.action:
        raise NonTerminatingError("generators must not depend on the action")
    if np.any(F.data[0, 0] != 0):
        raise NonTerminatingError("generator has degree-zero terms")
    total = H.copy()
    term = H
    for j in range(1, max_terms + 1):
        term = poisson_bracket(term, F) / j
        if term.is_zero():
            break
        total = total + term
    else:
        raise NonTerminatingError("Lie series did not terminate within the caps")
    return total


@dataclass
class GeneratorChain:
    """Ordered generators with the class of terms each one removed."""

    generators: list = field(default_factory=list)
    annotations: list = field(default_factory=list)

    def append(self, F: FourierTaylorSeries, note: str) -> None:
        self.generators.append(F)
        self.annotations.append(note)

    def __len__(self) -> int:
        return len(self.generators)

    def transform(self, H: FourierTaylorSeries) -> FourierTaylorSeries:
        for F in self.generators:
            H = lie_transform(H, F)
        return H

    def coordinate_series(self, N: Optional[int] = None):
        """Series of ``q o Phi`` and ``p o Phi``, with ``Phi`` the full change."""
        F0 = self.generators[0]
        caps = (F0.max_degree if N is None else N, F0.max_harmonic)
        q = coordinate("q", *caps)
        p = coordinate("p", *caps)
        for F in self.generators:
            F = F.recapped(*caps)
            q = lie_transform(q, F)
            p = lie_transform(p, F)
        return q, p


def killable_residual(H: FourierTaylorSeries, N: int) -> float:
    """Largest coefficient of degree ``1..N`` other than the kept ``-qp``."""
    block = H.data.copy()
    block[1, 1, H.max_harmonic] += 1.0
    mask = (H.degrees() <= N) & (H.degrees() >= 1)
    vals = np.abs(block[mask])
    return float(np.max(vals)) if vals.size else 0.0


def normal_form(H: FourierTaylorSeries, target_degree: int, skip_tol: float = 1e-16):
    """Remove every term of degree ``<= target_degree`` except ``-qp``.

    Works degree by degree: the oscillating part of degree ``r`` is removed
    by ``F_t = h``, then the mean part, written ``(q+p)^3 h1``, by
    ``q F_q - p F_p = -h1``.

    Returns
    -------
    tuple
        ``(H_normal, GeneratorChain)``.
    """
    if H.action != 1.0:
        raise ValueError("normal_form expects H = I + K")
    chain = GeneratorChain()
    N = min(target_degree, H.max_degree)
    for r in range(3, N + 1):
        part = H.degree_part(r)
        osc = part.oscillating_part()
        if osc.max_abs() > skip_tol:
            F = solve_homological(osc, "periodic_zero_mean")
            H = lie_transform(H, F)
            chain.append(F, f"degree {r} oscillating")
        mean = H.degree_part(r).mean_part()
        if mean.max_abs() > skip_tol:
            h1 = _divide_by_sum_cubed(mean, tol=1e-9)
            F = solve_homological(h1, "resonant_poly")
            H = lie_transform(H, F)
            chain.append(F, f"degree {r} mean")
    return H, chain


def _is_coordinate(S: FourierTaylorSeries, l: int, m: int) -> bool:
    ref = FourierTaylorSeries.monomial(l, m, S.max_degree, S.max_harmonic)
    return S.action == 0 and bool(np.all(S.data == ref.data))


def compose(S: FourierTaylorSeries, q_sub: FourierTaylorSeries, p_sub: FourierTaylorSeries) -> FourierTaylorSeries:
    """``S(q_sub, p_sub, t)``; the action part of ``S`` is carried unchanged."""
    N, K = S.max_degree, S.max_harmonic
    out = FourierTaylorSeries(N, K)
    if _is_coordinate(q_sub, 1, 0):
        # group by the power of p: sum_m S_m(q, t) p_sub^m
        p_pow = FourierTaylorSeries.zeros_like(S) + 1.0
        for m in range(N + 1):
            if np.any(S.data[:, m] != 0):
                column = FourierTaylorSeries(N, K)
                column.data[:, 0] = S.data[:, m]
                out = out + column.product(p_pow)
            if m < N:
                p_pow = p_pow.product(p_sub)
        out.action = S.action
        return out
    if _is_coordinate(p_sub, 0, 1):
        return compose(S.swap(), p_sub.swap(), q_sub.swap()).swap()
    q_pows = [FourierTaylorSeries.zeros_like(S) + 1.0]
    for _ in range(N):
        q_pows.append(q_pows[-1].product(q_sub))
    p_pow = FourierTaylorSeries.zeros_like(S) + 1.0
    for m in range(N + 1):
        for l in range(N + 1 - m):
            coeffs = S.data[l, m]
            if not np.any(coeffs != 0):
                continue
            t_part = FourierTaylorSeries(N, K)
            t_part.data[0, 0] = coeffs
            out = out + t_part.product(q_pows[l].product(p_pow))
        if m < N:
            p_pow = p_pow.product(p_sub)
    out.action = S.action
    return out


def _binomial_series(u: FourierTaylorSeries, exponent: Fraction, terms: int) -> FourierTaylorSeries:
    """``(1 + u)^exponent`` for ``u`` without constant term."""
    exponent = Fraction(exponent)
    out = FourierTaylorSeries.zeros_like(u) + 1.0
    term = FourierTaylorSeries.zeros_like(u) + 1.0
    coeff = Fraction(1)
    for n in range(1, terms + 1):
        coeff *= (exponent - n + 1) / n
        term = term.product(u)
        if term.is_zero():
            break
        out = out + term * coeff
    return out


def _graph_residual(Kq, Kp, g):
    q = coordinate("q", g.max_degree, g.max_harmonic)
    weight = (q + g).power(3)
    flow = compose(Kq, q, g) + g.diff_q().product(compose(Kp, q, g))
    return -(weight.product(flow)) - g.diff_t()


def _graph_defect(R: FourierTaylorSeries, order: int) -> float:
    """Largest residual coefficient that a graph of degree ``order`` controls."""
    K = R.max_harmonic
    worst = 0.0
    for n in range(order + 1):
        osc = np.abs(np.delete(R.data[n, 0], K))
        worst = max(worst, float(np.max(osc)), float(abs(R.data[n + 3, 0, K])))
    return worst


def stable_graph_defect(H: FourierTaylorSeries, gamma: FourierTaylorSeries, order: int) -> float:
    """Invariance defect of ``p = gamma(q, t)`` through degree ``order``."""
    K_ = H.without_action()
    return _graph_defect(_graph_residual(K_.diff_q(), K_.diff_p(), gamma), order)


def _reversed_for_unstable(H: FourierTaylorSeries) -> FourierTaylorSeries:
    out = H.without_action().swap().time_reversed()
    out.action = 1.0
    return out


def unstable_graph_defect(H: FourierTaylorSeries, gamma: FourierTaylorSeries, order: int) -> float:
    """Invariance defect of ``q = gamma(p, t)`` through degree ``order``."""
    return stable_graph_defect(_reversed_for_unstable(H), gamma.time_reversed().swap(), order)


def invariant_graph(H: FourierTaylorSeries, order: int, tol: float = 1e-13):
    """Formal stable graph ``p = gamma(q, t)`` of ``K = H - I``.

    Invariance reads ``-(q+gamma)^3 K_q - gamma_q (q+gamma)^3 K_p - gamma_t = 0``.
    Degree by degree, the oscillating coefficients of ``gamma`` balance
    ``gamma_t`` at their own degree and the mean ones balance the
    ``(n+1) q^{n+3}`` term three degrees higher.

    Returns
    -------
    FourierTaylorSeries
        ``gamma`` as a series in ``q`` only, of degree ``<= order``.

    Raises
    ------
    OrderMismatchError
        If the caps leave less than three degrees above ``order``, or the
        invariance residual stays above ``tol`` relative to the data.
    """
    N, K = H.max_degree, H.max_harmonic
    if order + 3 > N:
        raise OrderMismatchError("the series caps must exceed the manifold order by 3")
    Kq = H.without_action().diff_q()
    Kp = H.without_action().diff_p()
    gamma = FourierTaylorSeries(N, K)
    harmonics = np.arange(-K, K + 1)

    def residual(g):
        return _graph_residual(Kq, Kp, g)

    for n in range(1, order + 1):
        R = residual(gamma)
        for j, k in enumerate(harmonics):
            if k != 0:
                gamma.data[n, 0, j] += R.data[n, 0, j] / _scalar(1j * k)
            else:
                gamma.data[n, 0, j] -= R.data[n + 3, 0, j] / (n + 1)
    worst = _graph_defect(residual(gamma), order)
    if worst > tol * max(1.0, H.max_abs()):
        raise OrderMismatchError(f"invariance residual {worst:.3e} above tolerance")
    return gamma


def invariant_graphs(H: FourierTaylorSeries, order: int):
    """Stable graph ``p = gamma_s(q, t)`` and unstable graph ``q = gamma_u(p, t)``.

    Exchanging the variables reverses the area form and reversing time
    undoes the sign, so the unstable graph is the stable graph of
    ``K(p, q, -t)``.
    """
    gamma_s = invariant_graph(H, order)
    gamma_u = invariant_graph(_reversed_for_unstable(H), order).time_reversed().swap()
    return gamma_s, gamma_u


def _straightening_shift(gamma: FourierTaylorSeries, sign: float):
    """Generator derivative and displacement for one straightening step.

    ``gamma`` is a series in ``q`` only.  Returns ``(F, P)`` with
    ``dF/dq = sign (1/(2 q^2)) ((1 + gamma/q)^{-2} - 1)`` and
    ``P = (q+p)(1 + 2 sign (q+p)^2 F_q)^{-1/2} - (q+p)``, so that the time-one
    map of ``F`` moves ``{p = 0}`` onto the graph of ``gamma``.
    """
    N, K = gamma.max_degree, gamma.max_harmonic
    ratio = gamma.shift_q(-1)
    if np.any(ratio.data[0] != 0):
        raise OrderMismatchError("gamma must be O(q^2)")
    inv_sq = _binomial_series(ratio, Fraction(-2), N) - 1.0
    if np.any(inv_sq.data[:2] != 0):
        raise OrderMismatchError("gamma must be O(q^3) for a polynomial generator")
    F_q = inv_sq.shift_q(-2) * (0.5 * sign)
    F = F_q.integrate_q()
    s = coordinate("q", N, K) + coordinate("p", N, K)
    u = s.product(s).product(F_q) * (2.0 * sign)
    P = s.product(_binomial_series(u, Fraction(-1, 2), N)) - s
    return F, P


def straighten_manifolds(
    H: FourierTaylorSeries,
    gamma_s: FourierTaylorSeries,
    gamma_u: FourierTaylorSeries,
    order: int,
    tol: float = 1e-12,
):
    """Straighten the stable, then the unstable, invariant manifold.

    The first change is the time-one map of ``F(q, t)`` and moves the
    stable graph onto ``{p = 0}``; the second, of ``G(p, t)``, does the
    same for the unstable graph and leaves ``{p = 0}`` invariant.  The
    generator at degree ``r`` uses the graph through degree ``r + 2``.

    Parameters
    ----------
    H : FourierTaylorSeries
        ``I + K`` with graphs ``p = gamma_s(q, t)``, ``q = gamma_u(p, t)``.
    gamma_s, gamma_u : FourierTaylorSeries
        Series in ``q`` only and in ``p`` only; they must be invariant
        through degree ``order + 2``.
    order : int
        Degree through which ``K(q, 0, t)`` and ``K(0, p, t)`` vanish.

    Returns
    -------
    tuple
        ``(H_straight, steps)`` where ``steps`` lists the two changes as
        ``(generator, displacement)`` pairs.

    Raises
    ------
    OrderMismatchError
        If a graph is not invariant through degree ``order + 2``.
    """
    N, K = H.max_degree, H.max_harmonic
    if order + 5 > N:
        raise OrderMismatchError("series caps must exceed the straightening order by 5")
    scale = tol * max(1.0, H.max_abs())
    if stable_graph_defect(H, gamma_s, order + 2) > scale:
        raise OrderMismatchError("stable graph is not invariant to the requested order")
    if unstable_graph_defect(H, gamma_u, order + 2) > scale:
        raise OrderMismatchError("unstable graph is not invariant to the requested order")
    q = coordinate("q", N, K)
    p = coordinate("p", N, K)

    # stable step: (q, p, t, I) -> (q, p + P, t, I - F_t)
    F, P = _straightening_shift(gamma_s.truncated(order + 2), +1.0)
    H1 = compose(H.without_action(), q, p + P) - F.diff_t()
    H1.action = 1.0
    # the unstable graph in the new coordinates, then (q, p, t, I) -> (q + Q, p, t, I - G_t)
    g_new = invariant_graph(_reversed_for_unstable(H1), order + 2).time_reversed().swap()
    G_sw, Q_sw = _straightening_shift(g_new.swap(), -1.0)
    G, Q = G_sw.swap(), Q_sw.swap()
    H2 = compose(H1.without_action(), q + Q, p) - G.diff_t()
    H2.action = 1.0
    return H2, [(F, P), (G, Q)]


def qp_decomposition(H: FourierTaylorSeries):
    """Split ``K = K(q, 0, t) + K(0, p, t) + qp H1``.

    Returns ``(stable_part, unstable_part, H1)`` with the action dropped.
    """
    K_ = H.without_action()
    on_q = K_.restrict_p0()
    on_p = K_.restrict_q0()
    on_p.data[0, 0] = 0
    rest = K_ - on_q - on_p
    H1 = FourierTaylorSeries.zeros_like(K_)
    H1.data[:-1, :-1] = rest.data[1:, 1:]
    return on_q, on_p, H1


def solve_Lk_tilde(h: FourierTaylorSeries, k: int) -> FourierTaylorSeries:
    """Solve ``-k p^{3-k} f + p^{4-k} f_p + p^{-k} f_t = h`` for ``f(p, t)``.

    Reduces to ``L_k g = -h(q, -t)`` with ``f(p, t) = g(p, -t)``.
    """
    g = solve_homological(-(h.swap().time_reversed()), "Lk_triangular", k_index=k)
    return g.time_reversed().swap()


def qp_elimination(H: FourierTaylorSeries, levels: int = 4, tol: float = 0.0):
    """Push ``K = -qp + sum_k (qp)^k (h_k(q,t) + h~_k(p,t))`` to ``(qp)^levels``.

    At level ``k`` the boundary parts ``h = (K/(q^k p^k))|_{p=0}`` and
    ``h~ = (K/(q^k p^k))|_{q=0}`` (without the constant, which belongs to
    the former) are removed by the generator ``p^k f(q,t) + q^k f~(p,t)``
    with ``L_k f = h`` and ``L~_k f~ = h~``.  The input must have straight
    manifolds, ``K(q, 0, t) = K(0, p, t) = 0``.

    Returns
    -------
    tuple
        ``(H_reduced, GeneratorChain)``.
    """
    chain = GeneratorChain()
    N = H.max_degree
    for k in range(1, levels):
        # each pass leaves level-k terms at least two degrees higher
        for sweep in range(N):
            h, h_tilde = _level_parts(H, k)
            if h.max_abs() <= tol and h_tilde.max_abs() <= tol:
                break
            f = solve_homological(h, "Lk_triangular", k_index=k)
            f_tilde = solve_Lk_tilde(h_tilde, k)
            p_k = FourierTaylorSeries.monomial(0, k, N, H.max_harmonic)
            q_k = FourierTaylorSeries.monomial(k, 0, N, H.max_harmonic)
            F = p_k.product(f) + q_k.product(f_tilde)
            if F.is_zero():
                break
            H = lie_transform(H, F)
            chain.append(F, f"qp level {k} pass {sweep + 1}")
    return H, chain


def _level_parts(H: FourierTaylorSeries, k: int):
    """Boundary parts ``h(q, t)`` and ``h~(p, t)`` of ``K/(qp)^k``."""
    N = H.max_degree
    K_ = H.without_action()
    if k == 1:
        K_.data[1, 1, K_.max_harmonic] += 1.0
    h = FourierTaylorSeries.zeros_like(H)
    h.data[: N + 1 - k, 0] = K_.data[k:, k]
    h_tilde = FourierTaylorSeries.zeros_like(H)
    h_tilde.data[0, 1 : N + 1 - k] = K_.data[k, k + 1 :]
    return h, h_tilde


def boundary_residual(H: FourierTaylorSeries, levels: int, max_degree: Optional[int] = None) -> float:
    """Largest coefficient of ``q^l p^m`` with ``min(l, m) < levels``, ``l + m <= max_degree``.

    The kept ``-qp`` is excluded.
    """
    N = H.max_degree if max_degree is None else max_degree
    block = H.data.copy()
    block[1, 1, H.max_harmonic] += 1.0
    l, m = np.indices(block.shape[:2])
    mask = (np.minimum(l, m) < levels) & (l + m <= N)
    vals = np.abs(block[mask])
    return float(np.max(vals)) if vals.size else 0.0


# physical expansions ------------------------------------------------------

def _legendre_fourier(n: int) -> dict:
    """``P_n(cos x) = sum_j a_j cos(j x)``."""
    alpha = [Fraction(comb(2 * k, k), 4**k) for k in range(n + 1)]
    out: dict = {}
    for k in range(n + 1):
        j = abs(n - 2 * k)
        out[j] = out.get(j, Fraction(0)) + alpha[k] * alpha[n - k]
    return out


def _angle_series(j: int, psi: float, N: int, K: int) -> FourierTaylorSeries:
    """``cos(j (phi - psi))`` with ``phi = -t``."""
    out = FourierTaylorSeries(N, K)
    if j > K:
        return out
    if j == 0:
        return out + 1.0
    out.data[0, 0, K + j] = 0.5 * np.exp(1j * j * psi)
    out.data[0, 0, K - j] = 0.5 * np.exp(-1j * j * psi)
    return out


def mcgehee_series(params: ModelParams, max_degree: int = 10, max_harmonic: int = 8) -> FourierTaylorSeries:
    """Normal-chart expansion ``I + K`` of the model Hamiltonian.

    Uses ``x = 2^{2/3}(Q + P)``, ``y = 2^{2/3}(Q - P)`` and
    ``K = 2^{-7/3} H_red``, so that ``K = -QP + O_4``.
    """
    N, K = max_degree, max_harmonic
    Qs = coordinate("q", N, K)
    Ps = coordinate("p", N, K)
    x_scale = _root_of_two(2, 3)
    energy_scale = _root_of_two(-7, 3)
    X = (Qs + Ps) * x_scale
    Y = (Qs - Ps) * x_scale
    X2 = X.product(X)
    if params.model_id is ModelId.SITNIKOV:
        # K = y^2/2 - (x^2/2) (1 + x^4 rho^2/4)^{-1/2}
        total = Y.product(Y) * 0.5
        grid = 2 * np.pi * np.arange(512) / 512
        rho = sitnikov_rho(grid, params.eps)
        x4 = X2.product(X2)
        term = X2 * 0.5
        coeff = Fraction(1)
        for n in range(0, N // 4 + 1):
            if n:
                coeff *= (-0.5 - n + 1) / n
                term = term.product(x4) * 0.25
            spectrum = np.fft.rfft(rho ** (2 * n)) / grid.size
            cos_c = np.concatenate([[spectrum[0].real], 2 * spectrum[1 : K + 1].real])
            sin_c = np.concatenate([[0.0], -2 * spectrum[1 : K + 1].imag])
            t_series = FourierTaylorSeries.time_series(cos_c, sin_c, N, K)
            total = total - term.product(t_series) * coeff
        out = total * energy_scale
    else:
        masses, dist, angle = primaries(params)
        half_x2 = X2 * 0.5
        U = FourierTaylorSeries(N, K)
        power = half_x2.power(3)
        n = 2
        while 2 * n + 2 <= N:
            angular = FourierTaylorSeries(N, K)
            for m_j, d_j, psi_j in zip(masses, dist, angle):
                for j, a_j in _legendre_fourier(n).items():
                    angular = angular + _angle_series(j, psi_j, N, K) * (_scalar(m_j * d_j**n) * _scalar(a_j))
            U = U + power.product(angular)
            power = power.product(half_x2)
            n += 1
        J = params.jacobi_J
        h_minus_J = Y.product(Y) * 0.5 - half_x2 - U - J
        total = FourierTaylorSeries(N, K) + J
        x4 = X2.product(X2)
        x_pow = FourierTaylorSeries(N, K) + 1.0
        d_pow = FourierTaylorSeries(N, K) + 1.0
        ck = Fraction(1)
        for k in range(1, N // 4 + 2):
            ck = Fraction(1, 2) if k == 1 else ck * Fraction(2 * k - 3, 2 * k)
            d_pow = d_pow.product(h_minus_J)
            total = total + x_pow.product(d_pow) * (4 * ck / 2**k)
            x_pow = x_pow.product(x4)
        out = total * energy_scale
    out.data[0, 0] = 0
    out.action = 1.0
    return out


def write_coefficients(series: FourierTaylorSeries, path: str) -> None:
    """Dump the real coefficient table with columns ``l, m, k, parity, value``."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["l", "m", "k", "parity", "value"])
        for key in sorted(series.coeffs):
            writer.writerow([*key, repr(series.coeffs[key])])


def read_coefficients(path: str, max_degree: int, max_harmonic: int) -> FourierTaylorSeries:
    coeffs = {}
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            coeffs[(int(row["l"]), int(row["m"]), int(row["k"]), row["parity"])] = float(row["value"])
    return FourierTaylorSeries.from_coeffs(coeffs, max_degree, max_harmonic)


def series_from_terms(terms: Iterable[tuple], N: int, K: int) -> FourierTaylorSeries:
    return FourierTaylorSeries.from_coeffs({t[:4]: t[4] for t in terms}, N, K)


# multiprecision evaluation and the conjugacy audit ------------------------

def _real_mp(value):
    if isinstance(value, type(gmpy2.mpc())):
        return value.real
    if isinstance(value, type(gmpy2.mpfr())):
        return value
    return _mpfr(np.longdouble(np.real(value)))


class PrecisionEvaluator:
    """Evaluate several real series at one point in ``gmpy2`` arithmetic.

    The monomial/trigonometric basis is built once per point and shared.
    """

    def __init__(self, series: list):
        self.series = series
        first = series[0]
        self.N, self.K = first.max_degree, first.max_harmonic
        self.terms = []
        for S in series:
            entries = []
            K = S.max_harmonic
            for l, m, j in zip(*np.nonzero(S.data)):
                k = int(j) - K
                if k < 0:
                    continue
                c = S.data[l, m, j]
                if k == 0:
                    entries.append((int(l), int(m), 0, _real_mp(c.real)))
                    continue
                re, im = _real_mp(c.real), _real_mp(c.imag)
                if re != 0:
                    entries.append((int(l), int(m), 2 * k - 1, 2 * re))
                if im != 0:
                    entries.append((int(l), int(m), 2 * k, -2 * im))
            self.terms.append(entries)

    def __call__(self, q, p, t) -> list:
        q_pows = [gmpy2.mpfr(1)]
        p_pows = [gmpy2.mpfr(1)]
        for _ in range(self.N):
            q_pows.append(q_pows[-1] * q)
            p_pows.append(p_pows[-1] * p)
        # trig[2k-1] = cos kt, trig[2k] = sin kt, trig[0] = 1
        trig = [gmpy2.mpfr(1)]
        for k in range(1, self.K + 1):
            trig.append(gmpy2.cos(k * t))
            trig.append(gmpy2.sin(k * t))
        return [sum(c * q_pows[l] * p_pows[m] * trig[j] for l, m, j, c in entries) for entries in self.terms]


@dataclass
class AuditRow:
    N: int
    radius: float
    divergence: float


def flow_conjugacy_divergence(
    H: FourierTaylorSeries,
    chain: GeneratorChain,
    radius: float,
    horizon: float = 1.0,
    steps: int = 16,
    angle: float = 0.3 * np.pi,
    t0: float = 0.0,
    dps: int = 40,
    change: Optional[tuple] = None,
) -> float:
    """Distance between the flow of ``H`` and the conjugated flow of ``N``.

    With ``Phi`` the normalising change, ``z' = radius (cos a, sin a)`` and
    ``z(t)`` the flow of ``N = -qp + I``, the defect
    ``e(t) = x(t) - Phi(z(t), t)`` for ``x`` the flow of ``H`` from
    ``Phi(z', t0)`` obeys ``e' = X_H(Phi(z) + e) - DPhi X_N(z) - Phi_t``;
    it is integrated with classical RK4 so that only the small defect,
    not the full orbit, carries discretisation error.

    ``change`` may carry precomputed ``(q o Phi, p o Phi)`` series.

    Returns
    -------
    float
        ``|e(t0 + horizon)|``.
    """
    with working_precision(dps):
        if change is not None:
            phi_q, phi_p = change
        elif len(chain):
            phi_q, phi_p = chain.coordinate_series()
        else:
            phi_q = coordinate("q", H.max_degree, H.max_harmonic)
            phi_p = coordinate("p", H.max_degree, H.max_harmonic)
        K_ = H.without_action()
        grad = PrecisionEvaluator([K_.diff_q(), K_.diff_p()])
        local = PrecisionEvaluator(
            [
                phi_q, phi_p,
                phi_q.diff_q(), phi_q.diff_p(), phi_q.diff_t(),
                phi_p.diff_q(), phi_p.diff_p(), phi_p.diff_t(),
            ]
        )

        def rhs(t, state):
            Q, P, e_q, e_p = state
            w = (Q + P) ** 3
            vQ, vP = -w * Q, w * P
            yq, yp, aq, ap, at, bq, bp, bt = local(Q, P, t)
            Hq, Hp = grad(yq + e_q, yp + e_p, t)
            wx = (yq + e_q + yp + e_p) ** 3
            de_q = wx * Hp - (aq * vQ + ap * vP + at)
            de_p = -wx * Hq - (bq * vQ + bp * vP + bt)
            return [vQ, vP, de_q, de_p]

        r = gmpy2.mpfr(radius)
        a = gmpy2.mpfr(angle)
        state = [r * gmpy2.cos(a), r * gmpy2.sin(a), gmpy2.mpfr(0), gmpy2.mpfr(0)]
        h = gmpy2.mpfr(horizon) / steps
        t = gmpy2.mpfr(t0)
        for _ in range(steps):
            k1 = rhs(t, state)
            k2 = rhs(t + h / 2, [s + h / 2 * d for s, d in zip(state, k1)])
            k3 = rhs(t + h / 2, [s + h / 2 * d for s, d in zip(state, k2)])
            k4 = rhs(t + h, [s + h * d for s, d in zip(state, k3)])
            state = [s + h / 6 * (a + 2 * b + 2 * c + d) for s, a, b, c, d in zip(state, k1, k2, k3, k4)]
            t += h
        return float(gmpy2.sqrt(state[2] ** 2 + state[3] ** 2))


def normal_form_audit(
    params: ModelParams,
    orders: Iterable[int] = (6, 8, 10),
    radii: Iterable[float] = (0.005, 0.007, 0.01, 0.014, 0.02),
    max_harmonic: int = 8,
    digits: int = 40,
    horizon: float = 1.0,
    steps: int = 16,
):
    """Conjugacy divergence against ``|z|`` for several normal-form orders.

    Each order ``N`` uses series caps ``N + 4`` so that the untouched
    remainder begins right after the killed degrees.

    Returns
    -------
    tuple
        ``(rows, exponents)``: a list of :class:`AuditRow` and the fitted
        log-log slope per order.
    """
    rows, exponents = [], {}
    with working_precision(digits):
        for N in orders:
            H = mcgehee_series(params, N + 4, max_harmonic)
            _, chain = normal_form(H, N)
            change = chain.coordinate_series()
            div = [
                flow_conjugacy_divergence(H, chain, r, horizon, steps, dps=digits, change=change)
                for r in radii
            ]
            rows.extend(AuditRow(N, r, d) for r, d in zip(radii, div))
            slope = np.polyfit(np.log(list(radii)), np.log(div), 1)[0]
            exponents[N] = float(slope)
    return rows, exponents


# the full local reduction -------------------------------------------------

@dataclass
class LocalNormalForm:
    """Result of the normal form, straightening and ``qp`` elimination.

    ``remainder`` is ``K + qp`` truncated at ``truncation`` (extended
    precision), ready for the Shilnikov boundary-value solver.
    """

    hamiltonian: FourierTaylorSeries
    remainder: FourierTaylorSeries
    order: int
    truncation: int
    boundary_residual: float


def local_normal_form(
    params: ModelParams,
    order: int = 8,
    levels: int = 4,
    max_harmonic: int = 8,
    digits: Optional[int] = 40,
    truncation: Optional[int] = None,
) -> LocalNormalForm:
    """Reduce the model Hamiltonian to ``-qp + (qp)^levels g`` through ``order``.

    The caps are ``order + 5`` (needed by the straightening).  Above
    ``order`` the coefficients grow very fast at large Jacobi constant, so
    the remainder is cut at ``truncation`` (default ``order + 3``).
    """
    cap = order + 5
    truncation = order + 3 if truncation is None else truncation
    with working_precision(digits):
        H = mcgehee_series(params, cap, max_harmonic)
        H, _ = normal_form(H, order)
        gamma_s, gamma_u = invariant_graphs(H, order + 2)
        H, _ = straighten_manifolds(H, gamma_s, gamma_u, order)
        H, _ = qp_elimination(H, levels=levels)
        residual = boundary_residual(H, levels, max_degree=order)
    H = FourierTaylorSeries(cap, max_harmonic, H.data, action=H.action)
    R = H.without_action()
    R.data[1, 1, max_harmonic] += 1.0
    R = R.truncated(truncation)
    return LocalNormalForm(H, R, order, truncation, residual)
