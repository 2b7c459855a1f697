"""First-order (Melnikov) theory for the Stokes constant of the sine-Gordon family.

Along ``g(u; mu)`` the inner equation is sine-Gordon at ``mu = 0``, whose
breather ``phi_b`` has no splitting. The derivative ``C_in'(0)`` is then
computable two ways:

* a convergent series ``i 4 sqrt2 pi S(Delta)`` in the Taylor data of
  ``Theta(z) = Delta(2 sqrt2 arctan z) / (1 + z^2)``;
* a double integral of ``Delta(phi_b) xi_3^+`` over ``tau`` and a horizontal line,
  evaluated here with mpmath as an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import gmpy2
import mpmath
from gmpy2 import mpfr

from kgsplit.fourier import OddPowerSeries
from kgsplit.model import _sine_remainder
from kgsplit.precision import PrecisionContext, to_mpfr


class RangeError(ValueError):
    pass


class TruncationError(ArithmeticError):
    pass


def delta_of_f(f: OddPowerSeries, P: int) -> OddPowerSeries:
    """``Delta(u) = -sin(sqrt2 u)/sqrt2 + u - u^3/3 - f(u)`` to degree ``2P+1`` (exact rationals)."""
    if P < 2:
        raise ValueError("P must be at least 2")
    out = dict(_sine_remainder(P))
    for d, c in f.coeffs.items():
        if d <= 2 * P + 1:
            out[d] = out.get(d, 0) - (Fraction(c) if not isinstance(c, str) else Fraction(c))
    return OddPowerSeries(out)


@dataclass(frozen=True)
class DeltaSeries:
    """Taylor coefficients ``Delta_p`` of ``Theta``; index ``p``, with ``Delta_0 = 0``."""

    coeffs: tuple

    @property
    def P(self) -> int:
        return len(self.coeffs) - 1

    def __getitem__(self, p: int):
        if p <= 0:
            return mpfr(0)
        if p > self.P:
            raise RangeError(f"Delta_{p} not available (P = {self.P})")
        return self.coeffs[p]


def _mul(a, b, n):
    out = [mpfr(0)] * (n + 1)
    for i, ai in enumerate(a):
        if ai == 0:
            continue
        for j in range(0, n + 1 - i):
            if j < len(b) and b[j] != 0:
                out[i + j] += ai * b[j]
    return out


def theta_taylor(delta: OddPowerSeries, P: int) -> DeltaSeries:
    """Compose ``Delta`` with ``2 sqrt2 arctan z`` and divide by ``1 + z^2``, up to ``z^P``."""
    r2 = 2 * gmpy2.sqrt(mpfr(2))
    w = [mpfr(0)] * (P + 1)
    for k in range(0, (P - 1) // 2 + 1):
        w[2 * k + 1] = r2 * (-1) ** k / (2 * k + 1)
    comp = [mpfr(0)] * (P + 1)
    power = [mpfr(1)] + [mpfr(0)] * P
    for d in range(1, P + 1):
        power = _mul(power, w, P)
        c = delta.coeff(d)
        if c:
            cm = to_mpfr(c)
            comp = [x + cm * y for x, y in zip(comp, power)]
    inv = [mpfr(0)] * (P + 1)
    for k in range(0, P // 2 + 1):
        inv[2 * k] = mpfr((-1) ** k)
    return DeltaSeries(tuple(_mul(comp, inv, P)))


def s_of_delta(ds: DeltaSeries, Q: int):
    """Partial sum of ``sum_q (-2)^q / (q! (3+q)!) A_{3+2q}`` and the last term as tail estimate."""
    if ds.P < 5 + 2 * Q:
        raise RangeError(f"need Delta_p up to p = {5 + 2 * Q}, have {ds.P}")

    def Gam(p):
        if p <= 0:
            return mpfr(0)
        return (-1) ** (p // 2) * ds[p] / (p + 1) ** 2

    def Bp(p):
        return p * (Gam(p) - Gam(p - 2))

    def Ap(p):
        return Bp(p + 2) - Bp(p)

    total = mpfr(0)
    last = mpfr(0)
    for q in range(Q + 1):
        last = mpfr((-2) ** q) / (math.factorial(q) * math.factorial(3 + q)) * Ap(3 + 2 * q)
        total += last
    return total, abs(last)


def c_in_prime(f: OddPowerSeries, P: int | None = None, Q: int = 30):
    """``i 4 sqrt2 pi S(Delta)``."""
    P = P or 2 * Q + 7
    ds = theta_taylor(delta_of_f(f, (P + 1) // 2), P)
    S, _ = s_of_delta(ds, Q)
    return gmpy2.mpc(0, 4) * gmpy2.sqrt(mpfr(2)) * gmpy2.const_pi() * S


def stokes_derivative(f: OddPowerSeries, P: int | None = None, Q: int = 30):
    """``d C_in / d mu`` at ``mu = 0`` along the family, equal to ``-c_in_prime(f)``.

    Linearising the inner equation about the breather gives ``L psi = -Delta(phi_b)``;
    the quadrature and the series both integrate ``+Delta``, hence the sign.
    """
    return -c_in_prime(f, P, Q)


# -- closed-form inner objects ----------------------------------------------

def _ctx(ctx):
    return ctx if ctx is not None else mpmath.mp


def inner_breather(z, tau, ctx=None):
    """``(4/sqrt2) arctan(-i sin(tau)/z)`` on the principal branch."""
    m = _ctx(ctx)
    z = m.mpc(z)
    s = m.sin(tau)
    if abs(z) <= abs(s) * (1 + m.mpf(2) ** (-m.prec // 2)) and abs(m.im(z)) < m.mpf(2) ** (-m.prec // 2):
        raise ValueError("inner breather evaluated on its branch cut")
    return 4 / m.sqrt(2) * m.atan(-1j * s / z)


def _chi(l, sign, z, tau, m):
    mu = m.sqrt(l * l - 1)
    s, c = m.sin(tau), m.cos(tau)
    q = s * s / (z * z)
    den = 1 - q
    if abs(den) < m.mpf(2) ** (-m.prec // 2):
        raise ValueError("xi denominator degenerate")
    brace = sign * mu / (2 * z) - l * c * s / (2 * z * z) - 1j * mu * mu / 4 + 1j * (l * l + 1) / 4 * q
    return m.exp(sign * 1j * mu * z + 1j * l * tau) / den * brace


def xi_homogeneous(n: int, sign: int, z, tau, ctx=None):
    """``(2/mu_n^2)(chi_n^sign - chi_{-n}^sign)``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    m = _ctx(ctx)
    z = m.mpc(z)
    return 2 / (n * n - 1) * (_chi(n, sign, z, tau, m) - _chi(-n, sign, z, tau, m))


def make_delta(f: OddPowerSeries, m):
    """Exact ``Delta(u)`` (closed-form sine) as an mpmath callable."""
    poly = [(d, m.mpf(Fraction(c).numerator) / Fraction(c).denominator) for d, c in f.coeffs.items()]
    r2 = m.sqrt(2)

    def delta(u):
        val = -m.sin(r2 * u) / r2 + u - u ** 3 / 3
        for d, c in poly:
            val -= c * u ** d
        return val

    return delta


@dataclass(frozen=True)
class QuadratureResult:
    value: complex
    tail_bound: float
    r: float
    tau_points: int
    digits: int


def melnikov_quadrature(f: OddPowerSeries, r=3, A=3, tau_points: int = 64, digits: int | None = None,
                        height=None) -> QuadratureResult:
    """``(1/(2 pi i mu_3)) int int Delta(phi_b(w, tau)) xi_3^+(w, tau) dtau dw`` along ``Im w = -r``.

    The infinite ends of the line are turned upward at ``Re w = +-A``: the
    integrand is analytic off the real segment ``[-1, 1]`` and carries
    ``e^{i mu_3 w}``, so it decays exponentially up the vertical legs. The
    horizontal piece keeps the dependence on ``r`` explicit.
    """
    r = float(r)
    A = float(A)
    if r < 2:
        raise ValueError("r must be at least 2")
    if A <= 1:
        raise ValueError("A must clear the singular segment [-1, 1]")
    mu3 = 2 * math.sqrt(2)
    cancel = mu3 * r / math.log(10)
    digits = digits or int(cancel) + 30
    m = mpmath.MPContext()
    m.dps = digits
    delta = make_delta(f, m)
    taus = [2 * m.pi * j / tau_points for j in range(tau_points)]

    def inner(w):
        acc = m.mpc(0)
        for t in taus:
            acc += delta(inner_breather(w, t, m)) * xi_homogeneous(3, 1, w, t, m)
        return acc * 2 * m.pi / tau_points

    H = float(height) if height is not None else (digits * math.log(10) + mu3 * r) / mu3 + 2
    # bottom: from -A - ir to A - ir; legs: from -A + iH down to -A - ir and from A - ir up to A + iH
    bottom = m.quad(lambda x: inner(m.mpc(x, -r)), m.linspace(-A, A, 7))
    left = m.quad(lambda y: inner(m.mpc(-A, y)), m.linspace(-r, H, 9))
    right = m.quad(lambda y: inner(m.mpc(A, y)), m.linspace(-r, H, 9))
    total = bottom - 1j * left + 1j * right
    value = total / (2j * m.pi * m.sqrt(8))
    tail = float(m.exp(-m.sqrt(8) * H) * m.exp(m.sqrt(8) * r))
    return QuadratureResult(complex(value), tail, r, tau_points, digits)
