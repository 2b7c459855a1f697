"""Klein-Gordon model family in spatial-dynamics form.

The breather ansatz ``u(x, t) = eps sqrt(k) omega v(y, tau)`` with
``y = eps sqrt(k) omega x`` and ``tau = omega t`` turns
``u_tt - u_xx + u - u^3/3 - f(u) = 0`` into a second-order system in ``y``
for the odd-sine coefficients ``v_n``.

Mode storage. Solutions relevant here live on the invariant subspace of
modes ``n in k * (odd integers)``, so a stored index ``m`` (odd) represents
the physical mode ``n = m k``. For ``k = 1`` this is the ordinary odd-sine
layout. Nothing else in the package needs to know about ``k``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import gmpy2
import numpy as np
from gmpy2 import mpfr

from kgsplit.fourier import (OddPowerSeries, OddSineSeries, PhasePoint, compose_odd, even_mean,
                             modes)
from kgsplit.precision import PrecisionContext, to_mpfr


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class SingularityError(ArithmeticError):
    """Evaluation too close to a pole."""


DEFAULT_FAMILY_DEGREE = 15


def _exact(x):
    if isinstance(x, (Fraction, int)):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(repr(x))
    return x


# -- sine-Gordon family ------------------------------------------------------

def _sine_remainder(D: int) -> dict[int, Fraction]:
    """Odd Taylor coefficients of ``u - sin(sqrt2 u)/sqrt2 - u^3/3`` up to degree ``2D+1``."""
    out = {}
    for d in range(2, D + 1):
        deg = 2 * d + 1
        # sin(sqrt2 u)/sqrt2 = sum (-1)^d 2^d u^(2d+1) / (2d+1)!
        c = Fraction((-1) ** d * 2 ** d, _factorial(deg))
        out[deg] = -c
    return out


def _factorial(n: int) -> int:
    r = 1
    for i in range(2, n + 1):
        r *= i
    return r


def appendix_c_family(mu, f: OddPowerSeries, D: int = DEFAULT_FAMILY_DEGREE) -> OddPowerSeries:
    """Degree->=5 part of ``g(u; mu) = -((1 - mu)(sin(sqrt2 u)/sqrt2 - u + u^3/3) - mu f(u))``.

    ``mu = 0`` is sine-Gordon in the normalisation ``u - u^3/3 + ...``;
    ``mu = 1`` returns ``f`` itself.
    """
    if D < 2:
        raise ValueError("family truncation degree D must be at least 2")
    mu = _exact(mu)
    out: dict[int, object] = {}
    for deg, c in _sine_remainder(D).items():
        out[deg] = (1 - mu) * c
    for deg, c in f.coeffs.items():
        if deg <= 2 * D + 1:
            out[deg] = out.get(deg, 0) + mu * _exact(c)
    return OddPowerSeries(out)


# -- parameters --------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Everything that fixes the truncated system.

    ``eps`` and ``mu`` are kept exact (``Fraction``) so that the same config
    reproduces bit-identical runs at any precision. ``omega`` is derived.
    """

    k: int = 1
    eps: Fraction = Fraction(1, 4)
    f: OddPowerSeries = field(default_factory=lambda: OddPowerSeries({}))
    mu: Fraction | None = None
    n_max: int = 11
    bits: int = 128
    family_degree: int = DEFAULT_FAMILY_DEGREE

    def __post_init__(self):
        if int(self.k) < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "eps", _exact(self.eps))
        if self.mu is not None:
            object.__setattr__(self, "mu", _exact(self.mu))
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.n_max < 1 or self.n_max % 2 == 0:
            raise ValueError("n_max must be odd and positive")
        if self.f.coeffs and self.f.lowest_degree < 5:
            raise ValueError("f must be O(u^5): its lowest degree is "
                             f"{self.f.lowest_degree}")

    # derived quantities are evaluated under the caller's active context
    @property
    def context(self) -> PrecisionContext:
        return PrecisionContext(self.bits)

    def eps_mp(self):
        return to_mpfr(self.eps)

    def omega(self):
        e = self.eps_mp()
        return 1 / gmpy2.sqrt(self.k * (self.k + e * e))

    def amplitude_scale(self):
        """``eps sqrt(k) omega``, the factor between ``v`` and the physical field."""
        e = self.eps_mp()
        return e / gmpy2.sqrt(self.k + e * e)

    def effective_f(self) -> OddPowerSeries:
        if self.mu is None:
            return self.f
        return appendix_c_family(self.mu, self.f, self.family_degree)

    def nonlinearity(self) -> OddPowerSeries:
        """``g(u) = u^3/3 + f(u)``."""
        return OddPowerSeries({3: Fraction(1, 3)}) + self.effective_f()

    def physical_modes(self) -> list[int]:
        return [m * self.k for m in modes(self.n_max)]

    def linear_coefficients(self) -> np.ndarray:
        """Diagonal ``A`` of ``v'' = A v - G(v)`` in stored-mode order."""
        e2 = self.eps_mp() ** 2
        out = []
        for n in self.physical_modes():
            if n == self.k:
                out.append(mpfr(1))
            else:
                lam2 = lambda_n(self, n) ** 2
                out.append(lam2 / e2 if n < self.k else -lam2 / e2)
        return np.array(out, dtype=object)

    def with_(self, **kw) -> "ModelParams":
        return replace(self, **kw)

    def to_config(self) -> dict:
        return {
            "k": self.k,
            "eps": _decimal(self.eps),
            "f_coeffs": [[d, _decimal(_exact(c))] for d, c in sorted(self.f.coeffs.items())],
            "mu": None if self.mu is None else _decimal(self.mu),
            "n_max": self.n_max,
            "bits": self.bits,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ModelParams":
        unknown = set(cfg) - {"k", "eps", "f_coeffs", "mu", "n_max", "bits", "family_degree"}
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        f = OddPowerSeries.from_config(cfg.get("f_coeffs", []))
        mu = cfg.get("mu")
        return cls(k=int(cfg.get("k", 1)), eps=_exact(str(cfg.get("eps", "0.25"))), f=f,
                   mu=None if mu is None else _exact(str(mu)), n_max=int(cfg.get("n_max", 11)),
                   bits=int(cfg.get("bits", 128)),
                   family_degree=int(cfg.get("family_degree", DEFAULT_FAMILY_DEGREE)))

    def to_json(self) -> str:
        return json.dumps(self.to_config(), sort_keys=True)


def _decimal(q) -> str:
    """Exact decimal string when the fraction terminates, ``p/q`` otherwise."""
    q = Fraction(q)
    den = q.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{q.numerator}/{q.denominator}"
    digits = max(twos, fives)
    scaled = q * 10 ** digits
    s = str(abs(scaled.numerator)).rjust(digits + 1, "0")
    sign = "-" if q < 0 else ""
    return sign + (s[:-digits] + "." + s[-digits:] if digits else s)


# -- frequency classes -------------------------------------------------------

@dataclass(frozen=True)
class FrequencyClass:
    tag: str  # "I" or "J"
    k: int
    eps0: object

    def __str__(self):
        return f"{self.tag}_{self.k}"


def classify_frequency(omega, eps0) -> FrequencyClass:
    """Locate ``omega`` in ``I_k = [1/sqrt(k(k+eps0^2)), 1/k)`` or ``J_k = [1/(k+1), 1/sqrt(k(k+eps0^2)))``."""
    with PrecisionContext(256).local():
        w = to_mpfr(omega)
        e0 = to_mpfr(eps0)
        if not w > 0:
            raise DomainError("omega must be positive")
        if not (0 < e0 <= mpfr("0.5")):
            raise DomainError("eps0 must lie in (0, 1/2]")
        if w >= 1:
            return FrequencyClass("J", 0, eps0)
        k = int(gmpy2.floor(1 / w))
        # guard the floor against rounding: want 1/(k+1) < w <= 1/k
        while w * (k + 1) <= 1:
            k += 1
        while w * k > 1:
            k -= 1
        if w * k == 1:
            return FrequencyClass("J", k - 1, eps0)
        if w * w * k * (k + e0 * e0) >= 1:
            return FrequencyClass("I", k, eps0)
        return FrequencyClass("J", k, eps0)


# -- eigenvalues -------------------------------------------------------------

def lambda_n(p: ModelParams, n: int):
    """``sqrt(|n^2 - 1/omega^2| / k)``; excluded at ``|n| = k``."""
    if abs(n) == p.k:
        raise DomainError(f"lambda_n undefined at |n| = k = {p.k}; that mode has unit rate")
    e2 = p.eps_mp() ** 2
    inv_w2 = p.k * (p.k + e2)
    return gmpy2.sqrt(abs(n * n - inv_w2) / p.k)


def mu_n(n: int):
    if n < 2:
        raise DomainError(f"mu_n needs n >= 2, got {n}")
    return gmpy2.sqrt(mpfr(n * n - 1))


# -- Duffing limit -----------------------------------------------------------

def duffing_homoclinic(y, bits: int | None = None):
    """``(v^h(y), v^h'(y))`` for ``v^h = 2 sqrt2 / cosh y``."""
    if bits is not None:
        with PrecisionContext(bits).local():
            return duffing_homoclinic(y)
    y = gmpy2.mpc(y) if isinstance(y, (complex, gmpy2.mpc)) else to_mpfr(y)
    ch = gmpy2.cosh(y)
    prec = gmpy2.get_context().precision
    if abs(ch) < mpfr(2) ** (-(prec // 2)):
        raise SingularityError(f"|cosh(y)| = {float(abs(ch)):.3g}: too close to a pole")
    v = 2 * gmpy2.sqrt(mpfr(2)) / ch
    return v, -v * gmpy2.tanh(y)


# -- vector field and energy -------------------------------------------------

def nonlinear_force(p: ModelParams, v: OddSineSeries) -> OddSineSeries:
    """``G = (eps sqrt(k) omega)^-3 Pi[g(eps sqrt(k) omega v)]``."""
    s = p.amplitude_scale()
    return compose_odd(p.nonlinearity(), v, s, v.n_max).scale(1 / (s * s * s))


def vector_field(p: ModelParams, state: PhasePoint) -> PhasePoint:
    """Right-hand side ``(w, A v - G(v))`` in stored-mode layout."""
    v = state.v
    a = p.linear_coefficients()
    if a.size != v.coeffs.size:
        raise ValueError("state truncation does not match the model's n_max")
    G = nonlinear_force(p, v)
    return PhasePoint(state.w, OddSineSeries(a * v.coeffs - G.coeffs))


def potential_density(p: ModelParams) -> dict[int, object]:
    """Even polynomial ``Q(v) = v^4/12 + F(s v)/s^4`` as ``{degree: coefficient}``."""
    s = p.amplitude_scale()
    out: dict[int, object] = {4: mpfr(1) / 12}
    for deg, c in p.effective_f().coeffs.items():
        e = deg + 1
        out[e] = out.get(e, 0) + to_mpfr(c) / e * s ** (e - 4)
    return out


def hamiltonian(p: ModelParams, state: PhasePoint):
    """Energy with the ``1/pi`` normalisation: ``sum w^2/2 - A v^2/2 + (1/pi) int Q(v)``."""
    a = p.linear_coefficients()
    v, w = state.v.coeffs, state.w.coeffs
    quad = ((w * w - a * v * v) / 2).sum()
    pot = even_mean(potential_density(p), state.v)
    if not isinstance(quad, gmpy2.mpc):
        pot = pot.real
    return quad + pot


# -- k -> 1 rescaling --------------------------------------------------------

@dataclass(frozen=True)
class PhysicalField:
    """Physical ``(u, u_x)`` at one ``x``; ``u`` stored on modes ``k * odd``."""

    k: int
    x: object
    u: OddSineSeries
    ux: OddSineSeries


def reduced_params(p: ModelParams) -> ModelParams:
    """The ``k = 1`` problem at ``eps / sqrt(k)`` equivalent to ``p``.

    Only exact when ``k`` is a perfect square or the caller accepts that
    ``eps`` becomes irrational; the value is kept at ``bits + 64`` digits.
    """
    if p.k == 1:
        return p
    r = _isqrt_fraction(p.k)
    if r is not None:
        return p.with_(k=1, eps=p.eps / r)
    with PrecisionContext(p.bits + 64).local():
        e = to_mpfr(p.eps) / gmpy2.sqrt(mpfr(p.k))
        return p.with_(k=1, eps=Fraction(*e.as_integer_ratio()))


def _isqrt_fraction(k: int):
    r = int(gmpy2.isqrt(k))
    return r if r * r == k else None


def rescale_k_to_1(p: ModelParams, trajectory: Sequence[tuple[object, PhasePoint]]) -> list[PhysicalField]:
    """Map a ``k = 1`` trajectory at ``eps / sqrt(k)`` to the physical field of the ``k`` problem.

    ``trajectory`` is a sequence of ``(y, state)``; the output carries
    ``x = y / (eps sqrt(k) omega)``, ``u = s v`` and ``u_x = s^2 w`` on modes ``k * odd``.
    """
    s = p.amplitude_scale()
    out = []
    for y, st in trajectory:
        out.append(PhysicalField(p.k, to_mpfr(y) / s, st.v.scale(s), st.w.scale(s * s)))
    return out


def rescale_1_to_k(p: ModelParams, fields: Sequence[PhysicalField]) -> list[tuple[object, PhasePoint]]:
    """Inverse of :func:`rescale_k_to_1`."""
    s = p.amplitude_scale()
    out = []
    for fl in fields:
        if fl.k != p.k:
            raise ValueError("field belongs to a different k")
        out.append((fl.x * s, PhasePoint(fl.u.scale(1 / s), fl.ux.scale(1 / (s * s)))))
    return out
