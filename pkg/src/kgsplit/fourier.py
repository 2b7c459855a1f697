"""Odd-sine Fourier fields and nonlinear products evaluated mode by mode.

An ``OddSineSeries`` stores the coefficients of ``sin(n tau)`` for odd
``n = 1, 3, ..., n_max``. Coefficients are gmpy2 mpfr or mpc values held in a
numpy object array; index ``i`` holds mode ``2 i + 1``.

Products are formed in the exponential basis ``e^{i n tau}`` with plain
convolution, which is exact for the cubic term; the discarded tail of each
intermediate power is tracked so that aliasing loss is observable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr

from kgsplit.precision import MPC, PrecisionContext, to_mpfr


class ConvergenceError(ArithmeticError):
    """The argument of a power series left its convergence radius."""


def _zero_like(values):
    for x in values:
        if isinstance(x, MPC):
            return mpc(0)
    return mpfr(0)


def mode_count(n_max: int) -> int:
    if n_max < 1 or n_max % 2 == 0:
        raise ValueError(f"n_max must be an odd positive integer, got {n_max}")
    return (n_max + 1) // 2


def modes(n_max: int) -> list[int]:
    return list(range(1, n_max + 1, 2))


def _as_mp(x):
    if isinstance(x, (complex, MPC)):
        return mpc(x)
    return to_mpfr(x)


@dataclass(frozen=True)
class OddSineSeries:
    """Truncated odd-in-tau field ``sum_n coeffs[n] sin(n tau)`` over odd ``n``."""

    coeffs: np.ndarray
    truncation_tail: object = field(default=None, compare=False)

    def __post_init__(self):
        arr = np.asarray(self.coeffs, dtype=object)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("coefficient array must be one-dimensional and non-empty")
        object.__setattr__(self, "coeffs", arr)

    @property
    def n_max(self) -> int:
        return 2 * self.coeffs.size - 1

    @classmethod
    def zeros(cls, n_max: int, complex_valued: bool = False) -> "OddSineSeries":
        z = mpc(0) if complex_valued else mpfr(0)
        return cls(np.array([z] * mode_count(n_max), dtype=object))

    @classmethod
    def from_modes(cls, n_max: int, values: Mapping[int, object]) -> "OddSineSeries":
        """Build from ``{mode: value}``; unspecified odd modes are zero."""
        cplx = any(isinstance(v, (complex, MPC)) for v in values.values())
        out = [mpc(0) if cplx else mpfr(0) for _ in range(mode_count(n_max))]
        for n, val in values.items():
            if n % 2 == 0 or n < 1:
                raise ValueError(f"only odd positive modes are stored, got {n}")
            if n <= n_max:
                out[(n - 1) // 2] = mpc(_as_mp(val)) if cplx else _as_mp(val)
        return cls(np.array(out, dtype=object))

    def __getitem__(self, n: int):
        return project(self, n)

    def items(self):
        return [(2 * i + 1, c) for i, c in enumerate(self.coeffs)]

    def resized(self, n_max: int) -> "OddSineSeries":
        """Zero-pad or truncate to a new odd truncation."""
        k = mode_count(n_max)
        if k <= self.coeffs.size:
            return OddSineSeries(self.coeffs[:k].copy())
        pad = [_zero_like(self.coeffs)] * (k - self.coeffs.size)
        return OddSineSeries(np.concatenate([self.coeffs, np.array(pad, dtype=object)]))

    def __add__(self, other: "OddSineSeries") -> "OddSineSeries":
        return OddSineSeries(self.coeffs + other.coeffs)

    def __sub__(self, other: "OddSineSeries") -> "OddSineSeries":
        return OddSineSeries(self.coeffs - other.coeffs)

    def __neg__(self) -> "OddSineSeries":
        return OddSineSeries(-self.coeffs)

    def scale(self, c) -> "OddSineSeries":
        return OddSineSeries(self.coeffs * c)

    def evaluate(self, tau):
        """Point value at angle ``tau`` (mpfr)."""
        acc = _zero_like(self.coeffs)
        for n, c in self.items():
            acc += c * gmpy2.sin(n * tau)
        return acc


@dataclass(frozen=True)
class PhasePoint:
    """State ``(v, dv/dy)`` of the spatial dynamics."""

    v: OddSineSeries
    w: OddSineSeries

    @property
    def n_max(self) -> int:
        return self.v.n_max

    def __sub__(self, other: "PhasePoint") -> "PhasePoint":
        return PhasePoint(self.v - other.v, self.w - other.w)


@dataclass(frozen=True)
class OddPowerSeries:
    """Odd real-analytic germ ``sum_d c_{2d+1} u^{2d+1}`` truncated at a finite degree.

    ``coeffs`` maps odd degree to coefficient (kept as exact ``Fraction`` or
    decimal strings until a precision is chosen).
    """

    coeffs: Mapping[int, object]
    radius: object = float("inf")

    def __post_init__(self):
        clean = {}
        for d, c in dict(self.coeffs).items():
            d = int(d)
            if d < 1 or d % 2 == 0:
                raise ValueError(f"odd power series only carries odd degrees, got {d}")
            if c != 0:
                clean[d] = c
        object.__setattr__(self, "coeffs", clean)

    @property
    def degree(self) -> int:
        return max(self.coeffs, default=0)

    @property
    def lowest_degree(self) -> int:
        return min(self.coeffs, default=0)

    def coeff(self, d: int):
        return self.coeffs.get(d, 0)

    def mp_coeffs(self) -> dict[int, object]:
        """Coefficients as mpfr under the active context."""
        return {d: to_mpfr(c) for d, c in sorted(self.coeffs.items())}

    def __add__(self, other: "OddPowerSeries") -> "OddPowerSeries":
        out = dict(self.coeffs)
        for d, c in other.coeffs.items():
            out[d] = out.get(d, 0) + c
        return OddPowerSeries(out, min(_radius(self), _radius(other)))

    def times(self, c) -> "OddPowerSeries":
        return OddPowerSeries({d: v * c for d, v in self.coeffs.items()}, self.radius)

    def truncated(self, degree: int) -> "OddPowerSeries":
        return OddPowerSeries({d: c for d, c in self.coeffs.items() if d <= degree}, self.radius)

    def antiderivative_coeffs(self) -> dict[int, object]:
        """Even-degree coefficients of ``F(u) = int_0^u f``."""
        return {d + 1: c / (d + 1) if isinstance(c, Fraction) else to_mpfr(c) / (d + 1)
                for d, c in self.coeffs.items()}

    def evaluate(self, u):
        acc = u * 0
        for d, c in sorted(self.coeffs.items(), reverse=True):
            acc += to_mpfr(c) * u ** d
        return acc

    def to_config(self) -> list[list]:
        return [[d, str(c)] for d, c in sorted(self.coeffs.items())]

    @classmethod
    def from_config(cls, pairs: Iterable, radius=float("inf")) -> "OddPowerSeries":
        out = {}
        for d, val in pairs:
            out[int(d)] = Fraction(val) if isinstance(val, (int, Fraction)) else _parse_exact(val)
        return cls(out, radius)


def _parse_exact(val):
    if isinstance(val, str):
        try:
            return Fraction(val)
        except ValueError:
            return val
    if isinstance(val, float):
        return Fraction(repr(val))
    return val


def _radius(ps: OddPowerSeries):
    return ps.radius if ps.radius is not None else float("inf")


def project(s: OddSineSeries, n: int):
    """Coefficient of ``sin(n tau)``; zero beyond the truncation."""
    if n % 2 == 0:
        raise ValueError(f"even mode {n} is not representable in an odd-sine series")
    if n < 1:
        raise ValueError(f"mode index must be positive, got {n}")
    if n > s.n_max:
        return _zero_like(s.coeffs) * 0
    return s.coeffs[(n - 1) // 2]


def tilde_project(s: OddSineSeries) -> OddSineSeries:
    """Remove the ``sin(tau)`` component."""
    out = s.coeffs.copy()
    out[0] = out[0] * 0
    return OddSineSeries(out)


def l1_norm(s: OddSineSeries):
    acc = mpfr(0)
    for c in s.coeffs:
        acc += abs(c)
    return acc


# -- exponential basis -------------------------------------------------------

def to_exponential(s: OddSineSeries, half_width: int) -> np.ndarray:
    """Dense coefficients of ``e^{i n tau}`` for ``n = -half_width..half_width``."""
    zero = mpc(0)
    out = np.array([zero] * (2 * half_width + 1), dtype=object)
    half_i = mpc(0, 1) * 2
    for n, c in s.items():
        if n > half_width:
            break
        e = mpc(c) / half_i
        out[half_width + n] = e
        out[half_width - n] = -e
    return out


def from_exponential(e: np.ndarray, n_max: int, real: bool) -> OddSineSeries:
    half = (len(e) - 1) // 2
    vals = []
    for n in modes(n_max):
        c = mpc(0, 1) * (e[half + n] - e[half - n]) if n <= half else mpc(0)
        vals.append(c.real if real else c)
    return OddSineSeries(np.array(vals, dtype=object))


def _truncate(e: np.ndarray, half_width: int):
    half = (len(e) - 1) // 2
    if half <= half_width:
        return e, mpfr(0)
    lo, hi = half - half_width, half + half_width + 1
    tail = mpfr(0)
    for c in e[:lo]:
        tail += abs(c)
    for c in e[hi:]:
        tail += abs(c)
    return e[lo:hi], tail


def exp_product(a: np.ndarray, b: np.ndarray, half_width: int):
    """Convolution of two centred coefficient vectors, truncated to ``half_width``."""
    return _truncate(np.convolve(a, b), half_width)


def parity_leakage(ps: OddPowerSeries, v: OddSineSeries, scale=1):
    """l1 mass of ``ps(scale * v)`` outside the odd-sine subspace.

    The composition is formed without truncation in the exponential basis; the
    result sums the even harmonics, the cosine parts and any real part of the
    sine coefficients. It vanishes identically for odd ``ps``.
    """
    width = max(ps.degree, 1) * v.n_max
    u = to_exponential(v, v.n_max) * _as_mp(scale)
    u = np.concatenate([np.array([mpc(0)] * (width - v.n_max), dtype=object), u,
                        np.array([mpc(0)] * (width - v.n_max), dtype=object)])
    total = np.array([mpc(0)] * (2 * width + 1), dtype=object)
    power = u
    u2, _ = exp_product(u, u, width)
    for d in range(1, ps.degree + 1, 2):
        c = ps.coeff(d)
        if c:
            total = total + power * to_mpfr(c)
        power, _ = exp_product(power, u2, width)
    leak = mpfr(0)
    for n in range(0, width + 1):
        cp, cm = total[width + n], total[width - n]
        if n % 2 == 0:
            leak += abs(cp) + (abs(cm) if n else 0)
        else:
            leak += abs(cp + cm) + abs(cp.real) + abs(cm.real)
    return leak


def compose_odd(ps: OddPowerSeries, v: OddSineSeries, scale=1, out_n_max: int | None = None,
                ctx: PrecisionContext | None = None, window: int | None = None) -> OddSineSeries:
    """Odd-sine coefficients of ``ps(scale * v(tau))`` up to ``out_n_max``.

    Powers are built as ``u^{2d+1} = u^{2d-1} * u^2`` in the exponential basis.
    By default each power keeps exactly the harmonics that can still reach the
    output after the remaining multiplications, so the result is exact. With
    ``window=m`` every power is cut to ``|n| <= m * n_max`` instead and the
    discarded l1 mass is reported in ``truncation_tail``.
    """
    if ctx is not None:
        with ctx.local():
            return compose_odd(ps, v, scale, out_n_max, window=window)
    if out_n_max is None:
        out_n_max = v.n_max
    scale = _as_mp(scale)
    real = not isinstance(scale, MPC) and not any(isinstance(c, MPC) for c in v.coeffs)
    norm = l1_norm(v) * abs(scale)
    if ps.radius is not None and norm >= ps.radius:
        raise ConvergenceError(f"||scale*v||_l1 = {float(norm):.3g} exceeds radius {ps.radius}")
    coeffs = ps.mp_coeffs()
    if not coeffs:
        return OddSineSeries.zeros(out_n_max, complex_valued=not real)
    n, D = v.n_max, max(coeffs)

    def width(d):
        if window is not None:
            return window * max(n, out_n_max)
        return max(out_n_max, min(d * n, out_n_max + n * (D - d)))

    top = max(width(d) for d in range(1, D + 1, 2))
    u = to_exponential(v.scale(scale), top)
    acc = np.array([mpc(0)] * (2 * out_n_max + 1), dtype=object)
    tail = mpfr(0)
    u2, t = exp_product(u, u, max(2 * n, width(2)) if window is None else width(2))
    tail += t
    power, _ = _truncate(u, width(1))
    for d in range(1, D + 1, 2):
        if d > 1:
            power, t = exp_product(power, u2, width(d))
            tail += t
        c = coeffs.get(d)
        if c is not None:
            acc = acc + _truncate(power, out_n_max)[0] * c
    out = from_exponential(acc, out_n_max, real)
    return OddSineSeries(out.coeffs, truncation_tail=tail if window is not None else mpfr(0))


def even_mean(ps_even: Mapping[int, object], v: OddSineSeries, scale=1):
    """``(1/pi) int_0^{2pi} P(scale v) dtau`` for an even polynomial ``P``.

    Computed exactly from the exponential-basis constant term (twice the mean).
    """
    scale = _as_mp(scale)
    width = max(ps_even, default=2) * v.n_max
    u = to_exponential(v.scale(scale), width)
    u2 = np.convolve(u, u)
    centre = (len(u2) - 1) // 2
    power = np.array([mpc(1)], dtype=object)
    total = mpc(0)
    for d in range(2, max(ps_even, default=0) + 1, 2):
        power = np.convolve(power, u2)
        c = ps_even.get(d)
        if c is not None:
            mid = (len(power) - 1) // 2
            total += to_mpfr(c) * power[mid]
    del centre
    return 2 * total


class SineGrid:
    """Quarter-wave collocation grid for odd-mode sine series.

    Nodes ``tau_j = (j + 1/2) pi / (2 M)``, ``j < M``. A field with only odd
    sine modes is symmetric about ``pi/2`` and odd about ``0``, so these ``M``
    nodes determine the field on the full ``4 M`` point offset grid. The
    analysis matrix reproduces the exact projection whenever the bandwidth of the
    field being projected plus ``n_max`` stays below ``4 M``.
    """

    def __init__(self, n_max: int, points: int):
        if 4 * points <= 2 * n_max:
            raise ValueError("grid too coarse to invert its own modes")
        self.n_max = n_max
        self.points = points
        pi = gmpy2.const_pi()
        self.nodes = [(2 * j + 1) * pi / (4 * points) for j in range(points)]
        ms = modes(n_max)
        self.synth = np.array([[gmpy2.sin(m * t) for m in ms] for t in self.nodes], dtype=object)
        self.analysis = np.array([[2 * gmpy2.sin(m * t) / points for t in self.nodes] for m in ms],
                                 dtype=object)

    @classmethod
    def for_degree(cls, n_max: int, degree: int) -> "SineGrid":
        """Smallest grid that projects a degree-``degree`` polynomial of the field exactly."""
        return cls(n_max, (degree + 1) * n_max // 4 + 1)

    def to_grid(self, coeffs):
        return self.synth.dot(coeffs)

    def to_modes(self, values):
        return self.analysis.dot(values)
