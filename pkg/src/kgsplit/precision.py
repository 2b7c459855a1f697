"""Extended-precision scalars and the bit-budget rule.

All multiprecision arithmetic runs on gmpy2 (MPFR/MPC). A ``PrecisionContext``
is an immutable value; numerical routines take one explicitly and enter it
locally with ``with ctx.local():`` so that concurrent tasks at different budgets do not
share state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction

import gmpy2
import mpmath
from gmpy2 import mpc, mpfr

MPFR = type(mpfr(0))
MPC = type(mpc(0))

BASE_BITS = 53
DEFAULT_GUARD_BITS = 64


def required_bits(target_magnitude_nats, guard_bits: int = DEFAULT_GUARD_BITS) -> int:
    """Mantissa bits needed to resolve a signal of size ``exp(-target_magnitude_nats)``.

    Returns ``ceil(target / ln 2) + guard_bits + 53``.
    """
    if target_magnitude_nats < 0 or guard_bits < 0:
        raise ValueError("target magnitude and guard bits must be non-negative")
    with gmpy2.context(gmpy2.get_context(), precision=256):
        ratio = mpfr(target_magnitude_nats) / gmpy2.log(mpfr(2))
        whole = int(gmpy2.ceil(ratio))
    return whole + int(guard_bits) + BASE_BITS


@dataclass(frozen=True)
class PrecisionContext:
    """Working precision for one task (round-to-nearest-even, fixed)."""

    mantissa_bits: int = 128

    def __post_init__(self):
        if int(self.mantissa_bits) < BASE_BITS:
            raise ValueError(f"mantissa_bits must be >= {BASE_BITS}")
        object.__setattr__(self, "mantissa_bits", int(self.mantissa_bits))

    @property
    def bits(self) -> int:
        return self.mantissa_bits

    def local(self):
        """A fresh gmpy2 context manager at this precision.

        gmpy2 contexts are thread local, so ``with ctx.local():`` never leaks
        into other threads; nesting restores the previous precision on exit.
        """
        return gmpy2.context(gmpy2.get_context(), precision=self.mantissa_bits,
                             real_prec=self.mantissa_bits, imag_prec=self.mantissa_bits,
                             round=gmpy2.RoundToNearest, emax=2**30, emin=-2**30)

    def escalate(self, extra_bits: int = DEFAULT_GUARD_BITS) -> "PrecisionContext":
        return PrecisionContext(self.mantissa_bits + extra_bits)

    @property
    def eps(self):
        """Unit roundoff 2**-bits as an mpfr."""
        with self.local():
            return mpfr(2) ** (-self.mantissa_bits)

    def real(self, x):
        """Convert ``x`` (int, str, Fraction, Decimal, mpfr, float) to an mpfr."""
        with self.local():
            return to_mpfr(x)

    def complex(self, re, im=0):
        with self.local():
            return mpc(to_mpfr(re), to_mpfr(im))

    def mpmath_context(self) -> mpmath.ctx_mp.MPContext:
        """An independent mpmath context at this precision."""
        ctx = mpmath.MPContext()
        ctx.prec = self.mantissa_bits
        return ctx

    def pi(self):
        with self.local():
            return gmpy2.const_pi()


def to_mpfr(x):
    """Exact-as-possible conversion under the active gmpy2 context."""
    if isinstance(x, Fraction):
        return mpfr(x.numerator) / mpfr(x.denominator)
    if isinstance(x, Decimal):
        return mpfr(str(x))
    if isinstance(x, mpmath.mpf):
        return mpfr(mpmath.nstr(x, int(x.context.dps) + 10, strip_zeros=False))
    if isinstance(x, (MPC, complex)):
        raise TypeError("expected a real value")
    return mpfr(x)


def to_mpc(x):
    if isinstance(x, MPC):
        return mpc(x)
    if isinstance(x, complex):
        return mpc(x)
    if isinstance(x, mpmath.mpc):
        return mpc(to_mpfr(x.real), to_mpfr(x.imag))
    return mpc(to_mpfr(x), 0)


def decimal_string(x, digits: int | None = None) -> str:
    """Full-precision decimal rendering of an mpfr/mpc/int used for CSV/JSON output."""
    if isinstance(x, MPC):
        raise TypeError("render real and imaginary parts separately")
    if isinstance(x, int):
        return str(x)
    if not isinstance(x, MPFR):
        x = mpfr(x)
    if digits is None:
        digits = max(17, int(math.ceil(x.precision * math.log10(2))) + 1)
    if gmpy2.is_zero(x):
        return "0"
    mant, exp, _ = gmpy2.digits(x, 10, digits)
    sign = "-" if mant.startswith("-") else ""
    mant = mant.lstrip("-")
    return f"{sign}{mant[0]}.{mant[1:]}e{exp - 1:+d}"


def log2_abs(x) -> float:
    """log2 |x| as a float, -inf for zero; safe for values far outside double range."""
    if gmpy2.is_zero(x):
        return float("-inf")
    e, m = gmpy2.frexp(abs(mpfr(x)))
    return math.log2(float(m)) + e
