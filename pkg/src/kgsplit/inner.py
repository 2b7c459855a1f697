"""Inner equation near the complex pole of the Duffing homoclinic.

In the inner variable ``z`` the mode equations read

    phi_n'' + (n^2 - 1) phi_n = -Pi_n[g(phi)],     g(u) = u^3/3 + f(u),

with the unstable and stable solutions both asymptotic to the same formal
series ``-2 sqrt2 i/z sin(tau) + O(z^-3)``. Their difference is
exponentially small, ``e^{-i mu_3 z}(C_in sin 3 tau + O(1/z))``, and this module
measures ``C_in`` by integrating both solutions along horizontal lines.

The toy linear problem ``gamma'' + mu_3^2 gamma = sum a_l z^-l`` is included
because its splitting has a closed form, which makes it a sharp oracle for the
contour integration itself.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr

from kgsplit.fourier import OddPowerSeries, OddSineSeries, PhasePoint, compose_odd, modes
from kgsplit.model import appendix_c_family, mu_n
from kgsplit.precision import PrecisionContext, required_bits, to_mpc, to_mpfr
from kgsplit.taylor import GridNonlinearity, SecondOrderSystem, Trajectory, integrate


class StructuralError(ArithmeticError):
    pass


class SeedError(RuntimeError):
    pass


class BudgetError(RuntimeError):
    """Working precision cannot resolve the requested exponentially small quantity."""


def leading_coefficient():
    """``c`` in the leading term ``c/z sin(tau)``: ``-2 sqrt2 i``."""
    return mpc(0, -2) * gmpy2.sqrt(mpfr(2))


def inner_nonlinearity(f: OddPowerSeries) -> OddPowerSeries:
    return OddPowerSeries({3: Fraction(1, 3)}) + f


def inner_linear(n_max: int) -> np.ndarray:
    return np.array([mpfr(1 - n * n) for n in modes(n_max)], dtype=object)


def inner_system(f: OddPowerSeries, n_max: int) -> SecondOrderSystem:
    return SecondOrderSystem(inner_linear(n_max), inner_nonlinearity(f), 1, 1, n_max)


def inner_vector_field(phi: PhasePoint, f: OddPowerSeries) -> PhasePoint:
    """``(phi', -(n^2 - 1) phi - Pi[g(phi)])``."""
    A = inner_linear(phi.n_max)
    N = compose_odd(inner_nonlinearity(f), phi.v, 1, phi.n_max)
    return PhasePoint(phi.w, OddSineSeries(A * phi.v.coeffs - N.coeffs))


# -- formal series -----------------------------------------------------------

@dataclass(frozen=True)
class FormalModeSeries:
    """Coefficients ``b[n][j]`` of ``z^-j`` per odd mode, and right-hand-side data ``beta``.

    ``b[1][1]`` is the explicit leading term; ``corrections(1)`` drops it.
    """

    b: Mapping[int, list]
    beta: Mapping[int, list]
    jmax: int
    n_max: int

    def corrections(self, n: int) -> list:
        out = list(self.b[n])
        if n == 1:
            out[1] = out[1] * 0
        return out

    def gevrey_ratios(self, n: int = 3) -> list:
        """``|b_{n,j+2}| / (j (j+1) |b_{n,j}|)`` over odd ``j``.

        Only odd powers occur, so this is the two-step form of the Gevrey-1
        ratio; it tends to ``1/mu_n^2`` when ``b_{n,j} ~ (j-1)!/mu_n^j``.
        """
        out = []
        bn = self.b[n]
        for j in range(3, self.jmax - 1, 2):
            if bn[j] != 0:
                out.append(float(abs(bn[j + 2]) / (j * (j + 1) * abs(bn[j]))))
        return out

    def mode_arrays(self) -> list:
        """Per-order mode arrays ``[B_0, ..., B_jmax]``."""
        ms = modes(self.n_max)
        return [np.array([self.b[n][j] for n in ms], dtype=object) for j in range(self.jmax + 1)]


def formal_inner_series(f: OddPowerSeries, n_max: int, jmax: int) -> FormalModeSeries:
    """Inverse-power expansion of the inner solutions.

    For ``n >= 3``: ``b_{n,j} = (F_{n,j} - (j-2)(j-1) b_{n,j-2}) / mu_n^2``.
    Mode 1 has no linear term; its order-``j`` balance fixes ``b_{1,j-2}`` via
    ``((j-2)(j-1) - 6) b_{1,j-2} = F^rest_{1,j}``. Here ``F = -Pi[g(phi)]``.
    The translation freedom ``b_{1,2}`` is set to zero, so only odd powers appear.
    """
    if jmax < 5:
        raise ValueError("jmax must be at least 5")
    ms = modes(n_max)
    nm = len(ms)
    kern = GridNonlinearity(inner_nonlinearity(f), n_max, 1, 1, jmax + 3)
    B = [np.array([mpc(0)] * nm, dtype=object) for _ in range(jmax + 1)]
    B[1][0] = leading_coefficient()
    F = [np.array([mpc(0)] * nm, dtype=object) for _ in range(jmax + 1)]
    mu2 = np.array([mpfr(n * n - 1) for n in ms], dtype=object)

    def run(lo, hi):
        out = None
        for q in range(lo, hi + 1):
            out = kern.coefficient(q, B[q])
        return out

    run(0, 2)
    for j in range(3, jmax + 1, 2):
        if j - 2 >= 3:
            B[j - 2][0] = mpc(0)
            rest = -run(j - 2, j)
            div = (j - 2) * (j - 1) - 6
            if div == 0:
                raise StructuralError(f"mode-1 divisor vanishes at j = {j}")
            B[j - 2][0] = rest[0] / div
        Fj = -run(j - 2, j)
        F[j] = Fj
        for i in range(1, nm):
            B[j][i] = (Fj[i] - (j - 2) * (j - 1) * B[j - 2][i]) / mu2[i]
        # order j+1 is even: keep the kernel's arrays in step
        if j + 1 <= jmax:
            kern.coefficient(j + 1, B[j + 1])
    # the last odd mode-1 coefficient is only fixed by order jmax+2; leave it from the
    # equation at jmax+2 when available
    jl = jmax if jmax % 2 == 1 else jmax - 1
    if jl >= 3:
        Bext = B + [np.array([mpc(0)] * nm, dtype=object)] * 2
        for q in range(jl, jl + 3):
            last = kern.coefficient(q, Bext[q])
        div = jl * (jl + 1) - 6
        B[jl][0] = -last[0] / div
    b = {n: [B[j][i] for j in range(jmax + 1)] for i, n in enumerate(ms)}
    beta = {n: [F[j][i] for j in range(jmax + 1)] for i, n in enumerate(ms)}
    return FormalModeSeries(b, beta, jmax, n_max)


@dataclass(frozen=True)
class Seed:
    z0: object
    state: PhasePoint
    j_trunc: int
    error_estimate: object


def term_sizes(series: FormalModeSeries, z0) -> list:
    """Largest mode magnitude of the order-``j`` term at ``z0``, for each ``j``."""
    az = abs(to_mpc(z0))
    out = []
    for j in range(series.jmax + 1):
        m = mpfr(0)
        for n in series.b:
            m = max(m, abs(series.b[n][j]))
        out.append(m / az ** j)
    return out


def seed_from_series(series: FormalModeSeries, z0, j_trunc="optimal", budget=None) -> Seed:
    """Truncated series and its ``z``-derivative at ``z0``.

    With ``"optimal"`` the sum stops before the smallest odd-order term,
    whose size is reported as the error estimate.
    """
    z0 = to_mpc(z0)
    sizes = term_sizes(series, z0)
    if j_trunc == "optimal":
        odd = [j for j in range(3, series.jmax + 1, 2)]
        jbest = min(odd, key=lambda j: sizes[j])
        if jbest >= series.jmax - 2:
            raise SeedError(f"series too short for optimal truncation at |z0| = {float(abs(z0)):.3g}")
        j_trunc = jbest - 2
        err = sizes[jbest]
    else:
        j_trunc = int(j_trunc)
        err = sizes[j_trunc + 2] if j_trunc + 2 <= series.jmax else sizes[-1]
    if budget is not None and err > budget:
        raise SeedError(f"seed error {float(err):.3g} above budget {float(budget):.3g}")
    arrays = series.mode_arrays()
    inv = 1 / z0
    v = arrays[0] * 0
    w = arrays[0] * 0
    for j in range(j_trunc, 0, -1):
        v = (v + arrays[j]) * inv
    for j in range(j_trunc, 0, -1):
        w = (w - arrays[j] * j) * inv
    w = w * inv
    return Seed(z0, PhasePoint(OddSineSeries(v), OddSineSeries(w)), j_trunc, err)


# -- contour integration -----------------------------------------------------

@dataclass(frozen=True)
class Contour:
    waypoints: tuple
    step_ceiling: object = None

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("a contour needs at least two waypoints")
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            if a == b:
                raise ValueError("consecutive waypoints must differ")

    @classmethod
    def horizontal(cls, start, end, ceiling=None) -> "Contour":
        return cls((to_mpc(start), to_mpc(end)), ceiling)


def integrate_inner(f: OddPowerSeries, contour: Contour, seed: PhasePoint, tol, order: int | None = None):
    """Propagate along each straight segment of ``contour``; returns the final state."""
    system = inner_system(f, seed.n_max)
    state = seed
    for a, b in zip(contour.waypoints, contour.waypoints[1:]):
        tr = integrate(system, state, to_mpc(a), to_mpc(b), to_mpfr(tol), order, h_max=contour.step_ceiling)
        state = tr.final_state()
    return state


@dataclass(frozen=True)
class StokesEstimate:
    value: object  # Richardson-stabilised C_in
    error_bar: object
    raw: tuple  # ((r0, R, C), (r0', R', C'))
    n_max: int
    bits: int
    seed_errors: tuple
    floor: object
    trusted: bool
    seconds: float = 0.0
    partial_sums: list = field(default_factory=list)


def stokes_at(f: OddPowerSeries, r0, R, n_max: int, series: FormalModeSeries, tol):
    """``e^{mu_3 r0} Pi_3[phi^u - phi^s](-i r0)`` from two horizontal legs."""
    r0 = to_mpfr(r0)
    R = to_mpfr(R)
    end = mpc(0, -r0)
    out = {}
    errs = []
    for branch, x0 in (("u", -R), ("s", R)):
        z0 = mpc(x0, -r0)
        sd = seed_from_series(series, z0)
        errs.append(sd.error_estimate)
        out[branch] = integrate_inner(f, Contour.horizontal(z0, end), sd.state, tol)
    mu3 = mu_n(3)
    diff = out["u"].v.coeffs[1] - out["s"].v.coeffs[1]
    return gmpy2.exp(mu3 * r0) * diff, max(errs), out


def _jmax_for(r, R):
    mu3 = 2 * math.sqrt(2)
    return int(mu3 * math.hypot(r, R)) + 24


def extract_stokes(f: OddPowerSeries, R=20, r0=12, n_max: int = 11, bits: int | None = None, tol=None,
                   enforce_budget: bool = True) -> StokesEstimate:
    """Measure ``C_in`` at ``r0`` and ``1.5 r0`` and Richardson-extrapolate in ``1/r``.

    The second measurement uses ``R' = R + (r0' - r0)`` so both legs have the same
    length. The error bar is the two-radius gap plus the amplified error floor.
    ``trusted`` is false when the raw difference is within ten times that floor.
    """
    t0 = time.perf_counter()
    r1, R1 = float(r0), float(R)
    if R1 < r1 + 3:
        raise ValueError("R must be at least r0 + 3")
    r2 = 1.5 * r1
    R2 = R1 + (r2 - r1)
    if bits is None:
        bits = required_bits(2 * math.sqrt(2) * r2, 64)
    elif enforce_budget and bits < required_bits(2 * math.sqrt(2) * r1, 64):
        raise BudgetError(f"{bits} bits below the budget for r0 = {r1}")
    with PrecisionContext(bits).local():
        mu3 = mu_n(3)
        amp = gmpy2.exp(mu3 * to_mpfr(r2))
        tol = to_mpfr(tol if tol is not None else mpfr(10) ** -8 / amp)
        series = formal_inner_series(f, n_max, _jmax_for(r2, R2))
        raw, seed_errs = [], []
        for r, Rr in ((r1, R1), (r2, R2)):
            c, se, _ = stokes_at(f, Fraction(str(r)), Fraction(str(Rr)), n_max, series, tol)
            raw.append((r, Rr, c))
            seed_errs.append(se)
        (ra, _, ca), (rb, _, cb) = raw
        rich = (rb * cb - ra * ca) / (rb - ra)
        noise = tol * max(R1, R2) + max(seed_errs)
        floor = noise * amp
        bar = abs(ca - cb) + floor
        trusted = abs(cb) / amp > 10 * noise
        partial = stokes_conjecture_sum(series, series.jmax)
        return StokesEstimate(rich, bar, tuple(raw), n_max, bits, tuple(seed_errs), floor, trusted,
                              time.perf_counter() - t0, partial["partial_sums"])


def family_f(mu, f: OddPowerSeries | None = None, D: int = 15) -> OddPowerSeries:
    """Effective ``f`` of the sine-Gordon family at parameter ``mu``."""
    return appendix_c_family(mu, f or OddPowerSeries({}), D)


# -- toy model ---------------------------------------------------------------

def _coeff_map(a) -> dict:
    if isinstance(a, Mapping):
        return {int(l): v for l, v in a.items()}
    return {l: v for l, v in enumerate(a) if v != 0}


def toy_gamma_series(a, L: int) -> list:
    """Formal solution ``sum gamma_l z^-l`` of ``gamma'' + mu_3^2 gamma = sum a_l z^-l``; index ``l``."""
    a = _coeff_map(a)
    mu2 = mu_n(3) ** 2
    gamma = [mpfr(0)] * (L + 1)
    for l in range(3, L + 1):
        acc = mpfr(0)
        for j in range(0, (l - 3) // 2 + 1):
            al = a.get(l - 2 * j)
            if al is None:
                continue
            fac = math.factorial(l - 1) // math.factorial(l - 2 * j - 1)
            acc += (-1) ** j * fac * to_mpc(al) / mu2 ** (j + 1) if isinstance(al, complex) else \
                (-1) ** j * fac * to_mpfr(al) / mu2 ** (j + 1)
        gamma[l] = acc
    return gamma


def toy_splitting_closed_form(a, kappa):
    """``-pi e^{-mu_3 kappa} sum_l i^{l-1} mu_3^{l-2} / (l-1)! a_l``."""
    a = _coeff_map(a)
    mu3 = mu_n(3)
    total = mpc(0)
    for l, al in sorted(a.items()):
        if l < 3:
            raise ValueError("toy forcing starts at z^-3")
        total += mpc(0, 1) ** (l - 1) * mu3 ** (l - 2) / math.factorial(l - 1) * to_mpc(al)
    if a:
        lmax = max(a)
        last = abs(mu3 ** (lmax - 2) / math.factorial(lmax - 1) * to_mpc(a[lmax]))
        if last > abs(total) and abs(total) > 0 and lmax > 40:
            raise ArithmeticError("toy closed-form sum has not converged")
    return -gmpy2.const_pi() * gmpy2.exp(-mu3 * to_mpfr(kappa)) * total


def _toy_forcing(a: dict, order: int):
    """Taylor coefficients about ``zc`` of ``sum_l a_l z^-l``."""
    items = [(l, to_mpc(v)) for l, v in sorted(a.items())]

    def at(zc):
        zc = to_mpc(zc)
        inv = 1 / zc
        coeffs = [mpc(0)] * (order + 1)
        for l, al in items:
            base = al * inv ** l
            # (zc + t)^-l = zc^-l sum_q binom(-l, q) (t/zc)^q
            c = base
            for q in range(order + 1):
                coeffs[q] += c
                c = c * (-(l + q)) / (q + 1) * inv
        arrs = [np.array([c], dtype=object) for c in coeffs]
        return lambda p: arrs[p]

    return at


def toy_splitting_numeric(a, kappa, R=None, tol=None):
    """``gamma^u(-i kappa) - gamma^s(-i kappa)`` by Taylor integration along two horizontal legs."""
    a = _coeff_map(a)
    kappa = to_mpfr(kappa)
    if not a:
        return mpc(0)
    mu3 = mu_n(3)
    if R is None:
        R = 4 * kappa + 20
    R = to_mpfr(R)
    if tol is None:
        tol = gmpy2.exp(-mu3 * kappa) * mpfr(10) ** -14
    tol = to_mpfr(tol)
    L = int(mu3 * abs(mpc(R, kappa))) + 30
    gam = toy_gamma_series(a, L)
    system = SecondOrderSystem(np.array([-mu3 * mu3], dtype=object), OddPowerSeries({}), 1, 1, 1)
    from kgsplit.taylor import default_order
    order = default_order(tol)
    forcing = _toy_forcing(a, order + 2)
    end = mpc(0, -kappa)
    vals = {}
    for branch, x0 in (("u", -R), ("s", R)):
        z0 = mpc(x0, -kappa)
        sizes = [abs(gam[l]) / abs(z0) ** l for l in range(L + 1)]
        live = [l for l in range(3, L + 1) if sizes[l] != 0]
        lbest = min(live, key=lambda l: sizes[l])
        v = mpc(0)
        w = mpc(0)
        inv = 1 / z0
        for l in range(3, lbest):
            v += gam[l] * inv ** l
            w += -l * gam[l] * inv ** (l + 1)
        st = PhasePoint(OddSineSeries(np.array([v], dtype=object)), OddSineSeries(np.array([w], dtype=object)))
        tr = integrate(system, st, z0, end, tol, order, forcing_at=forcing)
        vals[branch] = tr.final_state().v.coeffs[0]
    return vals["u"] - vals["s"]


def stokes_conjecture_sum(series: FormalModeSeries | Sequence, L: int) -> dict:
    """Partial sums of ``-pi sum_{l>=3} i^{l-1} mu_3^{l-2} / (l-1)! beta_{3,l}``.

    Accepts a formal series (uses its mode-3 ``beta``) or a plain coefficient list.
    """
    beta = series.beta[3] if isinstance(series, FormalModeSeries) else list(series)
    mu3 = mu_n(3)
    pi = gmpy2.const_pi()
    acc = mpc(0)
    sums, incs = [], []
    for l in range(3, min(L, len(beta) - 1) + 1):
        term = -pi * mpc(0, 1) ** (l - 1) * mu3 ** (l - 2) / math.factorial(l - 1) * to_mpc(beta[l])
        acc += term
        sums.append(acc)
        incs.append(abs(term))
    ratios = [float(incs[i + 1] / incs[i]) if incs[i] != 0 else None for i in range(len(incs) - 1)]
    return {"partial_sums": sums, "increments": incs, "increment_ratios": ratios}
