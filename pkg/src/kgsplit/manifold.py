"""Unstable manifold of the origin, the symmetric section, and the splitting.

Only the unstable orbit is integrated: the system is reversible under
``(y, w) -> (-y, -w)``, so the stable orbit is its mirror image and the
whole splitting at the section sits in the velocities, ``Xi_n(0) = 2 w_n(0)``.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr

from kgsplit.fourier import OddSineSeries, PhasePoint, l1_norm
from kgsplit.model import ModelParams, duffing_homoclinic, hamiltonian, lambda_n
from kgsplit.precision import PrecisionContext, decimal_string, required_bits, to_mpfr
from kgsplit.taylor import (GridNonlinearity, SecondOrderSystem, TaylorStep, Trajectory,
                            find_root_on_step, integrate)


class ResonanceError(ArithmeticError):
    pass


class SectionError(RuntimeError):
    pass


class PrecisionError(RuntimeError):
    """A measurement cannot be trusted at the working precision."""


def splitting_rate(k: int):
    """Exponent ``pi sqrt(2k)``."""
    return gmpy2.const_pi() * gmpy2.sqrt(mpfr(2 * k))


def outer_system(p: ModelParams) -> SecondOrderSystem:
    s = p.amplitude_scale()
    return SecondOrderSystem(p.linear_coefficients(), p.nonlinearity(), s, 1 / (s * s * s), p.n_max)


# -- parameterisation of the unstable manifold -------------------------------

@dataclass(frozen=True)
class ManifoldExpansion:
    """``v(y) = sum_p c_p e^{p y}`` with ``c_1 = delta`` on mode ``k``."""

    coeffs: tuple  # c_0 .. c_P as mode arrays (c_0 = 0)
    delta: object
    eigen_rate: object = 1

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def term(self, p: int) -> OddSineSeries:
        return OddSineSeries(self.coeffs[p])

    def evaluate(self, y) -> PhasePoint:
        xi = gmpy2.exp(y)
        v = self.coeffs[-1] * 0
        w = self.coeffs[-1] * 0
        for p in range(self.order, 0, -1):
            v = v * xi + self.coeffs[p]
            w = w * xi + self.coeffs[p] * p
        return PhasePoint(OddSineSeries(v * xi), OddSineSeries(w * xi))

    def tail_bound(self, y):
        """Size of the last two retained odd orders at ``y``; proxy for truncation error."""
        xi = gmpy2.exp(y)
        out = mpfr(0)
        top = self.order if self.order % 2 else self.order - 1
        for p in (top, top - 2):
            if p >= 1:
                out = max(out, l1_norm(self.term(p)) * xi ** p * p * p)
        return out

    def seed_position(self, budget, margin=mpfr("1.0")):
        """Largest ``y`` below the apex guess where :meth:`tail_bound` is within ``budget``."""
        apex = gmpy2.log(4 * gmpy2.sqrt(mpfr(2)) / self.delta)
        y = apex - margin
        step = mpfr("0.25")
        while self.tail_bound(y) > budget:
            y -= step
            if y < apex - 200:
                raise PrecisionError("manifold expansion cannot meet the seed budget")
        return y


def expand_unstable_manifold(p: ModelParams, P: int, delta=1) -> ManifoldExpansion:
    """Order-by-order solve of ``(q^2 - A) c_q = -N_q`` for ``q = 2..P``."""
    if P < 1:
        raise ValueError("order P must be at least 1")
    delta = to_mpfr(delta)
    if not delta > 0:
        raise ValueError("delta must be positive")
    system = outer_system(p)
    A = system.linear
    kern = GridNonlinearity(system.g, p.n_max, system.scale, system.out_scale, P + 1)
    zero = np.array([mpfr(0)] * A.size, dtype=object)
    c1 = zero.copy()
    c1[0] = delta
    coeffs = [zero, c1]
    kern.coefficient(0, zero)
    kern.coefficient(1, c1)
    floor = mpfr(2) ** (-(gmpy2.get_context().precision // 2))
    for q in range(2, P + 1):
        n = kern.coefficient(q, zero)
        if q % 2 == 0:
            coeffs.append(zero.copy())
            continue
        div = q * q - A
        for d in div:
            if abs(d) < floor:
                raise ResonanceError(f"resonant divisor at order {q}")
        cq = -n / div
        kern.set_input(q, cq)
        coeffs.append(cq)
    return ManifoldExpansion(tuple(coeffs), delta)


# -- orbits ------------------------------------------------------------------

def integrate_orbit(p: ModelParams, start: PhasePoint, y0, y1, tol, order: int | None = None) -> Trajectory:
    """Dense-output Taylor integration of the truncated system."""
    return integrate(outer_system(p), start, to_mpfr(y0), to_mpfr(y1), to_mpfr(tol), order)


def find_symmetric_section(traj: Trajectory, mode_index: int = 0, apex_floor=None):
    """First zero of ``w_k`` (from + to -) with ``v_k`` above ``apex_floor``.

    Returns ``(y_star, state)``; re-timing ``y_star -> 0`` is up to the caller.
    """
    if apex_floor is None:
        apex_floor = gmpy2.sqrt(mpfr(2))  # half the Duffing apex 2 sqrt2
    for st in traj.steps:
        t = find_root_on_step(st, mode_index, "w")
        if t is None:
            continue
        v, w = st.value(t)
        if v[mode_index] <= apex_floor:
            continue
        return st.y0 + t, PhasePoint(OddSineSeries(v), OddSineSeries(w))
    raise SectionError("no symmetric-section crossing inside the integrated span")


@dataclass(frozen=True)
class SplittingSample:
    eps: object
    k: int
    section_y: object
    Gamma: dict
    Theta: dict
    s_eps: object
    energy_drift: object
    bits_used: int
    n_max: int = 0
    seconds: float = 0.0
    section_state: PhasePoint | None = field(default=None, compare=False)
    reversibility_error: object = None

    def prefactor(self, rate=None):
        """``eps e^{B/eps} s / (4 sqrt2)``; ``B`` defaults to ``pi sqrt(2k)``."""
        with PrecisionContext(self.bits_used).local():
            B = splitting_rate(self.k) if rate is None else to_mpfr(rate)
            e = to_mpfr(self.eps)
            return e * gmpy2.exp(B / e) * self.s_eps / (4 * gmpy2.sqrt(mpfr(2)))


def rescale_sample(sample: SplittingSample, k: int) -> SplittingSample:
    """Carry a ``k = 1`` sample at ``eps`` to the ``k`` problem at ``eps sqrt(k)``.

    The two problems share ``v`` and ``w`` in the section variable, so ``Gamma``
    and ``s_eps`` pick up the factor ``sqrt(k)`` from ``Gamma = i eps Xi`` and mode
    ``n`` becomes ``k n``.
    """
    if sample.k != 1:
        raise ValueError("only k = 1 samples can be rescaled")
    with PrecisionContext(sample.bits_used + 64).local():
        r = gmpy2.sqrt(mpfr(k))
        e = to_mpfr(sample.eps) * r
        return SplittingSample(
            eps=Fraction(*e.as_integer_ratio()) if not gmpy2.is_integer(r) else sample.eps * int(r),
            k=k, section_y=sample.section_y,
            Gamma={k * n: g * r for n, g in sample.Gamma.items()},
            Theta={k * n: t * r for n, t in sample.Theta.items()},
            s_eps=sample.s_eps * r, energy_drift=sample.energy_drift, bits_used=sample.bits_used,
            n_max=sample.n_max, seconds=sample.seconds, section_state=sample.section_state,
            reversibility_error=sample.reversibility_error)


def _tol_for(p: ModelParams):
    with p.context.local():
        return gmpy2.exp(-splitting_rate(p.k) / p.eps_mp()) * mpfr(10) ** -10


def auto_bits(k: int, eps, guard_bits: int = 64) -> int:
    with PrecisionContext(128).local():
        return required_bits(splitting_rate(k) / to_mpfr(eps), guard_bits)


def unstable_orbit(p: ModelParams, P: int = 40, delta=1, Y=None, tol=None, order=None):
    """Seed from the parameterisation and integrate through the apex.

    ``Y`` is the seed distance below the apex; by default it is the smallest
    distance at which the expansion tail is a thousandth of ``tol``.
    Returns ``(trajectory, expansion, y_seed)``.
    """
    tol = to_mpfr(tol if tol is not None else _tol_for(p))
    exp_ = expand_unstable_manifold(p, P, delta)
    apex = gmpy2.log(4 * gmpy2.sqrt(mpfr(2)) / exp_.delta)
    if Y is None:
        y_seed = exp_.seed_position(tol / 1000)
    else:
        y_seed = apex - to_mpfr(Y)
    seed = exp_.evaluate(y_seed)
    traj = integrate_orbit(p, seed, y_seed, apex + 1, tol, order)
    return traj, exp_, y_seed


def measure_splitting(p: ModelParams, P: int = 40, delta=1, Y=None, tol=None, cross_check: bool = False,
                      enforce_budget: bool = True) -> SplittingSample:
    """Splitting diagnostics ``Gamma_n(0)`` at the symmetric section."""
    t0 = time.perf_counter()
    with p.context.local():
        if enforce_budget:
            need = auto_bits(p.k, p.eps)
            if p.bits < need:
                raise PrecisionError(f"{p.bits} bits below the budget of {need} for eps = {p.eps}")
        tol = to_mpfr(tol if tol is not None else _tol_for(p))
        traj, exp_, y_seed = unstable_orbit(p, P, delta, Y, tol)
        y_star, sec = find_symmetric_section(traj)
        e = p.eps_mp()
        gamma, theta = {}, {}
        for n, wn in zip(p.physical_modes(), sec.w.coeffs):
            if n == p.k:
                g = mpc(0)
            else:
                xi = 2 * wn
                g = mpc(0, 1) * e * xi  # Delta_n(0) = 0 by reversibility
                del xi
            gamma[n] = g
            theta[n] = -g
        s = abs(gamma.get(3 * p.k, mpc(0)))
        seed_state = traj.start_state
        drift = abs(hamiltonian(p, seed_state) - hamiltonian(p, sec))
        rev_err = None
        if cross_check:
            rev_err = _reversibility_error(p, traj, y_star, tol)
        if s > 0 and drift > s / 100:
            raise PrecisionError(f"energy drift {float(drift):.3g} exceeds 1% of the splitting {float(s):.3g}")
        return SplittingSample(eps=p.eps, k=p.k, section_y=y_star, Gamma=gamma, Theta=theta, s_eps=s,
                               energy_drift=drift, bits_used=p.bits, n_max=p.n_max,
                               seconds=time.perf_counter() - t0, section_state=sec,
                               reversibility_error=rev_err)


def reflect(state: PhasePoint) -> PhasePoint:
    return PhasePoint(state.v, -state.w)


def _reversibility_error(p: ModelParams, traj: Trajectory, y_star, tol, samples: int = 7):
    """Integrate the stable orbit backward from the mirrored seed and compare."""
    y_seed = traj.start
    seed_s = reflect(traj.start_state)
    ys = 2 * y_star - y_seed  # mirror of the seed abscissa about the section
    back = integrate_orbit(p, seed_s, ys, y_star - 1, tol)
    worst = mpfr(0)
    for i in range(samples):
        d = (y_star - y_seed) * i / (samples - 1) / 2
        yu = y_star - d
        us = traj.state_at(yu)
        ss = back.state_at(2 * y_star - yu)
        worst = max(worst, l1_norm(us.v - ss.v), l1_norm(us.w + ss.w))
    return worst


def section_trajectory(p: ModelParams, P: int = 40, tol=None, Y=None):
    """Unstable orbit re-timed so that the section sits at ``y = 0``."""
    with p.context.local():
        traj, _, _ = unstable_orbit(p, P, Y=Y, tol=tol)
        y_star, _ = find_symmetric_section(traj)
        for st in traj.steps:
            st.y0 = st.y0 - y_star
        traj.start = traj.start - y_star
        return traj


def check_outer_estimate(p: ModelParams, traj: Trajectory | None = None, y_min=-3, samples: int = 31):
    """``sup_y ||v(y) - v^h(y) sin k tau||_1 / (eps^2 v^h(y))`` over ``[y_min, 0]``."""
    if p.eps == 0:
        return {"sup_ratio": None, "samples": []}
    with p.context.local():
        if traj is None:
            traj = section_trajectory(p, Y=1 - to_mpfr(y_min))
        e2 = p.eps_mp() ** 2
        rows = []
        for i in range(samples):
            y = to_mpfr(y_min) * (samples - 1 - i) / (samples - 1)
            st = traj.state_at(y)
            vh, _ = duffing_homoclinic(y)
            diff = st.v.coeffs.copy()
            diff[0] = diff[0] - vh
            r = l1_norm(OddSineSeries(diff)) / (e2 * vh)
            rows.append((float(y), float(r)))
        return {"sup_ratio": max(r for _, r in rows), "samples": rows}


# -- scans -------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    rate: float | None
    intercept: float | None
    prefactors: list
    prefactors_fitted: list
    samples: list


def fit_exponential_law(eps: Sequence, s: Sequence, bits: int = 256):
    """Least squares for ``log s + log eps = A - B / eps``; returns ``(B, A)``."""
    if len(eps) < 2:
        return None, None
    with PrecisionContext(bits).local():
        xs = [1 / to_mpfr(e) for e in eps]
        ys = [gmpy2.log(to_mpfr(si)) + gmpy2.log(to_mpfr(e)) for e, si in zip(eps, s)]
        n = len(xs)
        mx = sum(xs) / n
        my = sum(ys) / n
        sxx = sum((x - mx) ** 2 for x in xs)
        sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
        slope = sxy / sxx
        return -slope, my - slope * mx


def _measure_task(args):
    cfg, P = args
    p = ModelParams.from_config(cfg)
    return measure_splitting(p, P=P)


def scan_and_fit(template: ModelParams, eps_grid: Sequence, P: int = 40, bits="auto", jobs: int = 1,
                 guard_bits: int = 64) -> FitResult:
    """Measure ``s_eps`` over ``eps_grid`` and fit the exponential law."""
    params = []
    for e in eps_grid:
        e = Fraction(str(e)) if not isinstance(e, Fraction) else e
        b = auto_bits(template.k, e, guard_bits) if bits == "auto" else int(bits)
        params.append(template.with_(eps=e, bits=b))
    tasks = [(q.to_config(), P) for q in params]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            samples = list(ex.map(_measure_task, tasks))
    else:
        samples = [_measure_task(t) for t in tasks]
    eps = [s.eps for s in samples]
    svals = [s.s_eps for s in samples]
    B, A = fit_exponential_law(eps, svals)
    pref = [s.prefactor() for s in samples]
    pref_fit = [s.prefactor(B) for s in samples] if B is not None else []
    return FitResult(None if B is None else float(B), None if A is None else float(A),
                     pref, pref_fit, samples)


CSV_HEADER = ["eps", "k", "s_eps", "rate_fit_running", "prefactor_est", "energy_drift", "bits", "n_max",
              "seconds"]


def scan_csv(result: FitResult) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_HEADER)
    for i, s in enumerate(result.samples):
        B, _ = fit_exponential_law([t.eps for t in result.samples[:i + 1]],
                                   [t.s_eps for t in result.samples[:i + 1]])
        wr.writerow([_dec(s.eps), s.k, decimal_string(s.s_eps), "" if B is None else decimal_string(B, 20),
                     decimal_string(result.prefactors[i]), decimal_string(s.energy_drift), s.bits_used,
                     s.n_max, f"{s.seconds:.3f}"])
    return buf.getvalue()


def _dec(q):
    from kgsplit.model import _decimal
    return _decimal(q)
