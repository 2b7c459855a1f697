from fractions import Fraction

import gmpy2
import mpmath
import numpy as np
import pytest
from gmpy2 import mpc, mpfr
from hypothesis import given, strategies as st

from kgsplit.fourier import OddPowerSeries, OddSineSeries, PhasePoint, compose_odd
from kgsplit.model import duffing_homoclinic
from kgsplit.precision import PrecisionContext
from kgsplit.taylor import (GridNonlinearity, SecondOrderSystem, StiffnessError, TaylorStep,
                            default_order, find_root_on_step, integrate, taylor_coefficients)

DUFFING = SecondOrderSystem(np.array([mpfr(1)], dtype=object), OddPowerSeries({3: Fraction(1, 3)}), 1, 1, 1)


def pt(v, w):
    return PhasePoint(OddSineSeries(np.array([v], dtype=object)), OddSineSeries(np.array([w], dtype=object)))


@given(st.lists(st.lists(st.fractions(min_value=-1, max_value=1, max_denominator=16), min_size=3, max_size=3),
                min_size=2, max_size=5))
def test_grid_kernel_matches_composition_of_polynomial(rows):
    # the order-p output equals the t^p coefficient of compose_odd(g, sum_q V_q t^q),
    # extracted here by evaluating at several t and solving the Vandermonde system
    g = OddPowerSeries({3: Fraction(1, 3), 5: Fraction(-1, 7)})
    with PrecisionContext(200).local():
        V = [np.array([mpfr(x.numerator) / x.denominator for x in r], dtype=object) for r in rows]
        kern = GridNonlinearity(g, 5, scale=mpfr("0.5"), out_scale=3)
        outs = [kern.coefficient(p, V[p]) for p in range(len(V))]
        P = len(V)
        deg = 5 * (P - 1)
        ts = [mpfr(i + 1) / (deg + 1) for i in range(deg + 1)]
        samples = []
        for t in ts:
            v = sum((V[q] * t ** q for q in range(P)), V[0] * 0)
            samples.append(compose_odd(g, OddSineSeries(v), mpfr("0.5")).coeffs * 3)
        mp = mpmath.MPContext()
        mp.prec = 200
        A = mp.matrix([[mp.mpf(str(t)) ** j for j in range(deg + 1)] for t in ts])
        for m in range(3):
            b = mp.matrix([mp.mpf(str(s[m])) for s in samples])
            c = mp.lu_solve(A, b)
            for p in range(P):
                assert abs(float(c[p]) - float(outs[p][m])) < 1e-25


def test_overwrite_order():
    g = OddPowerSeries({3: 1})
    with PrecisionContext(128).local():
        kern = GridNonlinearity(g, 3)
        kern.coefficient(0, np.array([mpfr(1), mpfr(0)], dtype=object))
        first = kern.coefficient(1, np.array([mpfr(5), mpfr(0)], dtype=object))
        again = kern.coefficient(1, np.array([mpfr(1), mpfr(0)], dtype=object))
        assert first[0] != again[0]
        # d/dt (sin^3-part) at order 1: 3 u0^2 u1 projected -> 3 * 3/4
        assert abs(again[0] - mpfr(9) / 4) < mpfr(2) ** -120


def test_default_order_bounds():
    with PrecisionContext(128).local():
        assert default_order(mpfr("1e-3")) == 16
        assert default_order(mpfr(10) ** -300) == 80
        assert default_order(mpfr(10) ** -40) == int(np.ceil(40 * np.log(10) / 2)) + 4


def test_equilibrium_stays_put():
    with PrecisionContext(128).local():
        tr = integrate(DUFFING, pt(mpfr(0), mpfr(0)), mpfr(0), mpfr(5), mpfr(10) ** -30)
        s = tr.final_state()
        assert s.v.coeffs[0] == 0 and s.w.coeffs[0] == 0


def test_duffing_homoclinic_reproduced():
    with PrecisionContext(192).local():
        tol = mpfr(10) ** -40
        y0 = mpfr(-8)
        v0, w0 = duffing_homoclinic(y0)
        tr = integrate(DUFFING, pt(v0, w0), y0, mpfr(3), tol)
        worst = mpfr(0)
        for i in range(23):
            y = y0 + mpfr(i) / 2
            v_ref, w_ref = duffing_homoclinic(y)
            st_ = tr.state_at(y)
            worst = max(worst, abs(st_.v.coeffs[0] - v_ref), abs(st_.w.coeffs[0] - w_ref))
        assert worst <= 10 * tol * 11


def test_forward_backward():
    with PrecisionContext(192).local():
        tol = mpfr(10) ** -35
        start = pt(mpfr("0.3"), mpfr("0.2"))
        fwd = integrate(DUFFING, start, mpfr(0), mpfr(2), tol)
        back = integrate(DUFFING, fwd.final_state(), mpfr(2), mpfr(0), tol)
        end = back.final_state()
        assert abs(end.v.coeffs[0] - start.v.coeffs[0]) <= 10 * tol
        assert abs(end.w.coeffs[0] - start.w.coeffs[0]) <= 10 * tol


def test_complex_segment_linear_oscillator():
    # v'' = -9 v along a complex segment: exact solution cos(3 z)
    sysm = SecondOrderSystem(np.array([mpfr(-9)], dtype=object), OddPowerSeries({}), 1, 1, 1)
    with PrecisionContext(160).local():
        tol = mpfr(10) ** -30
        z1 = mpc(2, -1)
        tr = integrate(sysm, pt(mpc(1), mpc(0)), mpc(0), z1, tol)
        v = tr.final_state().v.coeffs[0]
        assert abs(v - gmpy2.cos(3 * z1)) <= 100 * tol * abs(gmpy2.cos(3 * z1))


def test_forcing_callback():
    # v'' = -v + 1 from rest: v = 1 - cos y
    sysm = SecondOrderSystem(np.array([mpfr(-1)], dtype=object), OddPowerSeries({}), 1, 1, 1)
    one = np.array([mpfr(1)], dtype=object)
    zero = np.array([mpfr(0)], dtype=object)

    def forcing_at(y):
        return lambda p: one if p == 0 else zero

    with PrecisionContext(160).local():
        tol = mpfr(10) ** -30
        tr = integrate(sysm, pt(mpfr(0), mpfr(0)), mpfr(0), mpfr(3), tol, forcing_at=forcing_at)
        assert abs(tr.final_state().v.coeffs[0] - (1 - gmpy2.cos(mpfr(3)))) <= 10 * tol


def test_taylor_coefficients_of_exponential():
    sysm = SecondOrderSystem(np.array([mpfr(1)], dtype=object), OddPowerSeries({}), 1, 1, 1)
    with PrecisionContext(128).local():
        V = taylor_coefficients(sysm, [mpfr(1)], [mpfr(1)], 10)
        for p, c in enumerate(V):
            assert abs(c[0] - mpfr(1) / gmpy2.fac(p)) < mpfr(2) ** -120


def test_stiffness_error():
    with PrecisionContext(128).local():
        with pytest.raises(StiffnessError):
            integrate(DUFFING, pt(mpfr(0), mpfr(1)), mpfr(0), mpfr(100), mpfr(10) ** -20, max_steps=3)


def test_root_on_step():
    # w = cos t crosses zero at pi/2
    with PrecisionContext(128).local():
        coeffs = [np.array([mpfr((-1) ** (p // 2)) / gmpy2.fac(p) if p % 2 else mpfr(0)], dtype=object)
                  for p in range(40)]
        step = TaylorStep(mpfr(0), mpfr(2), coeffs)
        root = find_root_on_step(step, 0, which="w")
        assert abs(root - gmpy2.const_pi() / 2) < mpfr(2) ** -100
        assert find_root_on_step(TaylorStep(mpfr(0), mpfr(1), coeffs), 0, which="w") is None
