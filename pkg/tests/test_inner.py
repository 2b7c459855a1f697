import math
from fractions import Fraction

import gmpy2
import mpmath
import numpy as np
import pytest
from gmpy2 import mpc, mpfr
from hypothesis import given, strategies as st

from kgsplit.fourier import OddPowerSeries, OddSineSeries, PhasePoint, compose_odd, l1_norm
from kgsplit.inner import (BudgetError, Contour, SeedError, extract_stokes, formal_inner_series,
                           inner_nonlinearity, inner_vector_field, integrate_inner, leading_coefficient,
                           seed_from_series, stokes_at, stokes_conjecture_sum, term_sizes,
                           toy_gamma_series, toy_splitting_closed_form, toy_splitting_numeric)
from kgsplit.model import mu_n
from kgsplit.precision import PrecisionContext, required_bits

F0 = OddPowerSeries({})
MU3 = 2 * math.sqrt(2)


@pytest.fixture(scope="module")
def series():
    with PrecisionContext(256).local():
        return formal_inner_series(F0, 11, 121)


def mode_state(n_max, vals, dvals=None):
    return PhasePoint(OddSineSeries.from_modes(n_max, vals), OddSineSeries.from_modes(n_max, dvals or {}))


# -- vector field ------------------------------------------------------------------

def test_vector_field_zero():
    with PrecisionContext(128).local():
        out = inner_vector_field(mode_state(5, {1: mpc(0)}), F0)
        assert l1_norm(out.w) == 0


def test_leading_term_cube_against_quadrature():
    z = mpc(3, -2)
    with PrecisionContext(160).local():
        c = leading_coefficient() / z
        out = compose_odd(inner_nonlinearity(F0), OddSineSeries.from_modes(5, {1: c}))
        mp = mpmath.MPContext()
        mp.dps = 45
        cc = mp.mpc(str(c.real), str(c.imag))
        ref = mp.quad(lambda t: (cc * mp.sin(t)) ** 3 / 3 * mp.sin(3 * t), [0, 2 * mp.pi]) / mp.pi
        assert abs(complex(out[3]) - complex(ref)) < 1e-30
        # the same number is -beta_{3,3} / z^3
        s = formal_inner_series(F0, 5, 7)
        assert abs(out[3] + s.beta[3][3] / z ** 3) < mpfr(2) ** -150


def test_beta_33_closed_form(series):
    # beta_{3,3} = -Pi_3[(1/3)(-2 sqrt2 i)^3 sin^3] = 4 sqrt2 i / 3
    with PrecisionContext(256).local():
        assert abs(series.beta[3][3] - mpc(0, 4) * gmpy2.sqrt(mpfr(2)) / 3) < mpfr(2) ** -240


# -- formal series -----------------------------------------------------------------

def test_series_needs_order_five():
    with pytest.raises(ValueError):
        formal_inner_series(F0, 5, 3)


def test_series_only_odd_powers(series):
    for n in series.b:
        for j in range(0, series.jmax + 1, 2):
            assert series.b[n][j] == 0


def _series_residual(s, z, J):
    arrs = s.mode_arrays()
    v = sum((arrs[j] / z ** j for j in range(1, J + 1)), arrs[0] * 0)
    acc = sum((arrs[j] * j * (j + 1) / z ** (j + 2) for j in range(1, J + 1)), arrs[0] * 0)
    lin = np.array([mpfr(1 - n * n) for n in modes_of(s)], dtype=object)
    rhs = lin * v - compose_odd(inner_nonlinearity(F0), OddSineSeries(v)).coeffs
    return max(abs(a - b) for a, b in zip(acc, rhs))


def modes_of(s):
    return range(1, s.n_max + 1, 2)


def test_formal_series_residual():
    # the truncated series solves the equation up to O(z^-(J+2))
    with PrecisionContext(200).local():
        s = formal_inner_series(F0, 7, 31)
        near = _series_residual(s, mpc(5, -40), 29)
        far = _series_residual(s, mpc(10, -80), 29)
        assert near < mpfr(10) ** -25
        assert far / near < mpfr(2) ** -28


@given(st.fractions(min_value=Fraction(-3), max_value=Fraction(3), max_denominator=8))
def test_linear_in_f_at_lowest_order(a):
    with PrecisionContext(128).local():
        base = formal_inner_series(F0, 5, 7).beta[3][5]
        one = formal_inner_series(OddPowerSeries({5: 1}), 5, 7).beta[3][5] - base
        got = formal_inner_series(OddPowerSeries({5: a}), 5, 7).beta[3][5] - base
        assert abs(got - one * (mpfr(a.numerator) / a.denominator)) < mpfr(2) ** -110


def test_gevrey_monitor(series):
    ratios = series.gevrey_ratios()
    assert ratios[-1] == pytest.approx(1 / MU3 ** 2, rel=1e-3)


# -- seeds -------------------------------------------------------------------------

def test_seed_far_away_is_leading_term(series):
    with PrecisionContext(256).local():
        z0 = mpc(0, -10 ** 6)
        sd = seed_from_series(series, z0, j_trunc=5)
        lead = leading_coefficient() / z0
        assert abs(sd.state.v[1] / lead - 1) < mpfr("1e-10")


def test_optimal_truncation_signature(series):
    with PrecisionContext(256).local():
        sizes = [float(x) for x in term_sizes(series, mpc(0, -25))]
        odd = sizes[3::2]
        k = int(np.argmin(odd))
        assert 0 < k < len(odd) - 1
        assert odd[0] > odd[k] < odd[-1]
        assert abs(2 * k + 3 - MU3 * 25) < 6


@pytest.mark.parametrize("r", [20, 25, 30])
def test_optimal_truncation_error(series, r):
    with PrecisionContext(256).local():
        sd = seed_from_series(series, mpc(0, -r))
        assert float(sd.error_estimate) <= math.exp(-0.9 * MU3 * r)


def test_seed_budget_error(series):
    with PrecisionContext(256).local():
        with pytest.raises(SeedError):
            seed_from_series(series, mpc(0, -20), budget=mpfr(10) ** -40)


def test_seed_consistency_after_propagation(series):
    with PrecisionContext(256).local():
        tol = mpfr(10) ** -34
        end = mpc(-20, -20)
        a = seed_from_series(series, mpc(-25, -20))
        b = seed_from_series(series, mpc(-30, -20))
        sa = integrate_inner(F0, Contour.horizontal(a.z0, end), a.state, tol)
        sb = integrate_inner(F0, Contour.horizontal(b.z0, end), b.state, tol)
        budget = 10 * (a.error_estimate + b.error_estimate) + 10 * tol * 10
        assert l1_norm(sa.v - sb.v) <= budget


# -- contour integration -----------------------------------------------------------

def test_contour_validation():
    with pytest.raises(ValueError):
        Contour((mpc(1),))
    with pytest.raises(ValueError):
        Contour((mpc(1), mpc(1)))


def test_zero_field_stays_zero():
    with PrecisionContext(128).local():
        out = integrate_inner(F0, Contour.horizontal(mpc(-5, -3), mpc(0, -3)), mode_state(5, {1: mpc(0)}),
                              mpfr(10) ** -20)
        assert l1_norm(out.v) == 0


def test_linear_mode_three_oscillation():
    # tiny mode-3 data: phi_3 = a e^{i mu_3 z} to far below tol
    with PrecisionContext(192).local():
        mu3 = mu_n(3)
        a = mpfr(10) ** -30
        z0, z1 = mpc(-6, -2), mpc(0, -2)
        st0 = mode_state(5, {3: a * gmpy2.exp(mpc(0, 1) * mu3 * z0)},
                         {3: mpc(0, 1) * mu3 * a * gmpy2.exp(mpc(0, 1) * mu3 * z0)})
        out = integrate_inner(F0, Contour.horizontal(z0, z1), st0, mpfr(10) ** -50)
        ref = a * gmpy2.exp(mpc(0, 1) * mu3 * z1)
        assert abs(out.v[3] - ref) <= abs(ref) * mpfr(10) ** -18


def test_homotopic_contours_agree(series):
    with PrecisionContext(256).local():
        tol = mpfr(10) ** -34
        sd = seed_from_series(series, mpc(-30, -20))
        # raising Im z amplifies errors in mode n by e^{mu_n dy}; keep dy small
        end = mpc(-5, -19.5)
        direct = integrate_inner(F0, Contour((sd.z0, end)), sd.state, tol)
        bent = integrate_inner(F0, Contour((sd.z0, mpc(-5, -20), end)), sd.state, tol)
        assert l1_norm(direct.v - bent.v) <= tol * math.exp(mu_n(11) * 0.5) * 100


# -- Stokes extraction -------------------------------------------------------------

@pytest.fixture(scope="module")
def cubic_estimate():
    return extract_stokes(F0, R=20, r0=12)


def test_extract_cubic_trusted(cubic_estimate):
    est = cubic_estimate
    assert est.trusted
    assert est.bits == required_bits(2 * math.sqrt(2) * 18, 64)
    (_, _, ca), (_, _, cb) = est.raw
    assert abs(ca - cb) / abs(cb) < 0.1
    assert abs(est.value.real) < 1e-20 and float(est.value.imag) > 3


def test_extract_r_drift_bounded(cubic_estimate):
    # doubling r changes the scaled difference by at most 2/r
    (_, _, c12), _ = cubic_estimate.raw
    with PrecisionContext(required_bits(2 * math.sqrt(2) * 24, 64)).local():
        tol = gmpy2.exp(-mu_n(3) * 24) * mpfr(10) ** -8
        ser = formal_inner_series(F0, 11, int(MU3 * math.hypot(24, 32)) + 24)
        c24, _, _ = stokes_at(F0, 24, 32, 11, ser, tol)
    assert abs(c24 - c12) / abs(c24) <= 2 / 12


def test_extract_preconditions():
    with pytest.raises(BudgetError):
        extract_stokes(F0, R=20, r0=12, bits=80)
    with pytest.raises(ValueError):
        extract_stokes(F0, R=13, r0=12)


def test_conjecture_partial_sums_reported(cubic_estimate):
    sums = cubic_estimate.partial_sums
    assert len(sums) > 20
    incs = [abs(b - a) for a, b in zip(sums, sums[1:]) if b != a]
    assert incs[-1] < incs[0]


# -- toy model ---------------------------------------------------------------------

def test_gamma_series_examples():
    with PrecisionContext(128).local():
        mu2 = mu_n(3) ** 2
        g = toy_gamma_series({3: 1}, 9)
        assert abs(g[3] - 1 / mu2) < mpfr(2) ** -120
        g5 = toy_gamma_series({5: 1}, 9)
        assert abs(g5[5] - 1 / mu2) < mpfr(2) ** -120
        assert abs(g5[7] + 30 / mu2 ** 2) < mpfr(2) ** -120


def test_gamma_series_solves_ode():
    # substitute sum gamma_l z^-l into gamma'' + mu^2 gamma = sum a_l z^-l
    a = {3: Fraction(1), 4: Fraction(-2, 3), 6: Fraction(1, 5)}
    with PrecisionContext(160).local():
        mu2 = mu_n(3) ** 2
        g = toy_gamma_series(a, 30)
        for l in range(3, 31):
            lhs = mu2 * g[l] + ((l - 2) * (l - 1) * g[l - 2] if l >= 5 else 0)
            rhs = a.get(l, 0)
            assert abs(lhs - mpfr(rhs.numerator) / rhs.denominator if rhs else abs(lhs)) < mpfr(2) ** -100


def test_gamma_series_gevrey():
    with PrecisionContext(128).local():
        g = toy_gamma_series({l: Fraction(1, l * l) for l in range(3, 60)}, 59)
        ratios = [abs(g[l]) / gmpy2.fac(l) for l in range(3, 60)]
        assert max(ratios) < 1


def test_closed_form_examples():
    with PrecisionContext(256).local():
        val = toy_splitting_closed_form({3: 1}, 5)
        ref = gmpy2.const_pi() * gmpy2.sqrt(mpfr(2)) * gmpy2.exp(-10 * gmpy2.sqrt(mpfr(2)))
        assert abs(val - ref) < mpfr(2) ** -240
        assert toy_splitting_closed_form({}, 5) == 0
        v4 = toy_splitting_closed_form({4: 1}, 5)
        mu3 = mu_n(3)
        ref4 = -gmpy2.const_pi() * gmpy2.exp(-mu3 * 5) * mpc(0, -1) * mu3 ** 2 / 6
        assert abs(v4 - ref4) < mpfr(2) ** -240 and v4.real == 0


@pytest.mark.parametrize("a,kappa", [({3: 1}, 5), ({5: 1}, 6), ({3: 1, 4: Fraction(1, 2)}, 7),
                                     ({3: Fraction(-2, 3), 7: 2}, 10)])
def test_numeric_matches_closed_form(a, kappa):
    with PrecisionContext(256).local():
        num = toy_splitting_numeric(a, kappa)
        ref = toy_splitting_closed_form(a, kappa)
        assert abs(num - ref) / abs(ref) < mpfr("1e-6")


def test_numeric_zero_and_linear():
    with PrecisionContext(192).local():
        assert toy_splitting_numeric({}, 5) == 0
        one = toy_splitting_numeric({3: 1}, 5)
        two = toy_splitting_numeric({3: 2}, 5)
        assert abs(two - 2 * one) <= abs(one) * mpfr("1e-12")


def test_conjecture_sum_on_toy():
    a = {3: Fraction(1), 5: Fraction(1, 3)}
    with PrecisionContext(192).local():
        beta = [0] * 10
        for l, v in a.items():
            beta[l] = v
        out = stokes_conjecture_sum(beta, 9)
        closed = toy_splitting_closed_form(a, 0)
        assert abs(out["partial_sums"][-1] - closed) < mpfr(2) ** -180
        zero = stokes_conjecture_sum([0] * 10, 9)
        assert all(s == 0 for s in zero["partial_sums"])
