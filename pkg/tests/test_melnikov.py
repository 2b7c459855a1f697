import math
from fractions import Fraction

import gmpy2
import mpmath
import pytest
from gmpy2 import mpfr
from hypothesis import given, strategies as st

from kgsplit.fourier import OddPowerSeries
from kgsplit.inner import extract_stokes, family_f
from kgsplit.melnikov import (DeltaSeries, RangeError, c_in_prime, delta_of_f, inner_breather,
                              make_delta, melnikov_quadrature, s_of_delta, stokes_derivative,
                              theta_taylor, xi_homogeneous)
from kgsplit.precision import PrecisionContext

F0 = OddPowerSeries({})


def mp_ctx(dps=40):
    m = mpmath.MPContext()
    m.dps = dps
    return m


# -- Delta and its Taylor data -----------------------------------------------------

def test_delta_of_cubic():
    d = delta_of_f(F0, 5)
    assert d.coeff(1) == 0 and d.coeff(3) == 0
    assert d.coeff(5) == Fraction(-1, 30)
    assert d.coeff(7) == Fraction(1, 630)


def test_delta_against_mpmath_taylor():
    m = mp_ctx()
    ref = m.taylor(lambda u: -m.sin(m.sqrt(2) * u) / m.sqrt(2) + u - u ** 3 / 3, 0, 13)
    d = delta_of_f(F0, 6)
    for deg in range(14):
        assert abs(float(Fraction(d.coeff(deg))) - float(ref[deg])) < 1e-25


def test_delta_subtracts_f():
    d = delta_of_f(OddPowerSeries({5: 1}), 4)
    assert d.coeff(5) == Fraction(-1, 30) - 1
    with pytest.raises(ValueError):
        delta_of_f(F0, 1)


def test_theta_of_zero():
    ds = theta_taylor(OddPowerSeries({}), 9)
    assert all(c == 0 for c in ds.coeffs)


def test_theta_of_quintic():
    with PrecisionContext(128).local():
        ds = theta_taylor(OddPowerSeries({5: 1}), 9)
        assert all(ds[p] == 0 for p in range(5))
        assert abs(ds[5] - 128 * gmpy2.sqrt(mpfr(2))) < mpfr(2) ** -110


def test_theta_against_mpmath_taylor():
    m = mp_ctx()
    f = OddPowerSeries({5: Fraction(3, 10), 9: Fraction(-1, 10)})
    delta = make_delta(f, m)
    ref = m.taylor(lambda z: delta(2 * m.sqrt(2) * m.atan(z)) / (1 + z * z), 0, 15)
    with PrecisionContext(160).local():
        ds = theta_taylor(delta_of_f(f, 8), 15)
        for p in range(1, 16):
            assert abs(float(ds[p]) - float(ref[p])) < 1e-20 * max(1, abs(float(ref[p])))
            if p % 2 == 0:
                assert ds[p] == 0


def test_delta_series_range():
    ds = DeltaSeries((mpfr(0), mpfr(1)))
    assert ds[0] == 0 and ds[-3] == 0 and ds[1] == 1
    with pytest.raises(RangeError):
        ds[2]


# -- S(Delta) ----------------------------------------------------------------------

def _s_exact(delta: dict, Q: int) -> Fraction:
    """Exact-rational evaluation of the S series from Delta_p values."""
    def gam(p):
        return Fraction(0) if p <= 0 else (-1) ** (p // 2) * delta.get(p, Fraction(0)) / (p + 1) ** 2

    def b(p):
        return p * (gam(p) - gam(p - 2))

    return sum(Fraction((-2) ** q, math.factorial(q) * math.factorial(3 + q)) * (b(5 + 2 * q) - b(3 + 2 * q))
               for q in range(Q + 1))


def test_s_of_zero():
    s, tail = s_of_delta(DeltaSeries(tuple(mpfr(0) for _ in range(12))), 3)
    assert s == 0 and tail == 0


def test_s_single_delta3():
    ds = DeltaSeries((mpfr(0),) * 3 + (mpfr(6),) + (mpfr(0),) * 4)
    s, _ = s_of_delta(ds, 0)
    assert s == mpfr(6) / 12


@given(st.dictionaries(st.sampled_from([3, 5, 7, 9, 11, 13]),
                       st.fractions(min_value=-5, max_value=5, max_denominator=16), max_size=4),
       st.integers(min_value=0, max_value=4))
def test_s_matches_exact_rationals(delta, Q):
    with PrecisionContext(160).local():
        vals = [mpfr(0)] * 14
        for p, v in delta.items():
            vals[p] = mpfr(v.numerator) / v.denominator
        s, _ = s_of_delta(DeltaSeries(tuple(vals)), Q)
        ref = _s_exact(delta, Q)
        assert abs(s - mpfr(ref.numerator) / ref.denominator) < mpfr(2) ** -140


def test_s_needs_enough_taylor_data():
    with pytest.raises(RangeError):
        s_of_delta(DeltaSeries((mpfr(0),) * 8), 3)


@pytest.mark.parametrize("f", [F0, OddPowerSeries({5: 1})])
def test_s_converges_in_q(f):
    with PrecisionContext(192).local():
        a = c_in_prime(f, Q=20)
        b = c_in_prime(f, Q=30)
        assert abs(a - b) <= abs(b) * mpfr(10) ** -15


def test_c_in_prime_imaginary_and_sign():
    with PrecisionContext(192).local():
        c = c_in_prime(F0)
        assert c.real == 0
        assert float(c.imag) == pytest.approx(-2.457389336644343, rel=1e-14)
        assert stokes_derivative(F0) == -c


def test_c_in_prime_linear_in_f():
    with PrecisionContext(192).local():
        base = c_in_prime(F0)
        one = c_in_prime(OddPowerSeries({7: 1})) - base
        half = c_in_prime(OddPowerSeries({7: Fraction(1, 2)})) - base
        assert abs(half - one / 2) <= abs(one) * mpfr(10) ** -30


def test_genericity_of_quintic():
    with PrecisionContext(192).local():
        ds = theta_taylor(delta_of_f(OddPowerSeries({5: 1}), 34), 67)
        s, tail = s_of_delta(ds, 30)
        assert abs(s) > 1e6 * tail


# -- closed-form inner objects -----------------------------------------------------

def test_breather_basics():
    m = mp_ctx()
    assert inner_breather(m.mpc(0, -3), 0, m) == 0
    z = m.mpc(1e6, -2)
    ref = -2 * m.sqrt(2) * 1j * m.sin(0.7) / z
    assert abs(inner_breather(z, 0.7, m) / ref - 1) < 1e-5
    with pytest.raises(ValueError):
        inner_breather(0.5, m.pi / 2, m)


@pytest.mark.parametrize("z,tau", [(0.3 - 2.1j, 0.4), (-1.7 - 3.0j, 2.2)])
def test_breather_solves_sine_gordon(z, tau):
    m = mp_ctx(30)
    z = m.mpc(z)
    phi = lambda zz, tt: inner_breather(zz, tt, m)
    zz = m.diff(lambda x: phi(x, tau), z, 2)
    tt = m.diff(lambda t: phi(z, t), tau, 2)
    res = zz - tt - m.sin(m.sqrt(2) * phi(z, tau)) / m.sqrt(2)
    assert abs(res) < 1e-15


@pytest.mark.parametrize("sign", [1, -1])
def test_xi_solves_linearisation(sign):
    m = mp_ctx(30)
    z, tau = m.mpc(0.8, -2.5), 1.1
    xi = lambda zz, tt: xi_homogeneous(3, sign, zz, tt, m)
    zz = m.diff(lambda x: xi(x, tau), z, 2)
    tt = m.diff(lambda t: xi(z, t), tau, 2)
    res = zz - tt - m.cos(m.sqrt(2) * inner_breather(z, tau, m)) * xi(z, tau)
    assert abs(res) < 1e-15 * max(1, abs(xi(z, tau)))


def test_xi_asymptotics():
    m = mp_ctx()
    z = m.mpc(1e5, -1)
    mu = m.sqrt(8)
    got = xi_homogeneous(3, 1, z, 0.5, m) / (m.exp(1j * mu * z) * m.sin(1.5))
    assert abs(got - 1) < 1e-4
    with pytest.raises(ValueError):
        xi_homogeneous(1, 1, z, 0.5, m)


def test_quadrature_arguments():
    with pytest.raises(ValueError):
        melnikov_quadrature(F0, r=1)
    with pytest.raises(ValueError):
        melnikov_quadrature(F0, A=1)


# -- double integral against the series (slow) -------------------------------------

@pytest.mark.slow
@pytest.mark.parametrize("f,r,points", [({}, 3, 16), ({}, 4.5, 16), ({7: 1}, 3, 16),
                                        ({5: Fraction(3, 10), 9: Fraction(-1, 10)}, 3, 24)])
def test_quadrature_matches_series(f, r, points):
    # a degree-9 term raises the tau harmonics; 16 points leave a 2e-3 aliasing error there
    f = OddPowerSeries(f)
    with PrecisionContext(192).local():
        ref = complex(c_in_prime(f))
    q = melnikov_quadrature(f, r=r, tau_points=points)
    assert abs(q.value - ref) / abs(ref) < 1e-4
    assert q.tail_bound < 1e-20


@pytest.mark.slow
def test_family_first_order_small_mu():
    mu = Fraction(1, 50)
    est = extract_stokes(family_f(mu), R=20, r0=12)
    with PrecisionContext(192).local():
        pred = complex(stokes_derivative(F0)) * float(mu)
    assert abs(complex(est.value) - pred) / abs(pred) < 0.15
