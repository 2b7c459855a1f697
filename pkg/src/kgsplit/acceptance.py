"""Acceptance checks shared by ``kgsplit verify`` and the test suite.

Each ``check_*`` function runs one criterion at the scale given by its
arguments and returns a :class:`Check`. The defaults are the full-scale
settings; :data:`REDUCED` holds the quicker variants used by the CLI.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field
from fractions import Fraction

import gmpy2
from gmpy2 import mpc, mpfr

from kgsplit.fourier import OddPowerSeries, l1_norm, parity_leakage
from kgsplit.inner import (extract_stokes, family_f, toy_splitting_closed_form,
                           toy_splitting_numeric)
from kgsplit.manifold import (_tol_for, auto_bits, check_outer_estimate, measure_splitting,
                              rescale_sample, scan_and_fit, section_trajectory)
from kgsplit.melnikov import c_in_prime, melnikov_quadrature, stokes_derivative
from kgsplit.model import (ModelParams, duffing_homoclinic, reduced_params, rescale_1_to_k,
                           rescale_k_to_1)
from kgsplit.precision import PrecisionContext


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    data: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{self.name} {'PASS' if self.passed else 'FAIL'} ({self.seconds:.1f}s) {self.detail}"


def _timed(fn):
    def run(*args, **kw):
        t0 = time.perf_counter()
        chk = fn(*args, **kw)
        chk.seconds = time.perf_counter() - t0
        return chk
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


@_timed
def check_a1(kappas=(5, 7, 10), bits: int = 256, rtol=1e-6) -> Check:
    """Toy model: numeric splitting against the closed form for ``a_3 = 1``."""
    gaps = {}
    with PrecisionContext(bits).local():
        for kappa in kappas:
            closed = toy_splitting_closed_form({3: 1}, kappa)
            num = toy_splitting_numeric({3: 1}, kappa)
            gaps[kappa] = float(abs(num - closed) / abs(closed))
    ok = all(g <= rtol for g in gaps.values())
    detail = ", ".join(f"kappa={k}: rel {g:.2e}" for k, g in gaps.items())
    return Check("A1", ok, detail, data={"relative_gaps": gaps})


@_timed
def check_a2(fs=((), ((5, 1),)), rs=(3, 6), tau_points: int = 32, rtol=1e-4) -> Check:
    """Series value of ``C_in'(0)`` against the double integral on two lines."""
    worst = 0.0
    spread = 0.0
    rows = []
    for fc in fs:
        f = OddPowerSeries(dict(fc))
        with PrecisionContext(192).local():
            series = complex(c_in_prime(f))
        vals = []
        for r in rs:
            q = melnikov_quadrature(f, r=r, tau_points=tau_points)
            rel = abs(q.value - series) / abs(series)
            worst = max(worst, rel)
            vals.append(q.value)
            rows.append((dict(fc), r, rel))
        spread = max(spread, max(abs(a - b) for a in vals for b in vals) / abs(series))
    ok = worst <= rtol and spread <= rtol
    detail = f"worst rel gap {worst:.2e}, r-spread {spread:.2e}"
    return Check("A2", ok, detail, data={"rows": rows, "worst": worst, "spread": spread})


@_timed
def check_a3(r0=12, R=20, rtol=0.10, sine_gordon: bool = True, n_max: int = 11) -> Check:
    """Two-radius stability for ``f = 0`` and a null result on the sine-Gordon family."""
    est = extract_stokes(OddPowerSeries({}), R=R, r0=r0, n_max=n_max)
    (_, _, ca), (_, _, cb) = est.raw
    rel = float(abs(ca - cb) / abs(cb))
    ok = rel <= rtol
    detail = f"f=0 C({r0})={complex(ca):.6g}, C({1.5 * r0:g})={complex(cb):.6g}, rel {rel:.3f}"
    data = {"f0": est}
    if sine_gordon:
        sg = extract_stokes(family_f(0), R=R, r0=r0, n_max=n_max)
        ok = ok and abs(sg.value) <= sg.error_bar
        detail += f"; mu=0 |C|={float(abs(sg.value)):.2e} bar {float(sg.error_bar):.2e}"
        data["mu0"] = sg
    return Check("A3", ok, detail, data=data)


def eps_grid(lo, hi, steps: int) -> list:
    lo, hi = Fraction(str(lo)), Fraction(str(hi))
    if steps == 1:
        return [lo]
    return [lo + (hi - lo) * i / (steps - 1) for i in range(steps)]


@_timed
def check_a4(eps_min="0.18", eps_max="0.40", steps: int = 6, n_max: int = 11, rtol=0.02) -> Check:
    """Exponent of the splitting law and the trend of the prefactor estimates."""
    grid = eps_grid(eps_min, eps_max, steps)
    res = scan_and_fit(ModelParams(k=1, n_max=n_max), grid)
    target = math.pi * math.sqrt(2)
    rate_gap = abs(res.rate - target) / target
    # order by decreasing eps; changes must shrink towards small eps
    pref = [float(x) for x in res.prefactors][::-1]
    changes = [abs(pref[i + 1] - pref[i]) / abs(pref[i]) for i in range(len(pref) - 1)]
    shrinking = all(changes[i + 1] < changes[i] for i in range(len(changes) - 1))
    ok = rate_gap <= rtol and shrinking
    detail = (f"B={res.rate:.5f} ({100 * rate_gap:.2f}% from pi*sqrt2), prefactor changes "
              + ", ".join(f"{100 * c:.2f}%" for c in changes))
    return Check("A4", ok, detail, data={"fit": res, "changes": changes})


@_timed
def check_a5(mu="0.05", r0=12, R=20, rtol=0.15) -> Check:
    """Stokes constant on the family against the first-order prediction."""
    mu = Fraction(str(mu))
    est = extract_stokes(family_f(mu), R=R, r0=r0)
    with PrecisionContext(192).local():
        pred = complex(stokes_derivative(OddPowerSeries({}))) * float(mu)
    val = complex(est.value)
    rel = abs(val - pred) / abs(pred)
    return Check("A5", rel <= rtol, f"C_in={val:.6g}, mu*C'(0)={pred:.6g}, rel {rel:.4f}",
                 data={"estimate": est, "prediction": pred})


def _duffing_residual(bits: int, samples: int = 100, seed: int = 7):
    rng = random.Random(seed)
    worst = mpfr(0)
    with PrecisionContext(bits).local():
        for _ in range(samples):
            y = mpc(rng.uniform(-4, 4), rng.uniform(-1.4, 1.4))
            v, w = duffing_homoclinic(y)
            t = gmpy2.tanh(y)
            dw = -(w * t + v * (1 - t * t))
            worst = max(worst, abs(dw - v + v ** 3 / 4) / max(1, abs(v)))
    return worst


@_timed
def check_a6(eps="0.25", eps_pair=("0.4", "0.2"), n_max: int = 11, factor=1.5) -> Check:
    """Energy, parity, reversibility, Duffing, rescaling and outer-estimate invariants."""
    e = Fraction(eps)
    p = ModelParams(k=1, eps=e, n_max=n_max, bits=auto_bits(1, e))
    out = {}
    with p.context.local():
        tol = _tol_for(p)
        smp = measure_splitting(p, cross_check=True)
        out["energy"] = smp.energy_drift <= 10 * tol
        leak = parity_leakage(p.nonlinearity(), smp.section_state.v, p.amplitude_scale())
        out["parity"] = leak <= mpfr(2) ** (-p.bits // 2)
        out["reversibility"] = smp.reversibility_error <= 10 * tol
    duff = _duffing_residual(p.bits)
    out["duffing"] = duff <= mpfr(2) ** (-p.bits + 8)
    pk = ModelParams(k=2, eps=e, n_max=n_max, bits=p.bits)
    with pk.context.local():
        traj = section_trajectory(reduced_params(pk))
        pts = traj.sample([mpfr(-1) + mpfr(i) / 4 for i in range(5)])
        back = rescale_1_to_k(pk, rescale_k_to_1(pk, pts))
        trip = max(max(abs(y0 - y1), l1_norm(s0.v - s1.v), l1_norm(s0.w - s1.w))
                   for (y0, s0), (y1, s1) in zip(pts, back))
        out["rescaling"] = trip <= mpfr(2) ** (-pk.bits + 64)
    ratios = []
    for ee in eps_pair:
        q = ModelParams(k=1, eps=Fraction(ee), n_max=n_max, bits=auto_bits(1, Fraction(ee)))
        ratios.append(check_outer_estimate(q)["sup_ratio"])
    out["outer"] = 1 / factor <= ratios[0] / ratios[1] <= factor
    ok = all(out.values())
    detail = (f"drift {float(smp.energy_drift):.1e}/tol {float(tol):.1e}, leak {float(leak):.1e}, "
              f"rev {float(smp.reversibility_error):.1e}, duffing {float(duff):.1e}, trip {float(trip):.1e}, "
              f"outer ratios {ratios[0]:.4f}/{ratios[1]:.4f}; "
              + " ".join(f"{k}={'ok' if v else 'BAD'}" for k, v in out.items()))
    return Check("A6", ok, detail, data=out)


@_timed
def check_a7(eps="0.4", k: int = 2, n_max: int = 11) -> Check:
    """Direct ``k`` sample against the rescaled ``k = 1`` sample."""
    e = Fraction(eps)
    pk = ModelParams(k=k, eps=e, n_max=n_max, bits=auto_bits(k, e))
    direct = measure_splitting(pk)
    mapped = rescale_sample(measure_splitting(reduced_params(pk)), k)
    with pk.context.local():
        tol = _tol_for(pk)
        gap = max(abs(direct.Gamma[n] - mapped.Gamma[n]) for n in direct.Gamma)
        rel = abs(direct.s_eps - mapped.s_eps) / direct.s_eps
        ok = gap <= 10 * tol
    return Check("A7", ok, f"k={k} eps={eps}: s={float(direct.s_eps):.10e}, Gamma gap {float(gap):.1e}, "
                 f"s rel {float(rel):.1e}, tol {float(tol):.1e}", data={"gap": gap})


FULL = {
    "A1": lambda: check_a1(),
    "A2": lambda: check_a2(),
    "A3": lambda: check_a3(),
    "A4": lambda: check_a4(),
    "A5": lambda: check_a5(),
    "A6": lambda: check_a6(),
    "A7": lambda: check_a7(),
}

REDUCED = {
    "A1": lambda: check_a1(kappas=(5,)),
    "A2": lambda: check_a2(fs=((),), rs=(3,), tau_points=16),
    "A3": lambda: check_a3(sine_gordon=False),
    "A4": lambda: check_a4(),
    "A5": lambda: check_a5(),
    "A6": lambda: check_a6(),
    "A7": lambda: check_a7(),
}


def run_checks(table: dict, only=None) -> list:
    return [fn() for name, fn in table.items() if only is None or name in only]
