"""Taylor-series machinery shared by every solver in the package.

All three expansions used here are power series in one variable ``t`` whose
coefficients are odd-sine fields:

* the local Taylor expansion of an orbit (``t = y - y0``),
* the parameterisation of the unstable manifold (``t = e^y``),
* the formal inner expansion (``t = 1/z``).

:class:`GridNonlinearity` produces the coefficients of ``Pi[g(s v(t))]``
order by order from those of ``v``. Products are taken pointwise on a
collocation grid that is fine enough for the projection back to the modes
to be exact, so the recursion never truncates a product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr

from kgsplit.fourier import OddPowerSeries, OddSineSeries, PhasePoint, SineGrid, l1_norm


class StiffnessError(ArithmeticError):
    """Step size collapsed below the usable range."""


def _zeros(shape, cplx=False):
    z = mpc(0) if cplx else mpfr(0)
    out = np.empty(shape, dtype=object)
    out.fill(z)
    return out


class GridNonlinearity:
    """Order-by-order coefficients of ``out_scale * Pi[g(scale * v(t))]``.

    Call :meth:`coefficient` with increasing ``p``; calling again with the
    same ``p`` overwrites that order (used when a coefficient is fixed after
    a trial evaluation).
    """

    def __init__(self, g: OddPowerSeries, n_max: int, scale=1, out_scale=1, capacity: int = 64,
                 grid: SineGrid | None = None):
        self.n_max = n_max
        self.grid = grid or SineGrid.for_degree(n_max, max(g.degree, 1))
        self.synth = self.grid.synth * scale
        self.analysis = self.grid.analysis * out_scale
        gc = g.mp_coeffs()
        dh = (max(gc) - 1) // 2 if gc else 0
        # g(u) = u * P(u^2), P(x) = sum a_d x^d
        self.a = [gc.get(2 * d + 1, mpfr(0)) for d in range(dh + 1)]
        self.depth = dh
        self.points = self.grid.points
        self.capacity = 0
        self._alloc(capacity)

    def _alloc(self, capacity):
        old = self.capacity
        shape = (capacity, self.points)

        def grow(arr):
            new = _zeros(shape)
            if arr is not None and old:
                new[:old] = arr[:old]
            return new

        self.u = grow(getattr(self, "u", None))
        self.x = grow(getattr(self, "x", None))
        prev_h = getattr(self, "h", [None] * self.depth)
        self.h = [grow(prev_h[i]) for i in range(self.depth)]
        self.capacity = capacity

    def set_input(self, p: int, vp) -> None:
        """Replace order ``p`` of the input after the output at ``p`` was computed.

        Valid only when the input series vanishes at order 0, since then the
        output at order ``p`` does not depend on the input at order ``p``.
        """
        self.u[p] = self.synth.dot(vp)

    def coefficient(self, p: int, vp) -> np.ndarray:
        """Store mode coefficients ``vp`` at order ``p`` and return order ``p`` of the output."""
        if p >= self.capacity:
            self._alloc(max(2 * self.capacity, p + 1))
        u = self.u
        u[p] = self.synth.dot(vp)
        if self.depth == 0:
            return self.analysis.dot(u[p] * self.a[0])
        x = self.x
        x[p] = (u[:p + 1] * u[p::-1]).sum(0)
        a = self.a
        # H_{depth-1} = a_depth x + a_{depth-1}; lower levels by Cauchy product
        top = self.h[self.depth - 1]
        top[p] = x[p] * a[self.depth]
        if p == 0:
            top[p] = top[p] + a[self.depth - 1]
        for lev in range(self.depth - 2, -1, -1):
            up = self.h[lev + 1]
            cur = (up[:p + 1] * x[p::-1]).sum(0)
            if p == 0:
                cur = cur + a[lev]
            self.h[lev][p] = cur
        h0 = self.h[0]
        n = (u[:p + 1] * h0[p::-1]).sum(0)
        return self.analysis.dot(n)


# -- Taylor integrator -------------------------------------------------------

@dataclass(frozen=True)
class SecondOrderSystem:
    """``v'' = A v - c Pi[g(s v)]`` with diagonal ``A``.

    ``forcing`` optionally adds ``sum_q F_q t^q`` (mode arrays) to the right-hand
    side when given a step origin.
    """

    linear: np.ndarray
    g: OddPowerSeries
    scale: object = 1
    out_scale: object = 1
    n_max: int = 1

    def kernel(self, capacity=64) -> GridNonlinearity:
        return GridNonlinearity(self.g, self.n_max, self.scale, self.out_scale, capacity)


def taylor_coefficients(system: SecondOrderSystem, v0, w0, order: int,
                        kernel: GridNonlinearity | None = None,
                        forcing: Callable[[int], np.ndarray] | None = None) -> list:
    """Coefficients ``V_0..V_order`` of ``v(y0 + t)``."""
    kern = kernel or system.kernel(order + 1)
    A = system.linear
    V = [np.asarray(v0, dtype=object), np.asarray(w0, dtype=object)]
    for p in range(order - 1):
        n = kern.coefficient(p, V[p])
        rhs = A * V[p] - n
        if forcing is not None:
            rhs = rhs + forcing(p)
        V.append(rhs / ((p + 1) * (p + 2)))
    return V[:order + 1]


def _poly(V, t):
    acc = V[-1] * 1
    for c in V[-2::-1]:
        acc = acc * t + c
    return acc


def _dpoly(V, t):
    n = len(V) - 1
    acc = V[-1] * n
    for p in range(n - 1, 0, -1):
        acc = acc * t + V[p] * p
    return acc


def _norm(arr):
    s = mpfr(0)
    for c in arr:
        s += abs(c)
    return s


@dataclass
class TaylorStep:
    y0: object
    h: object
    coeffs: list

    def value(self, t):
        return _poly(self.coeffs, t), _dpoly(self.coeffs, t)


@dataclass
class Trajectory:
    """Piecewise-polynomial dense output of an integration."""

    steps: list = field(default_factory=list)
    start: object = None
    start_state: PhasePoint | None = None

    @property
    def end(self):
        last = self.steps[-1]
        return last.y0 + last.h

    def final_state(self) -> PhasePoint:
        if not self.steps:
            return self.start_state
        st = self.steps[-1]
        v, w = st.value(st.h)
        return PhasePoint(OddSineSeries(v), OddSineSeries(w))

    def state_at(self, y) -> PhasePoint:
        """Dense output for real, monotone trajectories."""
        if not self.steps:
            return self.start_state
        for st in self.steps:
            t = y - st.y0
            if _within(t, st.h):
                v, w = st.value(t)
                return PhasePoint(OddSineSeries(v), OddSineSeries(w))
        raise ValueError(f"y = {float(y):.6g} outside the integrated span")

    def sample(self, ys):
        return [(y, self.state_at(y)) for y in ys]


def _within(t, h):
    if isinstance(h, gmpy2.mpc) or isinstance(t, gmpy2.mpc):
        # complex steps: accept points on the segment
        h = gmpy2.mpc(h)
        r = t / h
        return abs(r.imag) < mpfr(2) ** -20 and -mpfr(2) ** -40 <= r.real <= 1 + mpfr(2) ** -40
    if h >= 0:
        return -mpfr(2) ** -60 * max(1, abs(h)) <= t <= h * (1 + mpfr(2) ** -60)
    return h * (1 + mpfr(2) ** -60) <= t <= mpfr(2) ** -60 * max(1, abs(h))


def default_order(tol) -> int:
    nats = -float(gmpy2.log(tol))
    return int(min(80, max(16, math.ceil(nats / 2) + 4)))


def integrate(system: SecondOrderSystem, state: PhasePoint, y0, y1, tol, order: int | None = None,
              max_steps: int = 200000, h_max=None, min_step=None,
              forcing_at: Callable | None = None) -> Trajectory:
    """Propagate ``state`` from ``y0`` to ``y1`` (real or complex straight segment).

    The step is the largest ``h`` for which the last two Taylor terms stay
    below ``tol * |h|``, so the local error per unit length is about ``tol``.
    ``forcing_at(y)`` may return a callable giving the Taylor coefficients of an
    additive forcing term about ``y``.
    """
    order = order or default_order(tol)
    tol = mpfr(tol)
    span = y1 - y0
    length = abs(span)
    traj = Trajectory(start=y0, start_state=state)
    if length == 0:
        return traj
    direction = span / length
    kern = system.kernel(order + 1)
    v, w = state.v.coeffs, state.w.coeffs
    done = mpfr(0)
    min_step = min_step if min_step is not None else length * mpfr(2) ** -40
    for _ in range(max_steps):
        y = y0 + direction * done
        forcing = forcing_at(y) if forcing_at is not None else None
        V = taylor_coefficients(system, v, w, order, kern, forcing)
        hmag = None
        for q in (order - 1, order):
            nq = _norm(V[q])
            if nq > 0:
                cand = (tol / nq) ** (mpfr(1) / (q - 1))
                hmag = cand if hmag is None else min(hmag, cand)
        # vanishing tail coefficients: the polynomial is exact over the rest
        hmag = length - done if hmag is None else hmag * mpfr("0.9")
        if h_max is not None:
            hmag = min(hmag, mpfr(h_max))
        last = False
        if done + hmag >= length:
            hmag = length - done
            last = True
        elif hmag < min_step:
            raise StiffnessError(f"step {float(hmag):.3g} below minimum at y = {complex(y)}")
        h = direction * hmag
        traj.steps.append(TaylorStep(y, h, V))
        v, w = _poly(V, h), _dpoly(V, h)
        done += hmag
        if last:
            # snap the final abscissa exactly
            traj.steps[-1].h = y1 - y
            return traj
    raise StiffnessError(f"exceeded {max_steps} steps")


def find_root_on_step(step: TaylorStep, mode_index: int, which: str = "w", tol=None):
    """Real root in ``[0, h]`` of a single mode of ``v`` or ``w``; secant/bisection."""
    coeffs = step.coeffs

    def f(t):
        if which == "v":
            return _poly([c[mode_index] for c in coeffs], t)
        return _dpoly([c[mode_index] for c in coeffs], t)

    a, b = mpfr(0), mpfr(step.h)
    fa, fb = f(a), f(b)
    if fa == 0:
        return a
    if fb == 0:
        return b
    if (fa > 0) == (fb > 0):
        return None
    eps = tol if tol is not None else abs(b - a) * mpfr(2) ** (-gmpy2.get_context().precision + 8)
    for _ in range(4 * gmpy2.get_context().precision):
        # Illinois-style regula falsi with bisection fallback
        m = b - fb * (b - a) / (fb - fa)
        if not (min(a, b) < m < max(a, b)):
            m = (a + b) / 2
        fm = f(m)
        if fm == 0 or abs(b - a) < eps:
            return m
        if (fm > 0) == (fb > 0):
            b, fb = m, fm
            fa = fa / 2
        else:
            a, fa = m, fm
            fb = fb / 2
        if abs(b - a) < eps:
            return (a + b) / 2
    return (a + b) / 2


def series_l1(V) -> object:
    return l1_norm(OddSineSeries(V))
