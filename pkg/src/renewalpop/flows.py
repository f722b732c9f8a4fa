"""Deterministic state development: flow maps, travel times, survival.

The state of an individual follows dx/dt = g(x). For scalar autonomous flows
everything reduces to the clock coordinate A(x) = integral of 1/g from a
reference point: X(a, xi) = A^{-1}(A(xi) + a). Public entry points integrate
the ODE / quadratures directly at configurable tolerance; FlowTable provides
the vectorized coordinate-based fast path used by operator assembly and the
time stepper, accurate to ~1e-10 against the direct route.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import quad, solve_ivp

from .errors import DomainExitError, OrientationError

_GAUSS7_X, _GAUSS7_W = np.polynomial.legendre.leggauss(7)


def flow(g, a: float, xi: float, domain=(0.0, np.inf), rtol: float = 1e-10) -> float:
    """Solve dx/dt = g(x), x(0) = xi, and return x(a). Backward a < 0 allowed.

    Raises DomainExitError (with the exit time) if the trajectory leaves the
    open state domain before |a|.
    """
    if a == 0.0:
        return float(xi)
    lo, hi = domain

    def rhs(t, y):
        return g(y[0])

    events = []
    if np.isfinite(lo) and lo > 0:
        ev_lo = lambda t, y: y[0] - lo
        ev_lo.terminal = True
        events.append(ev_lo)
    if np.isfinite(hi):
        ev_hi = lambda t, y: hi - y[0]
        ev_hi.terminal = True
        events.append(ev_hi)
    sol = solve_ivp(rhs, (0.0, a), [float(xi)], rtol=rtol, atol=1e-14,
                    events=events or None, dense_output=False)
    if sol.status == 1:  # terminated by a boundary event
        t_exit = min(float(t[0]) for t in sol.t_events if t.size)
        raise DomainExitError(t_exit)
    if not sol.success:
        raise RuntimeError(f"flow integration failed: {sol.message}")
    return float(sol.y[0, -1])


def travel_time(g, x: float, y: float, rtol: float = 1e-10) -> float:
    """Time to develop from state x to state y: integral of 1/g over [x, y].

    x and y must be ordered along the flow direction (y downstream of x).
    """
    gx = g(0.5 * (x + y))
    if x != y and np.sign(y - x) != np.sign(gx):
        raise OrientationError(
            f"state {y} is not downstream of {x} for this growth rate")
    if x == y:
        return 0.0
    val, _ = quad(lambda z: 1.0 / g(z), x, y, epsabs=1e-13, epsrel=rtol, limit=200)
    return float(val)


def survival(model, t: float, xi: float, method: str = "size") -> float:
    """Probability of no death and no event up to age t, starting from xi.

    method="size" integrates (mu + event_rate)/g between xi and X(t, xi);
    method="age" integrates (mu + event_rate) along the flow in time. The two
    agree to quadrature tolerance and serve as each other's oracle.
    """
    if t < 0:
        raise ValueError("survival needs t >= 0")
    if t == 0:
        return 1.0
    g, mu, lam = model.growth_rate, model.death_rate, model.event_rate
    mtilde = lambda x: mu(x) + lam(x)
    if method == "size":
        z = flow(g, t, xi, domain=model.state_domain)
        val, _ = quad(lambda s: mtilde(s) / g(s), xi, z, epsabs=1e-13,
                      epsrel=1e-10, limit=200)
    elif method == "age":
        val, _ = quad(lambda s: mtilde(flow(g, s, xi, domain=model.state_domain)),
                      0.0, t, epsabs=1e-13, epsrel=1e-9, limit=200)
    else:
        raise ValueError(f"unknown survival method {method!r}")
    return float(np.exp(-val))


def _cumulative_gauss(fn, points: np.ndarray) -> np.ndarray:
    """Cumulative integral of fn over the sorted breakpoints, 7-pt Gauss per panel."""
    a, b = points[:-1], points[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    nodes = mid[:, None] + half[:, None] * _GAUSS7_X[None, :]
    vals = fn(nodes.ravel()).reshape(nodes.shape)
    panel = half * (vals @ _GAUSS7_W)
    out = np.empty(points.size)
    out[0] = 0.0
    np.cumsum(panel, out=out[1:])
    return out


class FlowTable:
    """Tabulated clock/hazard coordinates for one model on [x_min, x_max].

    A(x) = integral of 1/g (the clock: X(a, xi) = A^{-1}(A(xi) + a));
    G(x) = integral of (mu + event_rate)/g (log survival between states).
    Interpolation is monotone cubic on a dense grid (log-spaced), so round
    trips agree with the direct ODE/quadrature route to ~1e-10.
    """

    def __init__(self, g, mtilde, x_min: float, x_max: float, n: int = 6000):
        if not (0.0 < x_min < x_max):
            raise ValueError("need 0 < x_min < x_max")
        self.x_min, self.x_max = float(x_min), float(x_max)
        xs = np.geomspace(x_min, x_max, n)
        A = _cumulative_gauss(lambda z: 1.0 / g(z), xs)
        G = _cumulative_gauss(lambda z: mtilde(z) / g(z), xs)
        from scipy.interpolate import CubicSpline
        u = np.log(xs)  # clock and hazard are smooth in log-state
        self._u_lo, self._u_hi = float(u[0]), float(u[-1])
        self._A_of_u = CubicSpline(u, A)
        self._G_of_u = CubicSpline(u, G)
        self._forward = bool(A[-1] > 0)  # g > 0 grows, g < 0 wanes
        sign = 1.0 if self._forward else -1.0
        self._u_of_A = CubicSpline(sign * A, u)
        self._sign = sign
        self._A_lo, self._A_hi = float(A[0]), float(A[-1])

    @property
    def forward(self) -> bool:
        return self._forward

    @property
    def clock_range(self) -> tuple[float, float]:
        return tuple(sorted((self._A_lo, self._A_hi)))

    def _u(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.clip(np.log(np.maximum(x, 1e-300)), self._u_lo, self._u_hi)

    def clock(self, x) -> np.ndarray:
        return self._A_of_u(self._u(x))

    def hazard(self, x) -> np.ndarray:
        return self._G_of_u(self._u(x))

    def state_at(self, clock_values) -> np.ndarray:
        """Inverse clock A^{-1}, clipped to the tabulated range."""
        s = self._sign * np.asarray(clock_values, dtype=float)
        lo, hi = sorted((self._sign * self._A_lo, self._sign * self._A_hi))
        return np.exp(self._u_of_A(np.clip(s, lo, hi)))

    def transport(self, a, xi) -> np.ndarray:
        """X(a, xi) for arrays of ages/states (clipped at the table ends)."""
        return self.state_at(self.clock(xi) + np.asarray(a, dtype=float))

    def travel_time(self, x, y) -> np.ndarray:
        return self._A(np.asarray(y, dtype=float)) - self._A(np.asarray(x, dtype=float))

    def survival_between(self, x, y) -> np.ndarray:
        """exp(-integral of mtilde/g) from state x to downstream state y."""
        return np.exp(self._G(np.asarray(x, dtype=float))
                      - self._G(np.asarray(y, dtype=float)))
