"""Offspring laws: what appears when an individual divides or jumps.

Two families cover the shipped models. A DensityOffspring produces an
absolutely continuous brood with kernel h(parent, child) = (2/parent) *
p(child/parent) for a self-similar fragment profile p; an AtomOffspring
produces point masses at branch targets (equal halving, or a piecewise-linear
immunity boost).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator


# -- self-similar fragment profiles -----------------------------------------

class FragmentProfile:
    """Profile p on [0,1] with unit integral and p(u) = p(1-u).

    h(y, x) = (2/y) p(x/y); the symmetry encodes mass conservation at
    fission and forces integral x*h(y,x) dx = y.
    """

    name = "profile"

    def __call__(self, u):  # pragma: no cover - interface
        raise NotImplementedError

    def antiderivative(self, u):  # P with P(0)=0, P(1)=1
        raise NotImplementedError

    def sup(self) -> float:
        raise NotImplementedError

    def polynomial_coeffs(self):
        """Coefficients c_d with p(u) = sum c_d u^d, or None if not polynomial."""
        return None


class UniformProfile(FragmentProfile):
    """Uniform fragmentation: any daughter size is equally likely."""

    name = "uniform"

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return np.where((u >= 0) & (u <= 1), 1.0, 0.0)

    def antiderivative(self, u):
        return np.clip(np.asarray(u, dtype=float), 0.0, 1.0)

    def sup(self) -> float:
        return 1.0

    def polynomial_coeffs(self):
        return np.array([1.0])


class ParabolicProfile(FragmentProfile):
    """p(u) = 6 u (1-u): daughters concentrate near half the parent size."""

    name = "parabolic"

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return np.where((u >= 0) & (u <= 1), 6.0 * u * (1.0 - u), 0.0)

    def antiderivative(self, u):
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        return 3.0 * u**2 - 2.0 * u**3

    def sup(self) -> float:
        return 1.5

    def polynomial_coeffs(self):
        return np.array([0.0, 6.0, -6.0])


class TabulatedProfile(FragmentProfile):
    """Profile given by samples on [0,1]; symmetry and unit mass enforced at load."""

    name = "tabulated"

    def __init__(self, u_nodes, values, tol: float = 1e-6):
        u = np.asarray(u_nodes, dtype=float)
        v = np.asarray(values, dtype=float)
        if u.ndim != 1 or u.shape != v.shape or u.size < 3:
            raise ValueError("profile table needs matching 1-d arrays, >= 3 points")
        if u[0] != 0.0 or u[-1] != 1.0 or np.any(np.diff(u) <= 0):
            raise ValueError("profile abscissae must increase from 0 to 1")
        if v.min() < 0:
            raise ValueError("profile values must be nonnegative")
        sym = np.interp(1.0 - u, u, v)
        if np.max(np.abs(v - sym)) > tol * max(1.0, v.max()):
            raise ValueError("profile violates the symmetry p(u) = p(1-u)")
        mass = np.trapezoid(v, u)
        if abs(mass - 1.0) > tol:
            raise ValueError(f"profile integral {mass:.6g} != 1")
        v = v / mass
        self._interp = PchipInterpolator(u, v, extrapolate=False)
        dense = np.linspace(0.0, 1.0, 4001)
        pd = self._interp(dense)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (pd[1:] + pd[:-1]) * np.diff(dense))])
        cum /= cum[-1]
        self._cum = PchipInterpolator(dense, cum, extrapolate=False)
        self._sup = float(pd.max())

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = self._interp(np.clip(u, 0.0, 1.0))
        return np.where((u >= 0) & (u <= 1), out, 0.0)

    def antiderivative(self, u):
        return self._cum(np.clip(np.asarray(u, dtype=float), 0.0, 1.0))

    def sup(self) -> float:
        return self._sup


PROFILES = {"uniform": UniformProfile, "parabolic": ParabolicProfile}


@dataclass(frozen=True)
class DensityOffspring:
    """nu(y, dx) = h(y, x) dx with h(y, x) = (2/y) p(x/y)."""

    profile: FragmentProfile = field(default_factory=UniformProfile)

    def h(self, y, x):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        return (2.0 / y) * self.profile(x / y)

    def cell_averaged_values(self, parent: float, grid) -> np.ndarray:
        """Density values whose cell masses integrate h(parent, .) exactly.

        Value at cell i is (1/w_i) * integral of h over the cell, clipped to
        (0, parent); the antiderivative of p makes the mass exact.
        """
        P = self.profile.antiderivative
        e = grid.edges
        hi = np.minimum(e[1:], parent)
        lo = np.minimum(e[:-1], parent)
        masses = 2.0 * (P(hi / parent) - P(lo / parent))
        return np.maximum(masses, 0.0) / grid.weights

    def mass_below(self, parent: float, x: float) -> float:
        return float(2.0 * self.profile.antiderivative(x / parent))


@dataclass(frozen=True)
class AtomOffspring:
    """nu(y, .) = sum_b weight_b * delta at target_b(y)."""

    targets: tuple
    weights: tuple

    def branch_atoms(self, y):
        y = np.asarray(y, dtype=float)
        locs = np.stack([np.asarray(t(y), dtype=float) for t in self.targets])
        ws = np.array(self.weights, dtype=float)
        return locs, ws


def equal_fission_offspring() -> AtomOffspring:
    """Two daughters of exactly half the parent size."""
    return AtomOffspring(targets=(lambda y: 0.5 * np.asarray(y, dtype=float),),
                         weights=(2.0,))


@dataclass(frozen=True)
class BoostingProfile:
    """Piecewise-linear boosting map for the waning-immunity model.

    f falls from naive_boost at 0 to post_min at the dip, then rises to peak
    at peak; boosting maps the whole state interval (0, peak] into
    [post_min, peak], which is the birth domain.
    """

    post_min: float = 1.0     # lowest post-boost level, f(dip)
    naive_boost: float = 3.0  # post-boost level for pre-boost level near 0
    peak: float = 10.0        # maximal immunity, f(peak) = peak
    dip: float = 2.0          # pre-boost level where f is minimal

    def __post_init__(self):
        m, r, M, xc = self.post_min, self.naive_boost, self.peak, self.dip
        if not (0 < m < M and 0 < r < M and 0 < xc < M and m < r):
            raise ValueError("need 0 < post_min < naive_boost < peak and 0 < dip < peak")

    @property
    def slope_down(self) -> float:  # alpha_1 on (0, dip]
        return (self.naive_boost - self.post_min) / self.dip

    @property
    def slope_up(self) -> float:  # alpha_2 on (dip, peak]
        return (self.peak - self.post_min) / (self.peak - self.dip)

    @property
    def intercept_up(self) -> float:
        return self.post_min - self.dip * self.slope_up

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        down = -self.slope_down * x + self.naive_boost
        up = self.slope_up * x + self.intercept_up
        return np.where(x <= self.dip, down, up)

    def fprime(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x <= self.dip, -self.slope_down, self.slope_up)

    def inverse_down(self, z):
        """Pre-boost level on (0, dip] mapping to z in [post_min, naive_boost)."""
        return (self.naive_boost - np.asarray(z, dtype=float)) / self.slope_down

    def inverse_up(self, z):
        """Pre-boost level on (dip, peak] mapping to z in (post_min, peak]."""
        return (np.asarray(z, dtype=float) - self.intercept_up) / self.slope_up

    def offspring(self) -> AtomOffspring:
        return AtomOffspring(targets=(self.__call__,), weights=(1.0,))
