"""Hybrid atom-plus-density representation of positive measures.

A HybridMeasure carries an exact atomic part (list of point masses) together
with a grid density (value at each node, mass = value * cell weight). Both
components are immutable after construction; all operations return new
measures.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, OutOfDomainError
from .grids import Grid

_EMPTY = np.zeros(0)


def _frozen(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class HybridMeasure:
    grid: Grid
    atom_locations: np.ndarray = field(default_factory=lambda: _EMPTY)
    atom_masses: np.ndarray = field(default_factory=lambda: _EMPTY)
    density: np.ndarray | None = None

    def __post_init__(self):
        locs = _frozen(self.atom_locations)
        masses = _frozen(self.atom_masses)
        if locs.shape != masses.shape or locs.ndim != 1:
            raise ValueError("atom locations and masses must be equal-length 1-d arrays")
        if masses.size and masses.min() < 0:
            raise ValueError("atom masses must be nonnegative")
        if not np.all(np.isfinite(locs)) or not np.all(np.isfinite(masses)):
            raise ValueError("atoms must be finite")
        dens = np.zeros(self.grid.n_cells) if self.density is None else np.asarray(self.density, dtype=float)
        if dens.shape != (self.grid.n_cells,):
            raise ValueError(f"density must have {self.grid.n_cells} values")
        if dens.size and dens.min() < -1e-15 * max(1.0, abs(dens).max()):
            raise ValueError("density values must be nonnegative")
        dens = np.maximum(dens, 0.0)
        object.__setattr__(self, "atom_locations", locs)
        object.__setattr__(self, "atom_masses", masses)
        object.__setattr__(self, "density", _frozen(dens))

    # -- constructors -------------------------------------------------------
    @classmethod
    def zero(cls, grid: Grid) -> "HybridMeasure":
        return cls(grid)

    @classmethod
    def from_atoms(cls, grid: Grid, locations, masses) -> "HybridMeasure":
        return cls(grid, np.atleast_1d(np.asarray(locations, dtype=float)),
                   np.atleast_1d(np.asarray(masses, dtype=float)))

    @classmethod
    def from_density(cls, grid: Grid, values) -> "HybridMeasure":
        return cls(grid, density=np.asarray(values, dtype=float))

    @classmethod
    def dirac(cls, grid: Grid, location: float, mass: float = 1.0) -> "HybridMeasure":
        return cls.from_atoms(grid, [location], [mass])

    # -- queries ------------------------------------------------------------
    @property
    def n_atoms(self) -> int:
        return self.atom_locations.size

    def atom_mass(self) -> float:
        return float(self.atom_masses.sum())

    def density_mass(self) -> float:
        return float(self.density @ self.grid.weights)

    def cell_masses(self) -> np.ndarray:
        """Projected per-cell masses (atoms binned into their containing cell)."""
        masses = self.density * self.grid.weights
        if self.n_atoms:
            idx = self.grid.locate(self.atom_locations)
            masses = masses.copy()
            np.add.at(masses, idx, self.atom_masses)
        return masses

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other: "HybridMeasure") -> "HybridMeasure":
        if self.grid != other.grid:
            raise GridMismatchError("cannot add measures on different grids")
        return HybridMeasure(
            self.grid,
            np.concatenate([self.atom_locations, other.atom_locations]),
            np.concatenate([self.atom_masses, other.atom_masses]),
            self.density + other.density,
        )

    def scaled(self, alpha: float) -> "HybridMeasure":
        if alpha < 0:
            raise ValueError("measures are positive; scale factor must be >= 0")
        return HybridMeasure(self.grid, self.atom_locations,
                             self.atom_masses * alpha, self.density * alpha)

    def __rmul__(self, alpha: float) -> "HybridMeasure":
        return self.scaled(alpha)

    # -- serialization ------------------------------------------------------
    def to_json_dict(self) -> dict:
        return {
            "atoms": [[float(x), float(m)] for x, m in
                      zip(self.atom_locations, self.atom_masses)],
            "density": [float(v) for v in self.density],
            "grid": self.grid.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "HybridMeasure":
        grid = Grid.from_json_dict(d["grid"])
        atoms = np.asarray(d.get("atoms", []), dtype=float).reshape(-1, 2)
        return cls(grid, atoms[:, 0], atoms[:, 1],
                   np.asarray(d.get("density", np.zeros(grid.n_cells)), dtype=float))

    def write_density_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["node", "value"])
            for x, v in zip(self.grid.nodes, self.density):
                w.writerow([repr(float(x)), repr(float(v))])

    def write_atoms_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["location", "mass"])
            for x, m in zip(self.atom_locations, self.atom_masses):
                w.writerow([repr(float(x)), repr(float(m))])


@dataclass(frozen=True)
class MeasureDistance:
    value: float
    mode: str  # "exact_tv" | "grid_l1"


def total_mass(m: HybridMeasure) -> float:
    return m.atom_mass() + m.density_mass()


def project_to_grid(m: HybridMeasure) -> HybridMeasure:
    """Bin every atom into its containing cell; mass is preserved exactly."""
    if m.n_atoms == 0:
        return m
    idx = m.grid.locate(m.atom_locations)  # raises OutOfDomainError off-grid
    dens = m.density.copy()
    np.add.at(dens, idx, m.atom_masses / m.grid.weights[idx])
    return HybridMeasure(m.grid, density=dens)


def split(m: HybridMeasure) -> tuple[HybridMeasure, HybridMeasure]:
    """Separate the singular (atomic) and absolutely continuous parts."""
    singular = HybridMeasure(m.grid, m.atom_locations, m.atom_masses)
    ac = HybridMeasure(m.grid, density=m.density)
    return singular, ac


def distance(a: HybridMeasure, b: HybridMeasure) -> MeasureDistance:
    """Total variation of the difference after projecting both to the grid.

    For positive measures the total variation equals the flat distance up to
    the within-cell displacement of atoms, an O(h * mass) overestimate. When
    both arguments are purely atomic with identical support the value is the
    exact total variation.
    """
    if a.grid != b.grid:
        raise GridMismatchError("distance requires measures on the same grid")
    pure_atoms = (not a.density.any()) and (not b.density.any())
    if pure_atoms and a.n_atoms == b.n_atoms and a.n_atoms > 0:
        ia, ib = np.argsort(a.atom_locations), np.argsort(b.atom_locations)
        if np.array_equal(a.atom_locations[ia], b.atom_locations[ib]):
            val = float(np.abs(a.atom_masses[ia] - b.atom_masses[ib]).sum())
            return MeasureDistance(val, "exact_tv")
    val = float(np.abs(a.cell_masses() - b.cell_masses()).sum())
    return MeasureDistance(val, "grid_l1")
