"""Truncated one-dimensional state grids.

A grid partitions [x_lo, x_hi] into cells; densities are stored as values at
cell nodes with mass = value * cell weight. Uniform and geometric spacings
are supported; nodes sit at cell midpoints (arithmetic or geometric).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfDomainError


@dataclass(frozen=True)
class Grid:
    x_lo: float
    x_hi: float
    n_cells: int
    spacing: str = "uniform"  # "uniform" | "geometric"
    _edges: np.ndarray = field(init=False, repr=False, compare=False)
    _nodes: np.ndarray = field(init=False, repr=False, compare=False)
    _weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 < self.x_lo < self.x_hi):
            raise ValueError(f"need 0 < x_lo < x_hi, got [{self.x_lo}, {self.x_hi}]")
        if self.n_cells < 2:
            raise ValueError(f"need n_cells >= 2, got {self.n_cells}")
        if self.spacing == "uniform":
            edges = np.linspace(self.x_lo, self.x_hi, self.n_cells + 1)
            nodes = 0.5 * (edges[:-1] + edges[1:])
        elif self.spacing == "geometric":
            edges = np.geomspace(self.x_lo, self.x_hi, self.n_cells + 1)
            nodes = np.sqrt(edges[:-1] * edges[1:])
        else:
            raise ValueError(f"unknown spacing {self.spacing!r}")
        for name, arr in (("_edges", edges), ("_nodes", nodes),
                          ("_weights", np.diff(edges))):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def edges(self) -> np.ndarray:
        return self._edges

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes

    @property
    def weights(self) -> np.ndarray:
        return self._weights

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return (self.x_lo, self.x_hi, self.n_cells, self.spacing) == \
               (other.x_lo, other.x_hi, other.n_cells, other.spacing)

    def __hash__(self):
        return hash((self.x_lo, self.x_hi, self.n_cells, self.spacing))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x)
        return (x >= self.x_lo) & (x <= self.x_hi)

    def locate(self, x) -> np.ndarray:
        """Cell index of each location; raises if any lies off the grid."""
        x = np.asarray(x, dtype=float)
        if not np.all(self.contains(x)):
            bad = np.asarray(x)[~self.contains(x)].ravel()[0]
            raise OutOfDomainError(float(bad), self.x_lo, self.x_hi, what="atom location")
        idx = np.searchsorted(self._edges, x, side="right") - 1
        return np.clip(idx, 0, self.n_cells - 1)

    def deposit(self, locations, masses, out=None, loss=None):
        """Scatter point masses into density values with a two-cell linear split.

        Mass between adjacent nodes is shared linearly between them, which keeps
        deposits second-order accurate against smooth test functions while
        conserving mass exactly. Off-grid mass is dropped and accumulated into
        ``loss`` (a length-1 array) when given. Returns the density-value array.
        """
        nodes, w = self._nodes, self._weights
        x = np.asarray(locations, dtype=float).ravel()
        m = np.asarray(masses, dtype=float).ravel()
        if out is None:
            out = np.zeros(self.n_cells)
        inside = (x >= self.x_lo) & (x <= self.x_hi)
        if loss is not None and not inside.all():
            loss[0] += m[~inside].sum()
        x, m = x[inside], m[inside]
        if x.size == 0:
            return out
        j = np.clip(np.searchsorted(nodes, x) - 1, 0, self.n_cells - 2)
        frac = np.clip((x - nodes[j]) / (nodes[j + 1] - nodes[j]), 0.0, 1.0)
        np.add.at(out, j, m * (1.0 - frac) / w[j])
        np.add.at(out, j + 1, m * frac / w[j + 1])
        return out

    def to_json_dict(self) -> dict:
        return {"x_lo": self.x_lo, "x_hi": self.x_hi,
                "n_cells": self.n_cells, "spacing": self.spacing}

    @classmethod
    def from_json_dict(cls, d: dict) -> "Grid":
        return cls(x_lo=float(d["x_lo"]), x_hi=float(d["x_hi"]),
                   n_cells=int(d["n_cells"]), spacing=d.get("spacing", "uniform"))
