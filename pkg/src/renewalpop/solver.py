"""Explicit time stepping of the measure-valued birth-rate equation.

The birth rate solves B(t) = integral over ages of K(a) B(t-a) da + B0(t).
Ages are discretized by a trapezoid-type rule whose first interval uses the
left endpoint in time, keeping the scheme explicit; the age integral is
truncated where the kernel mass falls below a tail tolerance. Atoms of the
initial cohort propagate as exact atoms (the tracked singular part); every
convolution-generated contribution is deposited as grid density, matching the
regularizing action of the kernel.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import InstabilityError, ValidationFailure
from .grids import Grid
from .measures import HybridMeasure
from .models import ModelSpec
from .offspring import AtomOffspring, DensityOffspring


@dataclass(frozen=True)
class SimConfig:
    grid: Grid
    dt: float
    t_final: float
    a_max: float | None = None       # age cutoff; derived from z0 when None
    tail_tol: float = 1e-10          # e^{z0 a_max} <= tail_tol
    feedback: bool = True            # False: pure first-generation births
    max_step_growth: float = 10.0    # per-step mass ratio that signals blow-up

    def __post_init__(self):
        if self.dt <= 0:
            raise ValidationFailure("dt must be positive")
        steps = self.t_final / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValidationFailure("t_final must be a multiple of dt")
        if self.t_final <= 0:
            raise ValidationFailure("t_final must be positive")

    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def age_cutoff(self, z0_bound: float) -> float:
        if self.a_max is not None:
            return min(self.a_max, self.t_final)
        return min(-math.log(self.tail_tol) / abs(z0_bound), self.t_final)


@dataclass
class BirthHistory:
    times: np.ndarray
    grid: Grid
    densities: np.ndarray            # (n_times, n_cells) density values
    atom_locations: list             # per step arrays (tracked singular part)
    atom_masses: list
    ac_forcing: np.ndarray           # (n_times, n_cells): b0 of the density equation
    total_mass: np.ndarray
    singular_mass: np.ndarray
    truncation_loss: np.ndarray      # per-step dropped mass
    a_max: float
    config: SimConfig

    def entry(self, j: int) -> HybridMeasure:
        return HybridMeasure(self.grid, self.atom_locations[j],
                             self.atom_masses[j], self.densities[j])

    @property
    def entries(self) -> list:
        return [self.entry(j) for j in range(self.times.size)]

    def forcing_series(self):
        return self.times, self.ac_forcing

    def write_timeseries_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "total_mass", "singular_mass", "truncation_loss"])
            for j, t in enumerate(self.times):
                w.writerow([repr(float(t)), repr(float(self.total_mass[j])),
                            repr(float(self.singular_mass[j])),
                            repr(float(self.truncation_loss[j]))])

    def write_manifest(self, path, extra: dict | None = None) -> None:
        doc = {
            "dt": self.config.dt, "t_final": self.config.t_final,
            "a_max": self.a_max, "tail_tol": self.config.tail_tol,
            "feedback": self.config.feedback,
            "grid": self.grid.to_json_dict(),
            "final_total_mass": float(self.total_mass[-1]),
            "total_truncation_loss": float(self.truncation_loss.sum()),
        }
        if extra:
            doc.update(extra)
        with open(path, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)


def singular_mass_series(history: BirthHistory) -> list[tuple[float, float]]:
    """Mass of the tracked atomic component per step."""
    return [(float(t), float(m)) for t, m in
            zip(history.times, history.singular_mass)]


# -- kernel application primitives -------------------------------------------

def _event_states(model: ModelSpec, tab, ages, sources):
    """Transported states, survival factors and event rates; masks clipping.

    Contributions whose clock ran past the tabulated range are flagged so the
    caller can drop them into the truncation-loss account instead of using a
    clipped (hence wrong) survival weight.
    """
    ages = np.asarray(ages, dtype=float)
    sources = np.asarray(sources, dtype=float)
    c0 = tab.clock(sources)
    c1 = c0 + ages
    lo, hi = tab.clock_range
    ok = (c1 >= lo) & (c1 <= hi)
    z = tab.state_at(c1)
    surv = np.exp(tab.hazard(sources) - tab.hazard(z))
    lam = np.asarray(model.event_rate(z), dtype=float)
    return z, surv * lam, ok


def _deposit_offspring(model: ModelSpec, grid: Grid, z, coef, dens, loss):
    """Deposit kernel offspring of events at states z with event masses coef."""
    z = np.asarray(z, dtype=float).ravel()
    coef = np.asarray(coef, dtype=float).ravel()
    if isinstance(model.offspring, AtomOffspring):
        locs, weights = model.offspring.branch_atoms(z)
        for b, wb in enumerate(weights):
            grid.deposit(locs[b], coef * wb, out=dens, loss=loss)
        return
    off: DensityOffspring = model.offspring
    P = off.profile.antiderivative
    e = grid.edges
    ratio_hi = np.minimum(e[None, 1:] / z[:, None], 1.0)
    ratio_lo = np.minimum(e[None, :-1] / z[:, None], 1.0)
    cellmass = 2.0 * (P(ratio_hi) - P(ratio_lo))         # (n_events, n_cells)
    dens += (coef @ cellmass) / grid.weights
    if loss is not None:
        deficit = 2.0 - cellmass.sum(axis=1)             # below x_lo / above x_hi
        loss[0] += float(coef @ np.clip(deficit, 0.0, None))


def _apply_kernel(model: ModelSpec, tab, grid: Grid, age, locs, masses,
                  dens, loss):
    """One-age kernel application of point sources, deposited as density."""
    if np.isscalar(age):
        age = np.full(np.asarray(locs, dtype=float).shape, float(age))
    z, fl, ok = _event_states(model, tab, age, locs)
    coef = np.asarray(masses, dtype=float) * fl
    if not ok.all():
        if loss is not None:
            loss[0] += float(coef[~ok].sum())
        coef = np.where(ok, coef, 0.0)
    _deposit_offspring(model, grid, z, coef, dens, loss)


def initial_birth_rate(model: ModelSpec, M0: HybridMeasure, t: float,
                       grid: Grid, _tab=None) -> HybridMeasure:
    """First-generation birth measure at age t of the initial cohort.

    Atoms of M0 map to exact offspring atoms under atomic laws (the tracked
    singular part) and to densities under density laws; the density part of
    M0 always contributes density, by quadrature over its cells.
    """
    measure, _ = _initial_birth_rate_with_loss(model, M0, t, grid, _tab)
    return measure


def _initial_birth_rate_with_loss(model, M0, t, grid, tab=None):
    if tab is None:
        tab = model.table_for_horizon(grid, max(t, 1.0), extra_sources=M0)
    loss = np.zeros(1)
    dens = np.zeros(grid.n_cells)
    atom_locs = np.zeros(0)
    atom_masses = np.zeros(0)
    # density part of M0
    src_mass = M0.density * M0.grid.weights
    live = src_mass > 0
    if live.any():
        _apply_kernel(model, tab, grid, float(t), M0.grid.nodes[live],
                      src_mass[live], dens, loss)
    # atomic part of M0
    if M0.n_atoms:
        z, fl, ok = _event_states(model, tab, np.full(M0.n_atoms, float(t)),
                                  M0.atom_locations)
        coef = M0.atom_masses * fl
        if not ok.all():
            loss[0] += float(coef[~ok].sum())
            coef = np.where(ok, coef, 0.0)
        if isinstance(model.offspring, AtomOffspring):
            locs, weights = model.offspring.branch_atoms(z)
            all_locs = locs.ravel()
            all_masses = (coef[None, :] * np.asarray(weights)[:, None]).ravel()
            keep = grid.contains(all_locs) & (all_masses > 0)
            loss[0] += float(all_masses[~keep].sum())
            atom_locs, atom_masses = all_locs[keep], all_masses[keep]
        else:
            _deposit_offspring(model, grid, z, coef, dens, loss)
    return HybridMeasure(grid, atom_locs, atom_masses, dens), float(loss[0])


# -- transport matrices --------------------------------------------------------

def _build_age_blocks(model: ModelSpec, tab, grid: Grid, ages: np.ndarray):
    """Stacked sparse map from source density values to per-age deposits.

    Atomic laws: output rows are destination density values plus one loss row
    per age. Density laws: output rows are event masses binned by parent size
    (two-bin linear split) plus one loss row; a dense fragment-profile matrix
    turns binned event masses into child density values.
    """
    nodes, w, n = grid.nodes, grid.weights, grid.n_cells
    rows_per_age = n + 1
    n_ages = ages.size
    z, fl, ok = _event_states(model, tab, ages[:, None], nodes[None, :])
    coef = fl * w[None, :]                    # per unit source density value
    coef[~ok] = 0.0                           # clock ran off the table: negligible
    data, rows, cols = [], [], []

    def scatter(locations, masses, age_idx, to_values: bool):
        """Two-point split of (location, mass) pairs into grid rows."""
        x = locations.ravel()
        m = masses.ravel()
        ai = np.broadcast_to(age_idx, locations.shape).ravel()
        k = np.broadcast_to(np.arange(n)[None, :], locations.shape).ravel()
        inside = (x >= grid.x_lo) & (x <= grid.x_hi) & (m != 0)
        # off-grid mass goes to the loss row
        if (~inside & (m != 0)).any():
            sel = ~inside & (m != 0)
            rows.append(ai[sel] * rows_per_age + n)
            cols.append(k[sel])
            data.append(m[sel])
        x, m, ai, k = x[inside], m[inside], ai[inside], k[inside]
        j = np.clip(np.searchsorted(nodes, x) - 1, 0, n - 2)
        frac = np.clip((x - nodes[j]) / (nodes[j + 1] - nodes[j]), 0.0, 1.0)
        for jj, part in ((j, m * (1 - frac)), (j + 1, m * frac)):
            vals = part / w[jj] if to_values else part
            rows.append(ai * rows_per_age + jj)
            cols.append(k)
            data.append(vals)

    age_idx = np.broadcast_to(np.arange(n_ages)[:, None], z.shape)
    if isinstance(model.offspring, AtomOffspring):
        locs, weights = model.offspring.branch_atoms(z.ravel())
        for b, wb in enumerate(weights):
            scatter(locs[b].reshape(z.shape), coef * wb, age_idx, to_values=True)
        profile_matrix = None
        column_deficit = None
    else:
        scatter(z, coef, age_idx, to_values=False)
        off: DensityOffspring = model.offspring
        P = off.profile.antiderivative
        e = grid.edges
        ratio_hi = np.minimum(e[None, 1:] / nodes[:, None], 1.0)
        ratio_lo = np.minimum(e[None, :-1] / nodes[:, None], 1.0)
        cellmass = 2.0 * (P(ratio_hi) - P(ratio_lo))      # (z_bin, child cell)
        profile_matrix = (cellmass / w[None, :]).T        # values per event mass
        column_deficit = np.clip(2.0 - cellmass.sum(axis=1), 0.0, None)
    T = sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_ages * rows_per_age, n))
    return T, profile_matrix, column_deficit


# -- the stepper ----------------------------------------------------------------

def solve(model: ModelSpec, M0: HybridMeasure, cfg: SimConfig) -> BirthHistory:
    """Step the birth-rate equation explicitly and track both components.

    Scales linearly in the initial cohort; the zero measure yields the zero
    history. Raises InstabilityError when the per-step mass ratio exceeds
    cfg.max_step_growth far above the forcing scale (advice: reduce dt).
    """
    grid = cfg.grid
    n = grid.n_cells
    dt = cfg.dt
    n_steps = cfg.n_steps()
    times = np.arange(n_steps + 1) * dt
    a_max = cfg.age_cutoff(model.z0_bound)
    n_ages = max(1, int(round(a_max / dt)))
    n_ages = min(n_ages, n_steps) if n_steps > 0 else n_ages
    tab = model.table_for_horizon(grid, cfg.t_final, extra_sources=M0)
    ages = np.arange(1, n_ages + 1) * dt
    atomic = isinstance(model.offspring, AtomOffspring)

    densities = np.zeros((n_steps + 1, n))
    ac_forcing = np.zeros((n_steps + 1, n))
    atom_locs: list = [np.zeros(0)] * (n_steps + 1)
    atom_masses: list = [np.zeros(0)] * (n_steps + 1)
    trunc = np.zeros(n_steps + 1)

    # first-generation forcing (and its exact atoms) at every step
    forcing_loss = np.zeros(1)
    for j in range(n_steps + 1):
        measure, lj = _initial_birth_rate_with_loss(model, M0, times[j], grid, tab)
        densities[j] = measure.density
        ac_forcing[j] += measure.density
        atom_locs[j], atom_masses[j] = measure.atom_locations, measure.atom_masses
        trunc[j] += lj
        forcing_loss[0] += lj

    if cfg.feedback and n_steps > 0:
        T, profile_matrix, column_deficit = _build_age_blocks(model, tab, grid, ages)
        rows_per_age = n + 1
        ring = np.zeros((n_ages + 1, rows_per_age))
        gen0_locs = atom_locs          # tracked singular part feeds the kernel
        gen0_masses = atom_masses

        def block_apply(i: int, dens_vec: np.ndarray) -> np.ndarray:
            block = T[(i - 1) * rows_per_age: i * rows_per_age]
            return block @ dens_vec

        # seed the ring with the base-weight contributions of step 0
        keep0 = min(n_ages, n_steps)
        v0 = (T @ densities[0]).reshape(n_ages, rows_per_age)[:keep0]
        ring[(1 + np.arange(keep0)) % (n_ages + 1)] += dt * v0

        for j in range(1, n_steps + 1):
            slot = j % (n_ages + 1)
            acc = ring[slot].copy()
            ring[slot] = 0.0
            m_lag = min(j, n_ages)
            acc += 0.5 * dt * block_apply(1, densities[j - 1])
            acc -= 0.5 * dt * block_apply(m_lag, densities[j - m_lag])
            loss_here = np.zeros(1)
            if atomic:
                dens_j = acc[:n].copy()
                loss_here[0] += acc[n]
            else:
                dens_j = profile_matrix @ acc[:n]
                loss_here[0] += acc[n] * 2.0 + float(column_deficit @ acc[:n])
            feed = np.zeros(n)
            if any(a.size for a in gen0_locs[:j]):
                lags = np.arange(1, m_lag + 1)
                w_lag = np.full(m_lag, dt)
                w_lag[0] += 0.5 * dt
                w_lag[m_lag - 1] -= 0.5 * dt
                src_l = [gen0_locs[j - i] for i in lags]
                src_m = [gen0_masses[j - i] * w_lag[i - 1] for i in lags]
                counts = [a.size for a in src_l]
                if sum(counts):
                    age_rep = np.repeat(ages[:m_lag][: len(counts)], counts)
                    _apply_kernel(model, tab, grid, age_rep,
                                  np.concatenate(src_l), np.concatenate(src_m),
                                  feed, loss_here)
            dens_j += feed
            ac_forcing[j] += feed
            densities[j] += dens_j
            trunc[j] += loss_here[0]

            mass_prev = densities[j - 1] @ grid.weights + atom_masses[j - 1].sum()
            mass_now = densities[j] @ grid.weights + atom_masses[j].sum()
            scale = max(abs(densities[0] @ grid.weights + atom_masses[0].sum()), 1e-300)
            if mass_now > cfg.max_step_growth * max(mass_prev, scale) \
                    and mass_now > 1e3 * scale:
                raise InstabilityError(
                    f"birth mass jumped to {mass_now:.3g} at t={times[j]:.4g}; "
                    f"the explicit scheme is unstable here - reduce dt")

            if j < n_steps:
                keep = min(n_ages, n_steps - j)
                v = (T @ densities[j]).reshape(n_ages, rows_per_age)[:keep]
                slots = (j + 1 + np.arange(keep)) % (n_ages + 1)
                ring[slots] += dt * v

    total = densities @ grid.weights + np.array([m.sum() for m in atom_masses])
    singular = np.array([m.sum() for m in atom_masses])
    return BirthHistory(times=times, grid=grid, densities=densities,
                        atom_locations=atom_locs, atom_masses=atom_masses,
                        ac_forcing=ac_forcing, total_mass=total,
                        singular_mass=singular, truncation_loss=trunc,
                        a_max=n_ages * dt, config=cfg)


def second_generation_density(model: ModelSpec, x0: float, t: float,
                              grid: Grid, n_sigma: int = 4000) -> HybridMeasure:
    """Offspring-of-offspring density of a point cohort at a fixed time.

    Feeds the first-generation atom curve of a cohort started at x0 back
    through the kernel and deposits the result; the support width is the
    regularization detector (a non-regularizing flow concentrates all mass in
    at most two adjacent cells, a regularizing one spreads it).
    """
    tab = model.table_for_horizon(grid, max(t, 1.0))
    sig = np.linspace(0.0, t, n_sigma + 1)
    wq = np.full(sig.size, t / n_sigma)
    wq[0] = wq[-1] = 0.5 * t / n_sigma
    z1, fl1, ok1 = _event_states(model, tab, sig, np.full(sig.size, float(x0)))
    if not isinstance(model.offspring, AtomOffspring):
        raise ValueError("the detector applies to atomic offspring laws")
    locs, weights = model.offspring.branch_atoms(z1)
    dens = np.zeros(grid.n_cells)
    loss = np.zeros(1)
    for b, wb in enumerate(weights):
        masses = wq * fl1 * wb * ok1
        _apply_kernel(model, tab, grid, t - sig, locs[b], masses, dens, loss)
    return HybridMeasure(grid, density=dens)


def occupied_cells(measure: HybridMeasure, rel_tol: float = 1e-9) -> int:
    masses = measure.cell_masses()
    total = masses.sum()
    if total <= 0:
        return 0
    return int(np.count_nonzero(masses > rel_tol * total))
