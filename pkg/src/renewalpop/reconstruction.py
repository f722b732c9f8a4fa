"""Population state reconstructed from the birth history.

The number of individuals in each state set at time t is the sum of survivors
among everyone born after time zero, transported along the flow, plus the
transported survivors of the initial cohort. Reconstruction deposits mass
conservatively (binned with a two-cell split), so transported mass is exact up
to the recorded exit loss; atoms stay atoms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationFailure
from .grids import Grid
from .measures import HybridMeasure
from .models import ModelSpec
from .offspring import AtomOffspring, DensityOffspring
from .solver import BirthHistory, _deposit_offspring, _event_states
from .spectral import SpectralResult


@dataclass(frozen=True)
class PopulationSnapshot:
    t: float
    measure: HybridMeasure
    exit_loss: float = 0.0


def _transport_sources(model, tab, grid, ages, locs, masses, dens, loss):
    """Move survivors of point sources along the flow and bin them."""
    ages = np.asarray(ages, dtype=float)
    locs = np.asarray(locs, dtype=float)
    masses = np.asarray(masses, dtype=float)
    c0 = tab.clock(locs)
    lo, hi = tab.clock_range
    c1 = c0 + ages
    ok = (c1 >= lo) & (c1 <= hi)
    z = tab.state_at(c1)
    surv = np.exp(tab.hazard(locs) - tab.hazard(z))
    m = masses * surv
    if not ok.all():
        loss[0] += float(m[~ok].sum())
        m = np.where(ok, m, 0.0)
    grid.deposit(z, m, out=dens, loss=loss)


def population_state(model: ModelSpec, history: BirthHistory,
                     M0: HybridMeasure, t: float,
                     omega_grid: Grid | None = None) -> PopulationSnapshot:
    """State distribution at time t from the solved birth history and M0.

    Individuals born at step t - a are transported by age a and weighted by
    survival; the initial cohort is transported over the full elapsed time.
    Atoms of atomic birth entries and of M0 transport exactly as atoms.
    """
    grid = omega_grid or history.grid
    if t > history.times[-1] + 1e-12:
        raise ValidationFailure(f"t={t} exceeds the solved horizon")
    dt = history.config.dt
    j_t = int(round(t / dt))
    if abs(j_t * dt - t) > 1e-9 * max(1.0, t):
        raise ValidationFailure("t must lie on the solver time grid")
    tab = model.table_for_horizon(grid, max(t, 1.0), extra_sources=M0)
    dens = np.zeros(grid.n_cells)
    loss = np.zeros(1)
    out_locs, out_masses = [], []

    if j_t > 0:
        ages = np.arange(j_t + 1) * dt        # age of cohort born at step j_t - i
        wq = np.full(j_t + 1, dt)
        wq[0] = wq[-1] = 0.5 * dt
        # density component of every birth entry, transported and binned
        hist = history.densities[j_t::-1]     # row i: born at t - a_i
        cellmass = hist * history.grid.weights[None, :] * wq[:, None]
        live = cellmass.sum(axis=1) > 0
        if live.any():
            src = np.broadcast_to(history.grid.nodes[None, :], cellmass.shape)
            _transport_sources(model, tab, grid, ages[live, None] *
                               np.ones_like(src[live]), src[live],
                               cellmass[live], dens, loss)
        # atomic component: transported atoms stay atoms
        for i in range(j_t + 1):
            al = history.atom_locations[j_t - i]
            if not al.size:
                continue
            am = history.atom_masses[j_t - i] * wq[i]
            c1 = tab.clock(al) + ages[i]
            lo_c, hi_c = tab.clock_range
            ok = (c1 >= lo_c) & (c1 <= hi_c)
            z = tab.state_at(c1)
            m = am * np.exp(tab.hazard(al) - tab.hazard(z))
            inside = ok & grid.contains(z) & (m > 0)
            loss[0] += float(m[~inside].sum())
            if inside.any():
                out_locs.append(z[inside])
                out_masses.append(m[inside])

    # initial cohort
    if M0.n_atoms:
        if t == 0.0:
            z, m, inside = M0.atom_locations, M0.atom_masses, \
                grid.contains(M0.atom_locations)
        else:
            c1 = tab.clock(M0.atom_locations) + t
            lo_c, hi_c = tab.clock_range
            okc = (c1 >= lo_c) & (c1 <= hi_c)
            z = tab.state_at(c1)
            m = M0.atom_masses * np.exp(tab.hazard(M0.atom_locations) - tab.hazard(z))
            m = np.where(okc, m, 0.0)
            inside = grid.contains(z) & (m > 0) & okc
        loss[0] += float(np.asarray(m)[~inside].sum())
        if inside.any():
            out_locs.append(np.asarray(z)[inside])
            out_masses.append(np.asarray(m)[inside])
    m0_cell = M0.density * M0.grid.weights
    live0 = m0_cell > 0
    if live0.any():
        if t == 0.0:
            grid.deposit(M0.grid.nodes[live0], m0_cell[live0], out=dens, loss=loss)
        else:
            _transport_sources(model, tab, grid, np.full(int(live0.sum()), float(t)),
                               M0.grid.nodes[live0], m0_cell[live0], dens, loss)

    locs = np.concatenate(out_locs) if out_locs else np.zeros(0)
    mass = np.concatenate(out_masses) if out_masses else np.zeros(0)
    measure = HybridMeasure(grid, locs, mass, dens)
    return PopulationSnapshot(t=float(t), measure=measure, exit_loss=float(loss[0]))


def stable_population(model: ModelSpec, result: SpectralResult,
                      omega_grid: Grid | None = None,
                      a_max: float | None = None, da: float = 0.01,
                      psi: np.ndarray | None = None) -> HybridMeasure:
    """Stable state profile: discounted transported survivors of psi_r.

    Integrates over age the flow image of the stable state-at-birth density,
    weighted by e^{-r a} and survival; pure density output on the state grid.
    """
    grid = omega_grid or result.grid
    r = result.r
    if a_max is None:
        gap = max(r - result.z0_bound, 0.05)
        a_max = min(-np.log(1e-12) / gap, 2000.0)
    psi = result.psi_r if psi is None else np.asarray(psi, dtype=float)
    tab = model.table_for_horizon(grid, a_max)
    n_a = max(int(round(a_max / da)), 10)
    ages = np.linspace(0.0, a_max, n_a + 1)
    wq = np.full(n_a + 1, a_max / n_a)
    wq[0] = wq[-1] = 0.5 * a_max / n_a
    src = result.grid.nodes
    cellmass = psi * result.grid.weights
    dens = np.zeros(grid.n_cells)
    loss = np.zeros(1)
    c0 = tab.clock(src)
    h0 = tab.hazard(src)
    lo_c, hi_c = tab.clock_range
    chunk = max(1, int(2e6 // max(src.size, 1)))
    for start in range(0, n_a + 1, chunk):
        aa = ages[start:start + chunk]
        ww = wq[start:start + chunk]
        c1 = c0[None, :] + aa[:, None]
        ok = (c1 >= lo_c) & (c1 <= hi_c)
        z = tab.state_at(c1)
        m = (np.exp(-r * aa)[:, None] * ww[:, None] * cellmass[None, :]
             * np.exp(h0[None, :] - tab.hazard(z)))
        m = np.where(ok, m, 0.0)
        grid.deposit(z.ravel(), m.ravel(), out=dens, loss=loss)
    return HybridMeasure(grid, density=dens)


def birth_from_population(model: ModelSpec, snapshot: PopulationSnapshot,
                          target_grid: Grid | None = None) -> HybridMeasure:
    """Instantaneous birth measure implied by a population state.

    Integrates the event rate times the offspring law against the state
    distribution; comparing the result with the solver's birth measure is the
    executable consistency check between the renewal and transport pictures.
    """
    M = snapshot.measure
    grid = target_grid or M.grid
    dens = np.zeros(grid.n_cells)
    out_locs, out_masses = [], []
    if M.n_atoms:
        z = M.atom_locations
        coef = M.atom_masses * np.asarray(model.event_rate(z), dtype=float)
        if isinstance(model.offspring, AtomOffspring):
            locs, weights = model.offspring.branch_atoms(z)
            all_locs = locs.ravel()
            all_masses = (coef[None, :] * np.asarray(weights)[:, None]).ravel()
            keep = grid.contains(all_locs) & (all_masses > 0)
            if keep.any():
                out_locs.append(all_locs[keep])
                out_masses.append(all_masses[keep])
        else:
            _deposit_offspring(model, grid, z, coef, dens, None)
    cellmass = M.density * M.grid.weights
    live = cellmass > 0
    if live.any():
        z = M.grid.nodes[live]
        coef = cellmass[live] * np.asarray(model.event_rate(z), dtype=float)
        if isinstance(model.offspring, AtomOffspring):
            locs, weights = model.offspring.branch_atoms(z)
            for b, wb in enumerate(np.asarray(weights)):
                grid.deposit(locs[b], coef * wb, out=dens)
        else:
            _deposit_offspring(model, grid, z, coef, dens, None)
    locs = np.concatenate(out_locs) if out_locs else np.zeros(0)
    mass = np.concatenate(out_masses) if out_masses else np.zeros(0)
    return HybridMeasure(grid, locs, mass, dens)
