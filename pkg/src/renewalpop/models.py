"""Structured-population models: growth, death, event rate, offspring.

A ModelSpec bundles the ingredients of the birth kernel

    K(a, xi, dx) = F(a, xi) * Lambda(X(a, xi)) * nu(X(a, xi), dx)

where X is the growth/waning flow, F the survival probability against death
plus events, Lambda the event (fission or boosting) rate and nu the offspring
law. Three kinds are shipped: unequal_fission, equal_fission and
waning_boosting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator

from .errors import ValidationFailure
from .flows import FlowTable, flow, survival
from .grids import Grid
from .measures import HybridMeasure
from .offspring import (AtomOffspring, BoostingProfile, DensityOffspring,
                        PROFILES, TabulatedProfile, equal_fission_offspring)

MODEL_KINDS = ("unequal_fission", "equal_fission", "waning_boosting")


# -- scalar rate functions from JSON specs -----------------------------------

def rate_function(spec):
    """Build a vectorized scalar function from a config fragment."""
    if callable(spec):
        return spec
    kind = spec["kind"]
    if kind == "constant":
        v = float(spec["value"])
        return lambda x, v=v: np.full_like(np.asarray(x, dtype=float), v)
    if kind == "linear":
        s = float(spec["slope"])
        return lambda x, s=s: s * np.asarray(x, dtype=float)
    if kind == "affine":
        s, c = float(spec["slope"]), float(spec["intercept"])
        return lambda x, s=s, c=c: s * np.asarray(x, dtype=float) + c
    if kind == "saturating":
        s = float(spec.get("scale", 1.0))
        return lambda x, s=s: np.asarray(x, dtype=float) / (s + np.asarray(x, dtype=float))
    if kind == "table":
        xs = np.asarray(spec["x"], dtype=float)
        ys = np.asarray(spec["y"], dtype=float)
        interp = PchipInterpolator(xs, ys, extrapolate=False)

        def tabulated(x, interp=interp, xs=xs, ys=ys):
            x = np.asarray(x, dtype=float)
            out = interp(np.clip(x, xs[0], xs[-1]))
            return np.asarray(out, dtype=float)

        return tabulated
    raise ValidationFailure(f"unknown rate-function kind {kind!r}")


@dataclass(eq=False)
class ModelSpec:
    kind: str
    growth_rate: object          # g: state -> signed rate, nonvanishing
    death_rate: object           # mu: state -> rate >= 0
    event_rate: object           # Lambda: state -> rate >= 0
    offspring: object            # DensityOffspring | AtomOffspring
    state_domain: tuple          # Omega
    birth_domain: tuple          # Omega_0, subset of Omega
    z0_bound: float              # negative decay exponent of the kernel mass
    boosting: BoostingProfile | None = None
    config: dict | None = None
    _tables: dict = field(default_factory=dict, repr=False)

    def mtilde(self, x):
        return self.death_rate(x) + self.event_rate(x)

    def flow_table(self, x_min: float, x_max: float, n: int = 6000) -> FlowTable:
        """Cached clock/hazard table covering at least [x_min, x_max]."""
        key = (round(math.log(x_min), 6), round(math.log(x_max), 6), n)
        tab = self._tables.get(key)
        if tab is None:
            tab = FlowTable(self.growth_rate, self.mtilde, x_min, x_max, n)
            self._tables[key] = tab
        return tab

    def table_for_grid(self, grid: Grid) -> FlowTable:
        """Table wide enough for grid states, their parents, and deep tails."""
        lo, hi = grid.x_lo, grid.x_hi
        if self.kind == "equal_fission":
            hi = 2.0 * hi
        elif self.kind == "unequal_fission":
            hi = self.assembly_cutoff(grid)
        elif self.kind == "waning_boosting":
            lo, hi = min(lo, grid.x_lo) * 1e-6, max(hi, self.boosting.peak)
        return self.flow_table(lo * 0.5, hi)

    def table_for_horizon(self, grid: Grid, horizon: float,
                          extra_sources=None, n: int = 6000) -> FlowTable:
        """Table wide enough to transport any source for the given duration.

        Extends the state range in the flow direction until the clock span
        covers the horizon (the flows considered never exit the open domain in
        finite time, so this terminates). extra_sources widens the base range
        to cover an initial measure living on a different grid.
        """
        lo, hi = grid.x_lo, grid.x_hi
        if extra_sources is not None:
            g2 = extra_sources.grid
            lo, hi = min(lo, g2.x_lo), max(hi, g2.x_hi)
            if extra_sources.n_atoms:
                lo = min(lo, float(extra_sources.atom_locations.min()))
                hi = max(hi, float(extra_sources.atom_locations.max()))
        if self.kind == "waning_boosting":
            hi = max(hi, self.boosting.peak)
        key = ("horizon", round(math.log(lo), 6), round(math.log(hi), 6),
               round(float(horizon), 6), n)
        cached = self._tables.get(key)
        if cached is not None:
            return cached
        lo_try, hi_try = lo * 0.5, hi * 2.0
        for _ in range(80):
            probe = FlowTable(self.growth_rate, self.mtilde, lo_try, hi_try, n=512)
            if probe.forward:
                span = float(probe.clock(hi_try) - probe.clock(hi))
                if span >= horizon:
                    break
                hi_try *= 4.0
            else:
                span = float(probe.clock(lo_try) - probe.clock(lo))
                if span >= horizon:
                    break
                lo_try *= 0.25
        tab = self.flow_table(lo_try, hi_try, n)
        self._tables[key] = tab
        return tab

    def assembly_cutoff(self, grid: Grid) -> float:
        """Parent-size cutoff: survival to this size is below ~1e-16."""
        if self.kind != "unequal_fission":
            return grid.x_hi
        tab = self.flow_table(grid.x_lo * 0.5, grid.x_hi * 64.0)
        haz = tab.hazard(np.geomspace(grid.x_hi, grid.x_hi * 64.0, 200)) - tab.hazard(grid.x_hi)
        idx = np.searchsorted(haz, 40.0)
        if idx >= haz.size:
            return grid.x_hi * 64.0
        return float(np.geomspace(grid.x_hi, grid.x_hi * 64.0, 200)[max(idx, 1)])


# -- kernel evaluation --------------------------------------------------------

def kernel_measure(model: ModelSpec, a: float, xi: float, grid: Grid) -> HybridMeasure:
    """Expected offspring measure of an individual aged a that started at xi.

    Atom offspring laws yield atoms, density laws a pure grid density. Atoms
    falling off the grid are dropped (truncation accounting is done by the
    callers that need it).
    """
    if a < 0:
        raise ValueError("kernel age must be >= 0")
    z = flow(model.growth_rate, a, xi, domain=model.state_domain) if a > 0 else float(xi)
    surv = survival(model, a, xi) if a > 0 else 1.0
    lam = float(model.event_rate(z))
    if isinstance(model.offspring, DensityOffspring):
        values = surv * lam * model.offspring.cell_averaged_values(z, grid)
        return HybridMeasure.from_density(grid, values)
    locs, weights = model.offspring.branch_atoms(z)
    locs = np.atleast_1d(locs.ravel())
    masses = surv * lam * np.atleast_1d(weights)
    keep = grid.contains(locs)
    return HybridMeasure.from_atoms(grid, locs[keep], masses[keep])


# -- validation ---------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    fatal: bool
    worst_value: float
    worst_point: float
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def ok(self) -> bool:
        """No fatal failures (regularity warnings allowed)."""
        return all(c.passed for c in self.checks if c.fatal)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self):
        return [c for c in self.checks if not c.passed]

    def to_json_dict(self) -> dict:
        return {"ok": self.ok, "all_passed": self.all_passed,
                "checks": [{"name": c.name, "passed": c.passed, "fatal": c.fatal,
                            "worst_value": c.worst_value, "worst_point": c.worst_point,
                            "detail": c.detail} for c in self.checks]}


def _sample_states(model: ModelSpec, samples: int, rng) -> np.ndarray:
    lo, hi = model.birth_domain
    lo = max(lo, 1e-3)
    hi = min(hi, 1e3) if not np.isfinite(hi) else hi
    return np.exp(rng.uniform(np.log(lo), np.log(hi), samples))


def validate(model: ModelSpec, samples: int = 200, seed: int = 20260810) -> ValidationReport:
    """Report-only checks of the standing model assumptions on sampled points.

    Structural checks (offspring mass/symmetry/biomass, nonvanishing growth,
    positive event-rate tail, exponential kernel-mass bound) are fatal; the
    strict regularity inequalities (equal-fission growth condition, boosting
    jump condition) are reported as non-fatal warnings since they guard
    convergence-rate guarantees rather than well-posedness.
    """
    rng = np.random.default_rng(seed)
    checks = []
    ys = _sample_states(model, samples, rng)

    g = model.growth_rate(ys)
    sign_ok = np.all(g > 0) or np.all(g < 0)
    min_abs = float(np.min(np.abs(g)))
    checks.append(CheckResult(
        "growth_rate_nonvanishing", bool(sign_ok and min_abs > 0), True,
        min_abs, float(ys[np.argmin(np.abs(g))]),
        "g must be continuous, nonvanishing and of one sign on the domain"))

    if model.kind in ("unequal_fission", "equal_fission"):
        tail = np.geomspace(max(ys.max(), 10.0), max(ys.max(), 10.0) * 1e4, 8)
        lam_tail = model.event_rate(tail)
        checks.append(CheckResult(
            "event_rate_tail_positive", bool(np.min(lam_tail) > 0), True,
            float(np.min(lam_tail)), float(tail[np.argmin(lam_tail)]),
            "the event rate must stay strictly positive at large sizes"))

    if isinstance(model.offspring, DensityOffspring):
        off = model.offspring
        worst_mass, worst_sym, worst_bio = 0.0, 0.0, 0.0
        at_mass = at_sym = at_bio = float(ys[0])
        xs_unit = np.linspace(1e-4, 1.0 - 1e-4, 101)
        for y in ys[: min(samples, 60)]:
            xs = xs_unit * y
            hv = off.h(y, xs)
            mass = np.trapezoid(hv, xs)
            bio = np.trapezoid(xs * hv, xs)
            sym = float(np.max(np.abs(hv - off.h(y, y - xs))))
            if abs(mass - 2.0) > worst_mass:
                worst_mass, at_mass = abs(mass - 2.0), float(y)
            if abs(bio - y) / y > worst_bio:
                worst_bio, at_bio = abs(bio - y) / y, float(y)
            if sym > worst_sym:
                worst_sym, at_sym = sym, float(y)
        checks.append(CheckResult("offspring_mass", worst_mass < 1e-3, True,
                                  worst_mass, at_mass,
                                  "integral of h(y, .) must equal 2"))
        checks.append(CheckResult("offspring_symmetry", worst_sym < 1e-6, True,
                                  worst_sym, at_sym, "h(y, x) must equal h(y, y - x)"))
        checks.append(CheckResult("offspring_biomass", worst_bio < 1e-3, True,
                                  worst_bio, at_bio,
                                  "integral of x h(y, x) dx must equal y"))
        # translation bound for the self-similar family
        sup_p = off.profile.sup()
        worst_ratio, at_ratio = 0.0, float(ys[0])
        for y in ys[: min(samples, 30)]:
            for delta in (1e-3 * y, 1e-2 * y):
                xs = np.linspace(0.0, y + delta, 2001)
                shift = np.abs(off.h(y, xs) - off.h(y, xs + delta))
                lhs = np.trapezoid(shift, xs)
                ratio = lhs / (6.0 * delta * sup_p / y)
                if ratio > worst_ratio:
                    worst_ratio, at_ratio = float(ratio), float(y)
        checks.append(CheckResult("fragment_translation_bound",
                                  worst_ratio <= 1.0 + 1e-6, False,
                                  worst_ratio, at_ratio,
                                  "L1 modulus of h must stay below 6 delta sup(p) / y"))

    if model.kind == "equal_fission":
        lhs = model.growth_rate(2.0 * ys)
        rhs = 2.0 * model.growth_rate(ys)
        margin = rhs - lhs
        worst = int(np.argmin(margin))
        checks.append(CheckResult(
            "equal_fission_growth_condition", bool(np.min(margin) > 0), False,
            float(margin[worst]), float(ys[worst]),
            "g(2x) < 2 g(x) rules out cyclic transport of fission cohorts"))

    if model.kind == "waning_boosting":
        prof = model.boosting
        jump = prof.slope_up * model.growth_rate(ys) / model.growth_rate(prof(ys))
        worst = int(np.argmax(jump))
        checks.append(CheckResult(
            "boosting_jump_condition", bool(np.max(jump) < 1.0), False,
            float(jump[worst]), float(ys[worst]),
            "slope_up * g(y) / g(f(y)) < 1 is the sufficient regularization bound"))
        lo, hi = model.birth_domain
        xs = np.linspace(model.state_domain[0] + 1e-9, model.state_domain[1], 401)
        fx = prof(xs)
        in_range = bool(np.all((fx >= lo - 1e-12) & (fx <= hi + 1e-12)))
        checks.append(CheckResult(
            "boosting_range", in_range, True,
            float(fx.min()), float(xs[np.argmin(fx)]),
            "the boosting map must send the state domain into the birth domain"))

    # exponential kernel-mass bound: fit C = sup F * Lambda * e^{-z0 t}
    ts = np.linspace(0.0, -3.0 / model.z0_bound, 12)
    worst_ratio, at = 0.0, 0.0
    nu_mass = 2.0 if model.kind != "waning_boosting" else 1.0
    for x0 in ys[: min(samples, 12)]:
        for t in ts:
            try:
                z = flow(model.growth_rate, float(t), float(x0),
                         domain=model.state_domain) if t > 0 else float(x0)
                fv = survival(model, float(t), float(x0)) if t > 0 else 1.0
            except Exception:
                continue
            ratio = nu_mass * fv * float(model.event_rate(z)) * math.exp(-model.z0_bound * t)
            if ratio > worst_ratio:
                worst_ratio, at = ratio, float(t)
    checks.append(CheckResult(
        "kernel_decay_bound", bool(np.isfinite(worst_ratio)), True,
        worst_ratio, at,
        "kernel mass must stay below C e^{z0 t}; fitted C is the worst ratio"))

    return ValidationReport(tuple(checks))


# -- built-in model builders --------------------------------------------------

def _tail_limit(lam) -> float:
    return float(lam(np.asarray(1e9)))


def unequal_fission_model(growth=None, death=None, event_rate=None,
                          profile="uniform", z0_bound=None, config=None) -> ModelSpec:
    g = rate_function(growth or {"kind": "constant", "value": 1.0})
    mu = rate_function(death or {"kind": "constant", "value": 0.0})
    lam = rate_function(event_rate or {"kind": "saturating", "scale": 1.0})
    if isinstance(profile, str):
        prof = PROFILES[profile]()
    elif isinstance(profile, dict):
        prof = (PROFILES[profile["kind"]]() if profile["kind"] in PROFILES
                else TabulatedProfile(profile["u"], profile["p"]))
    else:
        prof = profile
    z0 = float(z0_bound) if z0_bound is not None else -_tail_limit(lam)
    return ModelSpec("unequal_fission", g, mu, lam, DensityOffspring(prof),
                     (0.0, np.inf), (0.0, np.inf), z0, config=config)


def equal_fission_model(growth=None, death=None, event_rate=None,
                        z0_bound=None, config=None) -> ModelSpec:
    g = rate_function(growth or {"kind": "constant", "value": 1.0})
    mu = rate_function(death or {"kind": "constant", "value": 0.0})
    lam = rate_function(event_rate or {"kind": "constant", "value": 1.0})
    z0 = float(z0_bound) if z0_bound is not None else -_tail_limit(lam)
    return ModelSpec("equal_fission", g, mu, lam, equal_fission_offspring(),
                     (0.0, np.inf), (0.0, np.inf), z0, config=config)


def waning_boosting_model(profile: BoostingProfile | dict | None = None,
                          gamma: float = 1.0, growth=None, death=None,
                          z0_bound=None, config=None) -> ModelSpec:
    if profile is None:
        profile = BoostingProfile()
    elif isinstance(profile, dict):
        profile = BoostingProfile(**profile)
    g = rate_function(growth or {"kind": "linear", "slope": -0.2})
    mu = rate_function(death or {"kind": "constant", "value": 0.0})
    lam = rate_function({"kind": "constant", "value": float(gamma)})
    z0 = float(z0_bound) if z0_bound is not None else -(float(gamma) + float(mu(profile.peak)))
    return ModelSpec("waning_boosting", g, mu, lam, profile.offspring(),
                     (0.0, profile.peak), (profile.post_min, profile.peak),
                     z0, boosting=profile, config=config)


def model_from_config(cfg: dict) -> ModelSpec:
    """Build a ModelSpec from the ``model`` section of a run config."""
    kind = cfg.get("kind")
    if kind == "unequal_fission":
        return unequal_fission_model(cfg.get("growth"), cfg.get("death"),
                                     cfg.get("event_rate"),
                                     cfg.get("fragment_profile", "uniform"),
                                     cfg.get("z0_bound"), config=cfg)
    if kind == "equal_fission":
        return equal_fission_model(cfg.get("growth"), cfg.get("death"),
                                   cfg.get("event_rate"), cfg.get("z0_bound"),
                                   config=cfg)
    if kind == "waning_boosting":
        return waning_boosting_model(cfg.get("profile"), cfg.get("gamma", 1.0),
                                     cfg.get("growth"), cfg.get("death"),
                                     cfg.get("z0_bound"), config=cfg)
    raise ValidationFailure(
        f"model kind must be one of {MODEL_KINDS}, got {kind!r}")
