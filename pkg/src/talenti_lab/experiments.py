"""Runnable checks of the comparison and non-existence results.

* :func:`verify_talenti` -- rearranging the source in space at every time
  makes the state more concentrated at every time.
* :func:`step_approximation` -- nested-ball decomposition of a radial,
  nonincreasing weight.
* :func:`run_counterexample` -- two cutoff weights whose optimal controls
  differ, so no single control maximizes every ball integral of u(T).
* :func:`maximality_sweep` -- tries to falsify a candidate maximal control.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .control import AdmissibleControl, bathtub_optimize, spacetime_volume
from .errors import ConfigurationError, DomainError
from .grid import (
    RadialField,
    RadialGrid,
    SpaceTimeField,
    TimeGrid,
    ball_indicator,
    annulus_indicator,
    cell_average,
    integrate_spacetime,
    _gauss,
)
from .heat import SCHEMES, duality_gap, solve_heat, terminal_functional
from .rearrangement import concentration_profile, dominates, schwarz_rearrange

log = logging.getLogger(__name__)

BRIDGE = "1 - (10 s^3 - 15 s^4 + 6 s^5), s = (r - inner) / (outer - inner)"


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("TALENTI_LAB_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    workers = min(max_workers(), len(items)) or 1
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- cutoffs


@dataclass(frozen=True)
class CutoffSpec:
    """Radial cutoff: 1 on [0, inner], 0 on [outer, R], quintic bridge between.

    The bridge has zero first and second derivatives at both ends.
    """

    inner: float
    outer: float

    def __post_init__(self):
        if not (0.0 < self.inner < self.outer):
            raise DomainError(f"cutoff needs 0 < inner < outer, got {self.inner}, {self.outer}")

    def __call__(self, r):
        s = np.clip((np.asarray(r, dtype=float) - self.inner) / (self.outer - self.inner), 0.0, 1.0)
        return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)

    def on(self, grid: RadialGrid) -> RadialField:
        if self.outer > grid.R:
            raise DomainError(f"cutoff outer radius {self.outer} exceeds R = {grid.R}")
        return cell_average(grid, self, breakpoints=(self.inner, self.outer))

    def describe(self) -> dict:
        return {"inner": self.inner, "outer": self.outer, "bridge": BRIDGE}


def phi_cutoff(R: float = 1.0) -> CutoffSpec:
    """Weight concentrated near the origin: plateau on B(0, R/8), zero beyond R/4."""
    return CutoffSpec(R / 8.0, R / 4.0)


def psi_cutoff(R: float = 1.0) -> CutoffSpec:
    """Wide weight: plateau on B(0, R/2), decreasing on B(0, 3R/4) minus B(0, R/2)."""
    return CutoffSpec(R / 2.0, 3.0 * R / 4.0)


# ------------------------------------------------------ step approximation


@dataclass(frozen=True)
class StepApproximation:
    """``sum_j alpha_j 1_{annulus j}`` and the same function as ``sum_j beta_j 1_{B(0, r_j)}``.

    ``radii`` holds r_{k,0..k}; ``alpha`` holds alpha_{k,0..k-1}; ``beta``
    holds beta_{k,1..k}.
    """

    radii: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def k(self) -> int:
        return self.alpha.size

    def annulus_form(self, r):
        r = np.asarray(r, dtype=float)
        idx = np.clip(np.searchsorted(self.radii, r, side="right") - 1, 0, self.k - 1)
        return np.where(r < self.radii[-1], self.alpha[idx], 0.0)

    def ball_form(self, r):
        r = np.asarray(r, dtype=float)
        inside = r[..., None] < self.radii[None, 1:] if r.ndim == 0 else r[..., None] < self.radii[1:]
        return np.sum(np.where(inside, self.beta, 0.0), axis=-1)

    def on(self, grid: RadialGrid, form: str = "annulus") -> RadialField:
        fn = self.annulus_form if form == "annulus" else self.ball_form
        return cell_average(grid, fn, breakpoints=self.radii[1:-1])


def step_approximation(phi, k: int, R: float = 1.0) -> StepApproximation:
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    radii = np.arange(k + 1) * (R / k)
    radii[-1] = R
    alpha = np.asarray(phi(radii[1:]), dtype=float)
    beta = np.empty(k)
    beta[-1] = alpha[-1]
    beta[:-1] = alpha[:-1] - alpha[1:]
    return StepApproximation(radii, alpha, beta)


def l1_error(phi, approx: StepApproximation, d: int, breakpoints=(), order: int = 12) -> float:
    """``int_Omega |phi - phi_k|`` over B(0, R) in R^d by piecewise Gauss quadrature."""
    R = approx.radii[-1]
    edges = np.union1d(approx.radii, [b for b in breakpoints if 0.0 < b < R])
    a, b = edges[:-1], edges[1:]
    x, w = _gauss(order)
    r = 0.5 * (b - a)[:, None] * x + 0.5 * (b + a)[:, None]
    jac = 0.5 * (b - a)[:, None] * w * r ** (d - 1)
    area = d * math.pi ** (d / 2) / math.gamma(d / 2 + 1)
    diff = np.abs(phi(r) - approx.annulus_form(r))
    return float(area * np.sum(diff * jac))


# ------------------------------------------------------- random controls


def scale_to_volume(shape: SpaceTimeField, V0: float) -> SpaceTimeField:
    """``clip(s * shape, 0, 1)`` with ``s`` chosen so the space-time mass is ``V0``."""

    def excess(s):
        return integrate_spacetime(shape.with_values(np.clip(s * shape.values, 0.0, 1.0))) - V0

    if integrate_spacetime(shape.with_values((shape.values > 0).astype(float))) <= V0:
        raise DomainError("support of the shape is too small to carry the volume V0")
    hi = 1.0
    while excess(hi) < 0.0:
        hi *= 2.0
    s = brentq(excess, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return shape.with_values(np.clip(s * shape.values, 0.0, 1.0), kind="control")


def random_control(grid: RadialGrid, tgrid: TimeGrid, V0: float, rng: np.random.Generator) -> AdmissibleControl:
    """Smooth, non-radially-ordered admissible control from a few random bumps."""
    t = tgrid.times[:, None]
    r = grid.centers[None, :]
    shape = np.full((tgrid.n_t + 1, grid.n_r), 0.05)
    for _ in range(3):
        amp = rng.uniform(0.2, 1.0)
        center = rng.uniform(0.0, grid.R)
        width = rng.uniform(0.05, 0.3) * grid.R
        freq = rng.uniform(0.5, 3.0) / tgrid.T
        phase = rng.uniform(0.0, 2 * np.pi)
        shape += amp * np.exp(-(((r - center) / width) ** 2)) * (1.0 + np.sin(2 * np.pi * freq * t + phase))
    f = scale_to_volume(SpaceTimeField(grid, tgrid, shape, "state"), V0)
    return AdmissibleControl(f, V0)


def random_bang_bang(grid: RadialGrid, tgrid: TimeGrid, V0: float, rng: np.random.Generator,
                     blocks: int = 8) -> AdmissibleControl:
    """Random union of (time window x annulus) blocks, scaled down to mass V0."""
    nt, nr = tgrid.n_t + 1, grid.n_r
    mask = rng.random((blocks, blocks)) < 0.6
    rows = np.minimum(np.arange(nt) * blocks // nt, blocks - 1)
    cols = np.minimum(np.arange(nr) * blocks // nr, blocks - 1)
    f = SpaceTimeField(grid, tgrid, mask[np.ix_(rows, cols)].astype(float), "state")
    mass = integrate_spacetime(f)
    if mass > V0:
        f = f.with_values(f.values * (V0 / mass), kind="control")
    else:
        f = scale_to_volume(f.with_values(f.values + 0.05), V0)
    return AdmissibleControl(f, V0)


def ball_window_control(grid, tgrid, V0, levels: int, start: int) -> AdmissibleControl:
    """Indicator of a centered ball switched on for ``levels`` time levels from ``start``."""
    rho = grid.radius_of_volume(V0 / (levels * tgrid.dt))
    if rho > grid.R:
        raise DomainError("time window too short to carry V0 inside the ball")
    v = np.zeros((tgrid.n_t + 1, grid.n_r))
    v[start:start + levels] = ball_indicator(grid, float(rho)).values
    return AdmissibleControl(SpaceTimeField(grid, tgrid, v, "control"), V0)


def annulus_control(grid, tgrid, V0, inner: float) -> AdmissibleControl:
    """Time-constant annulus with the given inner radius and mass V0."""
    outer = grid.radius_of_volume(grid.ball_volume(inner) + V0 / tgrid.T)
    if outer > grid.R:
        raise DomainError("annulus does not fit in the ball")
    v = np.tile(annulus_indicator(grid, inner, float(outer)).values, (tgrid.n_t + 1, 1))
    return AdmissibleControl(SpaceTimeField(grid, tgrid, v, "control"), V0)


# ------------------------------------------------------------- Talenti


def talenti_tolerance(grid: RadialGrid, tgrid: TimeGrid, scale: float) -> float:
    return (grid.dr ** 2 + tgrid.dt) * scale


@dataclass
class TalentiResult:
    worst_margin: float
    tol: float
    level_margins: np.ndarray

    @property
    def holds(self) -> bool:
        return self.worst_margin <= self.tol


def verify_talenti(f, tol: float | None = None, scheme: str = "implicit-euler") -> TalentiResult:
    """Compare u_f with u_{f#} in the concentration order at every time level.

    The default tolerance is ``(dr^2 + dt)`` times the largest mass of
    u_{f#}(t).
    """
    if isinstance(f, AdmissibleControl):
        f = f.f
    u = solve_heat(f, scheme).u
    us = solve_heat(schwarz_rearrange(f), scheme).u
    margins = np.array([dominates(u.at(i), us.at(i), tol=np.inf).margin for i in range(f.tgrid.n_t + 1)])
    if tol is None:
        scale = float(np.max(np.asarray(us.values) @ f.grid.cell_volumes))
        tol = talenti_tolerance(f.grid, f.tgrid, scale)
    return TalentiResult(float(np.max(margins)), float(tol), margins)


def talenti_experiment(samples: int = 20, n_r: int = 128, n_t: int = 128, seed: int = 0,
                       R: float = 1.0, d: int = 2, T: float = 1.0, V0_fraction: float = 0.25,
                       scheme: str = "implicit-euler") -> dict:
    grid, tgrid = RadialGrid(R, d, n_r), TimeGrid(T, n_t)
    V0 = V0_fraction * spacetime_volume(grid, tgrid)
    rng = np.random.default_rng(seed)
    controls = [random_control(grid, tgrid, V0, rng) for _ in range(samples)]
    results = _map(lambda c: verify_talenti(c, scheme=scheme), controls)
    return {
        "config": {"R": R, "d": d, "T": T, "V0_fraction": V0_fraction, "n_r": n_r, "n_t": n_t,
                   "scheme": scheme, "seed": seed, "samples": samples},
        "margins": [r.worst_margin for r in results],
        "tolerances": [r.tol for r in results],
        "worst_margin": max(r.worst_margin for r in results),
        "all_hold": all(r.holds for r in results),
    }


# ------------------------------------------------------- counterexample


@dataclass(frozen=True)
class CounterexampleConfig:
    R: float = 1.0
    d: int = 2
    T: float = 1.0
    V0_fraction: float = 0.25
    n_r: int = 128
    n_t: int = 32768
    scheme: str = "implicit-euler"
    seed: int = 0

    def __post_init__(self):
        for name in ("R", "T"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ConfigurationError(f"{name} must be positive, got {v!r}")
        if not (0.0 < self.V0_fraction < 1.0):
            raise ConfigurationError(f"V0_fraction must lie in (0, 1), got {self.V0_fraction!r}")
        for name in ("d", "n_r", "n_t"):
            v = getattr(self, name)
            if not (isinstance(v, int) and not isinstance(v, bool) and v >= 1):
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        if self.n_t < 2:
            raise ConfigurationError("n_t must be at least 2")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigurationError(f"seed must be an integer, got {self.seed!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "CounterexampleConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "CounterexampleConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid config JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("config JSON must be an object")
        return cls.from_dict(data)

    def grids(self):
        return RadialGrid(self.R, self.d, self.n_r), TimeGrid(self.T, self.n_t)

    def volume(self) -> float:
        grid, tgrid = self.grids()
        return self.V0_fraction * spacetime_volume(grid, tgrid)


@dataclass
class CounterexampleReport:
    config: dict
    cutoffs: dict
    c_phi: float
    c_psi: float
    r_phi_curve: list
    r_psi_curve: list
    r_phi_T_minus: float
    r_psi_T_minus: float
    r_phi_T: float
    r_psi_T: float
    neighbourhood_levels: int
    neighbourhood_min_separation: float
    control_distance: float
    cross_objectives: dict
    duality_gaps: dict
    strict_margins: dict
    invariants: dict
    notes: list = field(default_factory=list)

    @property
    def all_invariants_hold(self) -> bool:
        return all(self.invariants.values())

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CounterexampleRun:
    """Report plus the heavy objects needed by follow-up experiments."""

    report: CounterexampleReport
    grid: RadialGrid
    tgrid: TimeGrid
    V0: float
    phi: RadialField
    psi: RadialField
    f_phi: AdmissibleControl
    f_psi: AdmissibleControl
    u_phi_T: RadialField
    u_psi_T: RadialField


def neighbourhood_levels(n_t: int) -> int:
    return max(2, n_t // 16)


def run_counterexample(config: CounterexampleConfig | None = None) -> CounterexampleRun:
    cfg = config or CounterexampleConfig()
    grid, tgrid = cfg.grids()
    V0 = cfg.volume()
    phi_spec, psi_spec = phi_cutoff(cfg.R), psi_cutoff(cfg.R)
    phi, psi = phi_spec.on(grid), psi_spec.on(grid)

    log.info("bathtub for phi and psi on (n_t, n_r) = (%d, %d)", cfg.n_t, cfg.n_r)
    sol_phi = bathtub_optimize(phi, V0, tgrid, cfg.scheme)
    sol_psi = bathtub_optimize(psi, V0, tgrid, cfg.scheme)
    f_phi, f_psi = sol_phi.control, sol_psi.control

    # forward solves, independent of the adjoint used by the optimizer
    u_phi = solve_heat(f_phi.f, cfg.scheme).u
    u_psi = solve_heat(f_psi.f, cfg.scheme).u
    J = {
        "J_phi_f_phi": terminal_functional(u_phi, phi),
        "J_phi_f_psi": terminal_functional(u_psi, phi),
        "J_psi_f_psi": terminal_functional(u_psi, psi),
        "J_psi_f_phi": terminal_functional(u_phi, psi),
    }
    gaps = {
        "phi_f_phi": duality_gap(f_phi.f, phi, state=u_phi, adjoint=sol_phi.adjoint),
        "phi_f_psi": duality_gap(f_psi.f, phi, state=u_psi, adjoint=sol_phi.adjoint),
        "psi_f_psi": duality_gap(f_psi.f, psi, state=u_psi, adjoint=sol_psi.adjoint),
        "psi_f_phi": duality_gap(f_phi.f, psi, state=u_phi, adjoint=sol_psi.adjoint),
    }
    margins = {
        "phi": J["J_phi_f_phi"] - J["J_phi_f_psi"],
        "psi": J["J_psi_f_psi"] - J["J_psi_f_phi"],
    }
    max_gap = max(gaps.values())
    margins["ratio_to_max_duality_gap"] = min(margins["phi"], margins["psi"]) / max(max_gap, np.finfo(float).tiny)

    rc_phi, rc_psi = sol_phi.radius_curve, sol_psi.radius_curve
    m = neighbourhood_levels(cfg.n_t)
    window = slice(cfg.n_t - m, cfg.n_t)
    separation = float(np.min(np.abs(rc_psi[window] - rc_phi[window])))
    distance = integrate_spacetime(f_phi.f.with_values(np.abs(f_phi.f.values - f_psi.f.values), kind="state"))
    distance /= spacetime_volume(grid, tgrid)

    invariants = {
        "r_phi_T_minus_below_quarter_R": bool(rc_phi[-2] < cfg.R / 4.0),
        "r_psi_T_minus_above_half_R": bool(rc_psi[-2] > cfg.R / 2.0),
        "control_distance_positive": bool(distance > 0.0),
        "strict_phi_inequality": bool(margins["phi"] > 0.0),
        "strict_psi_inequality": bool(margins["psi"] > 0.0),
        "margins_exceed_10x_duality_gap": bool(min(margins["phi"], margins["psi"]) >= 10.0 * max_gap),
        "radii_separated_near_T": bool(separation > 0.0),
        "multipliers_in_sunrise_bounds": bool(
            0.0 < sol_phi.multiplier < phi.values.max() and 0.0 < sol_psi.multiplier < psi.values.max()
        ),
    }
    report = CounterexampleReport(
        config=asdict(cfg) | {"V0": V0},
        cutoffs={"phi": phi_spec.describe(), "psi": psi_spec.describe()},
        c_phi=sol_phi.multiplier,
        c_psi=sol_psi.multiplier,
        r_phi_curve=rc_phi.tolist(),
        r_psi_curve=rc_psi.tolist(),
        r_phi_T_minus=float(rc_phi[-2]),
        r_psi_T_minus=float(rc_psi[-2]),
        r_phi_T=float(rc_phi[-1]),
        r_psi_T=float(rc_psi[-1]),
        neighbourhood_levels=m,
        neighbourhood_min_separation=separation,
        control_distance=float(distance),
        cross_objectives=J,
        duality_gaps=gaps,
        strict_margins=margins,
        invariants=invariants,
        notes=[
            "psi decreases on the annulus R/2 < r < 3R/4 (inner and outer radii in that order)",
            "radius curves are 0 at time levels where the adjoint stays below the multiplier",
        ],
    )
    return CounterexampleRun(report, grid, tgrid, V0, phi, psi, f_phi, f_psi,
                             u_phi.terminal(), u_psi.terminal())


# ------------------------------------------------------- maximality sweep


@dataclass(frozen=True)
class Failure:
    sample: str
    node: int
    radius: float
    margin: float


def adversarial_controls(grid: RadialGrid, tgrid: TimeGrid, V0: float, rng: np.random.Generator,
                         n_random: int = 4, optima: dict | None = None) -> dict:
    """Named admissible controls: optima, windowed balls, annuli, random bang-bang."""
    out = dict(optima or {})
    n = tgrid.n_t
    for frac in (1.0, 0.75, 0.5):
        levels = max(1, int(round(frac * n)))
        for where, start in (("early", 0), ("late", n - levels)):
            try:
                out[f"ball_{where}_{frac:g}"] = ball_window_control(grid, tgrid, V0, levels, start)
            except DomainError:
                continue
            if frac == 1.0:
                break
    for inner in (0.25, 0.5):
        try:
            out[f"annulus_{inner:g}R"] = annulus_control(grid, tgrid, V0, inner * grid.R)
        except DomainError:
            pass
    for i in range(n_random):
        out[f"random_bang_bang_{i}"] = random_bang_bang(grid, tgrid, V0, rng)
    return out


def terminal_states(controls: dict, scheme: str = "implicit-euler") -> dict:
    names = list(controls)
    states = _map(lambda k: solve_heat(controls[k].f, scheme).u.terminal(), names)
    return dict(zip(names, states))


def maximality_sweep(candidate, adversaries: dict, tol: float = 1e-9, scheme: str = "implicit-euler",
                     states: dict | None = None, candidate_state: RadialField | None = None) -> list:
    """Every adversary whose u(T) is not dominated by the candidate's u(T).

    ``states`` and ``candidate_state`` may supply precomputed terminal states.
    """
    if isinstance(candidate, AdmissibleControl):
        candidate = candidate.f
    target = candidate_state if candidate_state is not None else solve_heat(candidate, scheme).u.terminal()
    states = states if states is not None else terminal_states(adversaries, scheme)
    failures = []
    for name in adversaries:
        dom = dominates(states[name], target, tol=tol)
        if not dom.holds:
            failures.append(Failure(name, dom.node, dom.radius, dom.margin))
    return failures


def blended_control(a: AdmissibleControl, b: AdmissibleControl) -> AdmissibleControl:
    """``(a + b) / 2`` renormalized to the common volume."""
    mix = a.f.with_values(0.5 * (a.f.values + b.f.values), kind="control")
    mass = integrate_spacetime(mix)
    if abs(mass - a.V0) > 0.0:
        mix = scale_to_volume(mix, a.V0)
    return AdmissibleControl(mix, a.V0)


def sweep_experiment(run: CounterexampleRun, n_random: int = 4, seed: int = 0,
                     tol: float = 1e-9, scheme: str = "implicit-euler") -> dict:
    """Falsify f_phi, f_psi and their blend against the adversarial set."""
    rng = np.random.default_rng(seed)
    optima = {"f_phi": run.f_phi, "f_psi": run.f_psi}
    adversaries = adversarial_controls(run.grid, run.tgrid, run.V0, rng, n_random, optima)
    others = {k: v for k, v in adversaries.items() if k not in optima}
    states = {"f_phi": run.u_phi_T, "f_psi": run.u_psi_T}
    states.update(terminal_states(others, scheme))
    blend = blended_control(run.f_phi, run.f_psi)
    candidates = {
        "f_phi": (run.f_phi, run.u_phi_T),
        "f_psi": (run.f_psi, run.u_psi_T),
        "blend": (blend, solve_heat(blend.f, scheme).u.terminal()),
    }
    results = {}
    for name, (control, state) in candidates.items():
        failures = maximality_sweep(control, adversaries, tol, scheme, states, state)
        results[name] = {
            "falsified": bool(failures),
            "failures": [asdict(f) for f in failures],
        }
    return {
        "samples": sorted(adversaries),
        "tol": tol,
        "candidates": results,
        "all_falsified": all(r["falsified"] for r in results.values()),
    }


def profile_table(run: CounterexampleRun) -> dict:
    """CSV-ready tables: radius curves and terminal concentration profiles."""
    t = run.tgrid.times
    curves = np.column_stack([t, run.report.r_phi_curve, run.report.r_psi_curve])
    prof_phi = concentration_profile(run.u_phi_T).cumulative
    prof_psi = concentration_profile(run.u_psi_T).cumulative
    profiles = np.column_stack([run.grid.nodes, prof_phi, prof_psi])
    return {
        "radius_curves.csv": ("t,r_phi,r_psi", curves),
        "concentration_profiles.csv": ("r,profile_u_f_phi_T,profile_u_f_psi_T", profiles),
    }
