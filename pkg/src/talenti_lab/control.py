"""Linear-functional control of the heat equation under a space-time volume budget.

Controls satisfy ``0 <= f <= 1`` and ``iint f = V0``.  For a terminal weight
``phi`` the objective ``int u_f(T) phi`` equals ``iint f p_phi`` with ``p_phi``
the adjoint state, so the maximizer fills the super-level set
``{p_phi > c}`` up to volume ``V0`` (bathtub principle).  Two independent
routes compute it: bisection on the threshold ``c`` and a sort of all
space-time cells by adjoint value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateLevelError, DomainError, MonotonicityError, RangeError
from .grid import (
    RadialField,
    RadialGrid,
    SpaceTimeField,
    TimeGrid,
    cell_average,
    integrate_spacetime,
)
from .heat import AdjointSolution, solve_adjoint, solve_heat
from .rearrangement import concentration_profile

VOLUME_RTOL = 1e-9
CERTIFICATE_RTOL = 1e-10
MAX_BISECTIONS = 400
MONOTONE_RTOL = 1e-13


def spacetime_volume(grid: RadialGrid, tgrid: TimeGrid) -> float:
    return tgrid.T * grid.volume


@dataclass(frozen=True)
class AdmissibleControl:
    f: SpaceTimeField
    V0: float

    def __post_init__(self):
        total = spacetime_volume(self.f.grid, self.f.tgrid)
        if not (0.0 < self.V0 < total):
            raise DomainError(f"V0 = {self.V0!r} outside (0, {total!r})")
        v = np.asarray(self.f.values)
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise DomainError("control values must lie in [0, 1]")
        mass = integrate_spacetime(self.f)
        if abs(mass - self.V0) > VOLUME_RTOL * self.V0:
            raise DomainError(f"control mass {mass!r} differs from V0 = {self.V0!r}")
        if self.f.kind != "control":
            object.__setattr__(self, "f", self.f.with_values(v, kind="control"))

    @property
    def volume_residual(self) -> float:
        return abs(integrate_spacetime(self.f) - self.V0)


def _adjoint_for(phi_or_adjoint, tgrid, scheme):
    if isinstance(phi_or_adjoint, AdjointSolution):
        phi_or_adjoint.p.tgrid.check_same(tgrid)
        return phi_or_adjoint
    return solve_adjoint(phi_or_adjoint, tgrid, scheme)


def objective(f, phi_or_adjoint, scheme: str = "implicit-euler") -> float:
    """``iint f p_phi`` (duality form of ``int u_f(T) phi``)."""
    if isinstance(f, AdmissibleControl):
        f = f.f
    if np.any(f.values < 0.0) or np.any(f.values > 1.0):
        raise DomainError("control values must lie in [0, 1]")
    adj = _adjoint_for(phi_or_adjoint, f.tgrid, scheme)
    f.grid.check_same(adj.p.grid)
    return integrate_spacetime(f.with_values(np.asarray(f.values) * adj.p.values, kind="state"))


def _weights(grid, tgrid):
    return np.outer(tgrid.weights, grid.cell_volumes)


def exact_bathtub(p: SpaceTimeField, V0: float):
    """Sort-based discrete bathtub: fill cells by decreasing ``p`` up to ``V0``.

    Returns the control values and the optimal value.  Ties are filled in
    (time level, cell) order.
    """
    w = _weights(p.grid, p.tgrid)[:-1].ravel()
    vals = np.asarray(p.values)[:-1].ravel()
    order = np.lexsort((np.arange(vals.size), -vals))
    cum = np.cumsum(w[order])
    k = int(np.searchsorted(cum, V0, side="left"))
    if k >= vals.size:
        raise DomainError(f"V0 = {V0!r} exceeds the available volume")
    f = np.zeros(vals.size)
    f[order[:k]] = 1.0
    filled = cum[k - 1] if k > 0 else 0.0
    f[order[k]] = min(max((V0 - filled) / w[order[k]], 0.0), 1.0)
    full = np.zeros(p.values.shape)
    full[:-1] = f.reshape(p.tgrid.n_t, p.grid.n_r)
    value = math.fsum(w * f * vals)
    return full, value


def _origin_value(prof):
    if prof.size < 2:
        return prof[0]
    # even quadratic through the two innermost cell centers
    return prof[0] + (prof[0] - prof[1]) / 8.0


def level_radius(p, t_index: int, c: float) -> float:
    """Radius of the sphere ``{p(t, .) = c}`` by piecewise-linear inversion.

    The cell-center profile is extended by its symmetric value at the origin
    and by the Dirichlet value 0 at r = R.  The profile must be nonincreasing
    and must not sit at level ``c`` over more than one point.  Returns the
    outer edge of ``{p(t, .) > c}``.
    """
    field = p.p if isinstance(p, AdjointSolution) else p
    grid = field.grid
    prof = np.asarray(field.values[t_index])
    r = np.concatenate(([0.0], grid.centers, [grid.R]))
    v = np.concatenate(([_origin_value(prof)], prof, [0.0]))
    # rises at rounding level appear on flat plateaus of the solver output
    rises = np.flatnonzero(np.diff(v) > MONOTONE_RTOL * abs(v[0]))
    if rises.size:
        raise MonotonicityError(
            f"profile increases near r = {r[rises[0]]!r}", time_index=t_index)
    if not (0.0 < c < v[0]):
        raise RangeError(f"level {c!r} outside profile range (0, {v[0]!r})", time_index=t_index)
    j = int(np.flatnonzero(v > c)[-1]) + 1
    if v[j] == c and v[j + 1] == c:
        raise MonotonicityError(f"level {c!r} is a plateau of the profile", time_index=t_index)
    s = (v[j - 1] - c) / (v[j - 1] - v[j])
    return float(r[j - 1] + s * (r[j] - r[j - 1]))


@dataclass(frozen=True)
class BathtubSolution:
    """Optimal control for one terminal weight and volume budget.

    ``radius_curve[i]`` is the radius of ``{p(t_i, .) = c}``; it is 0 at levels
    where ``p(t_i, .) <= c`` everywhere (empty super-level set).  The last
    entry is the level radius of the terminal weight itself.
    """

    control: AdmissibleControl
    multiplier: float
    multiplier_interval: tuple
    radius_curve: np.ndarray
    filled_radius: np.ndarray
    objective: float
    exact_objective: float
    adjoint: AdjointSolution
    iterations: int

    @property
    def feasibility_residual(self) -> float:
        return self.control.volume_residual


def _bisect_level(vals, w, V0):
    """Bracket the straddling adjoint value by bisection on the threshold."""

    def above(c):
        return float(np.sum(w[vals > c]))

    lo, hi = float(vals.min()) - 1.0, float(vals.max())
    for it in range(1, MAX_BISECTIONS + 1):
        inside = vals[(vals > lo) & (vals <= hi)]
        if inside.size and inside.min() == inside.max():
            return float(inside.max()), it
        mid = 0.5 * (lo + hi)
        if not (lo < mid < hi):
            raise DegenerateLevelError("threshold bisection stagnated", (lo, hi))
        if above(mid) > V0:
            lo = mid
        else:
            hi = mid
    raise DegenerateLevelError("threshold bisection did not isolate a level", (lo, hi))


def bathtub_optimize(
    phi: RadialField,
    V0: float,
    tgrid: TimeGrid,
    scheme: str = "implicit-euler",
    adjoint: AdjointSolution | None = None,
) -> BathtubSolution:
    """Maximize ``int u_f(T) phi`` over admissible controls of mass ``V0``."""
    grid = phi.grid
    total = spacetime_volume(grid, tgrid)
    if not (0.0 < V0 < total):
        raise DomainError(f"V0 = {V0!r} outside (0, {total!r})")
    pv = np.asarray(phi.values)
    # cell averages of a plateau can rise by an ulp
    rising = np.any(np.diff(pv) > MONOTONE_RTOL * float(np.max(np.abs(pv))))
    if np.any(pv < 0.0) or rising or np.all(pv == pv[0]):
        raise DomainError("terminal weight must be nonnegative, nonincreasing and nonconstant")
    adj = adjoint if adjoint is not None else solve_adjoint(phi, tgrid, scheme)
    p = np.asarray(adj.p.values)
    W = _weights(grid, tgrid)
    vals, w = p[:-1].ravel(), W[:-1].ravel()

    c_star, iterations = _bisect_level(vals, w, V0)
    upper = vals > c_star
    at = vals == c_star
    filled = float(np.sum(w[upper]))
    theta = (V0 - filled) / float(np.sum(w[at]))
    theta = min(max(theta, 0.0), 1.0)
    if theta == 0.0:
        # V0 sits exactly on a cell boundary: any c in [c_star, next value) works
        nxt = float(vals[upper].min()) if upper.any() else float(vals.max())
        interval = (c_star, nxt)
    else:
        interval = (c_star, c_star)
    c = 0.5 * (interval[0] + interval[1])

    f = np.zeros(p.shape)
    f[:-1] = np.where(upper, 1.0, np.where(at, theta, 0.0)).reshape(tgrid.n_t, grid.n_r)
    f[-1] = (pv > c).astype(float)
    control = AdmissibleControl(SpaceTimeField(grid, tgrid, f, "control"), V0)
    residual = control.volume_residual
    if residual > VOLUME_RTOL * total:
        raise ContractError(f"volume residual {residual!r} exceeds tolerance")

    value = objective(control.f, adj)
    _, exact = exact_bathtub(adj.p, V0)
    if abs(value - exact) > CERTIFICATE_RTOL * max(abs(exact), np.finfo(float).tiny):
        raise ContractError(f"bisection optimum {value!r} disagrees with sorted optimum {exact!r}")

    radii = np.zeros(tgrid.n_t + 1)
    for i in range(tgrid.n_t):
        if _origin_value(p[i]) > c:
            radii[i] = level_radius(adj.p, i, c)
    if pv[0] > c:
        radii[-1] = level_radius(adj.p, tgrid.n_t, c)
    filled_radius = grid.radius_of_volume(f @ grid.cell_volumes)

    return BathtubSolution(
        control=control,
        multiplier=float(c),
        multiplier_interval=(float(interval[0]), float(interval[1])),
        radius_curve=radii,
        filled_radius=np.asarray(filled_radius),
        objective=value,
        exact_objective=exact,
        adjoint=adj,
        iterations=iterations,
    )


def ramp_indicator(grid: RadialGrid, r: float, width: float | None = None) -> RadialField:
    """Indicator of B(0, r) smoothed to a linear ramp of the given width."""
    width = 2.0 * grid.dr if width is None else width
    a, b = r - 0.5 * width, r + 0.5 * width

    def ramp(s):
        return np.clip((b - s) / (b - a), 0.0, 1.0)

    return cell_average(grid, ramp, breakpoints=(a, b))


def solve_P_r(
    r: float,
    V0: float,
    grid: RadialGrid,
    tgrid: TimeGrid,
    scheme: str = "implicit-euler",
) -> float:
    """Approximate ``max_f sup_{|E| = |B(0, r)|} int_E u_f(T)`` (diagnostic).

    The inner sup is the concentration profile of ``u_f(T)`` at ``r``; the
    outer max is taken over bathtub optimizers for a ramped indicator of
    B(0, r).
    """
    if not (0.0 < r < grid.R):
        raise DomainError(f"radius {r!r} outside (0, {grid.R})")
    sol = bathtub_optimize(ramp_indicator(grid, r), V0, tgrid, scheme)
    u = solve_heat(sol.control.f, scheme).u
    return concentration_profile(u.terminal()).at_radius(r)
