"""Radial heat and adjoint solvers on the ball with Dirichlet data at r = R.

Space is discretized by finite volumes on the shells of a :class:`RadialGrid`:
``M v' + K v = M f`` with ``M`` the diagonal of cell volumes and ``K`` the
symmetric tridiagonal stiffness matrix.  ``M + theta*dt*K`` is an M-matrix,
so implicit Euler (``theta = 1``) is monotone: nonnegative sources give
nonnegative states and the comparison principle holds exactly.

The adjoint is the forward semigroup run backwards from the terminal datum.
Because ``K`` is symmetric this is also the exact discrete adjoint, and

    sum_j u[n_t, j] phi[j] vol[j] == dt * sum_{k=1}^{n_t} <p[k-1], f[k]>_M

holds to rounding.  Space-time integrals elsewhere pair ``f[k]`` with
``p[k]`` on left endpoints, which differs from the identity above by O(dt).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .errors import ConfigurationError, DomainError, NumericalError
from .grid import RadialField, RadialGrid, SpaceTimeField, TimeGrid, integrate_spacetime

SCHEMES = ("implicit-euler", "crank-nicolson")


class _Stepper:
    """Factored ``(M + theta*dt*K) x = rhs`` for one grid pair and scheme."""

    def __init__(self, grid: RadialGrid, tgrid: TimeGrid, scheme: str):
        if scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
        self.grid = grid
        self.scheme = scheme
        self.theta = 1.0 if scheme == "implicit-euler" else 0.5
        self.dt = tgrid.dt
        self.mass = np.asarray(grid.cell_volumes)
        self.diag, self.off = grid.stiffness_bands()
        s = self.theta * self.dt
        ab = np.zeros((2, grid.n_r))
        ab[0, 1:] = s * self.off
        ab[1] = self.mass + s * self.diag
        self.chol = cholesky_banded(ab, lower=False)

    def apply_k(self, v):
        kv = self.diag * v
        kv[:-1] += self.off * v[1:]
        kv[1:] += self.off * v[:-1]
        return kv

    def propagate(self, v, src_old=None, src_new=None):
        """One step of the semigroup, optionally with source terms."""
        rhs = self.mass * v
        if self.theta < 1.0:
            rhs = rhs - (1.0 - self.theta) * self.dt * self.apply_k(v)
        if src_new is not None:
            src = src_new if self.theta == 1.0 else 0.5 * (src_old + src_new)
            rhs = rhs + self.dt * self.mass * src
        return cho_solve_banded((self.chol, False), rhs, check_finite=False)

    def residual(self, u, src):
        """Largest per-volume defect of the stepping equations over all steps."""
        kv = self.diag * u
        kv[:, :-1] += self.off * u[:, 1:]
        kv[:, 1:] += self.off * u[:, :-1]
        lhs = self.mass * u[1:] + self.theta * self.dt * kv[1:]
        rhs = self.mass * u[:-1] - (1.0 - self.theta) * self.dt * kv[:-1]
        s = src[1:] if self.theta == 1.0 else 0.5 * (src[:-1] + src[1:])
        rhs += self.dt * self.mass * s
        return float(np.max(np.abs(lhs - rhs) / self.mass))


@dataclass(frozen=True)
class HeatSolution:
    u: SpaceTimeField
    scheme: str
    residual_norm: float

    def boundary_values(self) -> np.ndarray:
        """Reconstructed value at r = R per time level (the Dirichlet datum)."""
        return np.zeros(self.u.tgrid.n_t + 1)


@dataclass(frozen=True)
class AdjointSolution:
    p: SpaceTimeField
    terminal: RadialField
    radial_derivative: SpaceTimeField
    scheme: str

    def slope_bound(self) -> float:
        """Largest value of dp/dr over all levels strictly before T."""
        return float(np.max(self.radial_derivative.values[:-1]))

    def strictly_decreasing(self) -> bool:
        """Whether dp/dr <= -eps_q at every level before T and every cell."""
        return self.slope_bound() <= -slope_threshold(self.terminal)


def slope_threshold(phi: RadialField) -> float:
    scale = float(np.max(np.abs(phi.values))) / phi.grid.R
    return 1e-12 * scale


def _check_levels(values, level):
    if not np.all(np.isfinite(values)):
        raise NumericalError("non-finite value in solver state", time_index=level)


def solve_heat(f: SpaceTimeField, scheme: str = "implicit-euler") -> HeatSolution:
    """Solve ``u_t - Lap u = f``, ``u(0) = 0``, ``u = 0`` on the sphere of radius R.

    The source is taken at the new time level (``f[n+1]`` for implicit Euler,
    the average of ``f[n]`` and ``f[n+1]`` for Crank-Nicolson).
    """
    grid, tgrid = f.grid, f.tgrid
    stepper = _Stepper(grid, tgrid, scheme)
    src = np.asarray(f.values)
    u = np.zeros((tgrid.n_t + 1, grid.n_r))
    for n in range(tgrid.n_t):
        u[n + 1] = stepper.propagate(u[n], src[n], src[n + 1])
        _check_levels(u[n + 1], n + 1)
    residual = stepper.residual(u, src)
    return HeatSolution(SpaceTimeField(grid, tgrid, u, "state"), scheme, residual)


def heat_semigroup(initial: RadialField, tgrid: TimeGrid, scheme: str = "implicit-euler") -> SpaceTimeField:
    """Propagate ``initial`` forward with zero source; row n is the state at t_n."""
    stepper = _Stepper(initial.grid, tgrid, scheme)
    v = np.empty((tgrid.n_t + 1, initial.grid.n_r))
    v[0] = initial.values
    for n in range(tgrid.n_t):
        v[n + 1] = stepper.propagate(v[n])
        _check_levels(v[n + 1], n + 1)
    return SpaceTimeField(initial.grid, tgrid, v, "state")


def radial_derivative(p: SpaceTimeField) -> SpaceTimeField:
    """dp/dr at cell centers: centered inside, one-sided at both ends."""
    q = np.gradient(np.asarray(p.values), p.grid.centers, axis=1, edge_order=1)
    return SpaceTimeField(p.grid, p.tgrid, q, "adjoint")


def solve_adjoint(phi: RadialField, tgrid: TimeGrid, scheme: str = "implicit-euler") -> AdjointSolution:
    """Solve ``p_t + Lap p = 0`` backwards from ``p(T) = phi``."""
    if np.any(phi.values < 0.0):
        raise DomainError("terminal datum must be nonnegative")
    stepper = _Stepper(phi.grid, tgrid, scheme)
    n_t = tgrid.n_t
    p = np.empty((n_t + 1, phi.grid.n_r))
    p[n_t] = phi.values
    for n in range(n_t - 1, -1, -1):
        p[n] = stepper.propagate(p[n + 1])
        _check_levels(p[n], n)
    field = SpaceTimeField(phi.grid, tgrid, p, "adjoint")
    return AdjointSolution(field, phi, radial_derivative(field), scheme)


def terminal_functional(u: SpaceTimeField, phi: RadialField) -> float:
    """``int_Omega u(T) phi``."""
    u.grid.check_same(phi.grid)
    return float(np.dot(u.values[-1] * phi.values, u.grid.cell_volumes))


def duality_gap(
    f: SpaceTimeField,
    phi: RadialField,
    scheme: str = "implicit-euler",
    state: SpaceTimeField | None = None,
    adjoint: AdjointSolution | None = None,
) -> float:
    """``|int u_f(T) phi - iint f p_phi|`` with left-endpoint time weights.

    Precomputed ``state`` (u_f) and ``adjoint`` are reused when given.
    """
    f.grid.check_same(phi.grid)
    u = state if state is not None else solve_heat(f, scheme).u
    p = (adjoint if adjoint is not None else solve_adjoint(phi, f.tgrid, scheme)).p
    lhs = terminal_functional(u, phi)
    rhs = integrate_spacetime(f.with_values(np.asarray(f.values) * p.values, kind="state"))
    return abs(lhs - rhs)


def maximum_principle_check(sol: HeatSolution) -> float:
    """Minimum of the state over all time levels and cells."""
    return float(np.min(sol.u.values))
