"""Radial grids, fields and quadrature on the ball B(0, R) in R^d.

Fields are stored as cell averages over the shells ``r_i <= |x| < r_{i+1}``
so that volumes, masses and rearrangements are finite sums.  Space-time
fields carry one row per time level; a row ``i < n_t`` stands for the
interval ``[t_i, t_{i+1})`` in space-time integrals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigurationError, DomainError

KINDS = ("control", "state", "adjoint")


def unit_ball_volume(d: int) -> float:
    """Volume of the unit ball in R^d."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def sphere_area(d: int, r):
    """Surface area of the sphere of radius ``r`` in R^d (two points when d=1)."""
    return d * unit_ball_volume(d) * np.asarray(r, dtype=float) ** (d - 1)


@dataclass(frozen=True)
class RadialGrid:
    """Uniform partition of [0, R] into ``n_r`` shells of B(0, R) in R^d."""

    R: float = 1.0
    d: int = 2
    n_r: int = 256

    def __post_init__(self):
        if not (self.R > 0 and math.isfinite(self.R)):
            raise ConfigurationError(f"radius must be positive, got {self.R!r}")
        if int(self.d) != self.d or self.d < 1:
            raise ConfigurationError(f"dimension must be an integer >= 1, got {self.d!r}")
        if int(self.n_r) != self.n_r or self.n_r < 1:
            raise ConfigurationError(f"n_r must be a positive integer, got {self.n_r!r}")
        object.__setattr__(self, "R", float(self.R))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "n_r", int(self.n_r))

    @property
    def dr(self) -> float:
        return self.R / self.n_r

    @property
    def omega(self) -> float:
        return unit_ball_volume(self.d)

    @cached_property
    def nodes(self) -> np.ndarray:
        r = np.arange(self.n_r + 1) * self.dr
        r[-1] = self.R
        r.flags.writeable = False
        return r

    @cached_property
    def centers(self) -> np.ndarray:
        c = 0.5 * (self.nodes[1:] + self.nodes[:-1])
        c.flags.writeable = False
        return c

    @cached_property
    def cell_volumes(self) -> np.ndarray:
        p = self.nodes ** self.d
        v = self.omega * (p[1:] - p[:-1])
        v.flags.writeable = False
        return v

    @cached_property
    def volume_edges(self) -> np.ndarray:
        """Enclosed volume at every node, built by cumulative summation."""
        e = np.concatenate(([0.0], np.cumsum(self.cell_volumes)))
        e.flags.writeable = False
        return e

    @property
    def volume(self) -> float:
        return self.omega * self.R ** self.d

    def ball_volume(self, r):
        return self.omega * np.asarray(r, dtype=float) ** self.d

    def radius_of_volume(self, v):
        return (np.asarray(v, dtype=float) / self.omega) ** (1.0 / self.d)

    @cached_property
    def conductances(self) -> np.ndarray:
        """Face conductances ``|S(r_i)| / h_i`` for the nodes r_0..r_{n_r}.

        The origin face carries no flux (radial symmetry); the outer face
        couples the last cell to the Dirichlet value 0 at r = R across half
        a cell.
        """
        k = np.empty(self.n_r + 1)
        k[0] = 0.0
        k[1:-1] = sphere_area(self.d, self.nodes[1:-1]) / self.dr
        k[-1] = sphere_area(self.d, self.R) / (0.5 * self.dr)
        k.flags.writeable = False
        return k

    def stiffness_bands(self):
        """Diagonal and off-diagonal of the symmetric stiffness matrix K.

        ``-K v`` approximates the integral of the Laplacian over each cell, so
        the semi-discrete heat equation reads ``M v' + K v = M f`` with
        ``M = diag(cell_volumes)``.
        """
        k = self.conductances
        diag = k[:-1] + k[1:]
        off = -k[1:-1]
        return diag, off

    def check_same(self, other: "RadialGrid"):
        if self != other:
            raise ConfigurationError(f"grid mismatch: {self} vs {other}")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time levels 0 = t_0 < ... < t_{n_t} = T."""

    T: float = 1.0
    n_t: int = 256

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ConfigurationError(f"time horizon must be positive, got {self.T!r}")
        if int(self.n_t) != self.n_t or self.n_t < 1:
            raise ConfigurationError(f"n_t must be a positive integer, got {self.n_t!r}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n_t", int(self.n_t))

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @cached_property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_t + 1) * self.dt
        t[-1] = self.T
        t.flags.writeable = False
        return t

    @cached_property
    def weights(self) -> np.ndarray:
        """Left-endpoint time weights; the terminal level carries none."""
        w = np.full(self.n_t + 1, self.dt)
        w[-1] = 0.0
        w.flags.writeable = False
        return w

    def check_same(self, other: "TimeGrid"):
        if self != other:
            raise ConfigurationError(f"time grid mismatch: {self} vs {other}")


def _frozen(values, shape=None) -> np.ndarray:
    a = np.array(values, dtype=float)
    if shape is not None and a.shape != shape:
        raise ConfigurationError(f"expected shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("field values must be finite")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class RadialField:
    """A radial function at one instant, as cell averages."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, (self.grid.n_r,)))

    def with_values(self, values) -> "RadialField":
        return RadialField(self.grid, values)

    @property
    def mass(self) -> float:
        return float(np.dot(self.values, self.grid.cell_volumes))

    def __eq__(self, other):
        return (
            isinstance(other, RadialField)
            and self.grid == other.grid
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """A function on (0, T) x B(0, R), radial in space; shape (n_t + 1, n_r)."""

    grid: RadialGrid
    tgrid: TimeGrid
    values: np.ndarray
    kind: str = "state"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown field kind {self.kind!r}")
        shape = (self.tgrid.n_t + 1, self.grid.n_r)
        v = _frozen(self.values, shape)
        if self.kind == "control":
            bad = np.argwhere((v < 0.0) | (v > 1.0))
            if bad.size:
                i, j = bad[0]
                raise DomainError(
                    f"control value {v[i, j]!r} outside [0, 1] at time level {i}, cell {j}"
                )
        object.__setattr__(self, "values", v)

    def at(self, i: int) -> RadialField:
        return RadialField(self.grid, self.values[i])

    def terminal(self) -> RadialField:
        return self.at(self.tgrid.n_t)

    def with_values(self, values, kind=None) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.tgrid, values, kind or self.kind)

    def __eq__(self, other):
        return (
            isinstance(other, SpaceTimeField)
            and self.grid == other.grid
            and self.tgrid == other.tgrid
            and self.kind == other.kind
            and np.array_equal(self.values, other.values)
        )


def integrate_ball(f: RadialField, r: float) -> float:
    """Integral of ``f`` over B(0, r); exact for cell-wise constant fields."""
    grid = f.grid
    if not (0.0 <= r <= grid.R):
        raise DomainError(f"radius {r!r} outside [0, {grid.R}]")
    k = int(np.searchsorted(grid.nodes, r, side="right")) - 1
    k = min(k, grid.n_r)
    total = float(np.dot(f.values[:k], grid.cell_volumes[:k]))
    if k < grid.n_r and r > grid.nodes[k]:
        total += f.values[k] * grid.omega * (r ** grid.d - grid.nodes[k] ** grid.d)
    return total


def integrate_spacetime(f: SpaceTimeField) -> float:
    """Space-time integral with left-endpoint weights in time."""
    per_level = f.values @ f.grid.cell_volumes
    return float(np.dot(f.tgrid.weights, per_level))


_GAUSS_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss(n):
    if n not in _GAUSS_CACHE:
        _GAUSS_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GAUSS_CACHE[n]


def cell_average(
    grid: RadialGrid,
    func: Callable[[np.ndarray], np.ndarray],
    breakpoints: Iterable[float] = (),
    order: int = 8,
) -> RadialField:
    """Cell averages of a radial function ``func(r)`` by Gauss-Legendre quadrature.

    ``breakpoints`` are radii where ``func`` is not smooth; cells are split
    there so piecewise polynomials are integrated exactly.
    """
    extra = [b for b in breakpoints if 0.0 < b < grid.R]
    edges = np.union1d(grid.nodes, np.asarray(extra, dtype=float))
    a, b = edges[:-1], edges[1:]
    x, w = _gauss(order)
    r = 0.5 * (b - a)[:, None] * x[None, :] + 0.5 * (b + a)[:, None]
    wr = 0.5 * (b - a)[:, None] * w[None, :] * r ** (grid.d - 1)
    num = np.sum(np.asarray(func(r), dtype=float) * wr, axis=1)
    den = np.sum(wr, axis=1)
    owner = np.searchsorted(grid.nodes, a, side="right") - 1
    total = np.bincount(owner, weights=num, minlength=grid.n_r)
    norm = np.bincount(owner, weights=den, minlength=grid.n_r)
    return RadialField(grid, total / norm)


def ball_indicator(grid: RadialGrid, rho: float) -> RadialField:
    """Cell averages of the indicator of B(0, rho) (exact volume fractions)."""
    rho = min(max(rho, 0.0), grid.R)
    lo, hi = grid.nodes[:-1], grid.nodes[1:]
    covered = np.clip(rho, lo, hi)
    frac = (covered ** grid.d - lo ** grid.d) / (hi ** grid.d - lo ** grid.d)
    return RadialField(grid, frac)


def annulus_indicator(grid: RadialGrid, r_in: float, r_out: float) -> RadialField:
    inner = ball_indicator(grid, r_in).values
    outer = ball_indicator(grid, r_out).values
    return RadialField(grid, np.clip(outer - inner, 0.0, 1.0))


def dirichlet_energy(f: RadialField) -> float:
    """Discrete Dirichlet energy ``v^T K v`` with zero boundary value at R."""
    k = f.grid.conductances
    v = f.values
    jumps = np.diff(v)
    return float(np.dot(k[1:-1], jumps ** 2) + k[-1] * v[-1] ** 2)
