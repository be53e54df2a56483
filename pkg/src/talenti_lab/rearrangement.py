"""Schwarz rearrangement and the concentration preorder on radial grids.

A cell-wise constant function ``g`` has an exact Schwarz rearrangement: sort
the cells by value and stack their volumes from the origin outward.  The
result is a radial step function whose breaks fall at enclosed volumes that
in general are not grid nodes; :class:`Rearrangement` keeps it exactly.
:func:`schwarz_rearrange` projects it back onto the grid (cell averages), the
form the solvers consume.  The projection preserves every ball integral at
grid nodes, so concentration profiles agree at nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .grid import RadialField, RadialGrid, SpaceTimeField, dirichlet_energy

NEGATIVE_TOL = 1e-12


def _nonnegative(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if np.any(v < -NEGATIVE_TOL):
        bad = np.unravel_index(int(np.argmin(v)), v.shape)
        raise DomainError(f"rearrangement needs nonnegative values; got {v[bad]!r} at {bad}")
    return np.where(v < 0.0, 0.0, v)


@dataclass(frozen=True, eq=False)
class Rearrangement:
    """Exact decreasing rearrangement of a cell-wise constant field.

    ``values[k]`` is held on the enclosed-volume interval
    ``[edges[k], edges[k + 1])``; ``volumes[k]`` is the source cell volume.
    """

    grid: RadialGrid
    values: np.ndarray
    volumes: np.ndarray
    edges: np.ndarray

    @property
    def radii(self) -> np.ndarray:
        return self.grid.radius_of_volume(self.edges)

    def mass_edges(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.values * self.volumes)))

    def integral_to_volume(self, v) -> np.ndarray:
        """``int_0^v g*(s) ds`` (the sup of ``int_E g`` over |E| = v)."""
        return np.interp(v, self.edges, self.mass_edges())


def rearrangement(g: RadialField) -> Rearrangement:
    """Sort cells descending (ties by cell index) and stack their volumes."""
    values = _nonnegative(g.values)
    order = np.argsort(-values, kind="stable")
    vols = np.asarray(g.grid.cell_volumes)[order]
    edges = np.concatenate(([0.0], np.cumsum(vols)))
    return Rearrangement(g.grid, values[order], vols, edges)


def _project(r: Rearrangement) -> np.ndarray:
    grid = r.grid
    target = grid.volume_edges
    mass = r.integral_to_volume(target)
    out = np.diff(mass) / grid.cell_volumes
    # cells covered by a single piece get that value exactly
    lo = np.searchsorted(r.edges, target[:-1], side="right") - 1
    hi = np.searchsorted(r.edges, target[1:], side="left") - 1
    single = lo == hi
    out[single] = r.values[lo[single]]
    return np.minimum.accumulate(np.maximum(out, 0.0))


def schwarz_rearrange(g):
    """Radially nonincreasing rearrangement of a radial or space-time field.

    Space-time fields are rearranged slice by slice in space.
    """
    if isinstance(g, SpaceTimeField):
        rows = [_project(rearrangement(g.at(i))) for i in range(g.tgrid.n_t + 1)]
        return g.with_values(np.vstack(rows))
    return g.with_values(_project(rearrangement(g)))


def distribution_function(g, level: float) -> float:
    """Volume of ``{g >= level}`` for a field or an exact rearrangement."""
    if isinstance(g, Rearrangement):
        return math.fsum(g.volumes[g.values >= level])
    return math.fsum(np.asarray(g.grid.cell_volumes)[np.asarray(g.values) >= level])


@dataclass(frozen=True, eq=False)
class ConcentrationProfile:
    """``cumulative[i] = int_{B(0, r_i)} g#`` at every grid node r_i."""

    grid: RadialGrid
    cumulative: np.ndarray

    @property
    def enclosed_volumes(self) -> np.ndarray:
        return self.grid.volume_edges

    def at_radius(self, r: float) -> float:
        """Profile between nodes, linear in enclosed volume."""
        return float(np.interp(self.grid.ball_volume(r), self.enclosed_volumes, self.cumulative))

    def densities(self) -> np.ndarray:
        """Increments per unit volume (the rearranged cell values)."""
        return np.diff(self.cumulative) / self.grid.cell_volumes


def concentration_profile(g: RadialField) -> ConcentrationProfile:
    # integrate_ball at node r_i reduces to the partial sum of the first i cells
    sharp = schwarz_rearrange(g)
    cum = np.concatenate(([0.0], np.cumsum(sharp.values * g.grid.cell_volumes)))
    return ConcentrationProfile(g.grid, cum)


@dataclass(frozen=True)
class Domination:
    holds: bool
    margin: float
    node: int
    radius: float


def dominates(f: RadialField, g: RadialField, tol: float = 1e-9) -> Domination:
    """Test ``f < g`` in the concentration order at every grid node.

    ``margin`` is ``max_i (F_i - G_i)`` over the node profiles, reported
    whatever the verdict; it is 0 for ``f = g`` and never negative since both
    profiles vanish at the origin.
    """
    f.grid.check_same(g.grid)
    diff = concentration_profile(f).cumulative - concentration_profile(g).cumulative
    i = int(np.argmax(diff))
    margin = float(diff[i])
    return Domination(margin <= tol, margin, i, float(f.grid.nodes[i]))


def hardy_littlewood_gap(f: RadialField, g: RadialField) -> float:
    """``int f# g# - int f g``, with ``int f# g#`` computed on exact rearrangements."""
    f.grid.check_same(g.grid)
    rf, rg = rearrangement(f), rearrangement(g)
    top = min(rf.edges[-1], rg.edges[-1])
    cuts = np.union1d(rf.edges, rg.edges)
    cuts = cuts[cuts <= top]
    mid = 0.5 * (cuts[:-1] + cuts[1:])
    fv = rf.values[np.searchsorted(rf.edges, mid, side="right") - 1]
    gv = rg.values[np.searchsorted(rg.edges, mid, side="right") - 1]
    sharp = math.fsum(fv * gv * np.diff(cuts))
    plain = math.fsum(_nonnegative(f.values) * _nonnegative(g.values) * f.grid.cell_volumes)
    return sharp - plain


def polya_szego_gap(f: RadialField) -> float:
    """Discrete Dirichlet energy of ``f`` minus that of its rearrangement.

    Requires ``f >= 0`` and a zero last cell, the grid stand-in for vanishing
    on the boundary.  Projection onto the grid does not commute exactly with
    difference quotients, so the discrete inequality is only expected up to
    O(1/n_r).
    """
    if f.values[-1] != 0.0:
        raise DomainError("polya_szego_gap needs the last cell to vanish")
    return dirichlet_energy(f) - dirichlet_energy(schwarz_rearrange(f))
