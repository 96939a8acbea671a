"""Bathtub minimization under a density cap and potential-energy comparisons.

The discrete problem  min sum V rho h^2  subject to  0 <= rho <= cap and
sum rho h^2 = mass  is solved exactly by filling cells in increasing order of
V (ties broken by cell index), with one fractional cell at the fill level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exclusion import FrameError, PointConfig
from .gridfield import GridSpec, ScalarField
from .plasma import PlasmaModel, builtin_potential


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BathtubResult:
    density: ScalarField
    energy: float
    fill_level: float
    filled_mass: float
    cap: float


def bathtub_minimize(V: ScalarField, mass: float, cap: float) -> BathtubResult:
    """Exact discrete bathtub optimum on the grid of ``V``."""
    if not cap > 0:
        raise ValueError("cap must be positive")
    if mass < 0:
        raise ValueError("mass must be nonnegative")
    v = V.values.ravel()
    if np.isnan(v).any():
        raise ValueError("V contains NaN")
    cell_mass = cap * V.grid.cell_area
    if mass > cell_mass * v.size * (1 + 1e-12):
        raise InfeasibleError(f"mass {mass} exceeds cap * area = {cell_mass * v.size}")
    order = np.argsort(v, kind="stable")
    n_full = min(int(mass // cell_mass), v.size)
    rem = mass - n_full * cell_mass
    rho = np.zeros(v.size)
    rho[order[:n_full]] = cap
    if n_full < v.size and rem > 0:
        rho[order[n_full]] = rem / V.grid.cell_area
        level = v[order[n_full]]
    else:
        level = v[order[n_full - 1]] if n_full else v[order[0]]
    h2 = V.grid.cell_area
    filled = rho.sum() * h2
    energy = float(np.dot(v, rho) * h2)
    return BathtubResult(ScalarField(V.grid, rho.reshape(V.values.shape)), energy, float(level), float(filled), cap)


def potential_energy(state, V) -> float:
    """Integral of V against a density field, or the mean of sum_i V(z_i).

    ``state`` is a :class:`ScalarField` (midpoint rule; ``V`` a field on the
    same grid or a callable on (n, 2) points), a :class:`PointConfig`, or an
    (S, N, 2) / (N, 2) array of sample positions.
    """
    if isinstance(state, ScalarField):
        if isinstance(V, ScalarField):
            if V.grid != state.grid:
                raise ValueError("density and potential live on different grids")
            vals = V.values
        else:
            x, y = state.grid.centers()
            vals = np.asarray(V(np.column_stack([x.ravel(), y.ravel()])), dtype=float).reshape(x.shape)
        return float((vals * state.values).sum() * state.grid.cell_area)
    if isinstance(V, ScalarField):
        raise ValueError("configurations need a callable potential")
    pts = state.points if isinstance(state, PointConfig) else np.asarray(state, dtype=float)
    pts = pts.reshape(-1, pts.shape[-2], 2) if pts.ndim == 3 else pts.reshape(1, -1, 2)
    S, N, _ = pts.shape
    vals = np.asarray(V(pts.reshape(-1, 2)), dtype=float).reshape(S, N)
    return float(vals.sum(axis=1).mean())


def potential_from_spec(spec) -> Callable[[np.ndarray], np.ndarray]:
    """Callable from a builtin name (``"harmonic"``, ``"builtin:quartic"``, ...)
    or pass a callable through."""
    if callable(spec):
        return spec
    name = str(spec).removeprefix("builtin:")
    return builtin_potential(name)


def scaled_grid(cap: float, mass: float = 1.0, h: float = 1 / 256, extent: float | None = None) -> GridSpec:
    """Square grid about the origin wide enough for a centered filling."""
    if extent is None:
        extent = 2.0 * math.sqrt(mass / (math.pi * cap)) + 0.5
    return GridSpec.covering((-extent, -extent), (extent, extent), h)


@dataclass(frozen=True)
class BoundComparison:
    e_state: float
    e_bathtub: float
    ratio: float | None
    slack: float
    passed: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def compare_bounds(model: PlasmaModel, U, state, slack: float = 0.1, h: float = 1 / 256, extent: float | None = None) -> BoundComparison:
    """Compare the potential energy of a state with the bathtub bound.

    Works in scaled coordinates y = z / sqrt(N) with V(z) = U(z / sqrt(N)):
    the state energy per particle is mean_s (1/N) sum_i U(z_i / sqrt(N)) and
    the bound is the bathtub energy of U for mass 1 at the model's cap.
    Passes when E_state >= E_bt - slack |E_bt|.
    """
    U = potential_from_spec(U)
    if hasattr(state, "samples"):
        if state.model.frame != model.frame:
            raise FrameError("chain and model frames differ")
        pts = state.samples
    elif hasattr(state, "config"):
        pts = state.config.points
        if state.config.frame != model.frame:
            raise FrameError("state and model frames differ")
    elif isinstance(state, PointConfig):
        if state.frame != model.frame:
            raise FrameError("state and model frames differ")
        pts = state.points
    else:
        pts = np.asarray(state, dtype=float)
    e_state = potential_energy(np.asarray(pts) / math.sqrt(model.N), U) / model.N
    grid = scaled_grid(model.cap, 1.0, h, extent)
    x, y = grid.centers()
    Vf = ScalarField(grid, np.asarray(U(np.column_stack([x.ravel(), y.ravel()]))).reshape(x.shape))
    e_bt = bathtub_minimize(Vf, 1.0, model.cap).energy
    ratio = e_state / e_bt if e_bt != 0 else None
    passed = e_state >= e_bt - slack * abs(e_bt)
    return BoundComparison(e_state, e_bt, ratio, slack, bool(passed))
