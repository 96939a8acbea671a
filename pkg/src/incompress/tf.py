"""Incompressible neutral Thomas-Fermi screening regions.

The TF potential of K unit nuclei is the solution of the obstacle problem

    Phi >= 0,   -Delta Phi >= 2 pi (rho_nuc - 1),   equality where Phi > 0,

on a box with Phi = 0 on its boundary.  The screening region is
Sigma = {Phi > 0}; its area equals K and the background density there is 1.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import _obstacle
from .gridfield import (
    ChargeList,
    GridSpec,
    ScalarField,
    deposit_charges,
    point_potential_cell_average,
)

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
SINGLE_RADIUS = 1.0 / np.sqrt(np.pi)
ACTIVATION_THRESHOLD = 1e-10
RESIDUAL_TOL = 1e-8 * TWO_PI
GROWTH = 1.5
MAX_ENLARGE = 5
COARSEST_CELLS = 48
PATCH = 12


class TfError(RuntimeError):
    pass


class CoincidentNucleiError(ValueError):
    pass


class BoundaryContactError(TfError):
    pass


class TfConvergenceError(TfError):
    pass


class SubsetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NucleusSet:
    positions: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if len(p) < 1:
            raise ValueError("need at least one nucleus")
        if not np.all(np.isfinite(p)):
            raise ValueError("nucleus positions must be finite")
        if len(p) > 1:
            d = np.hypot(*(p[:, None, :] - p[None, :, :]).transpose(2, 0, 1))
            d[np.diag_indices(len(p))] = np.inf
            if d.min() <= 0:
                raise CoincidentNucleiError("nuclei must be pairwise distinct")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "positions", p)

    @property
    def K(self) -> int:
        return len(self.positions)

    def __len__(self):
        return self.K

    @property
    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    def translated(self, shift) -> "NucleusSet":
        return NucleusSet(self.positions + np.asarray(shift, dtype=float))

    def subset(self, indices) -> "NucleusSet":
        return NucleusSet(self.positions[list(indices)])

    def as_charges(self) -> ChargeList:
        return ChargeList(self.positions, np.ones(self.K))


@dataclass(frozen=True, eq=False)
class TfSolution:
    phi: ScalarField
    sigma: ScalarField
    region_area: float
    residual: float
    box: GridSpec
    nuclei: NucleusSet
    info: dict = field(default_factory=dict)

    @property
    def mask(self) -> np.ndarray:
        return self.sigma.values > 0.5

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        """Membership of points in Sigma.

        With ``margin > 0`` a point counts only if its cell is in the mask and
        lies farther than ``margin`` from every cell outside the mask.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        inside = self.box.contains(p)
        out = np.zeros(len(p), dtype=bool)
        if not inside.any():
            return out
        idx = self.box.cell_index(p[inside])
        hit = self.mask[idx[:, 0], idx[:, 1]]
        if margin > 0:
            dist = ndimage.distance_transform_edt(np.pad(self.mask, 1)) [1:-1, 1:-1] * self.box.h
            # distance from cell center to nearest outside cell center, minus half a cell
            hit &= dist[idx[:, 0], idx[:, 1]] - 0.5 * self.box.h > margin
        out[np.flatnonzero(inside)] = hit
        return out


# ---------------------------------------------------------------------------
# closed forms


def screening_profile(r, charge: float = 1.0, background: float = 1.0):
    """Radial TF potential of a point charge in a disk of constant background.

    Solves -Delta psi = 2 pi (charge delta - background 1_disk) with psi = 0
    and psi' = 0 on the disk edge, radius sqrt(charge / (pi background)).
    """
    r = np.asarray(r, dtype=float)
    R = np.sqrt(charge / (np.pi * background))
    with np.errstate(divide="ignore"):
        inner = (
            -charge * np.log(r)
            + 0.5 * np.pi * background * r * r
            + charge * np.log(R)
            - 0.5 * np.pi * background * R * R
        )
    return np.where(r < R, inner, 0.0)


@dataclass(frozen=True)
class SingleNucleusProfile:
    center: tuple[float, float]
    radius: float

    def phi_radial(self, r):
        """-log r + (pi/2) r^2 - (1/2) log pi - 1/2 inside the disk, 0 outside."""
        return screening_profile(r)

    def phi_radial_derivative(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r < self.radius, -1.0 / r + np.pi * r, 0.0)

    def __call__(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return self.phi_radial(np.hypot(p[:, 0] - self.center[0], p[:, 1] - self.center[1]))


def single_nucleus_solution(x0: Sequence[float] = (0.0, 0.0)) -> SingleNucleusProfile:
    return SingleNucleusProfile((float(x0[0]), float(x0[1])), SINGLE_RADIUS)


def supersolution(nuclei: NucleusSet, points) -> np.ndarray:
    """Pointwise upper bound on Phi: sum of charge-1 profiles with background 1/K.

    Each term satisfies -Delta psi_i >= 2 pi (delta_i - 1/K), so the sum is a
    nonnegative supersolution of the obstacle problem and dominates Phi.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    K = nuclei.K
    out = np.zeros(len(p))
    for x in nuclei.positions:
        out += screening_profile(np.hypot(p[:, 0] - x[0], p[:, 1] - x[1]), 1.0, 1.0 / K)
    return out


def support_radius_bound(
    nuclei: NucleusSet,
    R: float | None = None,
    phi_on_circle: np.ndarray | None = None,
    center: Sequence[float] | None = None,
) -> float:
    """Radius (about ``center``, default the centroid) of a disk containing Sigma.

    Returns R + sqrt(M_R) with M_R = sup(Phi on |x - center| = R) / pi. Without
    samples, Phi is replaced by the supersolution, which keeps the bound valid;
    the cruder bound max|x_i - c| + sqrt(K/pi) from the same supersolution is
    also honoured.
    """
    c = nuclei.centroid if center is None else np.asarray(center, dtype=float)
    r0 = float(np.hypot(*(nuclei.positions - c).T).max())
    if R is None:
        R = r0 + 0.5 * np.sqrt(nuclei.K / np.pi) + 1e-9
    if not R > r0:
        raise ValueError(f"R={R} does not enclose all nuclei (max distance {r0})")
    if phi_on_circle is None:
        theta = np.linspace(0.0, 2 * np.pi, 2048, endpoint=False)
        pts = c + R * np.column_stack([np.cos(theta), np.sin(theta)])
        M = supersolution(nuclei, pts).max() / np.pi
        return float(min(R + np.sqrt(M), r0 + np.sqrt(nuclei.K / np.pi)))
    M = max(0.0, float(np.max(phi_on_circle))) / np.pi
    return float(R + np.sqrt(M))


# ---------------------------------------------------------------------------
# sources and solver


def nucleus_source(nuclei: NucleusSet, grid: GridSpec, kind: str = "matched") -> np.ndarray:
    """Discrete nuclear density rho_nuc on the grid.

    ``"cic"``: cloud-in-cell deposition.  ``"matched"``: the 5-point Laplacian of
    the cell-averaged point potential, -Delta_h S / 2 pi, with S evaluated one
    ring beyond the grid. It carries the same total charge, sits on the same
    few cells, and makes the discrete nuclear potential agree with -log|x - x_i|
    outside the nucleus cells instead of reproducing the lattice Green function.
    """
    if kind == "cic":
        return deposit_charges(nuclei.as_charges(), grid).values
    if kind != "matched":
        raise ValueError(f"unknown source kind {kind!r}")
    big = GridSpec(
        (grid.origin[0] - grid.h, grid.origin[1] - grid.h), grid.h, grid.nx + 2, grid.ny + 2
    )
    S = np.zeros(big.shape)
    bx, by = big.axes()
    for x in nuclei.positions:
        S += -0.5 * np.log((bx[:, None] - x[0]) ** 2 + (by[None, :] - x[1]) ** 2 + 1e-300)
        # exact cell averages near the charge; farther out they equal the
        # point values to O((h/r)^4)
        i0, j0 = (np.floor((x - np.array(big.origin)) / grid.h)).astype(int)
        sl = (slice(max(i0 - PATCH, 0), i0 + PATCH + 1), slice(max(j0 - PATCH, 0), j0 + PATCH + 1))
        sub = GridSpec(
            (big.origin[0] + sl[0].start * grid.h, big.origin[1] + sl[1].start * grid.h),
            grid.h,
            max(2, min(big.nx, sl[0].stop) - sl[0].start),
            max(2, min(big.ny, sl[1].stop) - sl[1].start),
        )
        exact = point_potential_cell_average(sub, x)
        X, Y = sub.centers()
        point = -0.5 * np.log((X - x[0]) ** 2 + (Y - x[1]) ** 2 + 1e-300)
        S[sl[0].start : sl[0].start + sub.nx, sl[1].start : sl[1].start + sub.ny] += exact - point
    h2 = grid.h * grid.h
    lap = (S[2:, 1:-1] + S[:-2, 1:-1] + S[1:-1, 2:] + S[1:-1, :-2] - 4.0 * S[1:-1, 1:-1]) / h2
    return -lap / TWO_PI


def nucleus_cells(nuclei: NucleusSet, grid: GridSpec) -> np.ndarray:
    """Mask of the 4 cells around each nucleus (the cloud-in-cell footprint)."""
    m = np.zeros(grid.shape, dtype=bool)
    s = (nuclei.positions - np.array(grid.origin)) / grid.h - 0.5
    i0 = np.floor(s).astype(int)
    for di in (0, 1):
        for dj in (0, 1):
            ii = np.clip(i0[:, 0] + di, 0, grid.nx - 1)
            jj = np.clip(i0[:, 1] + dj, 0, grid.ny - 1)
            m[ii, jj] = True
    return m


def default_box(nuclei: NucleusSet, h: float, pad: float) -> GridSpec:
    c = nuclei.centroid
    R = support_radius_bound(nuclei) + pad
    return GridSpec.covering(c - R, c + R, h)


def _enlarged(grid: GridSpec, factor: float) -> GridSpec:
    w = np.array(grid.extent)
    c = np.array(grid.origin) + 0.5 * w
    half = 0.5 * factor * w
    return GridSpec.covering(c - half, c + half, grid.h)


def _touches_boundary(mask: np.ndarray) -> bool:
    return bool(mask[0, :].any() or mask[-1, :].any() or mask[:, 0].any() or mask[:, -1].any())


def _interpolate(u: np.ndarray, src: GridSpec, dst: GridSpec) -> np.ndarray:
    """Bilinear transfer between grids, zero outside ``src`` (Dirichlet ring)."""
    xd, yd = dst.axes()
    # fractional source indices of the destination cell centers, shifted by the pad ring
    fi = (xd - src.origin[0]) / src.h - 0.5 + 1.0
    fj = (yd - src.origin[1]) / src.h - 0.5 + 1.0
    FI, FJ = np.meshgrid(fi, fj, indexing="ij")
    out = ndimage.map_coordinates(np.pad(u, 1), [FI, FJ], order=1, mode="constant", cval=0.0)
    return np.maximum(out, 0.0)


def _initial_guess(nuclei: NucleusSet, grid: GridSpec, init) -> np.ndarray:
    if isinstance(init, np.ndarray):
        if init.shape != grid.shape:
            raise ValueError("initial guess shape does not match the grid")
        return init
    if init == "zero":
        return np.zeros(grid.shape)
    X, Y = grid.centers()
    pts = np.column_stack([X.ravel(), Y.ravel()])
    if init == "superposition":
        out = np.zeros(len(pts))
        for x in nuclei.positions:
            out += screening_profile(np.hypot(pts[:, 0] - x[0], pts[:, 1] - x[1]))
        return np.minimum(out, 50.0).reshape(grid.shape)
    if init == "upper":
        return np.minimum(supersolution(nuclei, pts), 50.0).reshape(grid.shape)
    raise ValueError(f"unknown init {init!r}")


def _solve_on_grid(nuclei, grid, method, source, init, omega, max_sweeps, nested, tol):
    f = TWO_PI * (nucleus_source(nuclei, grid, source) - 1.0)
    coarse_ok = nested and min(grid.nx, grid.ny) >= 2 * COARSEST_CELLS and not isinstance(
        init, np.ndarray
    )
    if coarse_ok:
        cg = GridSpec(grid.origin, 2 * grid.h, grid.nx // 2 + 1, grid.ny // 2 + 1)
        uc, _ = _solve_on_grid(nuclei, cg, method, source, init, omega, None, True, tol)
        u0 = _interpolate(uc, cg, grid)
    else:
        u0 = _initial_guess(nuclei, grid, init)
    if method == "psor":
        u, its, res = _obstacle.psor_solve(u0, f, grid.h, tol, omega=omega, max_sweeps=max_sweeps)
    elif method == "pdas":
        u, its, res = _obstacle.pdas_solve(u0, f, grid.h, tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    log.debug("level h=%g %dx%d: %d iterations, residual %.3g", grid.h, grid.nx, grid.ny, its, res)
    return u, {"iterations": its, "residual": res, "f": f}


def solve_tf(
    nuclei: NucleusSet | Sequence,
    h: float,
    pad: float = 0.5,
    *,
    grid: GridSpec | None = None,
    method: str = "pdas",
    source: str = "matched",
    init="upper",
    omega: float = 1.9,
    max_sweeps: int | None = None,
    nested: bool = True,
    max_enlarge: int = MAX_ENLARGE,
    tol: float = RESIDUAL_TOL,
) -> TfSolution:
    """Solve the TF obstacle problem for ``nuclei`` at grid spacing ``h``.

    The box is the disk bound from :func:`support_radius_bound` plus ``pad``
    unless ``grid`` is given; it grows by a factor 1.5 (at most
    ``max_enlarge`` times) whenever Sigma reaches the outermost cells.
    """
    if not isinstance(nuclei, NucleusSet):
        nuclei = NucleusSet(nuclei)
    if not h > 0:
        raise ValueError("h must be positive")
    t0 = time.perf_counter()
    box = default_box(nuclei, h, pad) if grid is None else grid
    if not np.all(box.contains(nuclei.positions)):
        raise ValueError("grid does not contain all nuclei")
    for attempt in range(max_enlarge + 1):
        try:
            u, info = _solve_on_grid(nuclei, box, method, source, init, omega, max_sweeps, nested, tol)
        except _obstacle.ObstacleConvergenceError as exc:
            raise TfConvergenceError(str(exc)) from exc
        mask = u > ACTIVATION_THRESHOLD
        if not _touches_boundary(mask):
            break
        log.info("screening region reaches the box edge; enlarging (attempt %d)", attempt + 1)
        box = _enlarged(box, GROWTH)
    else:
        raise BoundaryContactError(f"Sigma still touches the box after {max_enlarge} enlargements")
    f = info.pop("f")
    phi = ScalarField(box, u)
    sigma = ScalarField(box, mask.astype(float))
    area = float(mask.sum() * box.cell_area)
    defect = _obstacle.complementarity_defect(u, f, box.h)
    defect[nucleus_cells(nuclei, box)] = 0.0
    info.update(
        method=method,
        source=source,
        enlargements=attempt,
        seconds=time.perf_counter() - t0,
        residual_all_cells=info["residual"],
    )
    return TfSolution(phi, sigma, area, float(defect.max()), box, nuclei, info)


# ---------------------------------------------------------------------------
# diagnostics


def tf_source(sol: TfSolution) -> np.ndarray:
    return TWO_PI * (nucleus_source(sol.nuclei, sol.box, sol.info.get("source", "matched")) - 1.0)


def mask_complementarity(sol: TfSolution, exclude_nuclei: bool = True) -> float:
    """Complementarity defect judged against the stored mask.

    Cells with sigma = 1 need A Phi = f and Phi > 0; cells with sigma = 0 need
    Phi = 0 and A Phi >= f.
    """
    u = sol.phi.values
    f = tf_source(sol)
    r = _obstacle.apply_A(u, sol.box.h) - f
    m = sol.mask
    d = np.where(m, np.maximum(np.abs(r), np.maximum(-u, 0.0)), np.maximum(np.abs(u), np.maximum(-r, 0.0)))
    if exclude_nuclei:
        d[nucleus_cells(sol.nuclei, sol.box)] = 0.0
    return float(d.max())


@dataclass
class TfDiagnostics:
    min_phi: float
    area: float
    area_defect: float
    residual: float
    nuclei_inside: bool
    component_count: int
    components_with_nucleus: bool
    max_phi_outside: float
    boundary_clear: bool
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks.values())

    def as_dict(self) -> dict:
        return {
            "min_phi": self.min_phi,
            "area": self.area,
            "area_defect": self.area_defect,
            "residual": self.residual,
            "nuclei_inside": self.nuclei_inside,
            "component_count": self.component_count,
            "components_with_nucleus": self.components_with_nucleus,
            "max_phi_outside": self.max_phi_outside,
            "boundary_clear": self.boundary_clear,
            "checks": self.checks,
        }


def verify_tf_solution(
    sol: TfSolution,
    nuclei: NucleusSet | None = None,
    area_tol: float = 0.01,
    residual_tol: float = RESIDUAL_TOL,
    phi_tol: float = 1e-10,
) -> TfDiagnostics:
    nuclei = sol.nuclei if nuclei is None else nuclei
    u = sol.phi.values
    m = sol.mask
    K = nuclei.K
    min_phi = float(u.min())
    area_defect = abs(sol.region_area - K) / K
    residual = mask_complementarity(sol)
    idx = sol.box.cell_index(nuclei.positions)
    inside = bool(m[idx[:, 0], idx[:, 1]].all())
    labels, ncomp = ndimage.label(m)
    hit = set(labels[idx[:, 0], idx[:, 1]].tolist()) - {0}
    comps_ok = len(hit) == ncomp
    outside = float(u[~m].max()) if (~m).any() else 0.0
    checks = {
        "phi_nonnegative": {"value": min_phi, "bound": -phi_tol, "pass": min_phi >= -phi_tol},
        "area": {"value": area_defect, "bound": area_tol, "pass": area_defect <= area_tol},
        "complementarity": {"value": residual, "bound": residual_tol, "pass": residual <= residual_tol},
        "nuclei_inside": {"value": int(inside), "bound": 1, "pass": inside},
        "components": {"value": ncomp, "bound": len(hit), "pass": comps_ok},
        "phi_zero_outside": {"value": outside, "bound": phi_tol, "pass": outside <= phi_tol},
        "boundary_clear": {"value": int(not _touches_boundary(m)), "bound": 1, "pass": not _touches_boundary(m)},
    }
    return TfDiagnostics(
        min_phi, sol.region_area, area_defect, residual, inside, ncomp, comps_ok, outside,
        not _touches_boundary(m), checks,
    )


def tf_energy(sol: TfSolution) -> float:
    """Diagnostic value of the TF functional for the discrete density.

    E = -int V_nuc sigma + D(sigma, sigma), computed with the cell-averaged
    nuclear potential and the midpoint log kernel.
    """
    from .gridfield import log_potential

    g = sol.box
    V = np.zeros(g.shape)
    for x in sol.nuclei.positions:
        V += point_potential_cell_average(g, x)
    s = sol.sigma.values
    pot = log_potential(sol.sigma).values
    return float((-(V * s).sum() + 0.5 * (pot * s).sum()) * g.cell_area)


def tf_monotonicity_check(
    nuclei_small: NucleusSet | Sequence,
    nuclei_large: NucleusSet | Sequence,
    h: float = 1 / 64,
    pad: float = 0.5,
    tol: float = 1e-6,
    band: int = 1,
    return_solutions: bool = False,
    **solve_kw,
):
    """Sigma(small) within Sigma(large) up to a ``band``-cell tolerance, Phi_small <= Phi_large + tol.

    Both problems are solved on the same box.  With ``return_solutions`` the
    result is ``(passed, small_solution, large_solution)``.  The solves use the
    cloud-in-cell source unless ``source`` is given: it is nonnegative, so the
    discrete comparison principle holds exactly, whereas the matched source has
    signed far-field tails that perturb Phi at the 1e-5 level.
    """
    solve_kw.setdefault("source", "cic")
    small = nuclei_small if isinstance(nuclei_small, NucleusSet) else NucleusSet(nuclei_small)
    large = nuclei_large if isinstance(nuclei_large, NucleusSet) else NucleusSet(nuclei_large)
    for p in small.positions:
        if not np.any(np.all(np.isclose(large.positions, p, rtol=0, atol=1e-12), axis=1)):
            raise SubsetError(f"nucleus {tuple(p)} of the small set is not in the large set")
    sol_l = solve_tf(large, h, pad, **solve_kw)
    sol_s = solve_tf(small, h, pad, grid=sol_l.box, max_enlarge=0, **solve_kw)
    grown = ndimage.binary_dilation(sol_l.mask, iterations=band) if band else sol_l.mask
    contained = not np.any(sol_s.mask & ~grown)
    below = bool(np.all(sol_s.phi.values <= sol_l.phi.values + tol))
    passed = contained and below
    return (passed, sol_s, sol_l) if return_solutions else passed
