"""Uniform-grid scalar fields and discrete 2D potential theory.

Cells are indexed ``values[i, j]`` with ``i`` along x and ``j`` along y; the
center of cell ``(i, j)`` sits at ``origin + ((i + 1/2) h, (j + 1/2) h)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.signal import fftconvolve


class OutOfDomainError(ValueError):
    """A point lies outside the grid extent."""


class GridTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a uniform grid: lower-left corner, spacing and cell counts."""

    origin: tuple[float, float]
    h: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.h > 0 and np.isfinite(self.h)):
            raise ValueError(f"grid spacing must be positive, got {self.h}")
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs at least 2x2 cells, got {self.nx}x{self.ny}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))

    @classmethod
    def covering(cls, lo: Sequence[float], hi: Sequence[float], h: float) -> "GridSpec":
        """Smallest grid with spacing ``h`` and origin on the ``h``-lattice covering [lo, hi]."""
        ox = np.floor(lo[0] / h) * h
        oy = np.floor(lo[1] / h) * h
        nx = max(2, int(np.ceil((hi[0] - ox) / h - 1e-9)))
        ny = max(2, int(np.ceil((hi[1] - oy) / h - 1e-9)))
        return cls((ox, oy), h, nx, ny)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def extent(self) -> tuple[float, float]:
        return (self.nx * self.h, self.ny * self.h)

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates along x and y."""
        x = self.origin[0] + (np.arange(self.nx) + 0.5) * self.h
        y = self.origin[1] + (np.arange(self.ny) + 0.5) * self.h
        return x, y

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.axes()
        return np.meshgrid(x, y, indexing="ij")

    def contains(self, points, strict: bool = True) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.array(self.origin)
        hi = lo + np.array(self.extent)
        if strict:
            return np.all((p > lo) & (p < hi), axis=1)
        return np.all((p >= lo) & (p <= hi), axis=1)

    def cell_index(self, points) -> np.ndarray:
        """Index of the cell containing each point (clipped to the grid)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.floor((p - np.array(self.origin)) / self.h).astype(int)
        idx[:, 0] = np.clip(idx[:, 0], 0, self.nx - 1)
        idx[:, 1] = np.clip(idx[:, 1], 0, self.ny - 1)
        return idx


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: GridSpec, f: Callable[[np.ndarray, np.ndarray], np.ndarray]):
        X, Y = grid.centers()
        return cls(grid, np.broadcast_to(f(X, Y), grid.shape))

    @property
    def h(self) -> float:
        return self.grid.h

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_area)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        if other.grid != self.grid:
            raise ValueError("grid mismatch")
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        if other.grid != self.grid:
            raise ValueError("grid mismatch")
        return ScalarField(self.grid, self.values - other.values)

    def scaled(self, c: float) -> "ScalarField":
        return ScalarField(self.grid, c * self.values)


@dataclass(frozen=True, eq=False)
class ChargeList:
    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(p) != len(w):
            raise ValueError("positions and weights differ in length")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(w))):
            raise ValueError("charges must be finite")
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)

    @property
    def total(self) -> float:
        return float(self.weights.sum())


# ---------------------------------------------------------------------------
# deposition, kernels, stencils


def deposit_charges(charges: ChargeList, grid: GridSpec) -> ScalarField:
    """Cloud-in-cell deposition of point charges onto cell centers.

    Each charge is split bilinearly over the four surrounding cell centers, so
    both the total charge and the first moment are preserved exactly.
    """
    p = charges.positions
    if len(p) and not np.all(grid.contains(p)):
        bad = p[~grid.contains(p)][0]
        raise OutOfDomainError(f"charge at {tuple(bad)} lies outside the grid")
    rho = np.zeros(grid.shape)
    if not len(p):
        return ScalarField(grid, rho)
    s = (p - np.array(grid.origin)) / grid.h - 0.5
    # snap charges sitting on a cell center up to round-off
    near = np.rint(s)
    s = np.where(np.abs(s - near) < 1e-9, near, s)
    i0 = np.floor(s).astype(int)
    t = s - i0
    for di in (0, 1):
        wx = t[:, 0] if di else 1.0 - t[:, 0]
        for dj in (0, 1):
            wy = t[:, 1] if dj else 1.0 - t[:, 1]
            ii = i0[:, 0] + di
            jj = i0[:, 1] + dj
            w = charges.weights * wx * wy
            # half a cell near the rim: the neighbour falls outside, fold it back
            ii = np.clip(ii, 0, grid.nx - 1)
            jj = np.clip(jj, 0, grid.ny - 1)
            np.add.at(rho, (ii, jj), w)
    return ScalarField(grid, rho / grid.cell_area)


def _log_rect_primitive(x, y):
    """F with d2F/dxdy = log sqrt(x^2 + y^2), odd in x and in y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = x * x + y * y
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(r2 > 0, x * y * np.log(np.where(r2 > 0, r2, 1.0)), 0.0)
        t2 = np.where(x != 0, x * x * np.arctan(y / np.where(x != 0, x, 1.0)), 0.0)
        t3 = np.where(y != 0, y * y * np.arctan(x / np.where(y != 0, y, 1.0)), 0.0)
    return 0.5 * (t1 - 3.0 * x * y + t2 + t3)


def cell_average_log(dx0, dx1, dy0, dy1):
    """Average of log|y| over the rectangle [dx0, dx1] x [dy0, dy1] (exact)."""
    F = _log_rect_primitive
    area = (np.asarray(dx1) - dx0) * (np.asarray(dy1) - dy0)
    return (F(dx1, dy1) - F(dx0, dy1) - F(dx1, dy0) + F(dx0, dy0)) / area


def self_cell_log(h: float) -> float:
    """Average of -log|y| over a centered square cell of side h."""
    return float(-cell_average_log(-h / 2, h / 2, -h / 2, h / 2))


def point_potential_cell_average(grid: GridSpec, x0: Sequence[float]) -> np.ndarray:
    """Cell averages of -log|. - x0| over every grid cell (finite even at x0)."""
    xs = grid.origin[0] + np.arange(grid.nx + 1) * grid.h - x0[0]
    ys = grid.origin[1] + np.arange(grid.ny + 1) * grid.h - x0[1]
    X0, Y0 = np.meshgrid(xs[:-1], ys[:-1], indexing="ij")
    X1, Y1 = np.meshgrid(xs[1:], ys[1:], indexing="ij")
    return -cell_average_log(X0, X1, Y0, Y1)


def _log_kernel_offsets(grid: GridSpec) -> np.ndarray:
    """-log|offset| on the (2nx-1) x (2ny-1) lattice of cell offsets."""
    h = grid.h
    ox = np.arange(-(grid.nx - 1), grid.nx) * h
    oy = np.arange(-(grid.ny - 1), grid.ny) * h
    DX, DY = np.meshgrid(ox, oy, indexing="ij")
    r = np.hypot(DX, DY)
    r[grid.nx - 1, grid.ny - 1] = 1.0
    K = -np.log(r)
    K[grid.nx - 1, grid.ny - 1] = self_cell_log(h)
    return K


def log_potential(density: ScalarField, method: str = "auto") -> ScalarField:
    """phi(x) = -int log|x - y| rho(y) dy at cell centers by midpoint quadrature.

    ``method="direct"`` is the O(M^2) reference sum; ``"fft"`` evaluates the
    same discrete convolution with zero padding. ``"auto"`` picks fft above a
    few thousand cells.
    """
    g = density.grid
    if not np.isfinite(density.integral()):
        raise ValueError("density integral is not finite")
    if method == "auto":
        method = "direct" if g.nx * g.ny <= 4096 else "fft"
    q = density.values * g.cell_area
    if method == "direct":
        X, Y = g.centers()
        px = X.ravel()
        py = Y.ravel()
        qf = q.ravel()
        out = np.empty_like(px)
        s = self_cell_log(g.h)
        for k in range(len(px)):
            r = np.hypot(px[k] - px, py[k] - py)
            r[k] = 1.0
            lk = -np.log(r)
            lk[k] = s
            out[k] = lk @ qf
        return ScalarField(g, out.reshape(g.shape))
    if method == "fft":
        K = _log_kernel_offsets(g)
        full = fftconvolve(q, K, mode="full")
        return ScalarField(g, full[g.nx - 1 : 2 * g.nx - 1, g.ny - 1 : 2 * g.ny - 1])
    raise ValueError(f"unknown method {method!r}")


def laplacian_values(v: np.ndarray, h: float) -> np.ndarray:
    """5-point Laplacian on interior cells; the boundary ring is NaN."""
    out = np.full(v.shape, np.nan)
    out[1:-1, 1:-1] = (
        v[2:, 1:-1] + v[:-2, 1:-1] + v[1:-1, 2:] + v[1:-1, :-2] - 4.0 * v[1:-1, 1:-1]
    ) / (h * h)
    return out


def discrete_laplacian(f: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """5-point Laplacian of ``f``.

    Returns ``(values, valid)``: boundary cells carry no stencil and are
    marked invalid (``valid`` False, value NaN).
    """
    if f.grid.nx < 3 or f.grid.ny < 3:
        raise GridTooSmallError("the 5-point stencil needs at least 3x3 cells")
    lap = laplacian_values(f.values, f.h)
    return lap, np.isfinite(lap)


def laplacian_dirichlet0(v: np.ndarray, h: float) -> np.ndarray:
    """5-point Laplacian with zero values outside the grid (Dirichlet 0)."""
    p = np.pad(v, 1)
    return (p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4.0 * v) / (h * h)


# ---------------------------------------------------------------------------
# PL class: log-subharmonicity by circle means


@dataclass
class SubharmonicityReport:
    max_violation: float
    deficits: np.ndarray
    radii: np.ndarray

    @property
    def worst_deficit(self) -> float:
        return float(self.deficits.min())


def subharmonicity_check(
    sampler: Callable[[np.ndarray], np.ndarray],
    center: complex | Sequence[float],
    radii: Sequence[float],
    n_angles: int = 1024,
) -> SubharmonicityReport:
    """Mean-value test for subharmonicity of log G.

    ``sampler`` receives a complex array of points and returns G >= 0 there.
    For each radius the deficit is mean(log G on the circle) - log G(center);
    ``max_violation`` is the most negative deficit (0 if all are nonnegative).
    """
    if n_angles < 8:
        raise ValueError("n_angles must be at least 8")
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    c = complex(center) if np.ndim(center) == 0 else complex(center[0], center[1])
    theta = 2 * np.pi * np.arange(n_angles) / n_angles
    g0 = np.asarray(sampler(np.array([c])), dtype=float).reshape(-1)
    pts = c + radii[:, None] * np.exp(1j * theta)[None, :]
    g = np.asarray(sampler(pts.ravel()), dtype=float).reshape(pts.shape)
    if np.any(g <= 0) or np.any(g0 <= 0) or not np.all(np.isfinite(g)):
        raise ValueError("sampler must be strictly positive and finite on all sampled points")
    deficits = np.log(g).mean(axis=1) - np.log(g0[0])
    return SubharmonicityReport(float(min(0.0, deficits.min())), deficits, radii)


# ---------------------------------------------------------------------------
# serialization


def write_grid2d(field_: ScalarField, path) -> None:
    g = field_.grid
    header = f"GRID2D {g.nx} {g.ny} {g.h!r} {g.origin[0]!r} {g.origin[1]!r}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(field_.values, dtype="<f8").tobytes())


def read_grid2d(path) -> ScalarField:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 6 or header[0] != "GRID2D":
            raise ValueError(f"{path}: not a GRID2D file")
        nx, ny = int(header[1]), int(header[2])
        h, ox, oy = (float(t) for t in header[3:])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} values, found {data.size}")
    return ScalarField(GridSpec((ox, oy), h, nx, ny), data.reshape(nx, ny))


def field_to_csv(field_: ScalarField, path) -> None:
    X, Y = field_.grid.centers()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for x, y, v in zip(X.ravel(), Y.ravel(), field_.values.ravel()):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])


def write_charges_csv(charges: ChargeList, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "w"])
        for (x, y), q in zip(charges.positions, charges.weights):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(q))])


def read_charges_csv(path) -> ChargeList:
    """Read ``x,y,w`` rows; a missing ``w`` column means unit weights."""
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if rows and rows[0] and not _is_number(rows[0][0]):
        rows = rows[1:]
    rows = [r for r in rows if r]
    pos = np.array([[float(r[0]), float(r[1])] for r in rows]).reshape(-1, 2)
    wts = np.array([float(r[2]) if len(r) > 2 else 1.0 for r in rows])
    return ChargeList(pos, wts)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True
