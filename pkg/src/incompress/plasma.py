"""Generalized jellium and plasma Hamiltonians with superharmonic perturbations.

Unit-density frame:  H(X) = (pi/2) sum |x_i|^2 - sum_{i<j} log|x_i - x_j| + W
Plasma frame (ell):  H(Z) = sum |z_i|^2 - 2 ell sum_{i<j} log|z_i - z_j| + W

with W(Z) = -sum_k w_k sum_i log|z_i - a_k| + eps sum_i U(z_i), w_k >= 0.
The frames are related by z = sqrt(pi ell) x, under which the plasma
Hamiltonian equals 2 ell times the unit-density one up to a constant.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from .exclusion import (
    FRAMES,
    UNIT_LATTICE_SPACING,
    Disk,
    FrameError,
    PointConfig,
    Polygon,
    as_config,
    triangular_lattice,
)
from .gridfield import ChargeList

log = logging.getLogger(__name__)


class SingularConfigurationError(ValueError):
    """Two particles coincide, or a particle sits on a repulsive charge."""


class MinimizeError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# smooth one-body potentials


@dataclass(frozen=True)
class SmoothPotential:
    """A named callable U(points) -> values with optional closed-form data.

    ``kind`` selects a compiled kernel in the sampler (0 none, 1 gaussian
    bump, 2 quartic, 3 harmonic, -1 opaque callable).
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    laplacian_bound: float | None
    length_scale: float = 1.0
    kind: int = -1
    params: tuple = ()

    def __call__(self, points) -> np.ndarray:
        return self.func(np.atleast_2d(np.asarray(points, dtype=float)))


def _gaussian_bump(amplitude=8.0, width=2.0, center=(0.0, 0.0)) -> SmoothPotential:
    a, s = float(amplitude), float(width)
    cx, cy = float(center[0]), float(center[1])

    def u(p):
        r2 = (p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2
        return -a * np.exp(-r2 / (2 * s * s))

    # Delta U = (2a/s^2) e^{-t} (1 - t), t = r^2/(2 s^2); sup |.| at t = 0
    return SmoothPotential("gaussian_bump", u, 2 * abs(a) / s**2, s, 1, (a, s, cx, cy))


def _quartic(coefficient=1.0) -> SmoothPotential:
    c = float(coefficient)
    # Laplacian 16 c |x|^2 is unbounded; the bound must be supplied
    return SmoothPotential("quartic", lambda p: c * ((p * p).sum(axis=1)) ** 2, None, 1.0, 2, (c,))


def _harmonic(coefficient=1.0) -> SmoothPotential:
    c = float(coefficient)
    return SmoothPotential("harmonic", lambda p: c * (p * p).sum(axis=1), 4 * abs(c), 1.0, 3, (c,))


def _none() -> SmoothPotential:
    return SmoothPotential("none", lambda p: np.zeros(len(p)), 0.0, 1.0, 0, ())


BUILTIN_POTENTIALS = {
    "none": _none,
    "gaussian_bump": _gaussian_bump,
    "quartic": _quartic,
    "harmonic": _harmonic,
}


def builtin_potential(name: str, **params) -> SmoothPotential:
    try:
        make = BUILTIN_POTENTIALS[name]
    except KeyError:
        raise ValueError(f"unknown potential {name!r}; choose from {sorted(BUILTIN_POTENTIALS)}") from None
    return make(**params)


def custom_potential(func, laplacian_bound=None, length_scale=1.0, name="custom") -> SmoothPotential:
    return SmoothPotential(name, func, laplacian_bound, length_scale, -1, ())


# ---------------------------------------------------------------------------
# model types


def _empty_charges() -> ChargeList:
    return ChargeList(np.zeros((0, 2)), np.zeros(0))


@dataclass(frozen=True, eq=False)
class PerturbationSpec:
    """Superharmonic perturbation W.

    Each point charge adds -w sum_i log|z_i - a|; the smooth part adds
    eps sum_i U(z_i), where ``deltaU_bound`` bounds sup |Delta U|.
    """

    point_charges: ChargeList = field(default_factory=_empty_charges)
    eps: float = 0.0
    U: SmoothPotential | None = None
    deltaU_bound: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.point_charges.weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("point-charge weights must be nonnegative (W must stay superharmonic)")
        if not (self.eps >= 0 and np.isfinite(self.eps)):
            raise ValueError("eps must be finite and nonnegative")
        if not (self.deltaU_bound >= 0 and np.isfinite(self.deltaU_bound)):
            raise ValueError("deltaU_bound must be finite and nonnegative")
        if self.eps > 0 and self.U is None:
            raise ValueError("eps > 0 needs a smooth potential U")

    @property
    def has_smooth(self) -> bool:
        return self.eps > 0 and self.U is not None and self.U.kind != 0

    def cap_correction(self, frame: str) -> float:
        """Relative increase of the density cap caused by eps U.

        The background Laplacian is 4 in the plasma frame and 2 pi in the
        unit-density frame, so the factor is 1 + eps |Delta U| / 4 or
        1 + eps |Delta U| / (2 pi) respectively.
        """
        if not self.has_smooth:
            return 1.0
        base = 4.0 if frame == "plasma" else 2.0 * math.pi
        return 1.0 + self.eps * self.deltaU_bound / base


def quasihole_perturbation(holes) -> PerturbationSpec:
    """Quasi-hole factors prod_j (z - a_j)^{m_j} as plasma-frame charges 2 m_j."""
    pos, w = [], []
    for hole in holes:
        # accepts ((x, y), m) or (x, y, m)
        a, m = (hole[:2], hole[2]) if len(hole) == 3 else hole
        if int(m) != m or m < 1:
            raise ValueError("quasi-hole multiplicities must be positive integers")
        pos.append([float(a[0]), float(a[1])])
        w.append(2.0 * m)
    return PerturbationSpec(ChargeList(np.reshape(pos, (-1, 2)), np.asarray(w, dtype=float)))


@dataclass(frozen=True, eq=False)
class PlasmaModel:
    N: int
    ell: int = 1
    frame: str = "unit"
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if int(self.ell) != self.ell or self.ell < 1:
            raise ValueError("ell must be a positive integer")
        if self.frame not in FRAMES:
            raise FrameError(f"frame must be one of {FRAMES}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "ell", int(self.ell))

    @property
    def one_body(self) -> float:
        return math.pi / 2 if self.frame == "unit" else 1.0

    @property
    def coupling(self) -> float:
        return 1.0 if self.frame == "unit" else 2.0 * self.ell

    @property
    def cap(self) -> float:
        return 1.0 if self.frame == "unit" else 1.0 / (math.pi * self.ell)

    @property
    def cap_factor(self) -> float:
        return self.perturbation.cap_correction(self.frame)

    @property
    def support_radius(self) -> float:
        """Radius of the neutral disk, sqrt(N/pi) or sqrt(ell N)."""
        return math.sqrt(self.N / (math.pi * self.cap))

    @property
    def lattice_spacing(self) -> float:
        return UNIT_LATTICE_SPACING / math.sqrt(self.cap)


@dataclass(frozen=True, eq=False)
class MinimizeResult:
    config: PointConfig
    energy: float
    grad_sup: float
    iterations: int
    restarts_used: int
    converged: bool = True
    start_energies: tuple = ()


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _energy(x, a, c, qpos, qw):
    n = x.shape[0]
    e = 0.0
    for i in range(n):
        e += a * (x[i, 0] * x[i, 0] + x[i, 1] * x[i, 1])
    pair = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i, 0] - x[j, 0]
            dy = x[i, 1] - x[j, 1]
            d2 = dx * dx + dy * dy
            if d2 == 0.0:
                return np.nan
            pair += np.log(d2)
    e -= 0.5 * c * pair
    for k in range(qpos.shape[0]):
        if qw[k] == 0.0:
            continue
        s = 0.0
        for i in range(n):
            dx = x[i, 0] - qpos[k, 0]
            dy = x[i, 1] - qpos[k, 1]
            d2 = dx * dx + dy * dy
            if d2 == 0.0:
                return np.nan
            s += np.log(d2)
        e -= 0.5 * qw[k] * s
    return e


@numba.njit(cache=True)
def _gradient(x, a, c, qpos, qw, g):
    n = x.shape[0]
    for i in range(n):
        g[i, 0] = 2.0 * a * x[i, 0]
        g[i, 1] = 2.0 * a * x[i, 1]
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i, 0] - x[j, 0]
            dy = x[i, 1] - x[j, 1]
            d2 = dx * dx + dy * dy
            if d2 == 0.0:
                return False
            fx = c * dx / d2
            fy = c * dy / d2
            g[i, 0] -= fx
            g[i, 1] -= fy
            g[j, 0] += fx
            g[j, 1] += fy
    for k in range(qpos.shape[0]):
        if qw[k] == 0.0:
            continue
        for i in range(n):
            dx = x[i, 0] - qpos[k, 0]
            dy = x[i, 1] - qpos[k, 1]
            d2 = dx * dx + dy * dy
            if d2 == 0.0:
                return False
            g[i, 0] -= qw[k] * dx / d2
            g[i, 1] -= qw[k] * dy / d2
    return True


def _charges(model: PlasmaModel):
    pc = model.perturbation.point_charges
    return np.ascontiguousarray(pc.positions, dtype=float).reshape(-1, 2), np.asarray(pc.weights, dtype=float)


def _points(model: PlasmaModel, config) -> np.ndarray:
    if isinstance(config, PointConfig):
        if config.frame != model.frame:
            raise FrameError(f"configuration frame {config.frame!r} differs from model frame {model.frame!r}")
        p = config.points
    else:
        p = np.asarray(config, dtype=float).reshape(-1, 2)
    if len(p) != model.N:
        raise ValueError(f"expected {model.N} points, got {len(p)}")
    return np.ascontiguousarray(p)


def _smooth_energy(model, p):
    pert = model.perturbation
    return pert.eps * float(pert.U(p).sum()) if pert.has_smooth else 0.0


def _smooth_gradient(model, p):
    pert = model.perturbation
    if not pert.has_smooth:
        return 0.0
    step = 1e-5 * pert.U.length_scale
    g = np.empty_like(p)
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        g[:, k] = (pert.U(p + e) - pert.U(p - e)) / (2 * step)
    return pert.eps * g


def hamiltonian(model: PlasmaModel, config) -> float:
    """Exact O(N^2) energy; coincidences raise :class:`SingularConfigurationError`."""
    p = _points(model, config)
    qpos, qw = _charges(model)
    e = _energy(p, model.one_body, model.coupling, qpos, qw)
    if np.isnan(e):
        raise SingularConfigurationError("coincident particles or particle on a point charge")
    return float(e + _smooth_energy(model, p))


def gradient(model: PlasmaModel, config) -> np.ndarray:
    """dH/dx_i as an (N, 2) array."""
    p = _points(model, config)
    qpos, qw = _charges(model)
    g = np.empty_like(p)
    if not _gradient(p, model.one_body, model.coupling, qpos, qw, g):
        raise SingularConfigurationError("coincident particles or particle on a point charge")
    return g + _smooth_gradient(model, p)


# ---------------------------------------------------------------------------
# minimization


def _energy_or_inf(model, p, qpos, qw):
    e = _energy(p, model.one_body, model.coupling, qpos, qw)
    return math.inf if np.isnan(e) else float(e + _smooth_energy(model, p))


def _descend(model, x, tol, max_iter, c1=1e-4, shrink=0.5):
    """Gradient descent with Armijo backtracking.

    The first trial step of each iteration is the Barzilai-Borwein step
    length; the accepted step always satisfies the Armijo condition, so the
    energy never increases.
    """
    qpos, qw = _charges(model)
    a, c = model.one_body, model.coupling
    e = _energy_or_inf(model, x, qpos, qw)
    if not np.isfinite(e):
        raise SingularConfigurationError("initial configuration is singular")
    g = np.empty_like(x)
    _gradient(x, a, c, qpos, qw, g)
    g = g + _smooth_gradient(model, x)
    alpha = 0.1 / max(1.0, np.abs(g).max())
    x_prev = g_prev = None
    for it in range(1, max_iter + 1):
        gsup = float(np.abs(g).max())
        if gsup <= tol:
            return x, e, gsup, it - 1, True
        if x_prev is not None:
            s = x - x_prev
            y = g - g_prev
            sy = float((s * y).sum())
            if sy > 0:
                alpha = float((s * s).sum()) / sy
        gg = float((g * g).sum())
        step = alpha
        while True:
            xn = x - step * g
            en = _energy_or_inf(model, xn, qpos, qw)
            if en <= e - c1 * step * gg:
                break
            step *= shrink
            if step < 1e-300:
                return x, e, gsup, it, False
        gn = np.empty_like(x)
        _gradient(xn, a, c, qpos, qw, gn)
        gn = gn + _smooth_gradient(model, xn)
        x_prev, g_prev = x, g
        x, g, e = xn, gn, en
    return x, e, float(np.abs(g).max()), max_iter, False


def initial_configuration(model: PlasmaModel, rng: np.random.Generator, kind: str = "lattice") -> np.ndarray:
    """Perturbed triangular lattice or uniform draw in the neutral disk.

    Lattice sites inside the exclusion disks of the point charges are skipped.
    """
    R = model.support_radius
    qpos, qw = _charges(model)
    if kind == "lattice":
        s = model.lattice_spacing
        extra = int(np.ceil(qw.sum() / model.coupling)) + 1 if len(qw) else 0
        cand = triangular_lattice(
            model.N + 4 * extra + 8,
            s,
            angle=rng.uniform(0, np.pi / 3),
            shift=rng.uniform(-0.5, 0.5, 2) * s,
        )
        keep = np.ones(len(cand), dtype=bool)
        for q, w in zip(qpos, qw):
            rq = math.sqrt(w / model.coupling / (math.pi * model.cap))
            keep &= np.hypot(*(cand - q).T) >= rq
        cand = cand[keep]
        order = np.argsort(np.hypot(cand[:, 0], cand[:, 1]), kind="stable")
        p = cand[order[: model.N]]
        return p + rng.normal(scale=0.05 * s, size=p.shape)
    if kind == "uniform":
        r = R * np.sqrt(rng.random(model.N))
        t = 2 * np.pi * rng.random(model.N)
        return np.column_stack([r * np.cos(t), r * np.sin(t)])
    raise ValueError(f"unknown start kind {kind!r}")


def minimize(
    model: PlasmaModel,
    init=None,
    *,
    seed: int = 0,
    starts: int = 8,
    tol: float | None = None,
    max_iter: int = 20000,
) -> MinimizeResult:
    """Multi-start local minimization of H.

    ``init`` may be a configuration (single start) or None, in which case
    half the starts are perturbed lattices and half uniform draws.  The best
    converged local minimum is returned.
    """
    if tol is None:
        tol = 1e-6 * model.N
    if isinstance(init, (int, np.integer)) and not isinstance(init, bool):
        seed, init = int(init), None
    if init is not None:
        x0s = [_points(model, init).copy()]
    else:
        if starts < 1:
            raise ValueError("starts must be at least 1")
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(starts)]
        n_lat = (starts + 1) // 2
        x0s = [initial_configuration(model, r, "lattice" if k < n_lat else "uniform") for k, r in enumerate(rngs)]
    best = None
    energies = []
    total_it = 0
    for x0 in x0s:
        x, e, gsup, its, ok = _descend(model, x0, tol, max_iter)
        total_it += its
        energies.append(e)
        cand = (not ok, e, x, gsup, its)
        if best is None or (cand[0], cand[1]) < (best[0], best[1]):
            best = cand
    failed, e, x, gsup, its = best
    if failed:
        raise MinimizeError(f"no start reached grad_sup <= {tol:.3g} within {max_iter} iterations (best {gsup:.3g})")
    cfg = PointConfig(x, model.frame, model.ell)
    return MinimizeResult(cfg, e, gsup, its, len(x0s), True, tuple(energies))


# ---------------------------------------------------------------------------
# density reports


@dataclass(frozen=True)
class RegionDensity:
    region: Disk | Polygon
    count: float
    area: float
    density: float
    cap: float
    cap_factor: float
    ratio: float
    stderr: float = 0.0

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("count", "area", "density", "cap", "cap_factor", "ratio", "stderr")}
        d["region"] = self.region.as_dict()
        return d


@dataclass(frozen=True)
class DensityReport:
    frame: str
    entries: tuple[RegionDensity, ...]

    @property
    def max_ratio(self) -> float:
        return max((e.ratio for e in self.entries), default=0.0)

    def as_dict(self) -> dict:
        return {"frame": self.frame, "max_ratio": self.max_ratio, "regions": [e.as_dict() for e in self.entries]}


def local_density_report(config, regions, model: PlasmaModel | None = None, cap_factor: float | None = None) -> DensityReport:
    """Counts and densities per region against the incompressibility cap.

    The ratio is density / (cap * cap_factor); the factor comes from the
    model's smooth perturbation unless given explicitly.
    """
    config = as_config(config)
    if model is not None and model.frame != config.frame:
        raise FrameError("model and configuration frames differ")
    if cap_factor is None:
        cap_factor = model.cap_factor if model is not None else 1.0
    out = []
    for reg in regions:
        area = reg.area
        if not area > 0:
            raise ValueError("degenerate region")
        n = int(np.count_nonzero(reg.contains(config.points)))
        dens = n / area
        out.append(RegionDensity(reg, n, area, dens, config.cap, cap_factor, dens / (config.cap * cap_factor)))
    return DensityReport(config.frame, tuple(out))


def bulk_disks(center_radius: float, radius: float, stride: float | None = None, center=(0.0, 0.0)) -> list[Disk]:
    """Disks of ``radius`` whose centers lie on a square lattice of ``stride``
    inside the disk of radius ``center_radius``."""
    stride = stride or radius
    m = int(center_radius // stride)
    out = []
    for i in range(-m, m + 1):
        for j in range(-m, m + 1):
            c = (center[0] + i * stride, center[1] + j * stride)
            if math.hypot(i * stride, j * stride) <= center_radius + 1e-12:
                out.append(Disk(c, radius))
    return out


# ---------------------------------------------------------------------------
# frames


def rescale_frame(obj, target: str):
    """Move a configuration or model between the unit-density and plasma frames.

    Coordinates scale by sqrt(pi ell).  For a model, charge weights and eps
    are divided by 2 ell going to the unit-density frame (multiplied going
    back), which keeps H_plasma(z) = 2 ell H_unit(x) + const.  The smooth
    potential is composed with the coordinate change and its Laplacian bound
    rescaled by the Jacobian pi ell.
    """
    if target not in FRAMES:
        raise FrameError(f"unknown frame {target!r}")
    if obj.frame == target:
        raise FrameError(f"object is already in the {target!r} frame")
    if isinstance(obj, PointConfig):
        return obj.to_frame(target)
    if not isinstance(obj, PlasmaModel):
        raise TypeError("expected a PointConfig or PlasmaModel")
    ell = obj.ell
    s = math.sqrt(math.pi * ell)
    to_plasma = target == "plasma"
    pos_factor = s if to_plasma else 1.0 / s
    energy_factor = 2.0 * ell if to_plasma else 1.0 / (2.0 * ell)
    pert = obj.perturbation
    pc = pert.point_charges
    charges = ChargeList(np.asarray(pc.positions) * pos_factor, np.asarray(pc.weights) * energy_factor)
    U = pert.U
    bound = pert.deltaU_bound
    if U is not None and U.kind != 0:
        inner = U.func
        inv = 1.0 / pos_factor
        U = SmoothPotential(
            f"{U.name}@{target}", lambda p, f=inner, k=inv: f(p * k), None, U.length_scale * pos_factor, -1, ()
        )
        bound = bound / pos_factor**2
    new = PerturbationSpec(charges, pert.eps * energy_factor, U, bound)
    return PlasmaModel(obj.N, ell, target, new)


def frame_energy_offset(N: int, ell: int, total_weight: float = 0.0) -> float:
    """Constant C with H_plasma(sqrt(pi ell) x) = 2 ell H_unit(x) + C.

    ``total_weight`` is the summed plasma-frame point-charge weight.
    """
    half_log = 0.5 * math.log(math.pi * ell)
    return -2 * ell * half_log * N * (N - 1) / 2 - total_weight * N * half_log


def model_from_dict(d: dict) -> PlasmaModel:
    """Build a model from the JSON keys N, ell, frame, holes, eps, U, U_params,
    deltaU_bound, charges (explicit [x, y, w] triples)."""
    allowed = {"N", "ell", "frame", "holes", "eps", "U", "U_params", "deltaU_bound", "charges"}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown model keys: {sorted(unknown)}")
    frame = {"unit": "unit", "unit-density": "unit", "plasma": "plasma"}.get(d.get("frame", "unit"))
    if frame is None:
        raise FrameError(f"unknown frame {d.get('frame')!r}")
    holes = d.get("holes", [])
    pert = quasihole_perturbation([((h[0], h[1]), h[2]) for h in holes])
    pos = [list(p) for p in pert.point_charges.positions]
    w = list(pert.point_charges.weights)
    for x, y, wt in d.get("charges", []):
        pos.append([x, y])
        w.append(wt)
    name = d.get("U", "none")
    U = builtin_potential(name, **d.get("U_params", {}))
    eps = float(d.get("eps", 0.0))
    bound = d.get("deltaU_bound", U.laplacian_bound)
    if eps > 0 and bound is None:
        raise ValueError(f"potential {name!r} has no closed-form Laplacian bound; supply deltaU_bound")
    spec = PerturbationSpec(
        ChargeList(np.reshape(pos, (-1, 2)), np.asarray(w, dtype=float)),
        eps,
        U if name != "none" else None,
        float(bound or 0.0),
    )
    return PlasmaModel(int(d["N"]), int(d.get("ell", 1)), frame, spec)


__all__ = [
    "SingularConfigurationError",
    "MinimizeError",
    "SmoothPotential",
    "builtin_potential",
    "custom_potential",
    "PerturbationSpec",
    "PlasmaModel",
    "MinimizeResult",
    "hamiltonian",
    "gradient",
    "minimize",
    "initial_configuration",
    "quasihole_perturbation",
    "RegionDensity",
    "DensityReport",
    "local_density_report",
    "bulk_disks",
    "rescale_frame",
    "model_from_dict",
    "frame_energy_offset",
]
