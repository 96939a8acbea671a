"""Exclusion-rule audits, separation and packing-density measurements.

A configuration satisfies the exclusion rule when no point lies in the
screening region generated by any subset of the other points.  Checking all
subsets is exponential, so :func:`audit_exclusion` runs a declared family of
subsets (singletons, close pairs, sliding cluster disks, random draws).
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable

import numba
import numpy as np

from . import tf

log = logging.getLogger(__name__)

DISK_RADIUS = 1.0 / math.sqrt(math.pi)
PAIR_SEPARATION = 2.0 / math.sqrt(math.pi)
FRAMES = ("unit", "plasma")


class FrameError(ValueError):
    pass


class RegionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PointConfig:
    """Planar points tagged with their coordinate frame.

    ``frame="unit"`` is the unit-density frame (cap 1); ``frame="plasma"`` is
    the plasma frame of exponent ``ell`` (cap 1/(pi ell)).
    """

    points: np.ndarray
    frame: str = "unit"
    ell: int = 1

    def __post_init__(self):
        p = np.array(self.points, dtype=float).reshape(-1, 2)
        if len(p) < 1:
            raise ValueError("a configuration needs at least one point")
        if not np.all(np.isfinite(p)):
            raise ValueError("points must be finite")
        if self.frame not in FRAMES:
            raise FrameError(f"frame must be one of {FRAMES}, got {self.frame!r}")
        if int(self.ell) != self.ell or self.ell < 1:
            raise ValueError("ell must be a positive integer")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "ell", int(self.ell))

    @property
    def N(self) -> int:
        return len(self.points)

    def __len__(self):
        return self.N

    @property
    def scale(self) -> float:
        """Length factor from unit-density to plasma coordinates."""
        return math.sqrt(math.pi * self.ell)

    @property
    def cap(self) -> float:
        return 1.0 if self.frame == "unit" else 1.0 / (math.pi * self.ell)

    def to_frame(self, frame: str) -> "PointConfig":
        if frame not in FRAMES:
            raise FrameError(f"unknown frame {frame!r}")
        if frame == self.frame:
            return self
        s = self.scale if frame == "plasma" else 1.0 / self.scale
        return PointConfig(self.points * s, frame, self.ell)


def as_config(points, frame: str = "unit", ell: int = 1) -> PointConfig:
    return points if isinstance(points, PointConfig) else PointConfig(points, frame, ell)


# ---------------------------------------------------------------------------
# regions


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not (self.radius > 0 and np.isfinite(self.radius)):
            raise RegionError("disk radius must be positive and finite")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        d2 = (p[:, 0] - self.center[0]) ** 2 + (p[:, 1] - self.center[1]) ** 2
        return d2 < self.radius**2

    def scaled(self, s: float) -> "Disk":
        return Disk((self.center[0] * s, self.center[1] * s), self.radius * s)

    def as_dict(self) -> dict:
        return {"type": "disk", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Polygon:
    """Simple polygon, optionally dilated by ``dilation``.

    Dilated areas use the Steiner formula A + P r + pi r^2, which is exact for
    convex polygons only; dilating a nonconvex polygon is refused.
    """

    vertices: np.ndarray
    dilation: float = 0.0

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 2)
        if len(v) < 3 or not np.all(np.isfinite(v)):
            raise RegionError("a polygon needs at least three finite vertices")
        if self.dilation < 0:
            raise RegionError("dilation must be nonnegative")
        if self.dilation > 0 and not _is_convex(v):
            raise RegionError("dilation is only supported for convex polygons")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        if self.area <= 0:
            raise RegionError("degenerate polygon")

    @property
    def base_area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    @property
    def perimeter(self) -> float:
        return float(np.linalg.norm(np.roll(self.vertices, -1, axis=0) - self.vertices, axis=1).sum())

    @property
    def area(self) -> float:
        r = self.dilation
        return self.base_area + self.perimeter * r + math.pi * r * r

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        inside = _point_in_polygon(p, self.vertices)
        if self.dilation > 0:
            inside |= _distance_to_boundary(p, self.vertices) < self.dilation
        return inside

    def scaled(self, s: float) -> "Polygon":
        return Polygon(self.vertices * s, self.dilation * s)

    def as_dict(self) -> dict:
        return {"type": "polygon", "vertices": self.vertices.tolist(), "dilation": self.dilation}


Region = Disk | Polygon


def region_from_dict(d: dict) -> Region:
    kind = d.get("type")
    if kind == "disk":
        return Disk(tuple(d["center"]), float(d["radius"]))
    if kind == "polygon":
        return Polygon(np.asarray(d["vertices"], dtype=float), float(d.get("dilation", 0.0)))
    raise RegionError(f"unknown region type {kind!r}")


def _is_convex(v: np.ndarray) -> bool:
    e = np.roll(v, -1, axis=0) - v
    cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    return bool(np.all(cross >= 0) or np.all(cross <= 0))


def _point_in_polygon(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    # even-odd ray casting along +x
    x, y = p[:, 0:1], p[:, 1:2]
    x0, y0 = v[:, 0], v[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    crosses = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    return np.count_nonzero(crosses & (x < xi), axis=1) % 2 == 1


def _distance_to_boundary(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    a = v[None, :, :]
    b = np.roll(v, -1, axis=0)[None, :, :]
    q = p[:, None, :]
    ab = b - a
    t = np.clip(((q - a) * ab).sum(-1) / (ab * ab).sum(-1), 0.0, 1.0)
    d = np.linalg.norm(q - (a + t[..., None] * ab), axis=-1)
    return d.min(axis=1)


def packing_density(config, region: Region) -> float:
    """Number of points strictly inside ``region`` divided by its area."""
    if region.area <= 0:
        raise RegionError("region area must be positive")
    pts = config.points if isinstance(config, PointConfig) else np.atleast_2d(config)
    return float(np.count_nonzero(region.contains(pts))) / region.area


# ---------------------------------------------------------------------------
# separation


@numba.njit(cache=True)
def _min_d2_direct(p):
    n = p.shape[0]
    best = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            dx = p[i, 0] - p[j, 0]
            dy = p[i, 1] - p[j, 1]
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
    return best


@numba.njit(cache=True)
def _min_d2_bucketed(p, cell):
    # cells of side `cell`, an upper bound on the minimum distance, so the
    # closest pair sits in the same or an adjacent cell
    n = p.shape[0]
    ix = np.floor((p[:, 0] - p[:, 0].min()) / cell).astype(np.int64)
    iy = np.floor((p[:, 1] - p[:, 1].min()) / cell).astype(np.int64)
    ny = iy.max() + 3
    key = ix * ny + iy
    order = np.argsort(key, kind="mergesort")
    skey = key[order]
    best = np.inf
    for a in range(n):
        i = order[a]
        for dx_ in range(-1, 2):
            for dy_ in range(-1, 2):
                k = (ix[i] + dx_) * ny + iy[i] + dy_
                lo = np.searchsorted(skey, k)
                b = lo
                while b < n and skey[b] == k:
                    j = order[b]
                    if j > i:
                        dx = p[i, 0] - p[j, 0]
                        dy = p[i, 1] - p[j, 1]
                        d2 = dx * dx + dy * dy
                        if d2 < best:
                            best = d2
                    b += 1
    return best


def min_pairwise_distance(config, method: str = "auto") -> float:
    """Exact minimum distance over all pairs of points (unit-density frame).

    ``method`` is ``"direct"`` (all pairs), ``"bucketed"`` (cell lists) or
    ``"auto"``.  Both variants use the same arithmetic and agree exactly.
    """
    config = as_config(config)
    if config.frame != "unit":
        raise FrameError("min_pairwise_distance expects the unit-density frame; rescale first")
    if config.N < 2:
        raise ValueError("need at least two points")
    p = np.ascontiguousarray(config.points)
    if method == "auto":
        method = "direct" if config.N <= 256 else "bucketed"
    if method == "direct":
        d2 = _min_d2_direct(p)
    elif method == "bucketed":
        d = p[1:] - p[0]
        cell = math.sqrt(float((d * d).sum(axis=1).min()))
        if cell == 0.0:
            return 0.0
        span = float((p.max(axis=0) - p.min(axis=0)).max())
        if span / cell > 1e6:
            return math.sqrt(_min_d2_direct(p))
        d2 = _min_d2_bucketed(p, cell)
    else:
        raise ValueError(f"unknown method {method!r}")
    return math.sqrt(d2)


# ---------------------------------------------------------------------------
# exclusion checks


@dataclass(frozen=True)
class Violation:
    subset: tuple[int, ...]
    point: int
    phi: float


@dataclass(frozen=True)
class SubsetCheck:
    subset: tuple[int, ...]
    violations: tuple[Violation, ...]
    method: str

    @property
    def passed(self) -> bool:
        return not self.violations


@dataclass
class ExclusionReport:
    subsets_checked: int
    violations: list[Violation]
    min_distance: float
    tf_solves: int = 0
    disk_checks: int = 0

    @property
    def passed(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {
            "subsets_checked": self.subsets_checked,
            "violations": [
                {"subset": list(v.subset), "point": v.point, "phi": v.phi} for v in self.violations
            ],
            "min_distance": self.min_distance,
            "tf_solves": self.tf_solves,
            "disk_checks": self.disk_checks,
        }


def _disk_phi(d: np.ndarray) -> np.ndarray:
    return tf.screening_profile(d)


def check_exclusion_subset(
    config,
    subset: Iterable[int],
    h: float = 0.02,
    margin_cells: float = 2.0,
    **solve_kw,
) -> SubsetCheck:
    """Test every point outside ``subset`` against Sigma of the subset.

    Singletons and pairs at separation >= 2/sqrt(pi) have disk-shaped regions
    (radius 1/sqrt(pi)) and are decided exactly.  Other subsets are solved on
    a grid of spacing ``h``; a point violates when its cell is in Sigma and
    lies deeper than ``margin_cells * h`` inside.
    """
    config = as_config(config).to_frame("unit")
    idx = tuple(sorted({int(i) for i in subset}))
    if not idx:
        raise tf.SubsetError("subset must be nonempty")
    if idx[0] < 0 or idx[-1] >= config.N:
        raise tf.SubsetError("subset index out of range")
    if len(idx) == config.N:
        raise tf.SubsetError("subset must be proper")
    pts = config.points
    others = np.setdiff1d(np.arange(config.N), idx)
    sub = pts[list(idx)]
    test = pts[others]
    disjoint = len(idx) == 1 or (
        len(idx) == 2 and np.linalg.norm(sub[0] - sub[1]) >= PAIR_SEPARATION
    )
    found = []
    if disjoint:
        d = np.linalg.norm(test[:, None, :] - sub[None, :, :], axis=-1).min(axis=1)
        for k in np.flatnonzero(d < DISK_RADIUS):
            found.append(Violation(idx, int(others[k]), float(_disk_phi(d[k]))))
        return SubsetCheck(idx, tuple(found), "disk")
    sol = tf.solve_tf(sub, h, **solve_kw)
    hit = sol.contains(test, margin=margin_cells * h)
    for k in np.flatnonzero(hit):
        cell = sol.box.cell_index(test[k : k + 1])[0]
        found.append(Violation(idx, int(others[k]), float(sol.phi.values[cell[0], cell[1]])))
    return SubsetCheck(idx, tuple(found), "tf")


@dataclass(frozen=True)
class AuditPolicy:
    """Subset family for :func:`audit_exclusion`.

    ``pair_margin=None`` disables pairs, ``cluster_radius=None`` disables
    cluster disks, ``random_count=0`` disables random subsets.
    """

    singletons: bool = True
    pair_margin: float | None = 0.1
    cluster_radius: float | None = 3.0
    cluster_stride: float = 1.5
    random_count: int = 0
    random_size: int = 3
    seed: int = 0
    h: float = 0.02
    margin_cells: float = 2.0

    def __post_init__(self):
        if self.pair_margin is not None and self.pair_margin < 0:
            raise ValueError("pair_margin must be nonnegative")
        if self.cluster_radius is not None and not (self.cluster_radius > 0 and self.cluster_stride > 0):
            raise ValueError("cluster radius and stride must be positive")
        if self.random_count < 0 or self.random_size < 1:
            raise ValueError("invalid random subset settings")
        if not self.h > 0:
            raise ValueError("h must be positive")

    @classmethod
    def singletons_only(cls) -> "AuditPolicy":
        return cls(pair_margin=None, cluster_radius=None)


def policy_subsets(config: PointConfig, policy: AuditPolicy) -> list[tuple[int, ...]]:
    """Deterministic, duplicate-free list of proper subsets for the policy."""
    pts = config.points
    n = config.N
    out: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()

    def add(s):
        s = tuple(sorted(int(i) for i in s))
        if 0 < len(s) < n and s not in seen:
            seen.add(s)
            out.append(s)

    if policy.singletons:
        for i in range(n):
            add((i,))
    if policy.pair_margin is not None and n > 2:
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        ii, jj = np.nonzero(np.triu(d < PAIR_SEPARATION + policy.pair_margin, 1))
        for i, j in zip(ii, jj):
            add((i, j))
    if policy.cluster_radius is not None and n > 2:
        r, s = policy.cluster_radius, policy.cluster_stride
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        xs = np.arange(lo[0], hi[0] + s, s)
        ys = np.arange(lo[1], hi[1] + s, s)
        for cx in xs:
            for cy in ys:
                members = np.flatnonzero(np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) < r)
                if len(members) >= 2:
                    add(members)
    if policy.random_count and n > 1:
        rng = np.random.default_rng(policy.seed)
        k = min(policy.random_size, n - 1)
        for _ in range(policy.random_count):
            add(rng.choice(n, size=k, replace=False))
    return out


def audit_exclusion(config, policy: AuditPolicy | None = None, workers: int = 1) -> ExclusionReport:
    """Run :func:`check_exclusion_subset` over the policy's subset family.

    Results are merged in subset order, so the report does not depend on
    ``workers``.
    """
    policy = policy or AuditPolicy()
    config = as_config(config).to_frame("unit")
    subsets = policy_subsets(config, policy)

    def run(s):
        return check_exclusion_subset(config, s, h=policy.h, margin_cells=policy.margin_cells)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            checks = list(ex.map(run, subsets))
    else:
        checks = [run(s) for s in subsets]
    violations = [v for c in checks for v in c.violations]
    mind = min_pairwise_distance(config) if config.N >= 2 else math.inf
    n_tf = sum(c.method == "tf" for c in checks)
    return ExclusionReport(len(checks), violations, mind, n_tf, len(checks) - n_tf)


def triangular_lattice(n: int, spacing: float, center=(0.0, 0.0), angle: float = 0.0, shift=(0.0, 0.0)):
    """The ``n`` sites of a triangular lattice nearest to ``center``."""
    m = int(math.ceil(math.sqrt(n) * 1.5)) + 3
    i, j = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
    x = (i + 0.5 * j).ravel() * spacing + shift[0]
    y = (j * math.sqrt(3) / 2).ravel() * spacing + shift[1]
    c, s = math.cos(angle), math.sin(angle)
    p = np.column_stack([c * x - s * y, s * x + c * y])
    order = np.argsort(np.hypot(p[:, 0], p[:, 1]), kind="stable")
    return p[order[:n]] + np.asarray(center, dtype=float)


UNIT_LATTICE_SPACING = math.sqrt(2.0 / math.sqrt(3.0))
