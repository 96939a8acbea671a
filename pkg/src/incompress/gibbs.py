"""Metropolis sampling of the plasma Boltzmann-Gibbs measure exp(-H_N).

Moves displace one uniformly chosen particle by an isotropic Gaussian step.
The step size adapts toward a target acceptance during burn-in only and is
frozen afterwards, so the retained chain satisfies detailed balance.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np

from .exclusion import Disk, Polygon, PointConfig
from .gridfield import GridSpec, ScalarField
from .plasma import (
    PlasmaModel,
    SingularConfigurationError,
    _charges,
    hamiltonian,
    initial_configuration,
    rescale_frame,
)

log = logging.getLogger(__name__)

MIN_BATCHES = 20


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Chain:
    """Retained samples, shape (S, N, 2), in the model's frame."""

    model: PlasmaModel
    samples: np.ndarray
    energies: np.ndarray
    acceptance_rate: float
    seed: int
    burn_in: int
    thin: int
    step_size: float
    moves: int

    def __post_init__(self):
        self.samples.setflags(write=False)
        self.energies.setflags(write=False)

    def __len__(self):
        return len(self.samples)

    def config(self, k: int) -> PointConfig:
        return PointConfig(self.samples[k], self.model.frame, self.model.ell)


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _smooth_value(kind, prm, x, y):
    if kind == 1:
        r2 = (x - prm[2]) ** 2 + (y - prm[3]) ** 2
        return -prm[0] * math.exp(-r2 / (2.0 * prm[1] * prm[1]))
    if kind == 2:
        r2 = x * x + y * y
        return prm[0] * r2 * r2
    if kind == 3:
        return prm[0] * (x * x + y * y)
    return 0.0


@numba.njit(cache=True)
def _delta_energy(x, i, nx, ny, a, c, qpos, qw, kind, prm, eps):
    """H(x with particle i at (nx, ny)) - H(x); +inf on a coincidence."""
    ox = x[i, 0]
    oy = x[i, 1]
    d = a * (nx * nx + ny * ny - ox * ox - oy * oy)
    s = 0.0
    for j in range(x.shape[0]):
        if j == i:
            continue
        dxn = nx - x[j, 0]
        dyn = ny - x[j, 1]
        dn = dxn * dxn + dyn * dyn
        if dn == 0.0:
            return np.inf
        dxo = ox - x[j, 0]
        dyo = oy - x[j, 1]
        s += math.log(dn) - math.log(dxo * dxo + dyo * dyo)
    d -= 0.5 * c * s
    for k in range(qpos.shape[0]):
        dxn = nx - qpos[k, 0]
        dyn = ny - qpos[k, 1]
        dn = dxn * dxn + dyn * dyn
        if dn == 0.0:
            return np.inf
        dxo = ox - qpos[k, 0]
        dyo = oy - qpos[k, 1]
        d -= 0.5 * qw[k] * (math.log(dn) - math.log(dxo * dxo + dyo * dyo))
    if kind > 0:
        d += eps * (_smooth_value(kind, prm, nx, ny) - _smooth_value(kind, prm, ox, oy))
    return d


@numba.njit(cache=True)
def _metropolis(x, who, xi, logu, step, a, c, qpos, qw, kind, prm, eps):
    acc = 0
    dE = 0.0
    for t in range(who.shape[0]):
        i = who[t]
        nx = x[i, 0] + step * xi[t, 0]
        ny = x[i, 1] + step * xi[t, 1]
        d = _delta_energy(x, i, nx, ny, a, c, qpos, qw, kind, prm, eps)
        if logu[t] < -d:
            x[i, 0] = nx
            x[i, 1] = ny
            acc += 1
            dE += d
    return acc, dE


class _Engine:
    """Binds a plasma-frame model to the compiled kernel."""

    def __init__(self, model: PlasmaModel):
        self.model = model
        self.qpos, self.qw = _charges(model)
        pert = model.perturbation
        self.eps = pert.eps if pert.has_smooth else 0.0
        self.kind = pert.U.kind if pert.has_smooth else 0
        self.prm = np.zeros(4)
        if self.kind > 0:
            self.prm[: len(pert.U.params)] = pert.U.params
        self.a = model.one_body
        self.c = model.coupling

    def delta(self, x, i, new) -> float:
        if self.kind < 0:
            base = _delta_energy(x, i, new[0], new[1], self.a, self.c, self.qpos, self.qw, 0, self.prm, 0.0)
            U = self.model.perturbation.U
            return base + self.eps * float(U(np.asarray(new)[None])[0] - U(x[i][None])[0])
        return _delta_energy(x, i, new[0], new[1], self.a, self.c, self.qpos, self.qw, self.kind, self.prm, self.eps)

    def run(self, x, rng, n, step):
        who = rng.integers(0, len(x), size=n)
        xi = rng.standard_normal((n, 2))
        logu = np.log(rng.random(n))
        if self.kind >= 0:
            return _metropolis(x, who, xi, logu, step, self.a, self.c, self.qpos, self.qw, self.kind, self.prm, self.eps)
        acc, dE = 0, 0.0
        for t in range(n):
            i = who[t]
            new = x[i] + step * xi[t]
            d = self.delta(x, i, new)
            if logu[t] < -d:
                x[i] = new
                acc += 1
                dE += d
        return acc, dE


def _plasma_model(model: PlasmaModel) -> tuple[PlasmaModel, float]:
    if model.frame == "plasma":
        return model, 1.0
    return rescale_frame(model, "plasma"), math.sqrt(math.pi * model.ell)


def sample(
    model: PlasmaModel,
    steps: int,
    *,
    burn_in: int | None = None,
    thin: int | None = None,
    step_size: float | None = None,
    target_acceptance: float = 0.3,
    seed: int = 0,
    init=None,
) -> Chain:
    """Run a single-particle Metropolis chain targeting exp(-H_N).

    All counts are single-particle moves: ``steps`` after burn-in, ``burn_in``
    defaults to 200 N sweeps (200 N^2 moves), ``thin`` to one sweep (N moves).
    A unit-density model is sampled through its plasma-frame equivalent, so
    the temperature is always 1 in plasma coordinates; samples are returned
    in the model's own frame.
    """
    N = model.N
    burn_in = 200 * N * N if burn_in is None else int(burn_in)
    thin = N if thin is None else int(thin)
    steps = int(steps)
    if steps < 1 or thin < 1 or burn_in < 0 or thin > steps:
        raise ValueError("need steps >= thin >= 1 and burn_in >= 0")
    if not 0 < target_acceptance < 1:
        raise ValueError("target acceptance must lie in (0, 1)")
    pm, scale = _plasma_model(model)
    rng = np.random.default_rng(seed)
    if init is None:
        x = initial_configuration(pm, rng, "lattice")
    else:
        p = init.points if isinstance(init, PointConfig) else np.asarray(init, dtype=float)
        x = np.array(p, dtype=float).reshape(N, 2) * scale
    x = np.ascontiguousarray(x)
    try:
        energy = hamiltonian(pm, x)
    except SingularConfigurationError as exc:
        raise SamplerError("initial configuration has infinite energy") from exc
    engine = _Engine(pm)
    step = math.sqrt(1.0 / (math.pi * pm.cap)) * 0.5 if step_size is None else float(step_size)
    adapt = step_size is None
    window = max(100, 10 * N)
    done = 0
    last_rate = None
    while done < burn_in:
        n = min(window, burn_in - done)
        acc, dE = engine.run(x, rng, n, step)
        energy += dE
        done += n
        last_rate = acc / n
        if adapt:
            step *= math.exp(last_rate - target_acceptance)
    if last_rate == 0.0:
        raise SamplerError("zero acceptance at the end of burn-in")
    n_keep = steps // thin
    samples = np.empty((n_keep, N, 2))
    energies = np.empty(n_keep)
    accepted = 0
    for k in range(n_keep):
        acc, dE = engine.run(x, rng, thin, step)
        accepted += acc
        energy += dE
        samples[k] = x / scale
        energies[k] = energy
    moves = n_keep * thin
    return Chain(model, samples, energies, accepted / moves, seed, burn_in, thin, step / scale, moves)


# ---------------------------------------------------------------------------
# estimators


def density_histogram(chain: Chain, grid: GridSpec) -> ScalarField:
    """Average particle count per unit area in each cell."""
    if len(chain) == 0:
        raise ValueError("empty chain")
    pts = chain.samples.reshape(-1, 2)
    ex = grid.origin[0] + grid.h * np.arange(grid.nx + 1)
    ey = grid.origin[1] + grid.h * np.arange(grid.ny + 1)
    counts, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=(ex, ey))
    clipped = len(pts) - counts.sum()
    if clipped:
        warnings.warn(f"{clipped / len(chain):.4g} particles per sample fall outside the grid", RuntimeWarning)
    return ScalarField(grid, counts / (len(chain) * grid.cell_area))


@dataclass(frozen=True)
class DiskAverage:
    region: Disk | Polygon
    mean: float
    stderr: float
    cap_count: float
    n_samples: int
    n_batches: int

    @property
    def ratio(self) -> float:
        return self.mean / self.cap_count

    def within(self, slack: float = 0.1, sigmas: float = 3.0) -> bool:
        return self.mean <= self.cap_count * (1 + slack) + sigmas * self.stderr

    def as_dict(self) -> dict:
        return {
            "region": self.region.as_dict(),
            "mean": self.mean,
            "stderr": self.stderr,
            "cap_count": self.cap_count,
            "ratio": self.ratio,
            "n_samples": self.n_samples,
            "n_batches": self.n_batches,
        }


def batch_means_stderr(values: np.ndarray, n_batches: int = MIN_BATCHES) -> float:
    batches = np.array_split(np.asarray(values, dtype=float), n_batches)
    means = np.array([b.mean() for b in batches])
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def disk_average(chain: Chain, region, n_batches: int = MIN_BATCHES) -> DiskAverage:
    """Mean count inside ``region`` per sample, with a batch-means error.

    ``cap_count`` is the incompressibility cap times the region area.
    """
    if n_batches < MIN_BATCHES:
        raise ValueError(f"at least {MIN_BATCHES} batches are required")
    S = len(chain)
    if S < n_batches:
        raise ValueError(f"need at least {n_batches} samples, chain has {S}")
    pts = chain.samples.reshape(-1, 2)
    counts = region.contains(pts).reshape(S, -1).sum(axis=1)
    return DiskAverage(
        region,
        float(counts.mean()),
        batch_means_stderr(counts, n_batches),
        chain.model.cap * region.area,
        S,
        n_batches,
    )


def integrated_autocorrelation_time(trace) -> float:
    """Initial-positive-sequence estimate of the integrated autocorrelation time.

    Returns nan for a constant trace.
    """
    y = np.asarray(trace, dtype=float)
    n = len(y)
    if n < 4:
        raise ValueError("trace too short")
    y = y - y.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    if acov[0] <= 0:
        return math.nan
    total = -acov[0]
    for k in range(0, n - 1, 2):
        pair = acov[k] + acov[k + 1]
        if pair <= 0:
            break
        total += 2 * pair
    return float(total / acov[0])


@dataclass(frozen=True)
class ChainDiagnostics:
    acceptance: float
    tau: float
    tau_moves: float
    thin: int
    n_batches: int
    flagged: bool
    reasons: tuple[str, ...]

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def chain_diagnostics(chain: Chain | None = None, *, trace=None, acceptance: float | None = None, thin: int = 1) -> ChainDiagnostics:
    """Acceptance and energy autocorrelation time, with warning flags.

    The time is measured in retained samples and converted to single-particle
    moves; the chain is flagged when the thinning interval is shorter than
    the autocorrelation time or nothing was accepted.  A bare ``trace`` can
    be passed instead of a chain.
    """
    if chain is not None:
        trace, acceptance, thin = chain.energies, chain.acceptance_rate, chain.thin
    if trace is None or len(trace) == 0:
        raise ValueError("empty chain")
    acceptance = 1.0 if acceptance is None else acceptance
    tau = integrated_autocorrelation_time(trace)
    reasons = []
    if acceptance == 0:
        reasons.append("no move accepted")
    if not np.isfinite(tau):
        reasons.append("energy trace is constant")
    elif tau * thin > thin:
        reasons.append("thinning interval shorter than the autocorrelation time")
    return ChainDiagnostics(
        float(acceptance),
        tau,
        tau * thin,
        int(thin),
        min(MIN_BATCHES, len(trace)),
        bool(reasons),
        tuple(reasons),
    )


def _energy_terms(model: PlasmaModel, x: np.ndarray) -> np.ndarray:
    """The individual terms of H, in a fixed order."""
    qpos, qw = _charges(model)
    i, j = np.triu_indices(len(x), 1)
    d2 = ((x[i] - x[j]) ** 2).sum(axis=1)
    terms = [model.one_body * (x * x).sum(axis=1), -0.5 * model.coupling * np.log(d2)]
    for q, w in zip(qpos, qw):
        terms.append(-0.5 * w * np.log(((x - q) ** 2).sum(axis=1)))
    if model.perturbation.has_smooth:
        terms.append(model.perturbation.eps * model.perturbation.U(x))
    return np.concatenate(terms)


def _energy_difference(model: PlasmaModel, x: np.ndarray, y: np.ndarray) -> float:
    """H(y) - H(x) from full evaluations, correctly rounded.

    Differencing two large totals would lose ~ulp(H) to cancellation; summing
    the term differences with math.fsum keeps the error at the term level.
    """
    return math.fsum(np.concatenate([_energy_terms(model, y), -_energy_terms(model, x)]))


def detailed_balance_audit(model: PlasmaModel, n_pairs: int = 1000, step: float = 0.5, seed: int = 0, states=None) -> float:
    """Largest |log[pi(x) q(x,y) A(x,y)] - log[pi(y) q(y,x) A(y,x)]| over random pairs.

    log pi(x) - log pi(y) comes from full energy evaluations (see
    :func:`_energy_difference`); q and A are those of the sampler
    (uniform particle choice, Gaussian step, Metropolis acceptance computed
    from the sampler's incremental energy difference).
    """
    pm, _ = _plasma_model(model)
    engine = _Engine(pm)
    rng = np.random.default_rng(seed)
    N = pm.N
    worst = 0.0
    base = initial_configuration(pm, rng, "lattice") if states is None else None

    def log_q(d):
        return -math.log(N) - float(d @ d) / (2 * step * step) - math.log(2 * math.pi * step * step)

    for k in range(n_pairs):
        if states is None:
            x = base + rng.normal(scale=0.3 * pm.lattice_spacing, size=base.shape)
        else:
            x = np.array(states[k % len(states)], dtype=float)
        i = int(rng.integers(N))
        d = step * rng.standard_normal(2)
        y = x.copy()
        y[i] += d
        dh = _energy_difference(pm, x, y)
        fwd = engine.delta(x, i, y[i])
        bwd = engine.delta(y, i, x[i])
        # log[pi(x) q A(x->y)] - log[pi(y) q A(y->x)], with pi(x)/pi(y) = exp(dh)
        gap = dh + (log_q(d) - log_q(-d)) + (min(0.0, -fwd) - min(0.0, -bwd))
        worst = max(worst, abs(gap))
    return worst
