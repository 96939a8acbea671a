"""Acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line through ``record_criterion``; the
lines are repeated in the terminal summary under "acceptance criteria".
Run with ``pytest tests/test_acceptance.py -s`` to see them as they happen.
"""
import math
import time

import numpy as np
import pytest

from conftest import record_criterion
from incompress import bathtub as bt
from incompress import exclusion as ex
from incompress import gibbs
from incompress import plasma as pl
from incompress import tf
from incompress.gridfield import ChargeList, GridSpec, ScalarField, subharmonicity_check

pytestmark = pytest.mark.slow

R1 = 1 / math.sqrt(math.pi)
RESIDUAL_TOL = 2 * math.pi * 1e-8


def unit_disk_nuclei(rng, K, min_sep=0.02):
    while True:
        r = np.sqrt(rng.random(K))
        t = 2 * np.pi * rng.random(K)
        p = np.column_stack([r * np.cos(t), r * np.sin(t)])
        d = np.linalg.norm(p[:, None] - p[None], axis=-1) + np.eye(K)
        if d.min() > min_sep:
            return p


# ---------------------------------------------------------------------------
# shared solves


@pytest.fixture(scope="module")
def single_256():
    t0 = time.perf_counter()
    sol = tf.solve_tf([(0.0, 0.0)], 1 / 256)
    return sol, time.perf_counter() - t0


@pytest.fixture(scope="module")
def neutrality_runs():
    rng = np.random.default_rng(2024)
    runs = []
    for _ in range(20):
        K = int(rng.integers(2, 11))
        p = unit_disk_nuclei(rng, K)
        runs.append((K, tf.solve_tf(p, 1 / 256), tf.solve_tf(p, 1 / 512)))
    return runs


@pytest.fixture(scope="module")
def monotonicity_runs():
    rng = np.random.default_rng(77)
    runs = []
    for _ in range(20):
        K = int(rng.integers(2, 9))
        big = unit_disk_nuclei(rng, K, 0.05)
        k = int(rng.integers(1, K))
        sub = big[rng.permutation(K)[:k]]
        runs.append(tf.tf_monotonicity_check(sub, big, h=1 / 64, band=1, return_solutions=True))
    return runs


@pytest.fixture(scope="module")
def laughlin_chains():
    chains = {}
    for ell in (1, 2):
        for m in (0, 10):
            pert = pl.quasihole_perturbation([((0.0, 0.0), m)] if m else [])
            model = pl.PlasmaModel(200, ell, "plasma", pert)
            t0 = time.perf_counter()
            chains[ell, m] = (gibbs.sample(model, 1_000_000, seed=100 + 10 * ell + m), time.perf_counter() - t0)
    return chains


def laughlin_bulk_disks(ell):
    R = math.sqrt(200 * ell)
    return pl.bulk_disks(R - 8.0, 5.0, 5.0)


# ---------------------------------------------------------------------------
# criteria


def test_criterion_01_single_nucleus(single_256):
    sol, seconds = single_256
    h = sol.box.h
    X, Y = sol.box.centers()
    r = np.hypot(X, Y)
    r_in, r_out = r[sol.mask].max(), r[~sol.mask].min()
    radius_err = max(abs(r_in - R1), abs(r_out - R1))
    area_err = abs(sol.region_area - 1)
    err = np.abs(sol.phi.values - tf.single_nucleus_solution().phi_radial(r))
    err[tf.nucleus_cells(sol.nuclei, sol.box)] = 0
    ok = radius_err <= 2 * h and area_err <= 0.01 and err.max() <= 5e-3 and seconds < 60
    record_criterion(
        1, ok,
        f"radius err {radius_err:.2e} (<= {2 * h:.2e}), area err {area_err:.2e} (<= 1e-2), "
        f"phi err {err.max():.2e} (<= 5e-3), {seconds:.1f} s (< 60)",
    )
    assert ok


def test_criterion_02_neutrality(neutrality_runs):
    d256 = np.array([abs(a.region_area - K) / K for K, a, _ in neutrality_runs])
    d512 = np.array([abs(b.region_area - K) / K for K, _, b in neutrality_runs])
    ratio = d256.sum() / d512.sum()
    ok = d256.max() <= 0.01 and d512.max() <= 0.005 and ratio >= 2
    record_criterion(
        2, ok,
        f"max defect {d256.max():.2e} at h=1/256 (<= 1e-2), {d512.max():.2e} at h=1/512 (<= 5e-3), "
        f"halving ratio {ratio:.3f} (>= 2; per-config {(d256 / d512).min():.3f}..{(d256 / d512).max():.3f})",
    )
    assert ok


def test_criterion_03_monotone_inclusion(monotonicity_runs):
    fails = sum(not passed for passed, _, _ in monotonicity_runs)
    record_criterion(3, fails == 0, f"{fails} failures in {len(monotonicity_runs)} nested pairs (1-cell band)")
    assert fails == 0


def test_criterion_04_complementarity(single_256, neutrality_runs, monotonicity_runs):
    sols = [single_256[0]]
    sols += [s for _, a, b in neutrality_runs for s in (a, b)]
    sols += [s for _, a, b in monotonicity_runs for s in (a, b)]
    res = np.array([tf.verify_tf_solution(s).residual for s in sols])
    ok = res.max() <= RESIDUAL_TOL
    record_criterion(4, ok, f"max residual {res.max():.2e} over {len(sols)} solves (<= {RESIDUAL_TOL:.2e})")
    assert ok


def test_criterion_05_jellium():
    out = {}
    for n in (2, 3):
        t0 = time.perf_counter()
        out[n] = (pl.minimize(pl.PlasmaModel(n), seed=0), time.perf_counter() - t0)
    r2, t2 = out[2]
    r3, t3 = out[3]
    e2 = abs(r2.energy - (0.5 + 0.5 * math.log(math.pi / 2)))
    sep = abs(ex.min_pairwise_distance(r2.config) - math.sqrt(2 / math.pi))
    e3 = abs(r3.energy - (1.5 - 1.5 * math.log(3 / math.pi)))
    ok = e2 <= 1e-4 and sep <= 1e-3 and e3 <= 1e-3 and max(t2, t3) < 10
    record_criterion(
        5, ok,
        f"N=2 energy err {e2:.1e} (<= 1e-4), separation err {sep:.1e} (<= 1e-3); "
        f"N=3 energy err {e3:.1e} (<= 1e-3); {t2:.1f} s, {t3:.1f} s (< 10)",
    )
    assert ok


def test_criterion_06_minimal_distance():
    parts, ok = [], True
    for n in (50, 100, 200):
        cfg = pl.minimize(pl.PlasmaModel(n), seed=0).config
        d = ex.min_pairwise_distance(cfg)
        rep = ex.audit_exclusion(cfg)
        ok &= d >= R1 * (1 - 1e-2) and rep.passed
        parts.append(f"N={n}: min dist {d:.4f}, {len(rep.violations)} violations / {rep.subsets_checked} subsets")
    record_criterion(6, ok, "; ".join(parts) + f" (bound {R1 * (1 - 1e-2):.4f}, 0 violations)")
    assert ok


def test_criterion_07_ground_state_density():
    t0 = time.perf_counter()
    N = 400
    R = math.sqrt(N / math.pi)
    disks = pl.bulk_disks(R - 7.0, 6.0, 3.0)
    charges = ChargeList(np.array([(4.0, 0.0), (-2.0, 3.4641), (-2.0, -3.4641)]), np.full(3, 8.0))
    bump = pl.builtin_potential("gaussian_bump")
    eps, bound = 0.1, bump.laplacian_bound
    cases = {
        "a": (pl.PlasmaModel(N), None),
        "b": (pl.PlasmaModel(N, perturbation=pl.PerturbationSpec(charges)), None),
        # the stated correction 1 + (eps/4) |Delta U|; the model's own factor is reported alongside
        "c": (pl.PlasmaModel(N, perturbation=pl.PerturbationSpec(eps=eps, U=bump, deltaU_bound=bound)), 1 + eps / 4 * bound),
    }
    ratios, strict = {}, None
    for key, (model, factor) in cases.items():
        cfg = pl.minimize(model, seed=0).config
        ratios[key] = pl.local_density_report(cfg, disks, model, cap_factor=factor).max_ratio
        if key == "c":
            strict = pl.local_density_report(cfg, disks, model).max_ratio
    seconds = time.perf_counter() - t0
    ok = max(ratios.values()) <= 1.10 and seconds < 600
    record_criterion(
        7, ok,
        f"max ratios (a) {ratios['a']:.3f} (b) {ratios['b']:.3f} (c) {ratios['c']:.3f} "
        f"[{strict:.3f} with the frame-aware factor] over {len(disks)} disks (<= 1.10); {seconds:.0f} s (< 600)",
    )
    assert ok


def test_criterion_08_gibbs_rigidity(laughlin_chains):
    parts, ok = [], True
    for ell in (1, 2):
        disks = laughlin_bulk_disks(ell)
        pure, t_pure = laughlin_chains[ell, 0]
        hole, t_hole = laughlin_chains[ell, 10]
        dev = max(abs(gibbs.disk_average(pure, d).ratio - 1) for d in disks)
        hole_avgs = [gibbs.disk_average(hole, d) for d in disks]
        hole_ok = all(a.within(0.1, 3.0) for a in hole_avgs)
        center = next(a for a in hole_avgs if a.region.center == (0.0, 0.0))
        times_ok = max(t_pure, t_hole) < 1800 and min(pure.moves, hole.moves) >= 1_000_000
        ok &= dev <= 0.1 and hole_ok and times_ok
        parts.append(
            f"ell={ell}: bulk dev {dev:.3f} (<= 0.1), hole disks ok={hole_ok} "
            f"(over hole ratio {center.ratio:.2f}), {max(t_pure, t_hole):.0f} s/chain"
        )
    record_criterion(8, ok, "; ".join(parts))
    assert ok


def test_criterion_09_sampler_anchors():
    chain = gibbs.sample(pl.PlasmaModel(1, 1, "plasma"), 400_000, thin=5, seed=9)
    r2 = (chain.samples[:, 0, :] ** 2).sum(axis=1)
    se = gibbs.batch_means_stderr(r2)
    model = pl.PlasmaModel(50, 2, "plasma", pl.quasihole_perturbation([((1.0, 0.5), 3)]))
    worst = gibbs.detailed_balance_audit(model, n_pairs=1000, seed=1)
    ok = abs(r2.mean() - 1) <= 3 * se and worst <= 1e-12
    record_criterion(9, ok, f"N=1 mean |z|^2 = {r2.mean():.4f} +- {se:.4f}; detailed balance {worst:.1e} (<= 1e-12)")
    assert ok


def test_criterion_10_bathtub():
    errs = {}
    for ell in (1, 2):
        cap = 1 / (math.pi * ell)
        g = bt.scaled_grid(cap, 1.0, 1 / 512)
        X, Y = g.centers()
        errs[f"harmonic ell={ell}"] = abs(bt.bathtub_minimize(ScalarField(g, X**2 + Y**2), 1.0, cap).energy - ell / 2)
    g = bt.scaled_grid(1 / math.pi, 1.0, 1 / 512)
    X, Y = g.centers()
    errs["quartic"] = abs(bt.bathtub_minimize(ScalarField(g, (X**2 + Y**2) ** 2), 1.0, 1 / math.pi).energy - 1 / 3)
    rng = np.random.default_rng(10)
    worst_gain = -math.inf
    for _ in range(20):
        grid = GridSpec((0.0, 0.0), 0.1, 16, 16)
        V = ScalarField(grid, rng.normal(size=grid.shape))
        cap = rng.uniform(0.5, 2.0)
        res = bt.bathtub_minimize(V, rng.uniform(0.1, 0.9) * cap * 2.56, cap)
        rho, v = res.density.values.ravel(), V.values.ravel()
        for _ in range(200):
            i, j = rng.choice(v.size, size=2, replace=False)
            t = rng.random() * min(rho[i], cap - rho[j])
            trial = rho.copy()
            trial[i] -= t
            trial[j] += t
            worst_gain = max(worst_gain, res.energy - np.dot(v, trial) * grid.cell_area)
    ok = max(errs.values()) <= 1e-3 and worst_gain <= 1e-12
    detail = ", ".join(f"{k} err {e:.1e}" for k, e in errs.items())
    record_criterion(10, ok, f"{detail} (<= 1e-3); best perturbation gain {worst_gain:.1e} (<= 1e-12)")
    assert ok


def test_criterion_11_energy_bound(laughlin_chains):
    chain, _ = laughlin_chains[2, 0]
    cmp = bt.compare_bounds(chain.model, "harmonic", chain, slack=0.1, h=1 / 512)
    ok = cmp.e_state >= 0.9 * cmp.e_bathtub
    record_criterion(11, ok, f"E_state {cmp.e_state:.4f} vs 0.9 E_bt {0.9 * cmp.e_bathtub:.4f} (ratio {cmp.ratio:.3f})")
    assert ok


def test_criterion_12_pl_class():
    rng = np.random.default_rng(12)
    worst = math.inf
    for _ in range(50):
        J = int(rng.integers(1, 5))
        sizes = rng.integers(1, 7, size=J)
        polys = [rng.normal(size=k) + 1j * rng.normal(size=k) for k in sizes]
        alpha = rng.uniform(0.1, 2.0, size=J)

        def G(z, polys=polys, alpha=alpha):
            return sum(a * np.abs(np.polyval(c, z)) for a, c in zip(alpha, polys))

        center = complex(*rng.uniform(-1.5, 1.5, size=2))
        rep = subharmonicity_check(G, center, [0.05, 0.2, 0.5, 1.0, 2.0])
        worst = min(worst, rep.deficits.min())
    ok = worst >= -1e-6
    record_criterion(12, ok, f"minimum deficit {worst:.2e} over 50 random G (>= -1e-6)")
    assert ok
