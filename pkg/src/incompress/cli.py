"""Command-line entry point: ``incompress <command> [options]``.

Every command writes JSON reports with the top-level layout
``{command, config_echo, results, checks: [{name, value, bound, pass}]}``.
Exit status is 0 when every check passes, 1 when a check fails and 2 on
operational errors (bad arguments, unreadable files, solver failures).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bathtub import bathtub_minimize, potential_from_spec, scaled_grid
from .exclusion import (
    AuditPolicy,
    Disk,
    PointConfig,
    audit_exclusion,
    min_pairwise_distance,
    region_from_dict,
)
from .gibbs import Chain, chain_diagnostics, density_histogram, disk_average, sample
from .gridfield import GridSpec, ScalarField, read_charges_csv, write_grid2d
from .plasma import PlasmaModel, bulk_disks, hamiltonian, local_density_report, minimize, model_from_dict
from .tf import SINGLE_RADIUS, NucleusSet, single_nucleus_solution, solve_tf, verify_tf_solution

log = logging.getLogger("incompress")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_ERROR = 0, 1, 2
MIN_DISTANCE_BOUND = SINGLE_RADIUS * (1 - 1e-2)


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# io helpers


def output_path(p: str | os.PathLike) -> Path:
    """Resolve an output path; a relative path goes under $OUTPUT_DIR if set."""
    p = Path(p)
    base = os.environ.get("OUTPUT_DIR")
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, Path):
        return str(x)
    return x


def check(name, value, bound, passed) -> dict:
    return {"name": name, "value": value, "bound": bound, "pass": bool(passed)}


def write_report(path: Path, command: str, echo: dict, results: dict, checks: list[dict]) -> dict:
    report = _jsonable({"command": command, "config_echo": echo, "results": results, "checks": checks})
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def read_points_csv(path) -> np.ndarray:
    return np.asarray(read_charges_csv(path).positions, dtype=float)


def write_points_csv(points: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in points:
            w.writerow([repr(float(x)), repr(float(y))])


def write_samples_csv(samples: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "particle_id", "x", "y"])
        for s, conf in enumerate(samples):
            for i, (x, y) in enumerate(conf):
                w.writerow([s, i, repr(float(x)), repr(float(y))])


def read_samples_csv(path) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(Path(path).read_text())))
    if rows and rows[0] and rows[0][0] == "sample_id":
        rows = rows[1:]
    rows = [r for r in rows if r]
    if not rows:
        raise CliError(f"{path}: no samples")
    sid = np.array([int(r[0]) for r in rows])
    pid = np.array([int(r[1]) for r in rows])
    xy = np.array([[float(r[2]), float(r[3])] for r in rows])
    S, N = sid.max() + 1, pid.max() + 1
    if len(rows) != S * N:
        raise CliError(f"{path}: ragged sample table")
    out = np.empty((S, N, 2))
    out[sid, pid] = xy
    return out


def load_model(path) -> PlasmaModel:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"model file {path} not found") from None
    return model_from_dict(data)


def _frame(name: str) -> str:
    frame = {"unit": "unit", "unit-density": "unit", "plasma": "plasma"}.get(name)
    if frame is None:
        raise CliError(f"unknown frame {name!r}")
    return frame


# ---------------------------------------------------------------------------
# commands


def cmd_tf_solve(args, echo):
    nuclei = NucleusSet(read_points_csv(args.nuclei))
    sol = solve_tf(nuclei, args.h, args.pad, method=args.method, source=args.source)
    diag = verify_tf_solution(sol, area_tol=args.area_tol)
    out = output_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_grid2d(sol.phi, out / "phi.grid2d")
    write_grid2d(sol.sigma, out / "sigma.grid2d")
    info = {k: v for k, v in sol.info.items() if k != "seconds"}
    results = {
        "K": nuclei.K,
        "area": sol.region_area,
        "residual": sol.residual,
        "component_count": diag.component_count,
        "box": {"origin": sol.box.origin, "h": sol.box.h, "nx": sol.box.nx, "ny": sol.box.ny},
        "solver": info,
        "diagnostics": diag.as_dict(),
    }
    checks = [check(k, v["value"], v["bound"], v["pass"]) for k, v in diag.checks.items()]
    write_report(out / "report.json", "tf-solve", echo, results, checks)
    return checks


def _policy(args) -> AuditPolicy:
    if args.policy == "default":
        return AuditPolicy(h=args.h)
    if args.policy == "singletons":
        return AuditPolicy(singletons=True, pair_margin=None, cluster_radius=None, h=args.h)
    p = Path(args.policy)
    if not p.exists():
        raise CliError(f"policy must be 'default', 'singletons' or a JSON file, got {args.policy!r}")
    d = json.loads(p.read_text())
    d.setdefault("h", args.h)
    try:
        return AuditPolicy(**d)
    except TypeError as exc:
        raise CliError(f"bad policy file: {exc}") from None


def cmd_exclusion_audit(args, echo):
    cfg = PointConfig(read_points_csv(args.points), _frame(args.frame), args.ell).to_frame("unit")
    rep = audit_exclusion(cfg, _policy(args), workers=args.threads)
    checks = [check("violations", len(rep.violations), 0, not rep.violations)]
    if cfg.N >= 2:
        checks.append(check("min_distance", rep.min_distance, MIN_DISTANCE_BOUND, rep.min_distance >= MIN_DISTANCE_BOUND))
    write_report(output_path(args.out), "exclusion-audit", echo, rep.as_dict(), checks)
    return checks


def cmd_plasma_minimize(args, echo):
    model = load_model(args.model)
    res = minimize(model, seed=args.seed, starts=args.starts, tol=args.tol, max_iter=args.max_iter)
    out = output_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_points_csv(res.config.points, out / "points.csv")
    tol = 1e-6 * model.N if args.tol is None else args.tol
    results = {
        "energy": res.energy,
        "grad_sup": res.grad_sup,
        "iterations": res.iterations,
        "restarts_used": res.restarts_used,
        "start_energies": list(res.start_energies),
        "frame": model.frame,
        "N": model.N,
        "ell": model.ell,
    }
    checks = [check("grad_sup", res.grad_sup, tol, res.grad_sup <= tol)]
    if model.N >= 2:
        d = min_pairwise_distance(res.config.to_frame("unit"))
        results["min_distance_unit_frame"] = d
        checks.append(check("min_distance", d, MIN_DISTANCE_BOUND, d >= MIN_DISTANCE_BOUND))
    write_report(out / "result.json", "plasma-minimize", echo, results, checks)
    return checks


def cmd_gibbs_sample(args, echo):
    model = load_model(args.model)
    chain = sample(
        model,
        int(args.steps),
        burn_in=None if args.burn_in is None else int(args.burn_in),
        thin=args.thin,
        step_size=args.step_size,
        seed=args.seed,
    )
    out = output_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_samples_csv(chain.samples, out / "samples.csv")
    diag = chain_diagnostics(chain)
    results = {
        "samples": len(chain),
        "moves": chain.moves,
        "burn_in": chain.burn_in,
        "thin": chain.thin,
        "step_size": chain.step_size,
        "diagnostics": diag.as_dict(),
        "mean_energy": float(chain.energies.mean()),
    }
    if args.density_h:
        ext = np.abs(chain.samples).max() + args.density_h
        grid = GridSpec.covering((-ext, -ext), (ext, ext), args.density_h)
        write_grid2d(density_histogram(chain, grid), out / "density.grid2d")
    checks = [check("acceptance", chain.acceptance_rate, 0.0, chain.acceptance_rate > 0)]
    write_report(out / "diagnostics.json", "gibbs-sample", echo, results, checks)
    return checks


def _cap(spec: str, ell: int) -> float:
    if spec.startswith("auto"):
        inner = spec[4:].strip("()")
        if inner and inner != "ell":
            ell = int(inner)
        return 1.0 / (math.pi * ell)
    return float(spec)


def cmd_bathtub(args, echo):
    cap = _cap(args.cap, args.ell)
    U = potential_from_spec(args.V)
    grid = scaled_grid(cap, args.mass, args.h, args.extent)
    x, y = grid.centers()
    V = ScalarField(grid, np.asarray(U(np.column_stack([x.ravel(), y.ravel()]))).reshape(x.shape))
    res = bathtub_minimize(V, args.mass, cap)
    rel = abs(res.filled_mass - args.mass) / max(args.mass, 1e-300)
    excess = float(res.density.values.max() - cap)
    results = {
        "energy": res.energy,
        "fill_level": res.fill_level,
        "filled_mass": res.filled_mass,
        "cap": cap,
        "grid": {"origin": grid.origin, "h": grid.h, "nx": grid.nx, "ny": grid.ny},
    }
    checks = [
        check("mass", rel, 1e-9, rel <= 1e-9),
        check("cap", excess, 1e-12, excess <= 1e-12),
    ]
    write_report(output_path(args.out), "bathtub", echo, results, checks)
    return checks


def auto_disks(points: np.ndarray, cap: float, radius: float) -> list[Disk]:
    """Bulk-covering disks: centers on a square lattice of spacing ``radius``
    inside the neutral disk shrunk by ``radius + 1`` cap lengths; always
    includes the disk at the centroid."""
    N = points.shape[-2]
    c = points.reshape(-1, 2).mean(axis=0)
    R = math.sqrt(N / (math.pi * cap))
    unit = 1.0 / math.sqrt(cap)
    inner = max(0.0, R - radius - unit)
    disks = bulk_disks(inner, radius, radius, center=tuple(c))
    return disks or [Disk(tuple(c), radius)]


def cmd_verify_density(args, echo):
    frame = _frame(args.frame)
    ell = args.ell
    cap = 1.0 if frame == "unit" else 1.0 / (math.pi * ell)
    if (args.points is None) == (args.chain is None):
        raise CliError("give exactly one of --points or --chain")
    pts = read_points_csv(args.points) if args.points else read_samples_csv(args.chain)
    radius = args.radius if args.radius else (3.0 / math.sqrt(cap))
    if args.disks == "auto":
        regions = auto_disks(pts, cap, radius)
    else:
        regions = [region_from_dict(d) for d in json.loads(Path(args.disks).read_text())]
    checks = []
    entries = []
    if args.points:
        rep = local_density_report(PointConfig(pts, frame, ell), regions)
        for k, e in enumerate(rep.entries):
            bound = 1.0 + args.slack
            entries.append(e.as_dict())
            checks.append(check(f"region_{k}", e.ratio, bound, e.ratio <= bound))
        results = {"regions": entries, "max_ratio": rep.max_ratio}
    else:
        S, N, _ = pts.shape
        chain = Chain(PlasmaModel(N, ell, frame), pts, np.zeros(S), math.nan, -1, 0, 1, math.nan, S)
        for k, reg in enumerate(regions):
            avg = disk_average(chain, reg)
            entries.append(avg.as_dict())
            bound = avg.cap_count * (1 + args.slack) + 3 * avg.stderr
            checks.append(check(f"region_{k}", avg.mean, bound, avg.within(args.slack)))
        results = {"regions": entries, "max_ratio": max(e["ratio"] for e in entries)}
    write_report(output_path(args.out), "verify-density", echo, results, checks)
    return checks


def cmd_selftest(args, echo):
    checks = []
    # single-nucleus TF against the closed-form profile
    h = 1 / 64
    sol = solve_tf([(0.0, 0.0)], h)
    exact = single_nucleus_solution()
    x, y = sol.box.centers()
    far = np.hypot(x, y) > 2 * h
    err = float(np.abs(sol.phi.values - exact.phi_radial(np.hypot(x, y)))[far].max())
    r_eff = math.sqrt(sol.region_area / math.pi)
    checks.append(check("tf_radius", abs(r_eff - SINGLE_RADIUS), 2 * h, abs(r_eff - SINGLE_RADIUS) <= 2 * h))
    checks.append(check("tf_area", abs(sol.region_area - 1), 0.03, abs(sol.region_area - 1) <= 0.03))
    checks.append(check("tf_phi_error", err, 5e-3, err <= 5e-3))
    # two-particle jellium
    res = minimize(PlasmaModel(2), seed=0)
    e2 = 0.5 + 0.5 * math.log(math.pi / 2)
    checks.append(check("jellium_N2_energy", abs(res.energy - e2), 1e-4, abs(res.energy - e2) <= 1e-4))
    x0 = np.array([[1 / math.sqrt(2 * math.pi), 0.0], [-1 / math.sqrt(2 * math.pi), 0.0]])
    he = abs(hamiltonian(PlasmaModel(2), x0) - e2)
    checks.append(check("jellium_N2_closed_form", he, 1e-12, he <= 1e-12))
    # harmonic bathtub
    cap = 1 / math.pi
    grid = scaled_grid(cap, 1.0, 1 / 256)
    X, Y = grid.centers()
    bt = bathtub_minimize(ScalarField(grid, X**2 + Y**2), 1.0, cap)
    checks.append(check("bathtub_harmonic", abs(bt.energy - 0.5), 1e-3, abs(bt.energy - 0.5) <= 1e-3))
    if args.out:
        write_report(output_path(args.out), "selftest", echo, {}, checks)
    for c in checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']}: {c['value']:.3g} (bound {c['bound']:.3g})")
    return checks


# ---------------------------------------------------------------------------
# parser


def _float(s: str) -> float:
    return float(s)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="incompress", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--config", help="JSON file of option values (keys as option names)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    sp = add("tf-solve", cmd_tf_solve, "solve the TF obstacle problem for a nucleus set")
    sp.add_argument("--nuclei", help="CSV of x,y[,w] rows (required)")
    sp.set_defaults(required_=("nuclei",))
    sp.add_argument("--h", type=float, default=0.01)
    sp.add_argument("--pad", type=float, default=0.5)
    sp.add_argument("--method", choices=["pdas", "psor"], default="pdas")
    sp.add_argument("--source", choices=["matched", "cic"], default="matched")
    sp.add_argument("--area-tol", type=float, default=0.01)
    sp.add_argument("--out", default="sol")

    sp = add("exclusion-audit", cmd_exclusion_audit, "audit a configuration against the exclusion rule")
    sp.add_argument("--points", help="CSV of x,y rows (required)")
    sp.set_defaults(required_=("points",))
    sp.add_argument("--frame", default="unit")
    sp.add_argument("--ell", type=int, default=1)
    sp.add_argument("--policy", default="default", help="default | singletons | policy JSON file")
    sp.add_argument("--h", type=float, default=0.02, help="grid spacing for TF subset solves")
    sp.add_argument("--out", default="report.json")

    sp = add("plasma-minimize", cmd_plasma_minimize, "multi-start minimization of the plasma Hamiltonian")
    sp.add_argument("--model", help="model JSON (required)")
    sp.set_defaults(required_=("model",))
    sp.add_argument("--starts", type=int, default=8)
    sp.add_argument("--tol", type=float, default=None)
    sp.add_argument("--max-iter", type=int, default=20000)
    sp.add_argument("--out", default="min")

    sp = add("gibbs-sample", cmd_gibbs_sample, "Metropolis sampling of the plasma Gibbs measure")
    sp.add_argument("--model", help="model JSON (required)")
    sp.set_defaults(required_=("model",))
    sp.add_argument("--steps", type=_float, default=1e6, help="single-particle moves after burn-in")
    sp.add_argument("--burn-in", type=_float, default=None)
    sp.add_argument("--thin", type=int, default=None)
    sp.add_argument("--step-size", type=float, default=None)
    sp.add_argument("--density-h", type=float, default=None, help="also write density.grid2d")
    sp.add_argument("--out", default="chain")

    sp = add("bathtub", cmd_bathtub, "bathtub minimization under a density cap")
    sp.add_argument("--V", default="builtin:harmonic")
    sp.add_argument("--mass", type=float, default=1.0)
    sp.add_argument("--cap", default="auto", help="number, 'auto' or 'auto(ell)'")
    sp.add_argument("--ell", type=int, default=1)
    sp.add_argument("--h", type=float, default=0.005)
    sp.add_argument("--extent", type=float, default=None)
    sp.add_argument("--out", default="bt.json")

    sp = add("verify-density", cmd_verify_density, "local density against the incompressibility cap")
    sp.add_argument("--points", default=None)
    sp.add_argument("--chain", default=None, help="samples.csv from gibbs-sample")
    sp.add_argument("--frame", default="unit")
    sp.add_argument("--ell", type=int, default=1)
    sp.add_argument("--disks", default="auto", help="auto or JSON list of regions")
    sp.add_argument("--radius", type=float, default=None)
    sp.add_argument("--slack", type=float, default=0.1)
    sp.add_argument("--out", default="report.json")

    sp = add("selftest", cmd_selftest, "closed-form oracles: single nucleus, two-particle jellium, harmonic bathtub")
    sp.add_argument("--out", default=None)
    return p


_GLOBAL_KEYS = {"func", "command", "config", "verbose", "required_"}


def _apply_config(parser, args, argv):
    if not args.config:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        raise CliError(f"config file {args.config} not found") from None
    if not isinstance(cfg, dict):
        raise CliError("config file must hold a JSON object")
    known = set(vars(args)) - _GLOBAL_KEYS
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    # a config echo from an earlier run is accepted as is
    if cfg.pop("command", args.command) != args.command:
        raise CliError(f"config was written for another command, not {args.command}")
    cfg.pop("version", None)
    cfg.pop("verbose", None)
    unknown = set(cfg) - known
    if unknown:
        raise CliError(f"unknown config keys for {args.command}: {sorted(unknown)}")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    subparser.set_defaults(**cfg)
    return parser.parse_args(argv)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args = _apply_config(parser, args, argv)
        # required options may come from --config, so they are checked here
        missing = [n for n in getattr(args, "required_", ()) if getattr(args, n) is None]
        if missing:
            raise CliError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))
        if args.threads < 1:
            raise CliError("--threads must be positive")
        echo = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config", "required_")}
        echo["version"] = __version__
        checks = args.func(args, echo)
    except (CliError, ValueError, RuntimeError, OSError, KeyError, TypeError) as exc:
        print(f"incompress {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    failed = [c["name"] for c in checks if not c["pass"]]
    if failed:
        print(f"incompress {args.command}: checks failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
