"""Command-line entry point: simulate, sweep, verify, eigen, selftest.

Exit status: 0 success, 1 scientific failure (ledger breach, residual above tolerance,
failed check), 2 usage failure (bad configuration, missing or corrupted files).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, Scenario, load_config, parse_config, resolve
from .containers import ContainerError, read_field, write_basis, write_field, write_kernel
from .continuation import continuation_alpha, continuation_epsilon
from .galerkin_flow import (LEDGER_COLUMNS, ConfigError, GalerkinSystem, InitialDataError, LedgerBreach,
                            Trajectory, init_coeffs, run)
from .weak_verify import residual_history, standard_battery, weak_residual

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
MANIFEST = "manifest.json"
RESOLVED = "config.resolved.ini"
LEDGER = "ledger.csv"
SNAPSHOTS = "snapshots"
RESIDUALS = "weak_residuals.csv"


class UsageError(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in rows:
            writer.writerow(row)


# ---------------------------------------------------------------- manifest

def write_manifest(out: Path, config_hash: str, started: str, summary: dict, extra: dict | None = None) -> Path:
    """Inventory every file under ``out`` (except the manifest) with its sha256."""
    files = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path != out / MANIFEST:
            files[path.relative_to(out).as_posix()] = _sha256(path)
    manifest = {
        "config_hash": config_hash,
        "code_version": __version__,
        "started": started,
        "finished": _now(),
        "summary": summary,
        "files": files,
    }
    if extra:
        manifest.update(extra)
    target = out / MANIFEST
    target.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return target


def check_manifest(directory: Path) -> dict:
    """Verify every listed file exists with the recorded hash and nothing is unlisted."""
    mpath = directory / MANIFEST
    if not mpath.is_file():
        raise UsageError(f"{mpath}: manifest missing")
    try:
        manifest = json.loads(mpath.read_text())
        files = manifest["files"]
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{mpath}: unreadable manifest ({exc})") from exc
    for rel, digest in files.items():
        path = directory / rel
        if not path.is_file():
            raise UsageError(f"{path}: listed in the manifest but missing")
        if _sha256(path) != digest:
            raise UsageError(f"{path}: checksum mismatch (corrupted file)")
    for path in directory.rglob("*"):
        if path.is_file() and path != mpath and path.relative_to(directory).as_posix() not in files:
            raise UsageError(f"{path}: present but not listed in the manifest")
    return manifest


# ---------------------------------------------------------------- run outputs

def ledger_rows(traj: Trajectory):
    lg = traj.ledger
    latest = residual_history(traj) if len(traj.times) > 1 else np.zeros(len(traj.times))
    yield LEDGER_COLUMNS
    for s, t in enumerate(traj.times):
        yield (_fmt(t), _fmt(lg["l2_norm_sq"][s]), _fmt(lg["grad_energy"][s]), _fmt(lg["sphere_violation"][s]),
               _fmt(lg["damping_energy_integral"][s]), _fmt(lg["demag_energy"][s]), _fmt(latest[s]))


def ledger_summary(traj: Trajectory) -> dict:
    lg = traj.ledger
    return {
        "status": traj.status,
        "samples": int(len(traj.times)),
        "steps": int(traj.steps),
        "halvings": int(traj.halvings),
        "t_final": float(traj.times[-1]) if len(traj.times) else 0.0,
        "l2_norm_sq_final": float(lg["l2_norm_sq"][-1]) if len(traj.times) else 0.0,
        "grad_energy_final": float(lg["grad_energy"][-1]) if len(traj.times) else 0.0,
        "max_sphere_violation": float(traj.max_sphere_violation),
        "reconstruction_error": float(traj.reconstruction_error),
    }


def write_run(out: Path, scenario: Scenario, traj: Trajectory, started: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED).write_text(scenario.config.to_text())
    _write_csv(out / LEDGER, ledger_rows(traj))
    snap = out / SNAPSHOTS
    snap.mkdir(exist_ok=True)
    grid = scenario.domain.grid + (scenario.algebra.dim,)
    for k, (t, u, ut) in enumerate(zip(traj.times, traj.fields(), traj.velocities())):
        write_field(snap / f"u_{k:05d}.fld", scenario.domain, u.reshape(grid), t)
        write_field(snap / f"ut_{k:05d}.fld", scenario.domain, ut.reshape(grid), t)
    return write_manifest(out, scenario.config.digest(), started, ledger_summary(traj))


def _prepare_out(path: Path) -> Path:
    if path.exists() and any(path.iterdir()):
        raise UsageError(f"{path}: output directory exists and is not empty")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(args, overrides: dict | None = None) -> RunConfig:
    cfg = load_config(args.config)
    changes = dict(overrides or {})
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None):
        changes["output_dir"] = str(args.out)
    return replace(cfg, **changes) if changes else cfg


def _simulate_one(scenario: Scenario, out: Path) -> int:
    started = _now()
    beta0, err = init_coeffs(scenario.basis, scenario.algebra, scenario.u0)
    system = GalerkinSystem(scenario.algebra, scenario.basis, scenario.params, scenario.demag)
    try:
        traj = run(system, beta0, reconstruction_error=err)
    except LedgerBreach as exc:
        write_run(out, scenario, exc.trajectory, started)
        print(f"ledger assertion breached: {exc}", file=sys.stderr)
        print(f"ledger dump: {out / LEDGER}", file=sys.stderr)
        return EXIT_FAIL
    write_run(out, scenario, traj, started)
    print(f"wrote {len(traj.times)} samples to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    cfg = _load(args)
    scenario = resolve(cfg, Path(args.config).parent)
    out = _prepare_out(Path(cfg.output_dir))
    return _simulate_one(scenario, out)


def cmd_sweep(args) -> int:
    if (args.epsilon is None) == (args.alpha is None):
        raise UsageError("give exactly one of --epsilon or --alpha")
    parameter = "epsilon" if args.epsilon is not None else "alpha"
    try:
        values = [float(v) for v in (args.epsilon or args.alpha).split(",")]
    except ValueError as exc:
        raise ConfigError(parameter, f"cannot parse sweep list: {exc}") from exc
    if not values or any(not v > 0 for v in values) or any(b > a for a, b in zip(values, values[1:])):
        raise ConfigError(parameter, "sweep values must be positive and non-increasing")
    cfg = _load(args)
    scenario = resolve(cfg, Path(args.config).parent)
    out = _prepare_out(Path(cfg.output_dir))
    started = _now()
    common = dict(workers=max(int(args.jobs), 1), demag=scenario.demag, raise_on_failure=False)
    if parameter == "epsilon":
        report = continuation_epsilon(scenario.algebra, scenario.basis, scenario.params, scenario.u0, values, **common)
        labels = values
    else:
        report = continuation_alpha(scenario.algebra, scenario.basis, scenario.params, scenario.u0, values,
                                    include_reference=not args.no_reference, **common)
        labels = values + ([0.0] if not args.no_reference else [])
    runs = {}
    for k, (v, outcome) in enumerate(zip(labels, report.outcomes)):
        sub = out / f"run_{k:02d}_{parameter}_{v:g}"
        sub_scenario = replace(scenario, config=replace(cfg, **{parameter: v, "output_dir": str(sub)}))
        if isinstance(outcome, Trajectory):
            traj = outcome
        else:
            traj = outcome.cause.trajectory if isinstance(outcome.cause, LedgerBreach) else None
        if traj is not None:
            write_run(sub, sub_scenario, traj, started)
            runs[sub.name] = traj.status
        else:
            runs[sub.name] = f"failed: {outcome}"
    _write_csv(out / "comparison.csv", report.csv_rows())
    for flag in report.flags:
        print(f"flag: {flag}")
    for failure in report.failures:
        print(f"run failed: {failure}", file=sys.stderr)
    write_manifest(out, cfg.digest(), started, {"parameter": parameter, "runs": runs, "flags": report.flags})
    print(f"sweep over {parameter} wrote {len(runs)} runs to {out}")
    return EXIT_FAIL if report.failures else EXIT_OK


def load_trajectory(directory: Path) -> tuple[Scenario, Trajectory]:
    """Rebuild a trajectory from a manifest-complete run directory."""
    check_manifest(directory)
    cfg_path = directory / RESOLVED
    if not cfg_path.is_file():
        raise UsageError(f"{cfg_path}: resolved configuration missing")
    scenario = resolve(parse_config(cfg_path.read_text()), directory, with_initial=False)
    snap = directory / SNAPSHOTS
    u_files = sorted(snap.glob("u_*.fld"))
    if not u_files:
        raise UsageError(f"{snap}: no snapshots found")
    times, betas, dots = [], [], []
    for upath in u_files:
        tpath = snap / upath.name.replace("u_", "ut_", 1)
        if not tpath.is_file():
            raise UsageError(f"{tpath}: missing time-derivative snapshot")
        u, ut = read_field(upath), read_field(tpath)
        for path, c in ((upath, u), (tpath, ut)):
            if c.grid != scenario.domain.grid or c.m != scenario.algebra.dim:
                raise UsageError(f"{path}: snapshot shape does not match the configuration")
        times.append(u.time)
        betas.append(scenario.basis.analyze(u.data))
        dots.append(scenario.basis.analyze(ut.data))
    system = GalerkinSystem(scenario.algebra, scenario.basis, scenario.params, scenario.demag)
    betas = np.array(betas)
    ledger = {"l2_norm_sq": np.array([system.block_inner(b, b) for b in betas])}
    return scenario, Trajectory(system, np.array(times), betas, np.array(dots), ledger)


def cmd_verify(args) -> int:
    directory = Path(args.directory)
    scenario, traj = load_trajectory(directory)
    tol = scenario.config.tolerance_verify if args.tolerance is None else float(args.tolerance)
    horizon = float(traj.times[-1] - traj.times[0]) or 1.0
    phis = standard_battery(horizon, min(args.modes, scenario.basis.N))
    try:
        report = weak_residual(traj, phis, form=args.form)
    except ValueError as exc:
        raise UsageError(f"{directory}: {exc}") from exc
    out = Path(args.out) if args.out else directory
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / RESIDUALS, report.csv_rows())
    print(report.summary())
    passed = report.normalized_max < tol
    print(f"normalized max residual {report.normalized_max:.6e} vs tolerance {tol:.6e}: {'PASS' if passed else 'FAIL'}")
    if out == directory:
        manifest = json.loads((directory / MANIFEST).read_text())
        manifest["files"][RESIDUALS] = _sha256(out / RESIDUALS)
        manifest["verify"] = {"tolerance": tol, "normalized_max": report.normalized_max, "passed": passed,
                              "form": args.form}
        (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_eigen(args) -> int:
    cfg = _load(args)
    scenario = resolve(cfg, Path(args.config).parent, with_initial=False)
    out = _prepare_out(Path(cfg.output_dir))
    started = _now()
    (out / RESOLVED).write_text(cfg.to_text())
    write_basis(out / "modes.fld", scenario.basis)
    if scenario.demag is not None:
        write_kernel(out / "demag_kernel.fld", scenario.domain, scenario.demag.kernel_cache())
    summary = {"N": scenario.basis.N, "kind": scenario.basis.kind,
               "eigen_residual": float(scenario.basis.eigen_residual),
               "largest_eigenvalue": float(scenario.basis.eigenvalues[-1])}
    write_manifest(out, cfg.digest(), started, summary)
    for i, lam in enumerate(scenario.basis.eigenvalues[: args.show]):
        print(f"{i:4d}  {lam:.12g}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest(sign_flip=args.inject_sign_flip, stream=sys.stdout) else EXIT_FAIL


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lieflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one trajectory and write snapshots, ledger and manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="continuation in epsilon or alpha")
    p.add_argument("--config", required=True)
    p.add_argument("--epsilon", help="comma-separated decreasing values")
    p.add_argument("--alpha", help="comma-separated decreasing values")
    p.add_argument("--no-reference", action="store_true", help="skip the alpha = 0 reference run")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="weak-residual battery on a stored trajectory")
    p.add_argument("directory")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--modes", type=int, default=8)
    p.add_argument("--form", choices=("integrated", "derivative"), default="integrated")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eigen", help="dump the mode basis")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--show", type=int, default=10)
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("selftest", help="desk-scale invariant suite")
    p.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error [{exc.field}]: {exc.detail}", file=sys.stderr)
        return EXIT_USAGE
    except InitialDataError as exc:
        print(f"configuration error [initial]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ContainerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
