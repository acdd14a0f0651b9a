"""Command-line entry point: ``edspin {evolve,trajectories,sg,check}``.

Every run writes into one output directory. ``manifest.json`` is written
first with status ``running`` and rewritten at the end with a SHA-256 hash
per artifact, so an interrupted run is recognisable.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edspin", description="Spin-1/2 entropic dynamics laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", type=Path, required=config_required, help="scenario JSON file")
        p.add_argument("--out", type=Path, default=Path("edspin_out"), help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--threads", type=int, default=None, help="thread count for numerical libraries")
        p.add_argument("--format", choices=("csv", "json"), default="csv", help="tabular output format")

    common(sub.add_parser("evolve", help="integrate the Pauli equation and write a ledger"))
    common(sub.add_parser("trajectories", help="evolve, then carry a particle ensemble along the drift"))
    common(sub.add_parser("sg", help="run a Stern-Gerlach scenario"), config_required=False)
    check = sub.add_parser("check", help="run built-in verification suites")
    common(check, config_required=False)
    check.add_argument("--suite", default="all", help="suite name or 'all'")
    return parser


# artifacts ------------------------------------------------------------------


class RunDirectory:
    def __init__(self, root: Path, command: str, config_hash: str | None, seed: int | None):
        self.root = root
        self.files: list[str] = []
        self.meta = {"command": command, "config_sha256": config_hash, "seed": seed}
        root.mkdir(parents=True, exist_ok=True)
        self._write_manifest("running")

    def _write_manifest(self, status, extra=None):
        entries = [{"path": name, "sha256": _sha256(self.root / name)} for name in sorted(self.files)]
        doc = {**self.meta, "status": status, "files": entries}
        if extra:
            doc.update(extra)
        (self.root / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def path(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.root / name

    def write_json(self, name: str, doc) -> None:
        self.path(name).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")

    def write_table(self, name: str, header, rows, fmt: str) -> None:
        if fmt == "json":
            self.write_json(f"{name}.json", [dict(zip(header, r)) for r in rows])
        else:
            with open(self.path(f"{name}.csv"), "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(header)
                writer.writerows(rows)

    def finish(self, status="complete", extra=None):
        self._write_manifest(status, extra)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _json_default(obj):
    import numpy as np

    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _fmt(value) -> str:
    return repr(float(value))


# commands -------------------------------------------------------------------


def _run_evolution(scenario):
    from . import dynamics as dyn

    field = scenario.initial_state()
    ext = scenario.fields()
    series = dyn.evolve(field, ext, scenario.evolver_config(), scenario.t_span())
    return field, ext, series


def _write_series(scenario, run: RunDirectory, series, ext, fmt: str) -> None:
    from . import dynamics as dyn
    from . import snapshot

    if "ledger" in scenario.outputs:
        rows = [[_fmt(v) for v in row] for row in dyn.ledger_rows(series, ext)]
        run.write_table("ledger", dyn.LEDGER_COLUMNS, rows, fmt)
    for n, frame in enumerate(series.frames):
        if "snapshots" in scenario.outputs:
            snapshot.write_snapshot(run.path(f"frame_{n:05d}.edspin"), frame)
        if "snapshots_json" in scenario.outputs:
            run.path(f"frame_{n:05d}.json").write_text(snapshot.to_json(frame))


def cmd_evolve(scenario, run: RunDirectory, fmt: str) -> int:
    from . import dynamics as dyn

    _, ext, series = _run_evolution(scenario)
    _write_series(scenario, run, series, ext, fmt)
    if "report" in scenario.outputs:
        norms = series.step_norms
        report = {
            "name": scenario.name,
            "steps": len(norms) - 1,
            "frames": len(series),
            "max_norm_drift_per_step": float(abs(norms[1:] - norms[:-1]).max()) if len(norms) > 1 else 0.0,
            "initial_energy": dyn.energy(series[0], dyn.fields_at(ext, series.times[0])),
            "final_energy": dyn.energy(series[-1], dyn.fields_at(ext, series.times[-1])),
        }
        if len(series) >= 3:
            report["continuity_residual"] = dyn.continuity_residual(series, ext)
        run.write_json("report.json", report)
    return EXIT_OK


def cmd_trajectories(scenario, run: RunDirectory, fmt: str) -> int:
    import numpy as np

    from . import trajectories as traj

    field, ext, series = _run_evolution(scenario)
    _write_series(scenario, run, series, ext, fmt)
    spec = scenario.ensemble_spec()
    ensemble = traj.sample_positions(field, int(spec["particles"]), scenario.seed)
    dt = spec.get("dt", float(series.times[1] - series.times[0]))
    moved = traj.run_ensemble(ensemble, series, ext, dt)
    paths = moved.history
    k = scenario.constants()
    if "trajectories" in scenario.outputs:
        spins = traj.spin_interpolator(series, k.hbar)
        stride = int(spec.get("record_every", 1))
        rows = []
        for n in range(0, len(paths.times), stride):
            s = spins(paths.positions[n], paths.times[n])
            for i in range(paths.positions.shape[1]):
                rows.append([i, _fmt(paths.times[n]), *map(_fmt, paths.positions[n, i]), *map(_fmt, s[i])])
        run.write_table("trajectories", ["particle_id", "t", "x", "y", "z", "s_x", "s_y", "s_z"], rows, fmt)
    if "report" in scenario.outputs:
        checks = []
        bins = int(spec.get("bins", 50))
        alpha = float(spec.get("alpha", 0.01))
        for idx in sorted({0, len(series) // 2, len(series) - 1}):
            t = series.times[idx]
            n = int(np.argmin(np.abs(paths.times - t)))
            snap = traj.Ensemble(paths.positions[n], scenario.seed)
            rep = traj.born_statistics(snap, series[idx], bins=bins, alpha=alpha)
            checks.append({"t": float(t), **{key: rep.to_dict()[key] for key in ("chi2", "dof", "p_value", "total_variation", "passed")}})
        report = {
            "name": scenario.name,
            "particles": ensemble.size,
            "sampling": ensemble.method,
            "acceptance_rate": ensemble.acceptance_rate,
            "left_domain": int(paths.left_domain.sum()),
            "born": checks,
        }
        params = scenario.subquantum()
        if params is not None:
            velocity = traj.velocity_interpolator(series, ext)
            stochastic = traj.stochastic_paths(ensemble.positions, velocity, params, scenario.t_span(), scenario.seed)
            deviation = np.sqrt(np.mean(np.sum((stochastic - paths.positions[-1]) ** 2, axis=1)))
            report["subquantum"] = {
                "eta": params.eta,
                "dt_sub": params.dt_sub,
                "variance_per_step": params.variance,
                "rms_deviation_from_deterministic": float(deviation),
            }
        run.write_json("report.json", report)
    return EXIT_OK


def cmd_sg(scenario, run: RunDirectory, fmt: str) -> int:
    from . import trajectories as traj

    cfg, particles = scenario.sg_config()
    report = traj.stern_gerlach(cfg, particles, scenario.seed)
    run.write_json("sg_report.json", report.to_dict(per_particle=(fmt == "json")))
    rows = [
        [i, _fmt(z), _fmt(s), "up" if up else "down"]
        for i, (z, s, up) in enumerate(zip(report.final_positions, report.final_spin_z, report.final_packet))
    ]
    if fmt == "csv":
        run.write_table("sg_particles", ["particle_id", "z", "s_z", "packet"], rows, fmt)
    return EXIT_OK


def cmd_check(suite: str, run: RunDirectory) -> int:
    from . import checks

    names = sorted(checks.SUITES) if suite == "all" else [suite]
    for name in names:
        if name not in checks.SUITES:
            raise _UsageError(f"unknown suite {name!r}; choose from {', '.join(sorted(checks.SUITES))} or all")
    all_passed = True
    for name in names:
        result = checks.run_suite(name)
        run.write_json(f"check_{name}.json", result)
        print(f"{name}: {'PASS' if result['passed'] else 'FAIL'}")
        for c in result["checks"]:
            if not c["passed"]:
                print(f"  {c['name']}: {c['value']:.3e} (needs {c['relation']} {c['threshold']:.3e})")
        all_passed &= result["passed"]
    return EXIT_OK if all_passed else EXIT_RUNTIME


class _UsageError(Exception):
    pass


# entry point ------------------------------------------------------------------


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)

    from .errors import ConfigError, EDSpinError
    from .scenario import load_scenario

    scenario = None
    config_hash = None
    try:
        if args.config is not None:
            scenario = load_scenario(args.config, args.command)
            config_hash = _sha256(args.config)
        elif args.command in ("evolve", "trajectories"):
            raise ConfigError("--config is required", [("--config", "missing")])
        elif args.command == "sg":
            scenario = load_scenario({"sg": {}}, "sg")
        if scenario is not None and args.seed is not None:
            scenario = scenario.with_seed(args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    seed = scenario.seed if scenario is not None else args.seed
    run = RunDirectory(args.out, args.command, config_hash, seed)
    try:
        if args.command == "evolve":
            code = cmd_evolve(scenario, run, args.format)
        elif args.command == "trajectories":
            code = cmd_trajectories(scenario, run, args.format)
        elif args.command == "sg":
            code = cmd_sg(scenario, run, args.format)
        else:
            code = cmd_check(args.suite, run)
    except _UsageError as exc:
        run.finish("failed", {"error": str(exc)})
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        run.finish("failed", {"error": str(exc)})
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EDSpinError, RuntimeError, ValueError, ArithmeticError) as exc:
        run.finish("failed", {"error": f"{type(exc).__name__}: {exc}"})
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    run.finish("complete" if code == EXIT_OK else "failed")
    return code


if __name__ == "__main__":
    sys.exit(main())
