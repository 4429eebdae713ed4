"""Scenario runner and comparison harness.

Subcommands: ``validate``, ``run``, ``report``, ``version``.  Exit codes:
0 ok, 1 validation failure, 2 runtime refusal (with a machine-readable
error record in the output directory), 3 tolerance failure in ``report``.
Identical config and seed reproduce byte-identical CSV and binary
artifacts; the manifest additionally records wall time, so it is the one
file excluded from that promise.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import warnings

import numpy as np

from . import __version__
from .config import (
    CompareRun,
    ConfigError,
    EnsembleRun,
    FlowRun,
    FockRun,
    PerturbationRun,
    ScenarioConfig,
    VlasovRun,
    canonical_json,
    parse_config,
)
from .ensemble import (
    EnsembleSettings,
    ensemble_vs_vlasov,
    histogram_density,
    integrate_nbody,
    sample_initial,
)
from .fileio import (
    RunManifest,
    atomic_write_text,
    read_points_csv,
    sha256_of,
    write_field,
    write_fock_operator,
    write_fock_state,
    write_marginal_csv,
    write_points_csv,
    write_table_csv,
    write_trajectory_csv,
)
from .flow import flow_trajectory
from .fock import (
    DimensionCapError,
    FockBasis,
    ModeBasis,
    assemble_liouvillian,
    build_one_body,
    build_two_body,
    density_expectation,
    embed_product_state,
    propagate,
)
from .perturbation import PerturbationSettings, perturbative_density, residual_vs_vlasov
from .phase_space import density_from_function
from .vlasov import vlasov_solve

_RUNTIME_ERRORS = (ValueError, TypeError, NotImplementedError, OSError, KeyError, Warning)


def _check(name: str, value: float, low: float | None, high: float | None) -> dict:
    passed = True
    if low is not None and value < low:
        passed = False
    if high is not None and value > high:
        passed = False
    return {"name": name, "value": float(value), "low": low, "high": high,
            "passed": bool(passed)}


def _write_json(path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# method dispatch
# --------------------------------------------------------------------------

def _run_flow(cfg: ScenarioConfig, out_dir: str, base_dir: str):
    settings: FlowRun = cfg.settings
    points_path = settings.points_csv
    if not os.path.isabs(points_path):
        points_path = os.path.join(base_dir, points_path)
    points = read_points_csv(points_path)
    times = np.linspace(0.0, cfg.t_final, settings.n_snapshots)
    traj = flow_trajectory(points, times, cfg.spec, settings.flow)
    path = os.path.join(out_dir, "trajectory.csv")
    write_trajectory_csv(path, times, traj)
    return [path], [], []


def _run_vlasov(cfg: ScenarioConfig, out_dir: str, base_dir: str):
    settings: VlasovRun = cfg.settings
    init = density_from_function(cfg.grid, cfg.density)
    snaps = vlasov_solve(init, cfg.t_final, cfg.spec, settings.vlasov,
                         snapshot_times=list(cfg.snapshots))
    files = []
    for k, snap in enumerate(snaps):
        field_path = os.path.join(out_dir, f"field_{k:04d}.kvnf")
        write_field(field_path, snap)
        marg_path = os.path.join(out_dir, f"marginal_{k:04d}.csv")
        write_marginal_csv(marg_path, snap)
        files += [field_path, marg_path]
    drift = abs(snaps[-1].mass - init.mass) / max(abs(init.mass), 1e-300)
    checks = [
        _check("vlasov_mass_drift_rel", drift, None, 1e-6),
        _check("vlasov_clip_count", snaps[-1].clip_count, None, None),
    ]
    return files, checks, []


def _perturbation_settings(run: PerturbationRun, cfg: ScenarioConfig) -> PerturbationSettings:
    aux = run.aux_grid if run.aux_grid is not None else cfg.grid
    return PerturbationSettings(aux_grid=aux, flow=run.flow, quadrature=run.quadrature,
                                n_s=run.n_s, h_p=run.h_p)


def _run_perturbation(cfg: ScenarioConfig, out_dir: str, base_dir: str):
    settings = _perturbation_settings(cfg.settings, cfg)
    files = []
    for k, t in enumerate(cfg.snapshots):
        field = perturbative_density(cfg.grid, t, cfg.density, cfg.spec, settings)
        field_path = os.path.join(out_dir, f"field_{k:04d}.kvnf")
        write_field(field_path, field)
        marg_path = os.path.join(out_dir, f"marginal_{k:04d}.csv")
        write_marginal_csv(marg_path, field)
        files += [field_path, marg_path]
    return files, [], []


def _run_fock(cfg: ScenarioConfig, out_dir: str, base_dir: str):
    settings: FockRun = cfg.settings
    grid = cfg.grid
    n_modes = grid.n_q * grid.n_p
    dim = FockBasis.sector_dimension(n_modes, settings.n_particles)
    if dim > settings.dimension_cap:
        raise DimensionCapError(
            f"sector dimension {dim} (M={n_modes}, N={settings.n_particles}) "
            f"exceeds the cap {settings.dimension_cap}"
        )
    modes = ModeBasis(grid)
    basis = FockBasis(n_modes=n_modes, n_particles=settings.n_particles)
    one = build_one_body(grid, cfg.spec)
    two = build_two_body(grid, cfg.spec)
    op = assemble_liouvillian(one, two, basis, dimension_cap=settings.dimension_cap)

    Q, P = grid.meshgrid()
    orbital = np.sqrt(np.asarray(cfg.density(Q, P), dtype=float))
    norm = np.sqrt(np.sum(np.abs(orbital) ** 2) * grid.cell_volume)
    if norm <= 0:
        raise ValueError("initial density vanishes on the grid")
    orbital = (orbital / norm).reshape(-1)
    if settings.n_particles == 1:
        psi = orbital
    elif settings.n_particles == 2:
        psi = np.outer(orbital, orbital)
    else:
        raise NotImplementedError("fock runs support one or two particles")
    state0 = embed_product_state(psi, basis, modes)
    state1 = propagate(state0, op, cfg.t_final, dense_cutoff=settings.dense_cutoff)
    dens = density_expectation(state1, modes)
    dens.time = cfg.t_final

    files = []
    state_path = os.path.join(out_dir, "state_final.kvnq")
    write_fock_state(state_path, state1, grid)
    field_path = os.path.join(out_dir, "density.kvnf")
    write_field(field_path, dens)
    marg_path = os.path.join(out_dir, "marginal.csv")
    write_marginal_csv(marg_path, dens)
    files += [state_path, field_path, marg_path]
    if dim <= settings.dense_cutoff:
        op_path = os.path.join(out_dir, "liouvillian.kvno")
        write_fock_operator(op_path, op, grid)
        files.append(op_path)
    checks = [
        _check("fock_norm_drift", abs(state1.norm() - state0.norm()), None, 1e-10),
        _check("fock_hermiticity", op.hermiticity_deviation(), None, 1e-12),
    ]
    return files, checks, []


def _run_ensemble(cfg: ScenarioConfig, out_dir: str, base_dir: str):
    settings: EnsembleRun = cfg.settings
    ens = EnsembleSettings(dt=settings.dt, seed=cfg.seed,
                           coupling_scaling=settings.coupling_scaling,
                           n_particles=settings.n_particles)
    points = sample_initial(cfg.density, settings.n_particles, cfg.seed)
    moved = integrate_nbody(points, cfg.t_final, cfg.spec, ens)
    hist = histogram_density(moved, cfg.grid)
    hist.time = cfg.t_final

    files = []
    pts_path = os.path.join(out_dir, "particles_final.csv")
    write_points_csv(pts_path, moved)
    field_path = os.path.join(out_dir, "histogram.kvnf")
    write_field(field_path, hist)
    marg_path = os.path.join(out_dir, "marginal.csv")
    write_marginal_csv(marg_path, hist)
    meta_path = os.path.join(out_dir, "ensemble_meta.json")
    _write_json(meta_path, {
        "seed": cfg.seed,
        "rng": "numpy PCG64",
        "numpy_version": np.__version__,
        "n_particles": settings.n_particles,
        "coupling_scaling": settings.coupling_scaling,
        "note": "mean-field scaling divides pair forces by (n_particles - 1)",
    })
    files += [pts_path, field_path, marg_path, meta_path]
    checks = [_check("histogram_mass", hist.mass, None, 1.0 + 1e-12)]
    return files, checks, [cfg.seed]


def _run_compare(cfg: ScenarioConfig, out_dir: str, base_dir: str):
    settings: CompareRun = cfg.settings
    files, checks, seeds = [], [], []
    if settings.targets == ("perturbation", "vlasov"):
        pert = _perturbation_settings(settings.perturbation, cfg)
        table = residual_vs_vlasov(cfg.t_final, cfg.density, cfg.spec,
                                   list(settings.strengths), cfg.grid, pert,
                                   settings.vlasov.vlasov)
        path = os.path.join(out_dir, "residual_table.csv")
        write_table_csv(path, table)
        files.append(path)
        nonzero = [r for r in table.rows if r[0] > 0]
        if len(nonzero) >= 3:
            errs = [e for _, e in nonzero]
            for i in range(len(errs) - 1):
                checks.append(_check(f"strength_ratio_{i}", errs[i] / errs[i + 1], 3.0, 5.0))
            checks.append(_check("fitted_order", table.fitted_order, 1.7, 2.3))
    else:
        ens = settings.ensemble or EnsembleRun()
        ens_settings = EnsembleSettings(dt=ens.dt, seed=cfg.seed,
                                        coupling_scaling=ens.coupling_scaling,
                                        n_particles=ens.n_particles)
        table = ensemble_vs_vlasov(cfg.density, cfg.spec, cfg.grid, cfg.t_final,
                                   list(settings.n_list), ens_settings,
                                   settings.vlasov.vlasov)
        path = os.path.join(out_dir, "convergence_table.csv")
        write_table_csv(path, table)
        meta_path = os.path.join(out_dir, "convergence_meta.json")
        _write_json(meta_path, {
            "seed": cfg.seed,
            "rng": "numpy PCG64",
            "numpy_version": np.__version__,
            "n_list": list(settings.n_list),
            "dt": ens.dt,
            "coupling_scaling": ens.coupling_scaling,
            "note": "mean-field scaling divides pair forces by (n - 1)",
        })
        files += [path, meta_path]
        seeds.append(cfg.seed)
        rows = list(table.rows)
        for i in range(len(rows) - 1):
            n0, e0 = rows[i]
            n1, e1 = rows[i + 1]
            if abs(n1 / n0 - 10.0) < 1e-9:  # per-decade window only for decade steps
                checks.append(_check(f"decade_ratio_{i}", e0 / e1, 2.5, 4.0))
    return files, checks, seeds


_DISPATCH = {
    "flow": _run_flow,
    "vlasov": _run_vlasov,
    "perturbation": _run_perturbation,
    "fock": _run_fock,
    "ensemble": _run_ensemble,
    "compare": _run_compare,
}


def run_config(cfg: ScenarioConfig, out_dir: str, base_dir: str = ".") -> int:
    """Execute a validated config; returns the process exit code."""
    os.makedirs(out_dir, exist_ok=True)
    started = time.perf_counter()
    config_text = canonical_json(cfg.raw)
    config_path = os.path.join(out_dir, "config.json")
    atomic_write_text(config_path, config_text)
    try:
        files, checks, seeds = _DISPATCH[cfg.method](cfg, out_dir, base_dir)
    except _RUNTIME_ERRORS as exc:
        _write_json(os.path.join(out_dir, "error.json"), {
            "error": type(exc).__name__,
            "message": str(exc),
            "method": cfg.method,
        })
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    checks_path = os.path.join(out_dir, "checks.json")
    _write_json(checks_path, checks)
    manifest = RunManifest(
        config_sha256=hashlib.sha256(config_text.encode()).hexdigest(),
        tool_version=__version__,
        wall_time_s=time.perf_counter() - started,
        seeds=seeds,
    )
    for path in [config_path, *files, checks_path]:
        manifest.add_file(out_dir, path)
    manifest.write(out_dir)
    for c in checks:
        status = "ok" if c["passed"] else "FAIL"
        print(f"  check {c['name']}: {c['value']:.6g} [{status}]")
    print(f"run complete: {len(files)} artifact(s) in {out_dir}")
    # out-of-tolerance checks are recorded here and enforced by `report` (exit 3)
    return 0


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

def build_report(run_dirs) -> dict:
    """Aggregate manifests and checks from run directories."""
    report: dict = {"runs": [], "problems": [], "all_passed": True}
    for run_dir in run_dirs:
        entry: dict = {"dir": str(run_dir)}
        try:
            manifest = RunManifest.load(run_dir)
        except (OSError, ValueError, KeyError) as exc:
            report["problems"].append(f"{run_dir}: unreadable manifest ({exc})")
            entry["manifest"] = "missing-or-corrupt"
            report["runs"].append(entry)
            continue
        entry["manifest"] = "ok"
        entry["config_sha256"] = manifest.config_sha256
        entry["tool_version"] = manifest.tool_version
        tampered = []
        for rec in manifest.files:
            path = os.path.join(run_dir, rec["path"])
            try:
                ok = sha256_of(path) == rec["sha256"]
            except OSError:
                ok = False
            if not ok:
                tampered.append(rec["path"])
        if tampered:
            entry["tampered_files"] = tampered
            report["problems"].append(f"{run_dir}: checksum mismatch: {', '.join(tampered)}")
            report["all_passed"] = False
        checks = []
        checks_path = os.path.join(run_dir, "checks.json")
        if os.path.exists(checks_path):
            with open(checks_path, "r", encoding="utf-8") as fh:
                checks = json.load(fh)
        entry["checks"] = checks
        for c in checks:
            if not c.get("passed", False):
                report["all_passed"] = False
                report["problems"].append(
                    f"{run_dir}: check {c['name']} out of tolerance (value {c['value']})"
                )
        tables = {}
        for name in sorted(os.listdir(run_dir)):
            if name.endswith("_table.csv"):
                with open(os.path.join(run_dir, name), "r", encoding="utf-8") as fh:
                    lines = [ln.strip() for ln in fh if ln.strip()]
                rows = [ln.split(",") for ln in lines[1:]]
                footer = [r for r in rows if r[0] == "fitted_order"]
                tables[name] = {
                    "rows": [[float(a), float(b)] for a, b in rows if a != "fitted_order"],
                    "fitted_order": float(footer[0][1]) if footer else None,
                }
        if tables:
            entry["tables"] = tables
        report["runs"].append(entry)
    return report


def _render_report(report: dict) -> str:
    lines = [f"kvnsim report ({len(report['runs'])} run(s))", ""]
    for entry in report["runs"]:
        lines.append(f"run {entry['dir']}: manifest {entry['manifest']}")
        for c in entry.get("checks", []):
            status = "pass" if c.get("passed") else "FAIL"
            window = []
            if c.get("low") is not None:
                window.append(f">= {c['low']}")
            if c.get("high") is not None:
                window.append(f"<= {c['high']}")
            bounds = " and ".join(window) if window else "informational"
            lines.append(f"  {c['name']}: {c['value']:.6g} ({bounds}) [{status}]")
        for name, table in entry.get("tables", {}).items():
            lines.append(f"  table {name}:")
            for row in table["rows"]:
                lines.append(f"    {row[0]:.6g} -> {row[1]:.6g}")
            if table.get("fitted_order") is not None:
                lines.append(f"    fitted order: {table['fitted_order']:.4g}")
        if entry.get("tampered_files"):
            lines.append(f"  TAMPERED: {', '.join(entry['tampered_files'])}")
    lines.append("")
    if report["problems"]:
        lines.append("problems:")
        lines += [f"  - {p}" for p in report["problems"]]
    lines.append("ALL CHECKS PASSED" if report["all_passed"] else "SOME CHECKS FAILED")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def _load_config(path: str, strict: bool = True) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), strict=strict)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kvnsim",
        description="phase-space kinetic toolkit: scenario runner and comparison harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="validate a scenario config")
    p_validate.add_argument("--config", required=True)

    p_run = sub.add_parser("run", help="run a scenario")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory (overrides config)")
    p_run.add_argument("--seed", type=int, default=None, help="seed (overrides config)")
    p_run.add_argument("--strict", action="store_true",
                       help="promote runtime warnings (resolution, boundary mass) to errors")

    p_report = sub.add_parser("report", help="aggregate run directories into a summary")
    p_report.add_argument("run_dirs", nargs="+")
    p_report.add_argument("--out", default=".", help="where to write summary.{txt,json}")

    sub.add_parser("version", help="print the tool version")

    args = parser.parse_args(argv)

    if args.command == "version":
        print(f"kvnsim {__version__}")
        return 0

    if args.command == "validate":
        try:
            cfg = _load_config(args.config)
        except ConfigError as exc:
            print(str(exc), file=sys.stderr)
            return 1
        except OSError as exc:
            print(f"cannot read config: {exc}", file=sys.stderr)
            return 1
        print(f"config ok: method={cfg.method}, output_dir={cfg.output_dir}")
        return 0

    if args.command == "run":
        try:
            cfg = _load_config(args.config)
        except ConfigError as exc:
            print(str(exc), file=sys.stderr)
            return 1
        except OSError as exc:
            print(f"cannot read config: {exc}", file=sys.stderr)
            return 1
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.raw["seed"] = args.seed
        out_dir = args.out if args.out is not None else cfg.output_dir
        base_dir = os.path.dirname(os.path.abspath(args.config))
        if args.strict:
            with warnings.catch_warnings():
                warnings.simplefilter("error")
                return run_config(cfg, out_dir, base_dir)
        return run_config(cfg, out_dir, base_dir)

    if args.command == "report":
        report = build_report(args.run_dirs)
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "summary.json"), report)
        text = _render_report(report)
        atomic_write_text(os.path.join(args.out, "summary.txt"), text)
        print(text, end="")
        return 0 if report["all_passed"] else 3

    return 2


if __name__ == "__main__":
    sys.exit(main())
