"""Command-line entry points: validate, run, mc, converge, mesh-info.

Every command is a pure function of (config file, seed): rerunning with the
same inputs reproduces all output files byte for byte, whatever the thread
count.  Output floats are printed as shortest exact decimals and manifests
carry no timestamps.

Exit codes: 0 success, 2 invalid configuration, 3 solver failure,
4 validation failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .analysis import LadderConfig, convergence_study, heat_order_study
from .calculus import l2_norm
from .config import ConfigError, RunConfig, load_run_config
from .mesh import MeshError, mesh_regularity
from .scheme import (
    SolverError,
    format_float,
    run_path,
    write_norms_csv,
    write_trajectory_csv,
)
from .stochastic import generate_path, mc_functionals, stability_report
from .velocity import (
    ProblemSpecError,
    assemble_edge_fluxes,
    divergence_defect,
    validate_problem_spec,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VALIDATION = 4


def _write_manifest(cfg: RunConfig, out_dir: str, command: str, extra: list[str] = ()):
    lines = [f"fvsde {__version__}", f"command = {command}"]
    lines.extend(cfg.manifest_lines())
    lines.extend(extra)
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _ensure_out(path: str | None) -> str:
    out = path or "."
    os.makedirs(out, exist_ok=True)
    return out


def _mc_threads(cfg: RunConfig) -> int:
    # Monte Carlo work defaults to all cores; estimates do not depend on it.
    return cfg.threads if cfg.threads is not None else (os.cpu_count() or 1)


def cmd_validate(cfg: RunConfig, out_dir: str | None) -> int:
    """Mesh admissibility, regularity, coefficient sampling, and flux defects."""
    lines = [f"fvsde {__version__} validation report"]
    mesh = cfg.mesh
    lines.append(f"mesh: {mesh.n_cells} cells, {mesh.n_interior_edges} interior edges, "
                 f"{mesh.n_boundary_edges} boundary edges")
    lines.append(f"mesh: h = {format_float(mesh.h)}, domain area = {format_float(mesh.domain_area)}")
    lines.append("mesh: admissibility ok (orthogonality, areas, closure)")
    try:
        reg = mesh_regularity(mesh)
        lines.append(f"mesh: reg = {format_float(reg.reg_value)} "
                     f"(valence {reg.max_vertex_valence}, "
                     f"diam/dist {format_float(reg.max_diam_over_dist)})")
    except MeshError as exc:
        lines.append(f"mesh: regularity unavailable ({exc})")

    lines.extend(validate_problem_spec(cfg.problem, cfg.sample_radius, cfg.validation_samples))
    lines.append(
        f"contraction: dt * L_beta = {format_float(cfg.grid.dt * cfg.problem.beta_lipschitz)} <= 0.125"
    )

    fluxes = assemble_edge_fluxes(cfg.problem.velocity, mesh, 0.0, cfg.grid.dt)
    defect = divergence_defect(fluxes)
    lines.append(f"flux: max |divergence defect| = {format_float(float(np.abs(defect).max(initial=0.0)))}")
    if mesh.geometry is not None and mesh.geometry.boundary_endpoints is not None:
        bpts = mesh.geometry.boundary_endpoints.mean(axis=1)
        vb = np.asarray(cfg.problem.velocity(0.0, bpts))
        vn = (vb * mesh.boundary_normals).sum(axis=1)
        worst = float(np.abs(vn).max(initial=0.0))
        lines.append(f"flux: max |v.n| on boundary = {format_float(worst)}"
                     + ("  (warning: nonzero; scheme never samples boundary fluxes)" if worst > 1e-12 else ""))

    report = "\n".join(lines) + "\n"
    sys.stdout.write(report)
    if out_dir is not None:
        out = _ensure_out(out_dir)
        with open(os.path.join(out, "validation.txt"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report)
        _write_manifest(cfg, out, "validate")
    return EXIT_OK


def cmd_run(cfg: RunConfig, out_dir: str | None) -> int:
    """Single trajectory (path index 0): trajectory CSV plus per-step norms."""
    out = _ensure_out(out_dir)
    path = generate_path(cfg.seed, cfg.grid.n_steps, cfg.grid.horizon, index=0)
    traj = run_path(cfg.problem, cfg.mesh, cfg.grid, path, cfg.solver)
    write_trajectory_csv(traj, os.path.join(out, "trajectory.csv"))
    write_norms_csv(traj, os.path.join(out, "norms.csv"))
    _write_manifest(cfg, out, "run")
    print(f"run: wrote trajectory.csv and norms.csv to {out} "
          f"(final l2 = {format_float(l2_norm(traj.field(cfg.grid.n_steps)))})")
    return EXIT_OK


def cmd_mc(cfg: RunConfig, out_dir: str | None) -> int:
    """Monte Carlo estimates CSV: functional, mean, stderr, M, seed, N, h."""
    out = _ensure_out(out_dir)
    threads = _mc_threads(cfg)
    estimates = mc_functionals(
        cfg.problem, cfg.mesh, cfg.grid, cfg.n_samples, cfg.seed,
        cfg.functionals, cfg.solver, threads=threads, block_size=cfg.block_size,
    )
    extra = []
    if "stability_lhs" in cfg.functionals:
        rep = stability_report(cfg.problem, cfg.mesh, cfg.grid, cfg.n_samples,
                               cfg.seed, cfg.solver, threads=threads)
        extra = [
            f"stability.upsilon_bound = {format_float(rep.upsilon_bound)}",
            f"stability.k0_bound = {format_float(rep.k0_bound)}",
            f"stability.lhs_final = {format_float(rep.lhs_final)}",
        ]
    with open(os.path.join(out, "estimates.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("functional,mean,stderr,M,seed,N,h\n")
        for est in estimates:
            fh.write(
                f"{est.functional},{format_float(est.mean)},{format_float(est.stderr)},"
                f"{est.n_samples},{cfg.seed},{cfg.grid.n_steps},{format_float(cfg.mesh.h)}\n"
            )
    _write_manifest(cfg, out, "mc", extra)
    print(f"mc: wrote estimates.csv to {out} ({len(estimates)} functionals, M = {cfg.n_samples})")
    return EXIT_OK


def cmd_converge(cfg: RunConfig, out_dir: str | None) -> int:
    """Refinement study: rate table CSV (+ per-level r-l gaps when coupled)."""
    out = _ensure_out(out_dir)
    ladder = LadderConfig(
        nx=cfg.converge_nx0, ny=cfg.converge_ny0, levels=cfg.converge_levels,
        n_steps_base=cfg.converge_n0,
        rect=cfg.mesh.rect_grid.rect if cfg.mesh.rect_grid else (0.0, 0.0, 1.0, 1.0),
        time_policy=cfg.converge_policy,
    )
    extra = [f"converge.mode = {cfg.converge_mode}"]
    if cfg.converge_mode == "heat":
        table = heat_order_study(cfg.problem, ladder, cfg.solver)
    else:
        table, study = convergence_study(
            cfg.problem, ladder, cfg.n_samples, cfg.seed, cfg.solver,
            threads=_mc_threads(cfg), block_size=cfg.block_size,
        )
        with open(os.path.join(out, "gaps.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("level,h,N,dt,gap_mean,gap_stderr\n")
            for k, mesh in enumerate(study.meshes):
                fh.write(
                    f"{k},{format_float(mesh.h)},{study.grids[k].n_steps},"
                    f"{format_float(study.grids[k].dt)},{format_float(study.gaps[k])},"
                    f"{format_float(study.gap_stderr[k])}\n"
                )
        extra.append(f"converge.gap_exponent = {format_float(study.gap_exponent)}")
    with open(os.path.join(out, "ratetable.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("level,h,N,M,error,stderr,rate\n")
        for row in table.rows:
            rate = "" if row.rate is None else format_float(row.rate)
            fh.write(
                f"{row.level},{format_float(row.h)},{row.n_steps},{row.n_samples},"
                f"{format_float(row.error)},{format_float(row.stderr)},{rate}\n"
            )
    _write_manifest(cfg, out, "converge", extra)
    print(f"converge: wrote ratetable.csv to {out} (mode {cfg.converge_mode})")
    return EXIT_OK


def cmd_mesh_info(cfg: RunConfig, out_dir: str | None) -> int:
    """Print mesh statistics."""
    mesh = cfg.mesh
    print(f"cells: {mesh.n_cells}")
    print(f"interior edges: {mesh.n_interior_edges}")
    print(f"boundary edges: {mesh.n_boundary_edges}")
    print(f"h: {format_float(mesh.h)}")
    print(f"domain area: {format_float(mesh.domain_area)}")
    try:
        reg = mesh_regularity(mesh)
        print(f"reg: {format_float(reg.reg_value)} (valence {reg.max_vertex_valence}, "
              f"diam/dist {format_float(reg.max_diam_over_dist)})")
    except MeshError as exc:
        print(f"reg: unavailable ({exc})")
    if mesh.geometry is not None and not mesh.geometry.synthetic:
        print(f"diamond partition total: {format_float(mesh.diamond_partition_total())}")
    return EXIT_OK


_COMMANDS = {
    "validate": cmd_validate,
    "run": cmd_run,
    "mc": cmd_mc,
    "converge": cmd_converge,
    "mesh-info": cmd_mesh_info,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fvsde",
        description="Finite-volume solver for a stochastic diffusion-convection "
                    "equation: validation, single runs, Monte Carlo, refinement studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0] if fn.__doc__ else None)
        p.add_argument("--config", required=True, help="path to a key=value config file")
        p.add_argument("--out", default=None, help="output directory (default: cwd for file-writing commands)")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--threads", type=int, default=None, help="override run.threads")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides: dict[str, str] = {}
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if args.threads is not None:
        overrides["run.threads"] = str(args.threads)
    try:
        cfg = load_run_config(args.config, overrides)
        return _COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (MeshError, ProblemSpecError) as exc:
        print(f"error: validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
