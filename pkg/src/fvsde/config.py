"""Flat `key = value` run configurations with dotted sections.

Example:

    mesh.nx = 16
    mesh.ny = 16
    time.N = 64
    time.T = 1.0
    problem.g = linear
    problem.g.lambda = 0.5
    problem.beta = linear
    problem.beta.lambda = 0.25
    problem.v = rigid_rotation
    problem.u0 = cospi
    run.seed = 0
    run.M = 256

`#` starts a comment.  Unknown keys are rejected except for coefficient
parameters under problem.g/beta/v/u0, which pass through to the registry.
The contraction condition dt * L_beta <= 1/8 is enforced here, at build time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .mesh import DEFAULT_ORTHOGONALITY_TOL, Mesh, build_uniform_rect_mesh, load_mesh
from .scheme import CONTRACTION_LIMIT, SolverOptions, TimeGrid
from .stochastic import DEFAULT_BLOCK_SIZE
from .velocity import ProblemSpec, make_initial, make_scalar, make_velocity


class ConfigError(ValueError):
    """Raised for unreadable, unknown, or inconsistent configuration."""


_KNOWN_KEYS = {
    "mesh.nx", "mesh.ny", "mesh.rect", "mesh.file", "mesh.orthogonality_tol",
    "time.N", "time.T",
    "problem.g", "problem.beta", "problem.v", "problem.u0",
    "solver.fp_tol", "solver.max_iters", "solver.residual_factor",
    "solver.convection_form", "solver.projection_order", "solver.monitor_growth",
    "run.seed", "run.M", "run.threads", "run.block_size",
    "mc.functionals",
    "validate.sample_radius", "validate.samples",
    "converge.mode", "converge.nx0", "converge.ny0", "converge.levels",
    "converge.N0", "converge.policy",
}
_PASSTHROUGH_PREFIXES = ("problem.g.", "problem.beta.", "problem.v.", "problem.u0.")
_COEFF_META_KEYS = {"lipschitz", "growth_const"}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{source}:{lineno}: empty key or value")
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if key not in _KNOWN_KEYS and not key.startswith(_PASSTHROUGH_PREFIXES):
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        entries[key] = value
    return entries


def parse_config_file(path: str) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, source=path)


def _get(entries, key, conv, default=None, what="value"):
    if key not in entries:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return conv(entries[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"key {key!r}: expected {what}, got {entries[key]!r}") from exc


def _as_bool(s: str) -> bool:
    if s.lower() in ("true", "yes", "1", "on"):
        return True
    if s.lower() in ("false", "no", "0", "off"):
        return False
    raise ValueError(s)


def _coeff_params(entries: dict[str, str], prefix: str) -> dict[str, float]:
    params = {}
    for key, value in entries.items():
        if key.startswith(prefix + "."):
            name = key[len(prefix) + 1 :]
            try:
                params[name] = float(value)
            except ValueError as exc:
                raise ConfigError(f"key {key!r}: expected a number, got {value!r}") from exc
    return params


@dataclass
class RunConfig:
    """Fully resolved configuration: mesh, grid, problem, solver, run knobs."""

    mesh: Mesh
    grid: TimeGrid
    problem: ProblemSpec
    solver: SolverOptions
    seed: int
    n_samples: int
    threads: int | None
    block_size: int
    functionals: list[str]
    sample_radius: float
    validation_samples: int
    converge_mode: str
    converge_nx0: int
    converge_ny0: int
    converge_levels: int
    converge_n0: int
    converge_policy: str
    entries: dict[str, str] = field(default_factory=dict)

    def manifest_lines(self) -> list[str]:
        # run.threads is an execution knob with no effect on any result, so it
        # is omitted: outputs are byte-identical across parallelism settings.
        lines = [f"{k} = {self.entries[k]}" for k in sorted(self.entries)
                 if k != "run.threads"]
        lines.append(f"resolved.dt = {self.grid.dt!r}")
        lines.append(f"resolved.h = {self.mesh.h!r}")
        lines.append(f"resolved.cells = {self.mesh.n_cells}")
        return lines


def build_run_config(entries: dict[str, str]) -> RunConfig:
    """Resolve parsed entries into validated objects (raises ConfigError)."""
    if "mesh.file" in entries:
        tol = _get(entries, "mesh.orthogonality_tol", float, DEFAULT_ORTHOGONALITY_TOL, "a number")
        mesh = load_mesh(entries["mesh.file"], orthogonality_tol=tol)
    else:
        nx = _get(entries, "mesh.nx", int, what="an integer")
        ny = _get(entries, "mesh.ny", int, what="an integer")
        rect_str = entries.get("mesh.rect", "0 0 1 1")
        try:
            rect = tuple(float(t) for t in rect_str.split())
            if len(rect) != 4:
                raise ValueError
        except ValueError:
            raise ConfigError(f"mesh.rect must be four numbers, got {rect_str!r}") from None
        try:
            mesh = build_uniform_rect_mesh(nx, ny, rect)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    n_steps = _get(entries, "time.N", int, what="an integer")
    horizon = _get(entries, "time.T", float, what="a number")
    try:
        grid = TimeGrid(n_steps, horizon)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    def scalar_from(prefix: str, default_name: str):
        name = entries.get(prefix, default_name)
        params = _coeff_params(entries, prefix)
        meta = {k: params.pop(k) for k in list(params) if k in _COEFF_META_KEYS}
        try:
            coeff = make_scalar(name, params)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        lip = meta.get("lipschitz", coeff.lipschitz)
        growth = meta.get("growth_const", coeff.growth_const)
        return coeff, lip, growth

    g_coeff, g_lip, g_growth = scalar_from("problem.g", "zero")
    b_coeff, b_lip, _ = scalar_from("problem.beta", "zero")

    v_name = entries.get("problem.v", "zero")
    v_params = _coeff_params(entries, "problem.v")
    u0_name = entries.get("problem.u0", "zero")
    u0_params = _coeff_params(entries, "problem.u0")
    mesh_rect = mesh.rect_grid.rect if mesh.rect_grid is not None else None
    try:
        vel = make_velocity(v_name, v_params, rect=mesh_rect)
        u0 = make_initial(u0_name, u0_params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    try:
        problem = ProblemSpec(
            g=g_coeff.fn, g_lipschitz=g_lip, g_growth_const=g_growth,
            beta=b_coeff.fn, beta_lipschitz=b_lip,
            velocity=vel.fn, velocity_sup=vel.sup, velocity_dt_sup=vel.dt_sup,
            velocity_time_dependent=vel.time_dependent,
            u0=u0, T=horizon,
            g_is_zero=g_coeff.is_zero, beta_is_zero=b_coeff.is_zero,
            labels={"g": entries.get("problem.g", "zero"),
                    "beta": entries.get("problem.beta", "zero"),
                    "v": v_name, "u0": u0_name},
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    contraction = grid.dt * problem.beta_lipschitz
    if contraction > CONTRACTION_LIMIT + 1e-15:
        raise ConfigError(
            f"contraction condition violated: dt * L_beta = {contraction:.6g} "
            f"exceeds {CONTRACTION_LIMIT} (refine time.N or weaken beta)"
        )

    try:
        solver = SolverOptions(
            fp_tol=_get(entries, "solver.fp_tol", float, 1e-12, "a number"),
            max_fp_iters=_get(entries, "solver.max_iters", int, 200, "an integer"),
            residual_factor=_get(entries, "solver.residual_factor", float, 1e-11, "a number"),
            convection_form=entries.get("solver.convection_form", "flux"),
            projection_order=_get(entries, "solver.projection_order", int, 5, "an integer"),
            monitor_growth=_get(entries, "solver.monitor_growth", _as_bool, True, "a boolean"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    seed = _get(entries, "run.seed", int, 0, "an integer")
    if seed < 0:
        raise ConfigError("run.seed must be a nonnegative integer")
    n_samples = _get(entries, "run.M", int, 128, "an integer")
    # Unset thread count means "pick at run time" (all cores for Monte Carlo
    # work, one otherwise); results never depend on it.
    threads = None
    if "run.threads" in entries:
        threads = _get(entries, "run.threads", int, what="an integer")
        if threads < 1:
            raise ConfigError("run.threads must be positive")
    block_size = _get(entries, "run.block_size", int, DEFAULT_BLOCK_SIZE, "an integer")
    if n_samples < 1 or block_size < 1:
        raise ConfigError("run.M and run.block_size must be positive")

    functionals = [
        f.strip() for f in entries.get(
            "mc.functionals", "final_l2_sq,path_l2_sq,stability_lhs,rl_gap_sq"
        ).split(",") if f.strip()
    ]
    from .stochastic import FUNCTIONALS

    unknown = [f for f in functionals if f not in FUNCTIONALS]
    if unknown:
        raise ConfigError(
            f"mc.functionals: unknown {unknown}; known: {sorted(FUNCTIONALS)}"
        )
    if not functionals:
        raise ConfigError("mc.functionals must name at least one functional")

    mode = entries.get("converge.mode", "coupled")
    if mode not in ("coupled", "heat"):
        raise ConfigError(f"converge.mode must be 'coupled' or 'heat', got {mode!r}")
    policy = entries.get("converge.policy", "linear" if mode == "coupled" else "quadratic")
    if policy not in ("linear", "quadratic"):
        raise ConfigError(f"converge.policy must be 'linear' or 'quadratic', got {policy!r}")

    return RunConfig(
        mesh=mesh,
        grid=grid,
        problem=problem,
        solver=solver,
        seed=seed,
        n_samples=n_samples,
        threads=threads,
        block_size=block_size,
        functionals=functionals,
        sample_radius=_get(entries, "validate.sample_radius", float, 10.0, "a number"),
        validation_samples=_get(entries, "validate.samples", int, 1000, "an integer"),
        converge_mode=mode,
        converge_nx0=_get(entries, "converge.nx0", int, 8, "an integer"),
        converge_ny0=_get(entries, "converge.ny0", int, 8, "an integer"),
        converge_levels=_get(entries, "converge.levels", int, 3, "an integer"),
        converge_n0=_get(entries, "converge.N0", int, 16, "an integer"),
        converge_policy=policy,
        entries=dict(entries),
    )


def load_run_config(path: str, overrides: dict[str, str] | None = None) -> RunConfig:
    entries = parse_config_file(path)
    for key, value in (overrides or {}).items():
        entries[key] = value
    return build_run_config(entries)
