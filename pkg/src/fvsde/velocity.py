"""Problem coefficients, edge-averaged velocity fluxes, and upwind traces.

The convection field enters the scheme only through its space-time average
across each interior edge over a time slab,

    v_Ksigma = (1 / (dt * m_sigma)) * int_slab int_sigma v . n_Ksigma,

approximated by a tensor 2x2 Gauss rule (two points on the edge, two in
time), which is exact for fields componentwise affine in x and t.  Fluxes
are oriented with n_Ksigma and negated, never re-integrated, when seen from
the other side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import Mesh, MeshError

GAUSS2 = 1.0 / math.sqrt(3.0)  # 2-point Gauss nodes on [-1, 1] are +-1/sqrt(3)


class ProblemSpecError(ValueError):
    """Raised when declared problem coefficients fail their sampled checks."""


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficients of the stochastic diffusion-convection problem.

    `g` multiplies the Brownian increment (evaluated explicitly at the old
    state), `beta` is the implicit reaction term with beta(0) = 0, `velocity`
    is a divergence-free field with v.n = 0 on the boundary, and `u0` is the
    initial condition.  Lipschitz and growth constants are declared, then
    spot-checked by `validate_problem_spec`.  Scalar handles must accept
    numpy arrays elementwise; `velocity(t, points)` maps (..., 2) points to
    (..., 2) vectors.
    """

    g: Callable[[np.ndarray], np.ndarray]
    g_lipschitz: float
    g_growth_const: float
    beta: Callable[[np.ndarray], np.ndarray]
    beta_lipschitz: float
    velocity: Callable[[float, np.ndarray], np.ndarray]
    u0: Callable[[np.ndarray, np.ndarray], np.ndarray]
    T: float
    velocity_sup: float = 0.0
    velocity_dt_sup: float = 0.0
    velocity_time_dependent: bool = False
    g_is_zero: bool = False
    beta_is_zero: bool = False
    labels: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise ProblemSpecError(f"horizon must be positive, got {self.T}")
        for name, val in (("g_lipschitz", self.g_lipschitz),
                          ("g_growth_const", self.g_growth_const),
                          ("beta_lipschitz", self.beta_lipschitz)):
            if val < 0 or not np.isfinite(val):
                raise ProblemSpecError(f"{name} must be a finite nonnegative real")
        b0 = float(np.asarray(self.beta(np.array(0.0))))
        if abs(b0) > 1e-12:
            raise ProblemSpecError(f"beta(0) = {b0!r}, must vanish")


def validate_problem_spec(
    spec: ProblemSpec,
    sample_radius: float = 10.0,
    samples: int = 1000,
    seed_key: int = 0x5EED,
) -> list[str]:
    """Spot-check declared Lipschitz and growth constants on random pairs.

    Draws `samples` pairs in [-R, R] from a fixed counter-based stream so the
    report is deterministic.  Raises ProblemSpecError on a violation beyond a
    small floating-point slack; returns human-readable report lines.
    """
    rng = np.random.Generator(np.random.Philox(key=[seed_key, 0]))
    a = rng.uniform(-sample_radius, sample_radius, size=samples)
    b = rng.uniform(-sample_radius, sample_radius, size=samples)
    slack = 1e-9

    def check_lipschitz(fn, constant, name):
        lhs = np.abs(np.asarray(fn(a)) - np.asarray(fn(b)))
        rhs = constant * np.abs(a - b)
        worst = float(np.max(lhs - rhs, initial=0.0))
        if worst > slack * (1.0 + constant) * sample_radius:
            raise ProblemSpecError(
                f"{name} violates declared Lipschitz constant {constant}: excess {worst:.3e}"
            )
        return worst

    wg = check_lipschitz(spec.g, spec.g_lipschitz, "g")
    wb = check_lipschitz(spec.beta, spec.beta_lipschitz, "beta")

    gv = np.asarray(spec.g(a))
    growth = gv * gv - spec.g_growth_const * (1.0 + a * a)
    worst_growth = float(np.max(growth, initial=0.0))
    if worst_growth > slack * (1.0 + spec.g_growth_const) * (1.0 + sample_radius**2):
        raise ProblemSpecError(
            f"g violates growth bound with constant {spec.g_growth_const}: excess {worst_growth:.3e}"
        )

    return [
        f"lipschitz g: declared {spec.g_lipschitz!r}, max excess {wg!r} on {samples} pairs in [-{sample_radius}, {sample_radius}]",
        f"lipschitz beta: declared {spec.beta_lipschitz!r}, max excess {wb!r}",
        f"growth g: constant {spec.g_growth_const!r}, max excess {worst_growth!r}",
        f"beta(0) = {float(np.asarray(spec.beta(np.array(0.0))))!r}",
    ]


# --- named coefficient registry -------------------------------------------
#
# Every handle the CLI can reference lives here, so run configurations stay
# declarative.  Scalar entries return (fn, lipschitz, growth_const, is_zero);
# derived constants are tight for each family.

def _scalar_zero(params):
    return (lambda r: np.zeros_like(np.asarray(r, dtype=np.float64))), 0.0, 0.0, True


def _scalar_identity(params):
    return (lambda r: np.asarray(r, dtype=np.float64) + 0.0), 1.0, 1.0, False


def _scalar_linear(params):
    lam = float(params.get("lambda", 1.0))
    return (lambda r: lam * np.asarray(r, dtype=np.float64)), abs(lam), lam * lam, lam == 0.0


def _scalar_sine(params):
    amp = float(params.get("amp", 1.0))
    freq = float(params.get("freq", 1.0))
    fn = lambda r: amp * np.sin(freq * np.asarray(r, dtype=np.float64))
    return fn, abs(amp * freq), amp * amp, amp == 0.0


def _scalar_clipped_linear(params):
    lam = float(params.get("lambda", 1.0))
    cap = float(params.get("cap", 1.0))
    if cap <= 0:
        raise ProblemSpecError(f"clipped_linear cap must be positive, got {cap}")
    fn = lambda r: lam * np.clip(np.asarray(r, dtype=np.float64), -cap, cap)
    return fn, abs(lam), lam * lam * min(1.0, cap * cap), lam == 0.0


def _scalar_constant(params):
    c = float(params.get("value", 0.0))
    fn = lambda r: np.full_like(np.asarray(r, dtype=np.float64), c)
    return fn, 0.0, c * c, c == 0.0


SCALAR_FUNCTIONS = {
    "zero": (_scalar_zero, set()),
    "identity": (_scalar_identity, set()),
    "linear": (_scalar_linear, {"lambda"}),
    "sine": (_scalar_sine, {"amp", "freq"}),
    "clipped_linear": (_scalar_clipped_linear, {"lambda", "cap"}),
    "constant": (_scalar_constant, {"value"}),
}


def _check_params(kind: str, name: str, params: dict, allowed: set) -> None:
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise ProblemSpecError(
            f"{kind} {name!r} does not take parameters {unknown}; "
            f"allowed: {sorted(allowed) or 'none'}"
        )


@dataclass(frozen=True)
class ScalarCoefficient:
    fn: Callable
    lipschitz: float
    growth_const: float
    is_zero: bool


def make_scalar(name: str, params: dict | None = None) -> ScalarCoefficient:
    if name not in SCALAR_FUNCTIONS:
        raise ProblemSpecError(
            f"unknown scalar function {name!r}; known: {sorted(SCALAR_FUNCTIONS)}"
        )
    factory, allowed = SCALAR_FUNCTIONS[name]
    params = params or {}
    _check_params("scalar function", name, params, allowed)
    fn, lip, growth, zero = factory(params)
    return ScalarCoefficient(fn, lip, growth, zero)


@dataclass(frozen=True)
class VelocityField:
    fn: Callable[[float, np.ndarray], np.ndarray]
    sup: float
    dt_sup: float
    time_dependent: bool
    is_zero: bool


_VELOCITY_PARAMS = {"zero": set(), "constant": {"vx", "vy"},
                    "rigid_rotation": {"omega", "cx", "cy"}}


def make_velocity(name: str, params: dict | None = None,
                  rect: tuple[float, float, float, float] | None = None) -> VelocityField:
    """Named velocity fields; all built-ins are divergence-free and steady."""
    params = params or {}
    if name in _VELOCITY_PARAMS:
        _check_params("velocity field", name, params, _VELOCITY_PARAMS[name])
    if name == "zero":
        fn = lambda t, p: np.zeros_like(np.asarray(p, dtype=np.float64))
        return VelocityField(fn, 0.0, 0.0, False, True)
    if name == "constant":
        vx = float(params.get("vx", 0.0))
        vy = float(params.get("vy", 0.0))

        def fn(t, p):
            p = np.asarray(p, dtype=np.float64)
            out = np.empty_like(p)
            out[..., 0] = vx
            out[..., 1] = vy
            return out

        return VelocityField(fn, math.hypot(vx, vy), 0.0, False, vx == 0.0 and vy == 0.0)
    if name == "rigid_rotation":
        omega = float(params.get("omega", 1.0))
        cx = float(params.get("cx", 0.5))
        cy = float(params.get("cy", 0.5))

        def fn(t, p):
            p = np.asarray(p, dtype=np.float64)
            out = np.empty_like(p)
            out[..., 0] = -omega * (p[..., 1] - cy)
            out[..., 1] = omega * (p[..., 0] - cx)
            return out

        sup = 0.0
        if rect is not None:
            x0, y0, x1, y1 = rect
            corners = [(x0, y0), (x0, y1), (x1, y0), (x1, y1)]
            sup = abs(omega) * max(math.hypot(x - cx, y - cy) for x, y in corners)
        return VelocityField(fn, sup, 0.0, False, omega == 0.0)
    raise ProblemSpecError(
        f"unknown velocity field {name!r}; known: ['zero', 'constant', 'rigid_rotation']"
    )


_INITIAL_PARAMS = {"zero": set(), "constant": {"value"},
                   "linear": {"ax", "ay", "c"}, "cospi": {"kx", "ky"}}


def make_initial(name: str, params: dict | None = None) -> Callable:
    """Named initial conditions u0(x, y), vectorized over coordinate arrays."""
    params = params or {}
    if name in _INITIAL_PARAMS:
        _check_params("initial condition", name, params, _INITIAL_PARAMS[name])
    if name == "zero":
        return lambda x, y: np.zeros_like(np.asarray(x, dtype=np.float64))
    if name == "constant":
        c = float(params.get("value", 1.0))
        return lambda x, y: np.full_like(np.asarray(x, dtype=np.float64), c)
    if name == "linear":
        ax = float(params.get("ax", 1.0))
        ay = float(params.get("ay", 0.0))
        c = float(params.get("c", 0.0))
        return lambda x, y: ax * np.asarray(x, dtype=np.float64) + ay * np.asarray(y) + c
    if name == "cospi":
        kx = float(params.get("kx", 1.0))
        ky = float(params.get("ky", 1.0))
        return lambda x, y: np.cos(kx * math.pi * np.asarray(x, dtype=np.float64)) * np.cos(
            ky * math.pi * np.asarray(y, dtype=np.float64)
        )
    raise ProblemSpecError(
        f"unknown initial condition {name!r}; known: ['zero', 'constant', 'linear', 'cospi']"
    )


# --- edge fluxes ------------------------------------------------------------

@dataclass(frozen=True)
class EdgeFluxField:
    """Edge/time-averaged normal velocities for one time slab.

    `values[e]` is the average of v . n_Ksigma over edge e and [t_start, t_stop],
    oriented from K to L.  Seen from L the flux is the exact negation.
    `boundary_values` holds outward averages on boundary edges when their
    positions are known (generated meshes); the scheme never uses them, they
    only feed the divergence diagnostic.
    """

    mesh: Mesh
    t_start: float
    t_stop: float
    values: np.ndarray
    boundary_values: np.ndarray | None = None

    def flux_from(self, cell: int, edge: int) -> float:
        k, l = self.mesh.edge_cells[edge]
        if cell == k:
            return float(self.values[edge])
        if cell == l:
            return -float(self.values[edge])
        raise ValueError(f"cell {cell} is not adjacent to interior edge {edge}")

    @property
    def positive_part(self) -> np.ndarray:
        return np.maximum(self.values, 0.0)

    @property
    def negative_part(self) -> np.ndarray:
        return np.maximum(-self.values, 0.0)


def _segment_gauss_points(endpoints: np.ndarray) -> np.ndarray:
    """(E, 2, 2) pairs of 2-point Gauss nodes on segments given by endpoints."""
    p0 = endpoints[:, 0, :]
    p1 = endpoints[:, 1, :]
    mid = (p0 + p1) / 2.0
    half = (p1 - p0) / 2.0
    return np.stack([mid - GAUSS2 * half, mid + GAUSS2 * half], axis=1)


def _average_normal_flux(velocity: Callable, endpoints: np.ndarray, normals: np.ndarray,
                         t_start: float, t_stop: float) -> np.ndarray:
    pts = _segment_gauss_points(endpoints)
    tm = 0.5 * (t_start + t_stop)
    th = 0.5 * (t_stop - t_start)
    acc = np.zeros(endpoints.shape[0])
    for tq in (tm - GAUSS2 * th, tm + GAUSS2 * th):
        vals = np.asarray(velocity(tq, pts))  # (E, 2, 2)
        acc = acc + 0.5 * ((vals * normals[:, None, :]).sum(axis=2)).mean(axis=1)
    return acc


def assemble_edge_fluxes(velocity: Callable, mesh: Mesh, t_start: float, t_stop: float) -> EdgeFluxField:
    """All interior-edge average fluxes for one slab with the 2x2 Gauss rule.

    Boundary-edge averages are included when boundary positions are known.
    """
    if t_stop <= t_start:
        raise ValueError("time slab must have positive length")
    geo = mesh.geometry
    if geo is None:
        raise MeshError("flux assembly needs edge geometry")
    if mesh.n_interior_edges:
        values = _average_normal_flux(velocity, geo.interior_endpoints,
                                      mesh.edge_normals, t_start, t_stop)
    else:
        values = np.zeros(0)
    boundary = None
    if geo.boundary_endpoints is not None and mesh.n_boundary_edges:
        boundary = _average_normal_flux(velocity, geo.boundary_endpoints,
                                        mesh.boundary_normals, t_start, t_stop)
    return EdgeFluxField(mesh, t_start, t_stop, values, boundary)


def edge_flux_average(spec_or_velocity, mesh: Mesh, edge: int, t_start: float, t_stop: float) -> float:
    """Average flux across one interior edge (see module docstring)."""
    velocity = getattr(spec_or_velocity, "velocity", spec_or_velocity)
    fluxes = assemble_edge_fluxes(velocity, mesh, t_start, t_stop)
    return float(fluxes.values[edge])


def upwind_trace(u, edge: int, flux: float) -> float:
    """Upstream cell value across an interior edge: u_K when flux >= 0, else u_L."""
    mesh = u.mesh
    k, l = mesh.edge_cells[edge]
    return float(u.values[k] if flux >= 0.0 else u.values[l])


def interior_divergence_defect(flux_field: EdgeFluxField) -> np.ndarray:
    """Per-cell sum over interior faces only, sum_{sigma in E_int cap E_K}
    m_sigma v_Ksigma.

    This is the quantity that decides whether the direct and split convection
    assemblies coincide; it equals the full divergence when v.n = 0 on the
    boundary.
    """
    mesh = flux_field.mesh
    defect = np.zeros(mesh.n_cells)
    w = mesh.edge_lengths * flux_field.values
    np.add.at(defect, mesh.edge_cells[:, 0], w)
    np.add.at(defect, mesh.edge_cells[:, 1], -w)
    return defect


def divergence_defect(flux_field: EdgeFluxField) -> np.ndarray:
    """Per-cell discrete divergence sum over all faces of K of m_sigma v_Ksigma.

    Zero for divergence-free fields integrated exactly; reported as a
    diagnostic, never corrected.  Boundary faces are included when their
    positions are known (meshes loaded from files lack them, and then the
    interior-face sum is reported instead).
    """
    defect = interior_divergence_defect(flux_field)
    if flux_field.boundary_values is not None:
        mesh = flux_field.mesh
        wb = mesh.boundary_lengths * flux_field.boundary_values
        np.add.at(defect, mesh.boundary_cells, wb)
    return defect
