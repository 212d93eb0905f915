"""Semi-implicit upwind two-point-flux time stepping.

One step solves, for every control volume K,

    (m_K/dt)(u_K^{n+1} - u_K^n)
      + sum_{sigma=K|L} m_sigma v_Ksigma^{n+1} u_sigma^{n+1}        (upwind)
      + sum_{sigma=K|L} (m_sigma/d_KL)(u_K^{n+1} - u_L^{n+1})      (diffusion)
    = (m_K/dt) g(u_K^n) dW^n + m_K beta(u_K^{n+1}),

with u_sigma the upstream value (u_K when v_Ksigma >= 0).  Diffusion,
convection, and beta are implicit; the noise coefficient is explicit.  The
linear part is a strictly diagonally dominant M-matrix, factored once per
velocity slab; beta is resolved by a fixed-point iteration whose contraction
factor is dt * L_beta (the configuration enforces dt * L_beta <= 1/8).

The convective term is assembled directly from the upwind fluxes, which
conserves mass exactly (interior fluxes cancel pairwise when summed over
cells).  An equivalent split form m_sigma (v)^- (u_K - u_L) is available
behind `convection_form="split"`; the two coincide whenever the per-cell
interior flux defect vanishes.

Batched runs advance M independent Brownian paths through one factorization;
every per-path result is bit-identical to a standalone single-path run (each
path's fixed-point iteration stops on its own criterion and multi-column
triangular solves are column-wise exact).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import CellField, h1_seminorm, l2_norm, l2_norm_sq_columns
from .mesh import Mesh
from .summation import pairwise_sum
from .velocity import EdgeFluxField, ProblemSpec, assemble_edge_fluxes

CONTRACTION_LIMIT = 0.125  # dt * L_beta must not exceed 1/8


class SolverError(RuntimeError):
    """Raised when a step cannot be solved to its contracted tolerances."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_N = T with dt = T/N."""

    n_steps: int
    horizon: float

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError(f"need at least one step, got {self.n_steps}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def node(self, n: int) -> float:
        return n * self.dt

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class SolverOptions:
    fp_tol: float = 1e-12
    max_fp_iters: int = 200
    residual_factor: float = 1e-11
    convection_form: str = "flux"  # "flux" (direct upwind) or "split" (v^- jumps)
    projection_order: int = 5
    monitor_growth: bool = True

    def __post_init__(self) -> None:
        if self.fp_tol <= 0 or self.residual_factor <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.max_fp_iters < 1:
            raise ValueError("max_fp_iters must be at least 1")
        if self.convection_form not in ("flux", "split"):
            raise ValueError(f"unknown convection form {self.convection_form!r}")


@dataclass
class StepReport:
    """Solve diagnostics for one accepted step."""

    iterations: int
    residual_l2: float
    linear_residual: float
    contraction_ok: bool


class Trajectory:
    """Discrete solution u^0..u^N with its right/left time embeddings.

    The right embedding is u^{n+1} on [t_n, t_{n+1}) and u^N at T; the left
    embedding is u^n on [t_n, t_{n+1}) and u^0 at 0.
    """

    def __init__(self, mesh: Mesh, grid: TimeGrid, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (grid.n_steps + 1, mesh.n_cells):
            raise ValueError(
                f"trajectory shape {values.shape} does not match "
                f"{grid.n_steps + 1} times x {mesh.n_cells} cells"
            )
        self.mesh = mesh
        self.grid = grid
        self.values = values
        self.values.setflags(write=False)

    def field(self, n: int) -> CellField:
        return CellField(self.mesh, self.values[n])

    def right_field(self, slab: int) -> CellField:
        """Value of the right embedding on [t_slab, t_slab+1)."""
        return self.field(slab + 1)

    def left_field(self, slab: int) -> CellField:
        return self.field(slab)

    def _slab(self, t: float) -> int:
        if not 0.0 <= t <= self.grid.horizon:
            raise ValueError(f"time {t} outside [0, {self.grid.horizon}]")
        return min(int(t / self.grid.dt), self.grid.n_steps - 1)

    def right_value(self, t: float) -> CellField:
        if t == self.grid.horizon:
            return self.field(self.grid.n_steps)
        return self.field(self._slab(t) + 1)

    def left_value(self, t: float) -> CellField:
        if t == 0.0:
            return self.field(0)
        return self.field(self._slab(t))


# --- initial data -----------------------------------------------------------

_GAUSS_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss(order: int) -> tuple[np.ndarray, np.ndarray]:
    if order not in _GAUSS_CACHE:
        x, w = np.polynomial.legendre.leggauss(order)
        _GAUSS_CACHE[order] = (x, w / 2.0)  # weights for an interval scaled to length 1
    return _GAUSS_CACHE[order]


def cell_averages(mesh: Mesh, fn: Callable, order: int = 5) -> np.ndarray:
    """Cell averages of fn(x, y): tensor Gauss on rectangular cells, else
    the centroid rule fn(x_K) (documented fallback for meshes loaded from
    files, whose cell shapes are not positioned).

    Integrates fn minus its center value, so constants are averaged exactly.
    """
    grid = mesh.rect_grid
    center_vals = np.asarray(fn(mesh.cell_centers[:, 0], mesh.cell_centers[:, 1]),
                             dtype=np.float64)
    if grid is None:
        return center_vals
    nodes, weights = _gauss(order)
    xg = mesh.cell_centers[:, 0][:, None] + (grid.hx / 2.0) * nodes[None, :]
    yg = mesh.cell_centers[:, 1][:, None] + (grid.hy / 2.0) * nodes[None, :]
    vals = np.asarray(fn(xg[:, :, None], yg[:, None, :]), dtype=np.float64)
    vals = vals - center_vals[:, None, None]
    w2 = weights[:, None] * weights[None, :]
    correction = pairwise_sum((vals * w2[None, :, :]).reshape(mesh.n_cells, -1), axis=1)
    return center_vals + correction


def project_initial(spec: ProblemSpec, mesh: Mesh, order: int = 5) -> CellField:
    """Discrete initial data u0_K = (1/m_K) int_K u0; norm-nonexpansive up to
    quadrature error."""
    return CellField(mesh, cell_averages(mesh, spec.u0, order))


# --- step operator ----------------------------------------------------------

def interior_flux_row_sums(mesh: Mesh, flux_values: np.ndarray) -> np.ndarray:
    """Per-cell sum of m_sigma v_Ksigma over interior edges (signed)."""
    out = np.zeros(mesh.n_cells)
    w = mesh.edge_lengths * flux_values
    np.add.at(out, mesh.edge_cells[:, 0], w)
    np.add.at(out, mesh.edge_cells[:, 1], -w)
    return out


def assemble_step_matrix(
    mesh: Mesh,
    dt: float,
    flux_values: np.ndarray | None,
    form: str = "flux",
) -> sp.csc_matrix:
    """System matrix of one implicit step, scaled by dt.

    Row K reads m_K u_K + dt * (convection + diffusion) = rhs.  Off-diagonal
    entries are nonpositive; with the direct flux form the row-sum margin is
    m_K + dt * interior defect, checked to stay positive.
    """
    n = mesh.n_cells
    ne = mesh.n_interior_edges
    k_idx = mesh.edge_cells[:, 0]
    l_idx = mesh.edge_cells[:, 1]
    t = dt * mesh.edge_transmissibility

    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [mesh.cell_areas]
    if ne:
        rows.extend([k_idx, k_idx, l_idx, l_idx])
        cols.extend([k_idx, l_idx, l_idx, k_idx])
        vals.extend([t, -t, t, -t])
        if flux_values is not None:
            f = dt * mesh.edge_lengths * flux_values  # dt * m_sigma * v_Ksigma
            if form == "flux":
                fpos = np.maximum(f, 0.0)
                fneg = np.maximum(-f, 0.0)
                # v >= 0: +f u_K in row K, -f u_K in row L
                rows.extend([k_idx, l_idx])
                cols.extend([k_idx, k_idx])
                vals.extend([fpos, -fpos])
                # v < 0: +f u_L in row K (f<0), -f u_L in row L
                rows.extend([k_idx, l_idx])
                cols.extend([l_idx, l_idx])
                vals.extend([-fneg, fneg])
            elif form == "split":
                fneg = np.maximum(-f, 0.0)  # seen from K
                fpos = np.maximum(f, 0.0)  # = (v_Lsigma)^- seen from L
                rows.extend([k_idx, k_idx, l_idx, l_idx])
                cols.extend([k_idx, l_idx, l_idx, k_idx])
                vals.extend([fneg, -fneg, fpos, -fpos])
            else:
                raise ValueError(f"unknown convection form {form!r}")

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsc()

    if flux_values is not None and form == "flux" and ne:
        margin = mesh.cell_areas + dt * interior_flux_row_sums(mesh, flux_values)
        if margin.min() <= 0.0:
            k = int(np.argmin(margin))
            raise SolverError(
                f"diagonal dominance lost at cell {k} (margin {margin.min():.3e}); "
                "time step too large for the convective flux defect"
            )
    return A


class StepOperator:
    """Advances batched states one slab at a time, caching factorizations.

    The matrix depends on the step only through the slab-averaged fluxes; for
    steady (or absent) velocity it is assembled and factored exactly once.
    """

    def __init__(self, spec: ProblemSpec, mesh: Mesh, grid: TimeGrid,
                 options: SolverOptions = SolverOptions(),
                 flux_provider: Callable[[int], EdgeFluxField | None] | None = None):
        contraction = grid.dt * spec.beta_lipschitz
        if contraction > CONTRACTION_LIMIT + 1e-15:
            raise SolverError(
                f"dt * L_beta = {contraction:.6g} exceeds {CONTRACTION_LIMIT}; "
                "refine the time grid or reduce the beta Lipschitz constant"
            )
        self.spec = spec
        self.mesh = mesh
        self.grid = grid
        self.options = options
        self._flux_provider = flux_provider
        self._steady = (flux_provider is None) and not spec.velocity_time_dependent
        self._cache: dict[int, tuple] = {}

    def _assemble_fluxes(self, n: int) -> EdgeFluxField | None:
        if self._flux_provider is not None:
            return self._flux_provider(n)
        dt = self.grid.dt
        return assemble_edge_fluxes(self.spec.velocity, self.mesh, n * dt, (n + 1) * dt)

    def _slab(self, n: int):
        key = 0 if self._steady else n
        cached = self._cache.get(key)
        if cached is None:
            ff = self._assemble_fluxes(n)
            values = None if ff is None else ff.values
            A = assemble_step_matrix(self.mesh, self.grid.dt, values,
                                     self.options.convection_form)
            if not self._steady:
                self._cache.clear()
            cached = (A.tocsr(), spla.splu(A), ff)
            self._cache[key] = cached
        return cached

    def fluxes(self, n: int) -> EdgeFluxField | None:
        return self._slab(n)[2]

    def advance(self, n: int, state: np.ndarray, dW: np.ndarray):
        """One step for all columns of `state` (n_cells, M); returns the new
        state and per-path diagnostics (iterations, residuals)."""
        opts = self.options
        spec = self.spec
        mesh = self.mesh
        dt = self.grid.dt
        m = mesh.cell_areas[:, None]
        A_csr, lu, _ = self._slab(n)

        U = np.asarray(state, dtype=np.float64)
        single = U.ndim == 1
        if single:
            U = U[:, None]
            dW = np.atleast_1d(np.asarray(dW, dtype=np.float64))
        n_paths = U.shape[1]

        if spec.g_is_zero:
            B = m * U
        else:
            gU = np.asarray(spec.g(U))
            if opts.monitor_growth:
                excess = gU * gU - spec.g_growth_const * (1.0 + U * U)
                worst = float(excess.max(initial=0.0))
                if worst > 1e-9 * (1.0 + spec.g_growth_const) * (1.0 + float(np.abs(U).max(initial=0.0)) ** 2):
                    raise SolverError(
                        f"growth bound violated at step {n}: g(u)^2 exceeds "
                        f"C(1+u^2) by {worst:.3e}; declared constant too small"
                    )
            B = m * (U + gU * dW[None, :])

        iterations = np.ones(n_paths, dtype=np.int64)
        if spec.beta_is_zero:
            X = lu.solve(B)
        else:
            X = U.copy()
            active = np.arange(n_paths)
            it = 0
            while active.size:
                it += 1
                if it > opts.max_fp_iters:
                    raise SolverError(
                        f"fixed point not converged after {opts.max_fp_iters} "
                        f"iterations at step {n} (paths {active[:5].tolist()}...); "
                        "time step too large for the beta Lipschitz constant"
                    )
                target = B[:, active] + dt * m * np.asarray(spec.beta(X[:, active]))
                Xn = lu.solve(target)
                delta = np.sqrt(l2_norm_sq_columns(mesh, Xn - X[:, active]))
                X[:, active] = Xn
                done = delta <= opts.fp_tol
                iterations[active[done]] = it
                active = active[~done]

        # Residual of the step equation, in solution units.
        target = B + dt * m * np.asarray(spec.beta(X))
        R = (A_csr @ X - target) / m
        res = np.sqrt(l2_norm_sq_columns(mesh, R))
        limit = opts.residual_factor * (1.0 + np.sqrt(l2_norm_sq_columns(mesh, X)))
        if np.any(res > limit):
            j = int(np.argmax(res - limit))
            raise SolverError(
                f"step {n} residual {res[j]:.3e} exceeds contract "
                f"{limit[j]:.3e} on path {j}"
            )
        lin = res / (1.0 + np.sqrt(l2_norm_sq_columns(mesh, B)))

        if single:
            report = StepReport(
                iterations=int(iterations[0]),
                residual_l2=float(res[0]),
                linear_residual=float(lin[0]),
                contraction_ok=dt * spec.beta_lipschitz <= CONTRACTION_LIMIT,
            )
            return X[:, 0], report
        report = StepReport(
            iterations=int(iterations.max()),
            residual_l2=float(res.max()),
            linear_residual=float(lin.max()),
            contraction_ok=dt * spec.beta_lipschitz <= CONTRACTION_LIMIT,
        )
        return X, report


def step(
    spec: ProblemSpec,
    mesh: Mesh,
    grid: TimeGrid,
    u_n: CellField,
    dW: float,
    n: int,
    options: SolverOptions = SolverOptions(),
) -> tuple[CellField, StepReport]:
    """Advance one state by one step with increment dW = W^{n+1} - W^n."""
    op = StepOperator(spec, mesh, grid, options)
    values, report = op.advance(n, u_n.values, np.array([dW]))
    return CellField(mesh, values), report


def run_paths(
    spec: ProblemSpec,
    mesh: Mesh,
    grid: TimeGrid,
    increments: np.ndarray,
    options: SolverOptions = SolverOptions(),
    observers: Sequence[Callable] = (),
    store: bool = False,
    initial: np.ndarray | None = None,
    path_offset: int = 0,
):
    """Run a batch of Brownian paths; returns (values, diagnostics).

    `increments` has shape (M, N).  With `store=True` the full (M, N+1,
    n_cells) array is returned, otherwise the final states (n_cells, M).
    Observers are called once per step as
    observer(n, u_n, u_np1, dW, flux_field, path_offset)
    with states shaped (n_cells, M); `path_offset` is the global index of
    column 0, so observers can write per-path results into shared arrays.
    Each path's trajectory is bit-identical to running it alone.
    """
    increments = np.asarray(increments, dtype=np.float64)
    if increments.ndim != 2 or increments.shape[1] != grid.n_steps:
        raise ValueError(
            f"increments shape {increments.shape} does not match {grid.n_steps} steps"
        )
    n_paths = increments.shape[0]
    op = StepOperator(spec, mesh, grid, options)

    if initial is None:
        u0 = project_initial(spec, mesh, options.projection_order).values
    else:
        u0 = np.asarray(initial, dtype=np.float64)
    U = np.repeat(u0[:, None], n_paths, axis=1)

    stored = None
    if store:
        stored = np.empty((n_paths, grid.n_steps + 1, mesh.n_cells))
        stored[:, 0, :] = U.T

    worst = StepReport(iterations=0, residual_l2=0.0, linear_residual=0.0,
                       contraction_ok=True)
    for n in range(grid.n_steps):
        try:
            U1, rep = op.advance(n, U, increments[:, n])
        except SolverError as exc:
            raise SolverError(f"step {n} (paths {path_offset}..): {exc}") from exc
        for obs in observers:
            obs(n, U, U1, increments[:, n], op.fluxes(n), path_offset)
        if store:
            stored[:, n + 1, :] = U1.T
        worst = StepReport(
            iterations=max(worst.iterations, rep.iterations),
            residual_l2=max(worst.residual_l2, rep.residual_l2),
            linear_residual=max(worst.linear_residual, rep.linear_residual),
            contraction_ok=worst.contraction_ok and rep.contraction_ok,
        )
        U = U1

    return (stored if store else U), worst


def run_path(
    spec: ProblemSpec,
    mesh: Mesh,
    grid: TimeGrid,
    path,
    options: SolverOptions = SolverOptions(),
) -> Trajectory:
    """Full trajectory along one Brownian path (u^0 from the initial projection)."""
    if path.resolution != grid.n_steps:
        raise ValueError(
            f"path resolution {path.resolution} does not match grid N = {grid.n_steps}"
        )
    values, _ = run_paths(spec, mesh, grid, path.increments[None, :], options,
                          store=True)
    return Trajectory(mesh, grid, values[0])


# --- exports ----------------------------------------------------------------

def format_float(x: float) -> str:
    """Shortest exact decimal for a float; keeps CSV output byte-stable."""
    return repr(float(x))


def write_trajectory_csv(traj: Trajectory, path: str) -> None:
    """Columns: n, t_n, cell_id, value."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("n,t_n,cell_id,value\n")
        for n in range(traj.grid.n_steps + 1):
            t = traj.grid.node(n)
            for k in range(traj.mesh.n_cells):
                fh.write(f"{n},{format_float(t)},{k},{format_float(traj.values[n, k])}\n")


def write_norms_csv(traj: Trajectory, path: str) -> None:
    """Columns: n, l2, h1_seminorm."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("n,l2,h1_seminorm\n")
        for n in range(traj.grid.n_steps + 1):
            f = traj.field(n)
            fh.write(f"{n},{format_float(l2_norm(f))},{format_float(h1_seminorm(f))}\n")
