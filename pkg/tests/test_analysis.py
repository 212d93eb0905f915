import math

import numpy as np
import pytest

from conftest import build_spec
from fvsde.analysis import (
    LadderConfig,
    convergence_study,
    exp_weighted_path_norm,
    heat_benchmark_error,
    heat_order_study,
    path_error,
    prolong,
    restrict_mean,
    rl_gap_identity,
)
from fvsde.calculus import CellField, l2_norm
from fvsde.mesh import build_uniform_rect_mesh
from fvsde.scheme import TimeGrid, Trajectory, run_path, run_paths
from fvsde.stochastic import generate_increments, generate_path


def test_prolong_constant():
    mc = build_uniform_rect_mesh(2, 2)
    mf = build_uniform_rect_mesh(4, 4)
    f = prolong(CellField(mc, np.full(4, 2.5)), mf)
    assert np.all(f.values == 2.5)


def test_prolong_two_to_four():
    mc = build_uniform_rect_mesh(2, 1)
    mf = build_uniform_rect_mesh(4, 2)
    coarse = CellField(mc, np.array([0.0, 1.0]))
    fine = prolong(coarse, mf)
    assert np.array_equal(fine.values, [0, 0, 1, 1, 0, 0, 1, 1])
    assert l2_norm(fine) == l2_norm(coarse)


def test_prolong_then_restrict_is_identity(rng):
    mc = build_uniform_rect_mesh(3, 2)
    mf = build_uniform_rect_mesh(9, 4)
    coarse = CellField(mc, rng.standard_normal(6))
    back = restrict_mean(prolong(coarse, mf), mc)
    assert np.abs(back.values - coarse.values).max() <= 1e-15


def test_prolong_rejects_non_nested():
    mc = build_uniform_rect_mesh(3, 3)
    mf = build_uniform_rect_mesh(4, 4)
    with pytest.raises(ValueError, match="refinement"):
        prolong(CellField(mc, np.zeros(9)), mf)
    other = build_uniform_rect_mesh(6, 6, (0.0, 0.0, 2.0, 2.0))
    with pytest.raises(ValueError, match="rectangles"):
        prolong(CellField(mc, np.zeros(9)), other)


def test_path_error_identical_is_zero():
    spec = build_spec(g=("linear", {"lambda": 0.5}), u0=("cospi", {}))
    m = build_uniform_rect_mesh(4, 4)
    grid = TimeGrid(8, 1.0)
    traj = run_path(spec, m, grid, generate_path(0, 8, 1.0))
    assert path_error(traj, traj) == 0.0


def test_path_error_triangle_inequality(rng):
    m = build_uniform_rect_mesh(3, 3)
    grid = TimeGrid(4, 1.0)
    trajs = [Trajectory(m, grid, rng.standard_normal((5, 9))) for _ in range(3)]
    a, b, c = trajs
    ab = path_error(a, b)
    bc = path_error(b, c)
    ac = path_error(a, c)
    assert ac <= ab + bc + 1e-12


def test_independent_paths_give_positive_error():
    spec = build_spec(g=("linear", {"lambda": 0.5}), u0=("constant", {"value": 1.0}))
    m = build_uniform_rect_mesh(4, 4)
    grid = TimeGrid(8, 1.0)
    t1 = run_path(spec, m, grid, generate_path(0, 8, 1.0, index=0))
    t2 = run_path(spec, m, grid, generate_path(0, 8, 1.0, index=1))
    assert path_error(t1, t2) > 1e-3


def test_heat_order_study_rates():
    spec = build_spec(u0=("cospi", {}), horizon=0.1)
    table = heat_order_study(
        spec, LadderConfig(nx=8, ny=8, levels=3, n_steps_base=4, time_policy="quadratic")
    )
    errors = table.errors()
    assert errors[0] > errors[1] > errors[2]
    assert min(table.rates()) >= 1.8


def test_heat_benchmark_error_vanishes_on_exact_averages():
    spec = build_spec(u0=("cospi", {}), horizon=0.1)
    m = build_uniform_rect_mesh(4, 4)
    grid = TimeGrid(4, 0.1)
    from fvsde.analysis import heat_exact_cell_averages

    vals = np.stack([heat_exact_cell_averages(m, grid.node(n)) for n in range(5)])
    traj = Trajectory(m, grid, vals)
    assert heat_benchmark_error(traj) == 0.0


def test_exp_weighted_norm_closed_form():
    spec = build_spec(u0=("constant", {"value": 1.0}))
    m = build_uniform_rect_mesh(4, 4)
    grid = TimeGrid(8, 1.0)
    traj = run_path(spec, m, grid, generate_path(0, 8, 1.0))
    c = 1.7
    value = exp_weighted_path_norm(traj, c)
    dt = grid.dt
    geometric = sum(dt * math.exp(-c * n * dt) for n in range(8))
    assert abs(value - geometric) <= 1e-13
    unweighted = exp_weighted_path_norm(traj, 0.0)
    assert abs(unweighted - 1.0) <= 1e-12


def test_exp_weighted_norm_monotone_in_weight():
    spec = build_spec(g=("linear", {"lambda": 0.5}), u0=("cospi", {}))
    m = build_uniform_rect_mesh(4, 4)
    grid = TimeGrid(8, 1.0)
    traj = run_path(spec, m, grid, generate_path(3, 8, 1.0))
    values = [exp_weighted_path_norm(traj, c) for c in (0.0, 0.5, 1.0, 2.0)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_rl_gap_is_an_identity():
    spec = build_spec(g=("linear", {"lambda": 0.5}), beta=("linear", {"lambda": 0.25}),
                      u0=("cospi", {}))
    m = build_uniform_rect_mesh(4, 4)
    grid = TimeGrid(8, 1.0)
    traj = run_path(spec, m, grid, generate_path(1, 8, 1.0))
    lhs, rhs = rl_gap_identity(traj)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))
    assert lhs > 0.0


def test_convergence_study_small():
    # Flat initial data keeps the r-l gap noise-dominated (O(dt)); structured
    # data would mix in the O(dt^2) deterministic transient.
    spec = build_spec(g=("linear", {"lambda": 0.5}), beta=("linear", {"lambda": 0.25}),
                      u0=("constant", {"value": 1.0}))
    ladder = LadderConfig(nx=4, ny=4, levels=3, n_steps_base=8)
    table, study = convergence_study(spec, ladder, 48, 3)
    assert len(study.inter_errors) == 2
    assert study.inter_errors[0] > study.inter_errors[1] > 0
    assert 0.7 <= study.gap_exponent <= 1.3
    assert len(table.rows) == 2
    assert table.rows[1].rate is not None


def test_finest_level_bit_identical_to_standalone():
    spec = build_spec(g=("linear", {"lambda": 0.5}), beta=("linear", {"lambda": 0.25}),
                      u0=("constant", {"value": 1.0}))
    ladder = LadderConfig(nx=2, ny=2, levels=3, n_steps_base=4)
    _, study = convergence_study(spec, ladder, 3, 17, keep_finest=True)
    mesh_f = study.meshes[-1]
    grid_f = study.grids[-1]
    inc = generate_increments(17, grid_f.n_steps, spec.T, 3)
    for i in range(3):
        vals, _ = run_paths(spec, mesh_f, grid_f, inc[i : i + 1], store=True)
        assert np.array_equal(vals[0], study.finest_values[i])


def test_ladder_config_validation():
    with pytest.raises(ValueError):
        LadderConfig(nx=4, ny=4, levels=1, n_steps_base=8)
    with pytest.raises(ValueError):
        LadderConfig(nx=4, ny=4, levels=3, n_steps_base=8, time_policy="cubic")
