import math

import numpy as np
import pytest

from conftest import build_spec
from fvsde.calculus import CellField
from fvsde.mesh import build_uniform_rect_mesh
from fvsde.velocity import (
    ProblemSpec,
    ProblemSpecError,
    assemble_edge_fluxes,
    divergence_defect,
    edge_flux_average,
    interior_divergence_defect,
    make_initial,
    make_scalar,
    make_velocity,
    upwind_trace,
    validate_problem_spec,
)


def test_flux_zero_field():
    m = build_uniform_rect_mesh(2, 1)
    v = make_velocity("zero")
    assert edge_flux_average(v.fn, m, 0, 0.0, 0.5) == 0.0
    # also accepts a full problem description
    spec = build_spec(v=("constant", {"vx": 2.0, "vy": 0.0}))
    assert edge_flux_average(spec, m, 0, 0.0, 0.5) == 2.0


def test_flux_constant_field_vertical_edge():
    m = build_uniform_rect_mesh(2, 1)
    v = make_velocity("constant", {"vx": 1.0, "vy": 0.0})
    assert edge_flux_average(v.fn, m, 0, 0.0, 0.5) == 1.0


def test_flux_rigid_rotation_symmetric_edge():
    # Average of -(y - 1/2) over y in [0, 1] vanishes.
    m = build_uniform_rect_mesh(2, 1)
    v = make_velocity("rigid_rotation", {"omega": 1.0, "cx": 0.5, "cy": 0.5})
    assert abs(edge_flux_average(v.fn, m, 0, 0.0, 0.25)) <= 1e-15


def test_flux_exact_for_affine_fields():
    m = build_uniform_rect_mesh(2, 1)

    def affine(t, p):
        p = np.asarray(p)
        out = np.empty_like(p)
        out[..., 0] = 2.0 * p[..., 0] - 3.0 * p[..., 1] + 0.5 * t
        out[..., 1] = p[..., 1] + 2.0 * t
        return out

    # Edge x = 1/2, y in [0, 1], n = (1, 0), slab [0.2, 0.7]:
    # average of 2*0.5 - 3y + 0.5 t equals 1 - 1.5 + 0.5*0.45.
    expected = 1.0 - 1.5 + 0.5 * 0.45
    got = edge_flux_average(affine, m, 0, 0.2, 0.7)
    assert abs(got - expected) <= 1e-14


def test_flux_antisymmetry_is_negation():
    m = build_uniform_rect_mesh(3, 2)
    v = make_velocity("rigid_rotation", {"omega": 2.0}, rect=(0, 0, 1, 1))
    ff = assemble_edge_fluxes(v.fn, m, 0.0, 0.125)
    for e in range(m.n_interior_edges):
        k, l = m.edge_cells[e]
        assert ff.flux_from(int(l), e) == -ff.flux_from(int(k), e)


def test_flux_sign_split():
    m = build_uniform_rect_mesh(4, 4)
    v = make_velocity("rigid_rotation", {"omega": 1.0}, rect=(0, 0, 1, 1))
    ff = assemble_edge_fluxes(v.fn, m, 0.0, 0.125)
    pos, neg = ff.positive_part, ff.negative_part
    assert np.array_equal(pos - neg, ff.values)
    assert np.all(pos >= 0.0)
    assert np.all(neg >= 0.0)
    assert np.all(pos * neg == 0.0)


def test_divergence_defect_zero_field():
    m = build_uniform_rect_mesh(4, 4)
    ff = assemble_edge_fluxes(make_velocity("zero").fn, m, 0.0, 1.0)
    assert np.all(divergence_defect(ff) == 0.0)


def test_divergence_defect_constant_field():
    m = build_uniform_rect_mesh(5, 3)
    ff = assemble_edge_fluxes(make_velocity("constant", {"vx": 1.0, "vy": -2.0}).fn, m, 0.0, 1.0)
    assert np.abs(divergence_defect(ff)).max() <= 1e-13


def test_divergence_defect_rotation():
    m = build_uniform_rect_mesh(4, 4)
    v = make_velocity("rigid_rotation", {"omega": 1.0}, rect=(0, 0, 1, 1))
    ff = assemble_edge_fluxes(v.fn, m, 0.0, 0.25)
    # Exact quadrature for a linear field: the full divergence vanishes.
    assert np.abs(divergence_defect(ff)).max() <= 1e-13
    # The interior-face sum carries the boundary imbalance of this field
    # (v.n != 0 on the square), so it is genuinely nonzero at boundary cells.
    assert np.abs(interior_divergence_defect(ff)).max() > 1e-3


def test_upwind_trace_branches():
    m = build_uniform_rect_mesh(2, 1)
    u = CellField(m, np.array([7.0, 9.0]))
    assert upwind_trace(u, 0, 2.0) == 7.0
    assert upwind_trace(u, 0, -1.0) == 9.0
    assert upwind_trace(u, 0, 0.0) == 7.0  # the >= 0 branch takes u_K


def test_registry_scalar_constants():
    lin = make_scalar("linear", {"lambda": 0.5})
    assert lin.lipschitz == 0.5
    assert lin.growth_const == 0.25
    sine = make_scalar("sine", {"amp": 2.0, "freq": 3.0})
    assert sine.lipschitz == 6.0
    ident = make_scalar("identity")
    assert ident.lipschitz == 1.0
    clip = make_scalar("clipped_linear", {"lambda": 2.0, "cap": 0.5})
    vals = clip.fn(np.array([-10.0, 0.2, 10.0]))
    assert np.array_equal(vals, [-1.0, 0.4, 1.0])
    with pytest.raises(ProblemSpecError):
        make_scalar("nope")
    with pytest.raises(ProblemSpecError):
        make_velocity("nope")
    with pytest.raises(ProblemSpecError):
        make_initial("nope")


def test_problem_spec_requires_beta_zero_at_origin():
    with pytest.raises(ProblemSpecError, match="beta"):
        build_spec(beta=("constant", {"value": 1.0}))


def test_validation_catches_understated_lipschitz():
    spec = build_spec(g=("linear", {"lambda": 1.0}), u0=("constant", {"value": 1.0}))
    lying = ProblemSpec(
        g=spec.g, g_lipschitz=0.1, g_growth_const=spec.g_growth_const,
        beta=spec.beta, beta_lipschitz=spec.beta_lipschitz,
        velocity=spec.velocity, u0=spec.u0, T=spec.T,
    )
    with pytest.raises(ProblemSpecError, match="Lipschitz"):
        validate_problem_spec(lying)


def test_validation_catches_understated_growth():
    spec = build_spec(g=("linear", {"lambda": 1.0}))
    lying = ProblemSpec(
        g=spec.g, g_lipschitz=1.0, g_growth_const=1e-4,
        beta=spec.beta, beta_lipschitz=0.0,
        velocity=spec.velocity, u0=spec.u0, T=spec.T,
    )
    with pytest.raises(ProblemSpecError, match="growth"):
        validate_problem_spec(lying)


def test_validation_report_is_deterministic():
    spec = build_spec(g=("sine", {"amp": 1.0, "freq": 2.0}), beta=("linear", {"lambda": 0.25}))
    assert validate_problem_spec(spec) == validate_problem_spec(spec)


def test_rigid_rotation_sup_over_rect():
    v = make_velocity("rigid_rotation", {"omega": 2.0, "cx": 0.5, "cy": 0.5}, rect=(0, 0, 1, 1))
    assert abs(v.sup - 2.0 * math.sqrt(0.5)) <= 1e-15
