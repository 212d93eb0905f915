import math

import numpy as np
import pytest

from fvsde.calculus import (
    CellField,
    discrete_gradient,
    duality_form,
    gradient_l2_norm,
    h1_seminorm,
    l1_norm,
    l2_norm,
)
from fvsde.mesh import build_uniform_rect_mesh


def random_meshes(rng, count):
    for _ in range(count):
        nx = int(rng.integers(2, 17))
        ny = int(rng.integers(2, 17))
        yield build_uniform_rect_mesh(nx, ny)


def test_l2_examples():
    m = build_uniform_rect_mesh(3, 3)
    assert l2_norm(CellField(m, np.ones(9))) == 1.0
    assert l2_norm(CellField(m, np.zeros(9))) == 0.0
    m21 = build_uniform_rect_mesh(2, 1)
    assert l2_norm(CellField(m21, np.array([1.0, 3.0]))) == math.sqrt(5.0)


def test_h1_examples():
    m21 = build_uniform_rect_mesh(2, 1)
    assert h1_seminorm(CellField(m21, np.array([4.0, 4.0]))) == 0.0
    assert h1_seminorm(CellField(m21, np.array([0.0, 1.0]))) == math.sqrt(2.0)
    single = build_uniform_rect_mesh(1, 1)
    assert h1_seminorm(CellField(single, np.array([3.25]))) == 0.0


def test_gradient_examples():
    m21 = build_uniform_rect_mesh(2, 1)
    zero = discrete_gradient(CellField(m21, np.array([2.0, 2.0])))
    assert np.all(zero.interior_vectors == 0.0)
    g = discrete_gradient(CellField(m21, np.array([0.0, 1.0])))
    assert np.allclose(g.interior_vectors, [[4.0, 0.0]], atol=0.0)
    assert np.all(g.boundary_vectors == 0.0)


def test_gradient_seminorm_identity_random_field(rng):
    m = build_uniform_rect_mesh(4, 4)
    f = CellField(m, rng.standard_normal(16))
    lhs = gradient_l2_norm(discrete_gradient(f)) ** 2
    rhs = 2.0 * h1_seminorm(f) ** 2
    assert abs(lhs - rhs) <= 1e-12 * max(rhs, 1.0)


def test_duality_trivial_cases(rng):
    m = build_uniform_rect_mesh(3, 3)
    w = CellField(m, rng.standard_normal(9))
    const = CellField(m, np.full(9, 2.5))
    lhs, rhs = duality_form(w, const)
    assert rhs == 0.0
    assert abs(lhs) <= 1e-13
    lhs, rhs = duality_form(w, w)
    sq = h1_seminorm(w) ** 2
    assert abs(lhs - sq) <= 1e-12 * (1 + sq)
    assert abs(rhs - sq) <= 1e-12 * (1 + sq)


def test_duality_against_loop_oracle(rng):
    # Independent evaluation of both groupings with plain Python loops.
    m = build_uniform_rect_mesh(3, 3)
    w = rng.standard_normal(9)
    wt = rng.standard_normal(9)

    lhs_oracle = 0.0
    for c in range(m.n_cells):
        for e in m.cell_edges[c]:
            k, l = m.edge_cells[e]
            other = l if c == k else k
            lhs_oracle += (m.edge_lengths[e] / m.edge_distances[e]) * (w[c] - w[other]) * wt[c]
    rhs_oracle = 0.0
    for e in range(m.n_interior_edges):
        k, l = m.edge_cells[e]
        rhs_oracle += (m.edge_lengths[e] / m.edge_distances[e]) * (w[k] - w[l]) * (wt[k] - wt[l])

    lhs, rhs = duality_form(CellField(m, w), CellField(m, wt))
    assert abs(lhs - lhs_oracle) <= 1e-12 * (1 + abs(lhs_oracle))
    assert abs(rhs - rhs_oracle) <= 1e-12 * (1 + abs(rhs_oracle))
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))


def test_duality_identity_random_corpus(rng):
    for m in random_meshes(rng, 100):
        w = CellField(m, rng.standard_normal(m.n_cells))
        wt = CellField(m, rng.standard_normal(m.n_cells))
        lhs, rhs = duality_form(w, wt)
        assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))


def test_gradient_identity_random_corpus(rng):
    for m in random_meshes(rng, 100):
        f = CellField(m, rng.standard_normal(m.n_cells))
        lhs = gradient_l2_norm(discrete_gradient(f)) ** 2
        rhs = 2.0 * h1_seminorm(f) ** 2
        assert abs(lhs - rhs) <= 1e-12 * max(rhs, 1.0)


def test_absolute_homogeneity(rng):
    m = build_uniform_rect_mesh(5, 7)
    vals = rng.standard_normal(m.n_cells)
    f = CellField(m, vals)
    for alpha in (-3.7, 0.5, 11.0):
        g = CellField(m, alpha * vals)
        assert abs(l2_norm(g) - abs(alpha) * l2_norm(f)) <= 1e-13 * l2_norm(g)
        assert abs(h1_seminorm(g) - abs(alpha) * h1_seminorm(f)) <= 1e-13 * max(h1_seminorm(g), 1e-30)


def test_cauchy_schwarz(rng):
    for m in random_meshes(rng, 20):
        w = CellField(m, rng.standard_normal(m.n_cells))
        wt = CellField(m, rng.standard_normal(m.n_cells))
        _, rhs = duality_form(w, wt)
        assert abs(rhs) <= h1_seminorm(w) * h1_seminorm(wt) + 1e-12


def test_l1_norm():
    m = build_uniform_rect_mesh(2, 1)
    assert l1_norm(CellField(m, np.array([-2.0, 4.0]))) == 3.0


def test_field_validation():
    m = build_uniform_rect_mesh(2, 2)
    with pytest.raises(ValueError):
        CellField(m, np.zeros(3))
    with pytest.raises(ValueError):
        CellField(m, np.array([1.0, np.nan, 0.0, 0.0]))
    other = build_uniform_rect_mesh(2, 2)
    with pytest.raises(ValueError):
        duality_form(CellField(m, np.zeros(4)), CellField(other, np.zeros(4)))
