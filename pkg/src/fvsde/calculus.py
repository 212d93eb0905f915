"""Discrete norms, seminorms, gradient, and the duality bilinear form.

Cell fields are piecewise constants, one value per control volume.  The
discrete L2 norm weights by cell areas; the H1 seminorm by the two-point
transmissibilities m_sigma/d_KL of interior edges.  The discrete gradient
lives on edges (constant per diamond) and its L2 norm equals sqrt(2) times
the H1 seminorm, the 2 being the space dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh
from .summation import pairwise_sum


@dataclass(frozen=True)
class CellField:
    """One finite value per control volume of `mesh`."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if vals.shape != (self.mesh.n_cells,):
            raise ValueError(
                f"field has {vals.shape} values for {self.mesh.n_cells} cells"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")

    def __add__(self, other: "CellField") -> "CellField":
        _same_mesh(self, other)
        return CellField(self.mesh, self.values + other.values)

    def __sub__(self, other: "CellField") -> "CellField":
        _same_mesh(self, other)
        return CellField(self.mesh, self.values - other.values)

    def scaled(self, alpha: float) -> "CellField":
        return CellField(self.mesh, alpha * self.values)


@dataclass(frozen=True)
class EdgeVectorField:
    """One 2-vector per interior edge; exterior edges carry the zero vector."""

    mesh: Mesh
    interior_vectors: np.ndarray

    def __post_init__(self) -> None:
        vecs = np.asarray(self.interior_vectors, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "interior_vectors", vecs)
        if vecs.shape[0] != self.mesh.n_interior_edges:
            raise ValueError("edge vector count does not match interior edge count")

    @property
    def boundary_vectors(self) -> np.ndarray:
        return np.zeros((self.mesh.n_boundary_edges, 2))


def _same_mesh(a, b) -> None:
    if a.mesh is not b.mesh:
        raise ValueError("fields live on different meshes")


def l2_norm_sq_columns(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Squared discrete L2 norm of (n_cells,) or (n_cells, M) value columns."""
    v = np.asarray(values, dtype=np.float64)
    w = mesh.cell_areas if v.ndim == 1 else mesh.cell_areas[:, None]
    return pairwise_sum(w * v * v, axis=0)


def h1_seminorm_sq_columns(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Squared discrete H1 seminorm of value columns (0 with no interior edges)."""
    v = np.asarray(values, dtype=np.float64)
    if mesh.n_interior_edges == 0:
        return np.zeros(v.shape[1:], dtype=np.float64)
    jump = v[mesh.edge_cells[:, 0]] - v[mesh.edge_cells[:, 1]]
    t = mesh.edge_transmissibility if v.ndim == 1 else mesh.edge_transmissibility[:, None]
    return pairwise_sum(t * jump * jump, axis=0)


def l2_norm(f: CellField) -> float:
    """Discrete L2 norm (sum_K m_K w_K^2)^(1/2)."""
    return float(np.sqrt(l2_norm_sq_columns(f.mesh, f.values)))


def l1_norm(f: CellField) -> float:
    """Discrete L1 norm sum_K m_K |w_K|."""
    return float(pairwise_sum(f.mesh.cell_areas * np.abs(f.values)))


def mass(f: CellField) -> float:
    """Integral sum_K m_K w_K."""
    return float(pairwise_sum(f.mesh.cell_areas * f.values))


def h1_seminorm(f: CellField) -> float:
    """Discrete H1 seminorm (sum over interior edges of (m/d)(w_K - w_L)^2)^(1/2)."""
    return float(np.sqrt(h1_seminorm_sq_columns(f.mesh, f.values)))


def discrete_gradient(f: CellField) -> EdgeVectorField:
    """Edge gradient 2 (w_L - w_K)/d_KL * n_Ksigma on interior edges, else zero."""
    mesh = f.mesh
    if mesh.n_interior_edges == 0:
        return EdgeVectorField(mesh, np.zeros((0, 2)))
    jump = f.values[mesh.edge_cells[:, 1]] - f.values[mesh.edge_cells[:, 0]]
    coef = 2.0 * jump / mesh.edge_distances
    return EdgeVectorField(mesh, coef[:, None] * mesh.edge_normals)


def gradient_l2_norm(g: EdgeVectorField) -> float:
    """L2 norm of the edge gradient over diamonds: (sum m_D |v_sigma|^2)^(1/2)."""
    v = g.interior_vectors
    if v.shape[0] == 0:
        return 0.0
    sq = g.mesh.edge_diamond_areas * (v[:, 0] ** 2 + v[:, 1] ** 2)
    return float(np.sqrt(pairwise_sum(sq)))


def duality_form(w: CellField, wt: CellField) -> tuple[float, float]:
    """Both sides of the discrete partial-integration rule.

    lhs groups by cell: sum_K sum_{sigma=K|L in E_K} (m/d)(w_K - w_L) wt_K;
    rhs groups by edge: sum_sigma (m/d)(w_K - w_L)(wt_K - wt_L).
    The two are equal identically; computing them along different groupings
    keeps the check meaningful at floating-point level.
    """
    _same_mesh(w, wt)
    mesh = w.mesh
    if mesh.n_interior_edges == 0:
        return 0.0, 0.0
    k_idx = mesh.edge_cells[:, 0]
    l_idx = mesh.edge_cells[:, 1]
    t = mesh.edge_transmissibility
    jump = w.values[k_idx] - w.values[l_idx]

    cell_totals = np.empty(mesh.n_cells)
    for c in range(mesh.n_cells):
        acc = 0.0
        for e in mesh.cell_edges[c]:
            sign = 1.0 if k_idx[e] == c else -1.0
            acc += t[e] * sign * jump[e] * wt.values[c]
        cell_totals[c] = acc
    lhs = float(pairwise_sum(cell_totals))

    rhs = float(pairwise_sum(t * jump * (wt.values[k_idx] - wt.values[l_idx])))
    return lhs, rhs
