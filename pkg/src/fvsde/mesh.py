"""Admissible finite-volume meshes of 2D polygonal domains.

An admissible mesh is a set of open convex polygonal control volumes whose
centers satisfy the two-point orthogonality condition: for neighboring cells
K, L the segment [x_K, x_L] is orthogonal to the shared edge.  That condition
is what makes the two-point flux (m_sigma/d_KL)(u_K - u_L) a consistent
diffusion flux, so it is validated here and nowhere relaxed.

The built-in generator covers uniform rectangular grids (cell midpoints
satisfy orthogonality exactly).  General admissible meshes enter through a
plain-text mesh file, see `load_mesh`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .summation import pairwise_sum

DEFAULT_ORTHOGONALITY_TOL = 1e-10


class MeshError(ValueError):
    """Raised when mesh data is malformed or violates admissibility."""


@dataclass(frozen=True)
class MeshGeometry:
    """Exact per-entity geometry, available for generated meshes.

    Loaded meshes carry a synthetic variant: interior edge segments are
    placed centered on the midpoint of [x_K, x_L] (exact for uniform
    rectangles) and boundary positions are unknown.
    """

    interior_endpoints: np.ndarray  # (E, 2, 2) segment endpoints
    interior_center_distance: np.ndarray  # (E, 2) d(x_K, sigma), d(x_L, sigma)
    boundary_endpoints: np.ndarray | None  # (B, 2, 2) or None if unknown
    boundary_center_distance: np.ndarray | None  # (B,) or None
    synthetic: bool = False


@dataclass(frozen=True)
class RectGrid:
    """Index structure of a uniform rectangular mesh (used by nested studies)."""

    nx: int
    ny: int
    rect: tuple[float, float, float, float]

    @property
    def hx(self) -> float:
        return (self.rect[2] - self.rect[0]) / self.nx

    @property
    def hy(self) -> float:
        return (self.rect[3] - self.rect[1]) / self.ny

    def cell_index(self, i: int, j: int) -> int:
        return j * self.nx + i

    def cell_bounds(self, k: int) -> tuple[float, float, float, float]:
        j, i = divmod(k, self.nx)
        x0, y0 = self.rect[0], self.rect[1]
        return (x0 + i * self.hx, y0 + j * self.hy,
                x0 + (i + 1) * self.hx, y0 + (j + 1) * self.hy)


class Mesh:
    """Immutable admissible finite-volume mesh.

    Cells and edges are identified by their 0-based array positions.  Interior
    edge e joins cells `edge_cells[e] = (K, L)` with unit normal oriented from
    K toward L; `edge_distances[e]` is |x_L - x_K| and `edge_diamond_areas[e]`
    is m_sigma * d_KL / 2.  All arrays are read-only; a mesh is safe to share
    across workers.
    """

    def __init__(
        self,
        cell_centers: np.ndarray,
        cell_areas: np.ndarray,
        edge_cells: np.ndarray,
        edge_lengths: np.ndarray,
        edge_normals: np.ndarray,
        boundary_cells: np.ndarray,
        boundary_lengths: np.ndarray,
        boundary_normals: np.ndarray,
        domain_area: float,
        h: float,
        cell_diameters: np.ndarray,
        geometry: MeshGeometry | None = None,
        rect_grid: RectGrid | None = None,
        orthogonality_tol: float = DEFAULT_ORTHOGONALITY_TOL,
    ) -> None:
        self.cell_centers = np.asarray(cell_centers, dtype=np.float64)
        self.cell_areas = np.asarray(cell_areas, dtype=np.float64)
        self.edge_cells = np.asarray(edge_cells, dtype=np.int64).reshape(-1, 2)
        self.edge_lengths = np.asarray(edge_lengths, dtype=np.float64)
        self.edge_normals = np.asarray(edge_normals, dtype=np.float64).reshape(-1, 2)
        self.boundary_cells = np.asarray(boundary_cells, dtype=np.int64)
        self.boundary_lengths = np.asarray(boundary_lengths, dtype=np.float64)
        self.boundary_normals = np.asarray(boundary_normals, dtype=np.float64).reshape(-1, 2)
        self.domain_area = float(domain_area)
        self.h = float(h)
        self.cell_diameters = np.asarray(cell_diameters, dtype=np.float64)
        self.geometry = geometry
        self.rect_grid = rect_grid

        diffs = self.cell_centers[self.edge_cells[:, 1]] - self.cell_centers[self.edge_cells[:, 0]]
        self.edge_distances = np.sqrt(diffs[:, 0] ** 2 + diffs[:, 1] ** 2)
        self.edge_diamond_areas = self.edge_lengths * self.edge_distances / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            self.edge_transmissibility = self.edge_lengths / self.edge_distances

        self.cell_edges: tuple[tuple[int, ...], ...] = tuple(
            tuple(lst) for lst in self._incidence(self.edge_cells, self.n_cells)
        )
        self.cell_boundary_edges: tuple[tuple[int, ...], ...] = tuple(
            tuple(lst) for lst in self._incidence(self.boundary_cells.reshape(-1, 1), self.n_cells)
        )

        for arr in (self.cell_centers, self.cell_areas, self.edge_lengths,
                    self.edge_normals, self.boundary_lengths, self.boundary_normals,
                    self.edge_distances, self.edge_diamond_areas, self.cell_diameters):
            arr.setflags(write=False)
        self.edge_cells.setflags(write=False)
        self.boundary_cells.setflags(write=False)

        self.validate(orthogonality_tol)

    @staticmethod
    def _incidence(edge_cells: np.ndarray, n_cells: int) -> list[list[int]]:
        table: list[list[int]] = [[] for _ in range(n_cells)]
        for e, cells in enumerate(edge_cells):
            for c in cells:
                table[int(c)].append(e)
        return table

    @property
    def n_cells(self) -> int:
        return self.cell_centers.shape[0]

    @property
    def n_interior_edges(self) -> int:
        return self.edge_cells.shape[0]

    @property
    def n_boundary_edges(self) -> int:
        return self.boundary_cells.shape[0]

    def validate(self, orthogonality_tol: float = DEFAULT_ORTHOGONALITY_TOL) -> None:
        """Check every admissibility invariant, raising MeshError with the offender."""
        if self.n_cells < 1:
            raise MeshError("mesh has no cells")
        if self.cell_centers.shape != (self.n_cells, 2):
            raise MeshError("cell centers must be (n, 2)")
        if np.any(~np.isfinite(self.cell_centers)) or np.any(~np.isfinite(self.cell_areas)):
            raise MeshError("non-finite cell data")
        bad = np.nonzero(self.cell_areas <= 0.0)[0]
        if bad.size:
            raise MeshError(f"cell {bad[0]} has non-positive area {self.cell_areas[bad[0]]!r}")
        bad = np.nonzero(self.edge_lengths <= 0.0)[0]
        if bad.size:
            raise MeshError(f"interior edge {bad[0]} has non-positive length")
        bad = np.nonzero(self.boundary_lengths <= 0.0)[0]
        if bad.size:
            raise MeshError(f"boundary edge {bad[0]} has non-positive length")
        bad = np.nonzero(self.edge_distances <= 0.0)[0]
        if bad.size:
            raise MeshError(f"interior edge {bad[0]} has coincident cell centers")

        if np.any(self.edge_cells < 0) or np.any(self.edge_cells >= self.n_cells):
            raise MeshError("interior edge references unknown cell")
        if np.any(self.boundary_cells < 0) or np.any(self.boundary_cells >= self.n_cells):
            raise MeshError("boundary edge references unknown cell")
        same = np.nonzero(self.edge_cells[:, 0] == self.edge_cells[:, 1])[0]
        if same.size:
            raise MeshError(f"interior edge {same[0]} joins a cell to itself")
        pairs = {tuple(sorted(map(int, kl))) for kl in self.edge_cells}
        if len(pairs) != self.n_interior_edges:
            raise MeshError("duplicate interior edge between a cell pair")

        for arr, what in ((self.edge_normals, "interior"), (self.boundary_normals, "boundary")):
            if arr.shape[0]:
                norms = np.sqrt(arr[:, 0] ** 2 + arr[:, 1] ** 2)
                bad = np.nonzero(np.abs(norms - 1.0) > 1e-12)[0]
                if bad.size:
                    raise MeshError(f"{what} edge {bad[0]} normal is not a unit vector")

        if self.n_interior_edges:
            diffs = self.cell_centers[self.edge_cells[:, 1]] - self.cell_centers[self.edge_cells[:, 0]]
            resid = np.abs(diffs - self.edge_distances[:, None] * self.edge_normals)
            worst = np.unravel_index(np.argmax(resid), resid.shape)
            if resid[worst] > orthogonality_tol:
                e = int(worst[0])
                raise MeshError(
                    f"orthogonality violated on interior edge {e}: "
                    f"|x_L - x_K - d*n| = {resid[worst]:.3e} exceeds {orthogonality_tol:.1e}"
                )
            dio = np.abs(self.edge_diamond_areas - self.edge_lengths * self.edge_distances / 2.0)
            bad = np.nonzero(dio > 1e-12 * self.edge_diamond_areas)[0]
            if bad.size:
                raise MeshError(f"diamond area inconsistent on interior edge {bad[0]}")

        total = float(pairwise_sum(self.cell_areas))
        if abs(total - self.domain_area) > 1e-12 * max(abs(self.domain_area), 1.0):
            raise MeshError(
                f"cell areas sum to {total!r}, domain area is {self.domain_area!r}"
            )

        self._check_closure()

    def _check_closure(self) -> None:
        # For a closed convex polygon, sum of length-weighted outward normals
        # vanishes; a necessary condition on the per-cell edge data.
        moment = np.zeros((self.n_cells, 2))
        perimeter = np.zeros(self.n_cells)
        k_idx, l_idx = self.edge_cells[:, 0], self.edge_cells[:, 1]
        w = self.edge_lengths[:, None] * self.edge_normals
        np.add.at(moment, k_idx, w)
        np.add.at(moment, l_idx, -w)
        np.add.at(perimeter, k_idx, self.edge_lengths)
        np.add.at(perimeter, l_idx, self.edge_lengths)
        wb = self.boundary_lengths[:, None] * self.boundary_normals
        np.add.at(moment, self.boundary_cells, wb)
        np.add.at(perimeter, self.boundary_cells, self.boundary_lengths)
        defect = np.abs(moment).max(axis=1)
        bad = np.nonzero(defect > 1e-9 * np.maximum(perimeter, 1e-300))[0]
        if bad.size:
            raise MeshError(
                f"cell {bad[0]} edge data does not close (defect {defect[bad[0]]:.3e}); "
                "lengths/normals are inconsistent"
            )

    def diamond_partition_total(self) -> float:
        """Total diamond area including exterior half-diamonds; equals |domain|.

        Requires exact geometry (generated meshes): the exterior half-diamond
        over a boundary edge is m_sigma * d(x_K, sigma) / 2.
        """
        geo = self.geometry
        if geo is None or geo.boundary_center_distance is None or geo.synthetic:
            raise MeshError("diamond partition check needs exact cell geometry")
        parts = np.concatenate([
            self.edge_diamond_areas,
            self.boundary_lengths * geo.boundary_center_distance / 2.0,
        ])
        return float(pairwise_sum(parts))


@dataclass(frozen=True)
class MeshRegularity:
    """Regularity number of a mesh: max of vertex valence and diam/center-edge-distance."""

    reg_value: float
    max_vertex_valence: int
    max_diam_over_dist: float


def build_uniform_rect_mesh(
    nx: int,
    ny: int,
    rect: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0),
) -> Mesh:
    """Uniform nx-by-ny rectangular mesh of an axis-aligned rectangle.

    Cell centers sit at cell midpoints, which satisfies the orthogonality
    condition exactly.  Cells are numbered row-major from the lower-left
    corner; vertical interior edges come first, then horizontal ones.
    """
    if not (isinstance(nx, int) and isinstance(ny, int)) or nx < 1 or ny < 1:
        raise MeshError(f"grid dimensions must be positive integers, got {nx}x{ny}")
    x0, y0, x1, y1 = map(float, rect)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {rect}")

    hx = (x1 - x0) / nx
    hy = (y1 - y0) / ny
    xs = x0 + hx * np.arange(nx + 1)  # grid lines
    ys = y0 + hy * np.arange(ny + 1)
    cx = x0 + hx * (np.arange(nx) + 0.5)
    cy = y0 + hy * (np.arange(ny) + 0.5)

    centers = np.empty((nx * ny, 2))
    for j in range(ny):
        for i in range(nx):
            centers[j * nx + i] = (cx[i], cy[j])
    areas = np.full(nx * ny, hx * hy)

    e_cells, e_len, e_norm, e_pts, e_dist2 = [], [], [], [], []
    for j in range(ny):
        for i in range(nx - 1):
            k, l = j * nx + i, j * nx + i + 1
            e_cells.append((k, l))
            e_len.append(hy)
            e_norm.append((1.0, 0.0))
            e_pts.append(((xs[i + 1], ys[j]), (xs[i + 1], ys[j + 1])))
            e_dist2.append((hx / 2.0, hx / 2.0))
    for j in range(ny - 1):
        for i in range(nx):
            k, l = j * nx + i, (j + 1) * nx + i
            e_cells.append((k, l))
            e_len.append(hx)
            e_norm.append((0.0, 1.0))
            e_pts.append(((xs[i], ys[j + 1]), (xs[i + 1], ys[j + 1])))
            e_dist2.append((hy / 2.0, hy / 2.0))

    b_cells, b_len, b_norm, b_pts, b_dist = [], [], [], [], []
    for i in range(nx):  # bottom, then top
        b_cells.append(i)
        b_len.append(hx)
        b_norm.append((0.0, -1.0))
        b_pts.append(((xs[i], ys[0]), (xs[i + 1], ys[0])))
        b_dist.append(hy / 2.0)
    for i in range(nx):
        b_cells.append((ny - 1) * nx + i)
        b_len.append(hx)
        b_norm.append((0.0, 1.0))
        b_pts.append(((xs[i], ys[ny]), (xs[i + 1], ys[ny])))
        b_dist.append(hy / 2.0)
    for j in range(ny):  # left, then right
        b_cells.append(j * nx)
        b_len.append(hy)
        b_norm.append((-1.0, 0.0))
        b_pts.append(((xs[0], ys[j]), (xs[0], ys[j + 1])))
        b_dist.append(hx / 2.0)
    for j in range(ny):
        b_cells.append(j * nx + nx - 1)
        b_len.append(hy)
        b_norm.append((1.0, 0.0))
        b_pts.append(((xs[nx], ys[j]), (xs[nx], ys[j + 1])))
        b_dist.append(hx / 2.0)

    diam = math.sqrt(hx * hx + hy * hy)
    geometry = MeshGeometry(
        interior_endpoints=np.array(e_pts, dtype=np.float64).reshape(-1, 2, 2),
        interior_center_distance=np.array(e_dist2, dtype=np.float64).reshape(-1, 2),
        boundary_endpoints=np.array(b_pts, dtype=np.float64).reshape(-1, 2, 2),
        boundary_center_distance=np.array(b_dist, dtype=np.float64),
        synthetic=False,
    )
    return Mesh(
        cell_centers=centers,
        cell_areas=areas,
        edge_cells=np.array(e_cells, dtype=np.int64).reshape(-1, 2),
        edge_lengths=np.array(e_len, dtype=np.float64),
        edge_normals=np.array(e_norm, dtype=np.float64).reshape(-1, 2),
        boundary_cells=np.array(b_cells, dtype=np.int64),
        boundary_lengths=np.array(b_len, dtype=np.float64),
        boundary_normals=np.array(b_norm, dtype=np.float64).reshape(-1, 2),
        domain_area=(x1 - x0) * (y1 - y0),
        h=diam,
        cell_diameters=np.full(nx * ny, diam),
        geometry=geometry,
        rect_grid=RectGrid(nx, ny, (x0, y0, x1, y1)),
    )


def _cell_shape_diameter(lengths: np.ndarray, normals: np.ndarray, cell: int) -> float:
    """Diameter of a convex cell from its (outward normal, length) edge data.

    A convex polygon is determined up to translation by its edge normals and
    lengths: sort edges by normal angle, walk counterclockwise (edge direction
    is the outward normal rotated by +90 degrees), and the chain closes.  The
    diameter is translation-invariant, so this is exact without knowing where
    the cell sits.
    """
    if lengths.size < 3:
        raise MeshError(f"cell {cell} has fewer than 3 edges")
    angles = np.arctan2(normals[:, 1], normals[:, 0])
    order = np.argsort(angles, kind="stable")
    t = np.column_stack([-normals[order, 1], normals[order, 0]])
    steps = lengths[order, None] * t
    verts = np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])
    closure = np.abs(verts[-1]).max()
    if closure > 1e-9 * lengths.sum():
        raise MeshError(f"cell {cell} edge data does not close (defect {closure:.3e})")
    verts = verts[:-1]
    best = 0.0
    for a in range(len(verts)):
        d = verts[a + 1 :] - verts[a]
        if d.size:
            best = max(best, float(np.max(d[:, 0] ** 2 + d[:, 1] ** 2)))
    return math.sqrt(best)


def load_mesh(path: str, orthogonality_tol: float = DEFAULT_ORTHOGONALITY_TOL) -> Mesh:
    """Load a mesh from the line-oriented `fvmesh 1` format.

    Records: `cell <id> <x> <y> <area>`, `iedge <id> <K> <L> <length> <nx> <ny>`
    (center distance derived from the centers), `bedge <id> <K> <length> <nx> <ny>`.
    `#` starts a comment.  Ids must be contiguous from 0 per record type.
    All admissibility invariants are checked; violations report the offending
    entity.  Cell diameters (hence h) are reconstructed exactly from the edge
    data; interior edge positions use the centered-at-midpoint convention.
    """
    cells: dict[int, tuple[float, float, float]] = {}
    iedges: dict[int, tuple[int, int, float, float, float]] = {}
    bedges: dict[int, tuple[int, float, float, float]] = {}

    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines:
        raise MeshError(f"{path}: empty mesh file")

    def fail(lineno: int, msg: str) -> MeshError:
        return MeshError(f"{path}:{lineno}: {msg}")

    header_seen = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if not header_seen:
            if tokens != ["fvmesh", "1"]:
                raise fail(lineno, f"expected header 'fvmesh 1', got {line!r}")
            header_seen = True
            continue
        kind = tokens[0]
        try:
            if kind == "cell":
                if len(tokens) != 5:
                    raise ValueError("cell needs: id x y area")
                cid = int(tokens[1])
                if cid in cells:
                    raise ValueError(f"duplicate cell id {cid}")
                cells[cid] = (float(tokens[2]), float(tokens[3]), float(tokens[4]))
            elif kind == "iedge":
                if len(tokens) != 7:
                    raise ValueError("iedge needs: id K L length nx ny")
                eid = int(tokens[1])
                if eid in iedges:
                    raise ValueError(f"duplicate iedge id {eid}")
                iedges[eid] = (int(tokens[2]), int(tokens[3]), float(tokens[4]),
                               float(tokens[5]), float(tokens[6]))
            elif kind == "bedge":
                if len(tokens) != 6:
                    raise ValueError("bedge needs: id K length nx ny")
                eid = int(tokens[1])
                if eid in bedges:
                    raise ValueError(f"duplicate bedge id {eid}")
                bedges[eid] = (int(tokens[2]), float(tokens[3]),
                               float(tokens[4]), float(tokens[5]))
            else:
                raise ValueError(f"unknown record {kind!r}")
        except ValueError as exc:
            raise fail(lineno, str(exc)) from None

    if not header_seen:
        raise MeshError(f"{path}: missing 'fvmesh 1' header")
    if not cells:
        raise MeshError(f"{path}: no cells")
    for name, table in (("cell", cells), ("iedge", iedges), ("bedge", bedges)):
        if table and sorted(table) != list(range(len(table))):
            raise MeshError(f"{path}: {name} ids must be contiguous from 0")

    n = len(cells)
    centers = np.array([[cells[i][0], cells[i][1]] for i in range(n)])
    areas = np.array([cells[i][2] for i in range(n)])

    ne = len(iedges)
    e_cells = np.array([[iedges[e][0], iedges[e][1]] for e in range(ne)], dtype=np.int64).reshape(-1, 2)
    e_len = np.array([iedges[e][2] for e in range(ne)])
    e_norm = np.array([[iedges[e][3], iedges[e][4]] for e in range(ne)]).reshape(-1, 2)

    nb = len(bedges)
    b_cells = np.array([bedges[e][0] for e in range(nb)], dtype=np.int64)
    b_len = np.array([bedges[e][1] for e in range(nb)])
    b_norm = np.array([[bedges[e][2], bedges[e][3]] for e in range(nb)]).reshape(-1, 2)

    # Reconstruct per-cell diameters from edge data (outward normals per cell).
    per_cell_len: list[list[float]] = [[] for _ in range(n)]
    per_cell_norm: list[list[tuple[float, float]]] = [[] for _ in range(n)]
    for e in range(ne):
        k, l = int(e_cells[e, 0]), int(e_cells[e, 1])
        if not (0 <= k < n and 0 <= l < n):
            raise MeshError(f"{path}: iedge {e} references unknown cell")
        per_cell_len[k].append(e_len[e])
        per_cell_norm[k].append((e_norm[e, 0], e_norm[e, 1]))
        per_cell_len[l].append(e_len[e])
        per_cell_norm[l].append((-e_norm[e, 0], -e_norm[e, 1]))
    for e in range(nb):
        k = int(b_cells[e])
        if not 0 <= k < n:
            raise MeshError(f"{path}: bedge {e} references unknown cell")
        per_cell_len[k].append(b_len[e])
        per_cell_norm[k].append((b_norm[e, 0], b_norm[e, 1]))

    diams = np.array([
        _cell_shape_diameter(np.asarray(per_cell_len[k]), np.asarray(per_cell_norm[k]).reshape(-1, 2), k)
        for k in range(n)
    ])

    geometry = None
    if ne:
        mids = (centers[e_cells[:, 0]] + centers[e_cells[:, 1]]) / 2.0
        tang = np.column_stack([-e_norm[:, 1], e_norm[:, 0]])
        offs = (e_len / 2.0)[:, None] * tang
        endpoints = np.stack([mids - offs, mids + offs], axis=1)
        dvec = centers[e_cells[:, 1]] - centers[e_cells[:, 0]]
        half = np.sqrt(dvec[:, 0] ** 2 + dvec[:, 1] ** 2) / 2.0
        geometry = MeshGeometry(
            interior_endpoints=endpoints,
            interior_center_distance=np.column_stack([half, half]),
            boundary_endpoints=None,
            boundary_center_distance=None,
            synthetic=True,
        )

    return Mesh(
        cell_centers=centers,
        cell_areas=areas,
        edge_cells=e_cells,
        edge_lengths=e_len,
        edge_normals=e_norm,
        boundary_cells=b_cells,
        boundary_lengths=b_len,
        boundary_normals=b_norm,
        domain_area=float(pairwise_sum(areas)),
        h=float(diams.max()),
        cell_diameters=diams,
        geometry=geometry,
        rect_grid=None,
        orthogonality_tol=orthogonality_tol,
    )


def write_mesh(mesh: Mesh, path: str) -> None:
    """Write a mesh in the `fvmesh 1` format with full-precision floats."""
    out = ["fvmesh 1\n"]
    for k in range(mesh.n_cells):
        x, y = (float(v) for v in mesh.cell_centers[k])
        out.append(f"cell {k} {x!r} {y!r} {float(mesh.cell_areas[k])!r}\n")
    for e in range(mesh.n_interior_edges):
        k, l = (int(c) for c in mesh.edge_cells[e])
        nx_, ny_ = (float(v) for v in mesh.edge_normals[e])
        out.append(f"iedge {e} {k} {l} {float(mesh.edge_lengths[e])!r} {nx_!r} {ny_!r}\n")
    for e in range(mesh.n_boundary_edges):
        nx_, ny_ = (float(v) for v in mesh.boundary_normals[e])
        out.append(
            f"bedge {e} {int(mesh.boundary_cells[e])} "
            f"{float(mesh.boundary_lengths[e])!r} {nx_!r} {ny_!r}\n"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(out)


def mesh_regularity(mesh: Mesh) -> MeshRegularity:
    """Regularity number: max(vertex valence, max_K,sigma diam(K)/d(x_K, sigma)).

    The distance term runs over exterior edges as well, so single-cell meshes
    get a finite value.  For loaded meshes the center-edge distances follow
    the midpoint convention (d_KL/2 per side, interior edges only) and vertex
    valence counts interior edges only.
    """
    geo = mesh.geometry
    if geo is None:
        raise MeshError("mesh regularity needs edge geometry")

    ratios = [0.0]
    k_idx, l_idx = mesh.edge_cells[:, 0], mesh.edge_cells[:, 1]
    if mesh.n_interior_edges:
        dk = geo.interior_center_distance[:, 0]
        dl = geo.interior_center_distance[:, 1]
        if np.any(dk <= 0) or np.any(dl <= 0):
            raise MeshError("center lies on an edge; regularity undefined")
        ratios.append(float(np.max(mesh.cell_diameters[k_idx] / dk)))
        ratios.append(float(np.max(mesh.cell_diameters[l_idx] / dl)))
    if geo.boundary_center_distance is not None and mesh.n_boundary_edges:
        db = geo.boundary_center_distance
        if np.any(db <= 0):
            raise MeshError("center lies on a boundary edge; regularity undefined")
        ratios.append(float(np.max(mesh.cell_diameters[mesh.boundary_cells] / db)))
    max_ratio = max(ratios)
    if mesh.n_interior_edges == 0 and geo.boundary_center_distance is None:
        raise MeshError("mesh regularity needs cell geometry (loaded single-cell mesh)")

    endpoint_sets = [geo.interior_endpoints.reshape(-1, 2)]
    if geo.boundary_endpoints is not None:
        endpoint_sets.append(geo.boundary_endpoints.reshape(-1, 2))
    points = np.vstack(endpoint_sets) if endpoint_sets else np.zeros((0, 2))
    valence = 0
    if points.shape[0]:
        tol = max(1e-12 * mesh.h, 1e-300)
        keys = np.round(points / tol).astype(np.int64)
        _, counts = np.unique(keys, axis=0, return_counts=True)
        valence = int(counts.max())

    return MeshRegularity(
        reg_value=max(float(valence), max_ratio),
        max_vertex_valence=valence,
        max_diam_over_dist=max_ratio,
    )
