"""Triangulations of the computational domains and their refinement.

Supported domains: a square centered at the origin, an L-shaped region, the
same square cut by an interior slit, and the unit disk approximated by an
inscribed polygon.  Meshes are plain triangle meshes with a global edge
table; the slit is realized by duplicating vertices along the cut (the tip
stays shared) so no cell connectivity crosses it.

Cells are stored counterclockwise with the refinement edge of each cell
opposite its first vertex; `refine_bisect` is newest-vertex bisection with
completion, `refine_uniform` is red refinement into four similar children.
New boundary vertices of disk meshes are projected onto the unit circle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

import numpy as np

HALF_SIDE = math.sqrt(2.0) / 2.0


class MeshError(Exception):
    """Raised for invalid meshes or impossible mesh requests."""


class DomainKind(str, Enum):
    SQUARE = "square"
    LSHAPE = "lshape"
    SLIT = "slit"
    DISK = "disk"


@dataclass(frozen=True)
class DomainSpec:
    """Which computational domain to mesh."""

    kind: DomainKind

    @property
    def perimeter(self) -> float:
        """Boundary length; both sides of the slit count, disk is the limit circle."""
        if self.kind == DomainKind.SQUARE:
            return 4.0 * 2.0 * HALF_SIDE
        if self.kind == DomainKind.LSHAPE:
            return 8.0
        if self.kind == DomainKind.SLIT:
            return 4.0 * 2.0 * HALF_SIDE + 2.0 * HALF_SIDE
        return 2.0 * math.pi

    @property
    def diameter(self) -> float:
        if self.kind == DomainKind.LSHAPE:
            return 2.0 * math.sqrt(2.0)
        return 2.0


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh with a canonical edge table.

    vertices : (V, 2) float array
    cells : (C, 3) int array, counterclockwise; the refinement edge of a
        cell is the edge opposite its local vertex 0.
    edges : (E, 2) int array, each row sorted; ordering is the
        lexicographic order of the rows, so it is reproducible from
        (vertices, cells) alone.
    cell_edges : (C, 3) int array; entry i is the edge opposite vertex i.
    edge_cells : (E, 2) int array of incident cells, -1 when absent;
        boundary edges have exactly one incident cell, in slot 0.
    boundary_edges : (E,) bool mask.
    on_circle : (V,) bool mask, vertices lying on the unit circle (disk
        meshes only; all False for polygons).
    kind : the domain this mesh discretizes, if known.
    """

    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    cell_edges: np.ndarray
    edge_cells: np.ndarray
    boundary_edges: np.ndarray
    on_circle: np.ndarray
    kind: Optional[DomainKind] = None

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def refinement_edges(self) -> np.ndarray:
        """Global edge index bisected first in each cell."""
        return self.cell_edges[:, 0]

    @property
    def boundary_edge_ids(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_edges)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )

    def cell_diameters(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d = p[:, [1, 2, 0], :] - p[:, [2, 0, 1], :]
        return np.sqrt((d**2).sum(axis=2)).max(axis=1)

    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])


@dataclass(frozen=True)
class EdgeGeometry:
    """Per-edge midpoints, lengths, unit normals and tangents.

    For an interior edge the normal points from the first incident cell
    into the second; for a boundary edge it is the outward normal of the
    domain.  The tangent is the normal rotated by +90 degrees.  Estimator
    quantities built from these are invariant under flipping the interior
    orientation.
    """

    midpoint: np.ndarray
    length: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def mesh_from_arrays(
    vertices: np.ndarray,
    cells: np.ndarray,
    on_circle: Optional[np.ndarray] = None,
    kind: Optional[DomainKind] = None,
) -> Mesh:
    """Build a mesh from raw arrays, keeping the caller's cell ordering.

    Local vertex 0 of each cell stays put, so the caller controls the
    refinement edges; cells must be counterclockwise.
    """
    return _assemble_mesh(vertices, cells, on_circle, kind)


def _assemble_mesh(
    vertices: np.ndarray,
    cells: np.ndarray,
    on_circle: Optional[np.ndarray] = None,
    kind: Optional[DomainKind] = None,
) -> Mesh:
    """Validate (vertices, cells) and derive the canonical edge tables."""
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must be an (V, 2) array")
    if cells.ndim != 2 or cells.shape[1] != 3:
        raise MeshError("cells must be a (C, 3) array")
    if cells.min(initial=0) < 0 or cells.max(initial=-1) >= len(vertices):
        raise MeshError("cell vertex index out of range")

    p = vertices[cells]
    areas = 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )
    bad = np.flatnonzero(areas <= 0.0)
    if bad.size:
        raise MeshError(
            f"cell {bad[0]} is degenerate or inverted (signed area {areas[bad[0]]:.3e})"
        )

    # Edge i of a cell is opposite local vertex i.
    raw = np.stack(
        [cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]], axis=1
    ).reshape(-1, 2)
    key = np.sort(raw, axis=1)
    edges, inverse = np.unique(key, axis=0, return_inverse=True)
    cell_edges = inverse.reshape(-1, 3).astype(np.int64)

    counts = np.bincount(inverse, minlength=len(edges))
    if counts.max(initial=0) > 2:
        raise MeshError("non-manifold edge: more than two incident cells")

    order = np.argsort(inverse, kind="stable")
    eid = inverse[order]
    owner = order // 3
    first = np.empty(eid.shape, dtype=bool)
    first[:1] = True
    first[1:] = eid[1:] != eid[:-1]
    edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
    edge_cells[eid[first], 0] = owner[first]
    edge_cells[eid[~first], 1] = owner[~first]
    boundary = edge_cells[:, 1] < 0

    if on_circle is None:
        on_circle = np.zeros(len(vertices), dtype=bool)
    on_circle = np.asarray(on_circle, dtype=bool)

    return Mesh(
        vertices=_freeze(vertices),
        cells=_freeze(cells),
        edges=_freeze(edges.astype(np.int64)),
        cell_edges=_freeze(cell_edges),
        edge_cells=_freeze(edge_cells),
        boundary_edges=_freeze(boundary),
        on_circle=_freeze(on_circle),
        kind=kind,
    )


def _rotate_longest_edge_first(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Cyclically permute each cell so its longest edge is opposite vertex 0.

    Ties go to the lowest local index, which keeps the result deterministic.
    """
    p = vertices[cells]
    d = p[:, [1, 2, 0], :] - p[:, [2, 0, 1], :]
    lsq = (d**2).sum(axis=2)
    k = lsq.argmax(axis=1)
    idx = (k[:, None] + np.arange(3)[None, :]) % 3
    return np.take_along_axis(cells, idx, axis=1)


def _grid_cells(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Index grid for an n x n block of squares, each split along the SW-NE diagonal."""
    vid = np.arange((n + 1) * (n + 1)).reshape(n + 1, n + 1)
    c00 = vid[:-1, :-1].ravel()
    c10 = vid[:-1, 1:].ravel()
    c01 = vid[1:, :-1].ravel()
    c11 = vid[1:, 1:].ravel()
    lower = np.column_stack([c00, c10, c11])
    upper = np.column_stack([c00, c11, c01])
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper
    return vid, cells


def _square_mesh(n: int, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    xs = np.linspace(lo, hi, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    _, cells = _grid_cells(n)
    return vertices, cells


def _lshape_mesh(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Structured mesh of (-1,1)^2 minus the closed quadrant x>0, y<0; n cells per unit."""
    m = 2 * n
    xs = np.linspace(-1.0, 1.0, m + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    _, cells = _grid_cells(m)
    centroids = vertices[cells].mean(axis=1)
    keep = (centroids[:, 0] < 0.0) | (centroids[:, 1] > 0.0)
    cells = cells[keep]
    used = np.unique(cells)
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return vertices[used], remap[cells]


def _slit_mesh(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Square mesh cut along y=0, 0<=x<=HALF_SIDE, by duplicating slit vertices.

    Cells below the slit are rewired to the duplicates; the tip at the
    origin stays shared, so the cut domain remains simply connected.
    """
    if n % 2 != 0:
        raise MeshError("slit mesh needs an even subdivision count")
    vertices, cells = _square_mesh(n, -HALF_SIDE, HALF_SIDE)
    tol = 1e-12
    on_slit = np.flatnonzero(
        (np.abs(vertices[:, 1]) < tol) & (vertices[:, 0] > tol)
    )
    dup = np.arange(len(vertices), len(vertices) + len(on_slit))
    vertices = np.vstack([vertices, vertices[on_slit]])
    remap = np.arange(len(vertices))
    remap[on_slit] = dup
    centroids = vertices[cells].mean(axis=1)
    below = centroids[:, 1] < 0.0
    cells = cells.copy()
    cells[below] = remap[cells[below]]
    return vertices, cells


def _disk_mesh(rings: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concentric-ring triangulation of the unit disk; ring r holds 6r vertices."""
    verts = [np.zeros((1, 2))]
    start = [0]
    for r in range(1, rings + 1):
        theta = 2.0 * math.pi * np.arange(6 * r) / (6 * r)
        rad = r / rings
        start.append(start[-1] + (1 if r == 1 else 6 * (r - 1)))
        verts.append(rad * np.column_stack([np.cos(theta), np.sin(theta)]))
    vertices = np.vstack(verts)

    cells = []
    for r in range(1, rings + 1):
        outer0, n_out = start[r], 6 * r
        inner0, n_in = start[r - 1], max(1, 6 * (r - 1))
        for s in range(6):
            for t in range(r):
                o = outer0 + (s * r + t) % n_out
                o1 = outer0 + (s * r + t + 1) % n_out
                i = inner0 + (s * (r - 1) + t) % n_in
                cells.append((o, o1, i))
                if t < r - 1:
                    i1 = inner0 + (s * (r - 1) + t + 1) % n_in
                    cells.append((i, o1, i1))
    cells = np.asarray(cells, dtype=np.int64)

    # Fix orientation: the loop above can emit either handedness near the hub.
    p = vertices[cells]
    areas = 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )
    flip = areas < 0.0
    cells[flip] = cells[flip][:, [0, 2, 1]]

    on_circle = np.zeros(len(vertices), dtype=bool)
    on_circle[start[rings] :] = True
    return vertices, cells, on_circle


def build_domain(spec: DomainSpec | DomainKind | str, target_h: float) -> Mesh:
    """Triangulate a domain with maximum cell diameter at most 2 * target_h.

    The subdivision count is the smallest one of the structured family
    meeting the diameter bound; for the slit it is rounded up to an even
    value so the cut lies along mesh lines.
    """
    if not isinstance(spec, DomainSpec):
        spec = DomainSpec(DomainKind(spec))
    if not (target_h > 0.0):
        raise MeshError("target_h must be positive")
    if target_h > spec.diameter:
        raise MeshError(
            f"target_h={target_h} exceeds the domain diameter; nothing to resolve"
        )

    on_circle = None
    if spec.kind in (DomainKind.SQUARE, DomainKind.SLIT):
        n = max(1, math.ceil(1.0 / target_h - 1e-12))
        if spec.kind == DomainKind.SLIT:
            n = max(2, n + (n % 2))
            vertices, cells = _slit_mesh(n)
        else:
            vertices, cells = _square_mesh(n, -HALF_SIDE, HALF_SIDE)
    elif spec.kind == DomainKind.LSHAPE:
        n = max(1, math.ceil(1.0 / (math.sqrt(2.0) * target_h) - 1e-12))
        vertices, cells = _lshape_mesh(n)
    elif spec.kind == DomainKind.DISK:
        rings = max(1, math.ceil(0.75 / target_h - 1e-12))
        vertices, cells, on_circle = _disk_mesh(rings)
    else:
        raise MeshError(f"unknown domain kind {spec.kind!r}")

    cells = _rotate_longest_edge_first(vertices, cells)
    mesh = _assemble_mesh(vertices, cells, on_circle, spec.kind)
    if mesh.cell_diameters().max() > 2.0 * target_h + 1e-12:
        raise MeshError("structured mesh misses the requested resolution")
    return mesh


def _project_new_boundary_vertices(
    mesh: Mesh, edge_ids: np.ndarray, midpoints: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Push midpoints of curved boundary edges onto the unit circle."""
    curved = (
        mesh.boundary_edges[edge_ids]
        & mesh.on_circle[mesh.edges[edge_ids]].all(axis=1)
    )
    if curved.any():
        r = np.linalg.norm(midpoints[curved], axis=1, keepdims=True)
        midpoints = midpoints.copy()
        midpoints[curved] /= r
    return midpoints, curved


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: split every cell into four via its edge midpoints."""
    V = mesh.n_vertices
    all_edges = np.arange(mesh.n_edges)
    mids = mesh.vertices[mesh.edges].mean(axis=1)
    mids, curved = _project_new_boundary_vertices(mesh, all_edges, mids)
    vertices = np.vstack([mesh.vertices, mids])
    on_circle = np.concatenate([mesh.on_circle, curved])

    v0, v1, v2 = mesh.cells.T
    m0, m1, m2 = (V + mesh.cell_edges).T
    children = np.stack(
        [
            np.column_stack([v0, m2, m1]),
            np.column_stack([v1, m0, m2]),
            np.column_stack([v2, m1, m0]),
            np.column_stack([m0, m1, m2]),
        ],
        axis=1,
    ).reshape(-1, 3)
    children = _rotate_longest_edge_first(vertices, children)
    return _assemble_mesh(vertices, children, on_circle, mesh.kind)


def refine_bisect(mesh: Mesh, marked_cells: Iterable[int]) -> Mesh:
    """Newest-vertex bisection of the marked cells, completed to a conforming mesh.

    The refinement edge of a cell is the edge opposite its vertex 0; the
    completion pass marks that edge for every cell any of whose edges is
    marked, so hanging nodes never survive.
    """
    marked_cells = np.asarray(list(marked_cells), dtype=np.int64)
    if marked_cells.size == 0:
        return mesh
    if marked_cells.min() < 0 or marked_cells.max() >= mesh.n_cells:
        raise MeshError("marked cell index out of range")

    marked = np.zeros(mesh.n_edges, dtype=bool)
    marked[mesh.cell_edges[marked_cells, 0]] = True
    while True:
        need = marked[mesh.cell_edges].any(axis=1) & ~marked[mesh.cell_edges[:, 0]]
        if not need.any():
            break
        marked[mesh.cell_edges[need, 0]] = True

    edge_ids = np.flatnonzero(marked)
    mids = mesh.vertices[mesh.edges[edge_ids]].mean(axis=1)
    mids, curved = _project_new_boundary_vertices(mesh, edge_ids, mids)
    new_id = np.full(mesh.n_edges, -1, dtype=np.int64)
    new_id[edge_ids] = mesh.n_vertices + np.arange(len(edge_ids))
    vertices = np.vstack([mesh.vertices, mids])
    on_circle = np.concatenate([mesh.on_circle, curved])

    v0, v1, v2 = mesh.cells.T
    e = marked[mesh.cell_edges]
    m0, m1, m2 = new_id[mesh.cell_edges].T
    pattern = np.select(
        [~e[:, 0], e[:, 1] & e[:, 2], e[:, 1], e[:, 2]],
        [0, 4, 2, 3],
        default=1,
    )
    # Children per pattern; a bisected child inherits a parent edge as its
    # refinement edge, which is what keeps the shape classes finite.
    counts = np.array([1, 2, 3, 3, 4])[pattern]
    offsets = np.concatenate([[0], np.cumsum(counts)])
    out = np.empty((offsets[-1], 3), dtype=np.int64)

    def emit(mask: np.ndarray, rows: list[np.ndarray]) -> None:
        base = offsets[:-1][mask]
        for shift, row in enumerate(rows):
            out[base + shift] = np.column_stack([c[mask] for c in row])

    emit(pattern == 0, [(v0, v1, v2)])
    emit(pattern == 1, [(m0, v2, v0), (m0, v0, v1)])
    emit(pattern == 2, [(m1, v0, m0), (m1, m0, v2), (m0, v0, v1)])
    emit(pattern == 3, [(m0, v2, v0), (m2, v1, m0), (m2, m0, v0)])
    emit(pattern == 4, [(m1, v0, m0), (m1, m0, v2), (m2, v1, m0), (m2, m0, v0)])

    return _assemble_mesh(vertices, out, on_circle, mesh.kind)


def edge_geometry(mesh: Mesh) -> EdgeGeometry:
    """Midpoint, length, unit normal and tangent of every edge."""
    pa = mesh.vertices[mesh.edges[:, 0]]
    pb = mesh.vertices[mesh.edges[:, 1]]
    d = pb - pa
    length = np.hypot(d[:, 0], d[:, 1])
    normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    midpoint = 0.5 * (pa + pb)

    first = mesh.edge_cells[:, 0]
    centroid = mesh.vertices[mesh.cells[first]].mean(axis=1)
    outward = ((midpoint - centroid) * normal).sum(axis=1)
    normal[outward < 0.0] *= -1.0
    tangent = np.column_stack([-normal[:, 1], normal[:, 0]])
    return EdgeGeometry(
        midpoint=_freeze(midpoint),
        length=_freeze(length),
        normal=_freeze(normal),
        tangent=_freeze(tangent),
    )


def save_mesh(mesh: Mesh, path: str) -> None:
    """Write the line-oriented text form of a mesh.

    Header `vertices N cells M edges E [kind NAME]`, then one line per
    vertex (`x y circleflag`), per cell (`v0 v1 v2`) and per edge
    (`a b boundaryflag`).
    """
    header = f"vertices {mesh.n_vertices} cells {mesh.n_cells} edges {mesh.n_edges}"
    if mesh.kind is not None:
        header += f" kind {mesh.kind.value}"
    lines = [header]
    for (x, y), flag in zip(mesh.vertices.tolist(), mesh.on_circle.tolist()):
        lines.append(f"{x!r} {y!r} {int(flag)}")
    for v0, v1, v2 in mesh.cells.tolist():
        lines.append(f"{v0} {v1} {v2}")
    for (a, b), flag in zip(mesh.edges.tolist(), mesh.boundary_edges.tolist()):
        lines.append(f"{a} {b} {int(flag)}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path: str, kind: Optional[DomainKind] = None) -> Mesh:
    """Read a mesh written by `save_mesh` and rebuild its edge tables."""
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.readline().split()
        if len(tokens) not in (6, 8) or tokens[0] != "vertices" or tokens[2] != "cells":
            raise MeshError(f"{path}: not a mesh file")
        nv, nc, ne = int(tokens[1]), int(tokens[3]), int(tokens[5])
        if kind is None and len(tokens) == 8 and tokens[6] == "kind":
            kind = DomainKind(tokens[7])
        rows = [fh.readline().split() for _ in range(nv + nc + ne)]
    vertices = np.array([[float(r[0]), float(r[1])] for r in rows[:nv]])
    on_circle = np.array([bool(int(r[2])) for r in rows[:nv]])
    cells = np.array([[int(c) for c in r] for r in rows[nv : nv + nc]], dtype=np.int64)
    mesh = _assemble_mesh(vertices, cells, on_circle, kind)
    stored = np.array(
        [[int(r[0]), int(r[1])] for r in rows[nv + nc :]], dtype=np.int64
    )
    if mesh.n_edges != ne or not np.array_equal(np.sort(stored, axis=1), mesh.edges):
        raise MeshError(f"{path}: stored edge table disagrees with cells")
    return mesh
