"""Nonconforming linear (edge-midpoint) finite elements and matrix assembly.

One degree of freedom per edge, the function value at the edge midpoint;
the local basis on a triangle is phi_i = 1 - 2 lambda_i with lambda_i the
barycentric coordinate of the vertex opposite edge i, so traces across an
edge match at its midpoint only.  Assembly is triplet based and returns
compressed sparse matrices wrapped with a symmetry flag.

Each boundary edge carries the exact trace coupling of the three cell
basis functions: the edge's own function is 1 along it and the other two
restrict to 1 - 2s and 2s - 1 in the edge parameter.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .geometry import EdgeGeometry, Mesh, edge_geometry
from .quadrature import edge_rule, triangle_rule


class AssemblyError(Exception):
    """Raised when a mesh cannot be assembled into finite element matrices."""


@dataclass(frozen=True)
class SparseOperator:
    """A compressed sparse matrix together with a symmetry promise.

    `symmetric` means equal to its transpose (no conjugation); stiffness
    and volume mass matrices stay transpose-symmetric even for complex
    coefficients because the basis is real.
    """

    mat: sp.csr_matrix
    symmetric: bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.mat.shape

    @property
    def n_rows(self) -> int:
        return self.mat.shape[0]

    @property
    def n_cols(self) -> int:
        return self.mat.shape[1]

    @property
    def nnz(self) -> int:
        return self.mat.nnz

    @property
    def dtype(self):
        return self.mat.dtype

    def toarray(self) -> np.ndarray:
        return self.mat.toarray()

    def __matmul__(self, other: np.ndarray) -> np.ndarray:
        return self.mat @ other

    def dump_coo(self, path: str) -> None:
        """Write `row col re im` lines in row-major order."""
        coo = self.mat.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w", encoding="ascii") as fh:
            fh.write(f"{self.n_rows} {self.n_cols} {coo.nnz}\n")
            vals = coo.data[order]
            for r, c, v in zip(coo.row[order], coo.col[order], vals):
                z = complex(v)
                fh.write(f"{r} {c} {z.real!r} {z.imag!r}\n")


PointFunction = Callable[..., np.ndarray]


class Coefficient:
    """Refraction-style coefficient: a complex constant or a function of points.

    Callables must be vectorized, taking an (m, 2) array of points and
    returning m values.
    """

    def __init__(self, value: Union[complex, float, PointFunction]):
        if callable(value):
            self._fn: Optional[PointFunction] = value
            self._const: Optional[complex] = None
        else:
            z = complex(value)
            if not (np.isfinite(z.real) and np.isfinite(z.imag)):
                raise ValueError("coefficient must be finite")
            self._fn = None
            self._const = z

    @property
    def is_constant(self) -> bool:
        return self._const is not None

    @property
    def constant(self) -> complex:
        if self._const is None:
            raise ValueError("coefficient is not constant")
        return self._const

    @property
    def is_real(self) -> bool:
        if self._const is not None:
            return self._const.imag == 0.0
        probe = self._fn(np.zeros((1, 2)))
        return not np.iscomplexobj(probe)

    def conjugate(self) -> "Coefficient":
        if self._const is not None:
            return Coefficient(self._const.conjugate())
        fn = self._fn
        return Coefficient(lambda pts: np.conj(fn(pts)))

    def sample(self, points: np.ndarray) -> np.ndarray:
        if self._const is not None:
            value = self._const.real if self._const.imag == 0.0 else self._const
            return np.full(points.shape[:-1], value)
        values = np.asarray(self._fn(points))
        if values.shape != points.shape[:-1]:
            values = np.broadcast_to(values, points.shape[:-1])
        return values


def as_coefficient(value: Union[Coefficient, complex, float, PointFunction]) -> Coefficient:
    if isinstance(value, Coefficient):
        return value
    return Coefficient(value)


@dataclass(frozen=True)
class CRSpace:
    """Edge-midpoint element space on a mesh, with cached cell geometry.

    Degrees of freedom are numbered by the global edge index.  `cell_dofs`
    row i lists the dofs of cell i with local position matching the edge
    opposite the same-numbered vertex; `grad_basis[c, i]` is the constant
    gradient of basis function i on cell c.
    """

    mesh: Mesh
    cell_dofs: np.ndarray
    boundary_dofs: np.ndarray
    areas: np.ndarray
    grad_basis: np.ndarray
    edge_geom: EdgeGeometry
    # Local vertex positions of each boundary edge's endpoints (a, b) with
    # a < b in global numbering, inside the single incident cell.
    boundary_cells: np.ndarray
    boundary_local_edge: np.ndarray
    boundary_endpoint_slots: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_edges

    def cell_midpoints(self) -> np.ndarray:
        """Edge midpoints per cell, shape (C, 3, 2); point i sits on edge i."""
        p = self.mesh.vertices[self.mesh.cells]
        return 0.5 * (p[:, [1, 2, 0], :] + p[:, [2, 0, 1], :])

    def map_points(self, bary: np.ndarray) -> np.ndarray:
        """Map barycentric points (q, 3) into every cell; returns (C, q, 2)."""
        p = self.mesh.vertices[self.mesh.cells]
        return np.einsum("qi,cid->cqd", bary, p)

    def basis_at(self, bary: np.ndarray) -> np.ndarray:
        """Values of the three local basis functions at barycentric points."""
        return 1.0 - 2.0 * bary

    def boundary_trace_weights(self, s: np.ndarray) -> np.ndarray:
        """Trace of the local basis along each boundary edge at parameters s.

        The edge runs from its lower-numbered endpoint to the higher one;
        returns shape (n_boundary, 3, len(s)).
        """
        nb = len(self.boundary_cells)
        w = np.ones((nb, 3, len(s)))
        rows = np.arange(nb)
        slot_a = self.boundary_endpoint_slots[:, 0]
        slot_b = self.boundary_endpoint_slots[:, 1]
        w[rows, slot_a, :] = 1.0 - 2.0 * (1.0 - s)[None, :]
        w[rows, slot_b, :] = 1.0 - 2.0 * s[None, :]
        return w

    def boundary_points(self, s: np.ndarray) -> np.ndarray:
        """Points on each boundary edge at parameters s, shape (nb, q, 2)."""
        be = self.mesh.boundary_edge_ids
        pa = self.mesh.vertices[self.mesh.edges[be, 0]]
        pb = self.mesh.vertices[self.mesh.edges[be, 1]]
        return pa[:, None, :] * (1.0 - s)[None, :, None] + pb[:, None, :] * s[None, :, None]

    def boundary_endpoint_values(self, coeffs: np.ndarray) -> np.ndarray:
        """Trace of a member function at both endpoints of each boundary edge.

        On a cell the linear function takes the value (sum of coefficients)
        minus twice the coefficient opposite the vertex.
        """
        cd = self.cell_dofs[self.boundary_cells]
        vals = coeffs[cd]
        total = vals.sum(axis=1)
        rows = np.arange(len(self.boundary_cells))
        a = total - 2.0 * vals[rows, self.boundary_endpoint_slots[:, 0]]
        b = total - 2.0 * vals[rows, self.boundary_endpoint_slots[:, 1]]
        return np.column_stack([a, b])


def build_space(mesh: Mesh) -> CRSpace:
    """Precompute geometry caches for assembly on a mesh."""
    areas = mesh.signed_areas()
    scale = float(areas.max(initial=0.0))
    tiny = np.flatnonzero(areas <= 1e-14 * max(scale, 1.0))
    if tiny.size:
        raise AssemblyError(f"cell {tiny[0]} is degenerate (area {areas[tiny[0]]:.3e})")

    p = mesh.vertices[mesh.cells]
    # grad lambda_i = perpendicular of the opposite edge over twice the area
    b = p[:, [1, 2, 0], 1] - p[:, [2, 0, 1], 1]
    c = p[:, [2, 0, 1], 0] - p[:, [1, 2, 0], 0]
    grad_lambda = np.stack([b, c], axis=2) / (2.0 * areas)[:, None, None]
    grad_basis = -2.0 * grad_lambda

    be = mesh.boundary_edge_ids
    cells = mesh.edge_cells[be, 0]
    local_edge = (mesh.cell_edges[cells] == be[:, None]).argmax(axis=1)
    slots = np.empty((len(be), 2), dtype=np.int64)
    for endpoint in (0, 1):
        vid = mesh.edges[be, endpoint]
        slots[:, endpoint] = (mesh.cells[cells] == vid[:, None]).argmax(axis=1)

    return CRSpace(
        mesh=mesh,
        cell_dofs=mesh.cell_edges,
        boundary_dofs=np.sort(be),
        areas=areas,
        grad_basis=grad_basis,
        edge_geom=edge_geometry(mesh),
        boundary_cells=cells,
        boundary_local_edge=local_edge,
        boundary_endpoint_slots=slots,
    )


def _scatter(space: CRSpace, local: np.ndarray, dtype) -> sp.csr_matrix:
    """Accumulate (C, 3, 3) cell blocks into a global sparse matrix."""
    n = space.n_dofs
    rows = np.repeat(space.cell_dofs, 3, axis=1).ravel()
    cols = np.tile(space.cell_dofs, (1, 3)).ravel()
    mat = sp.coo_matrix(
        (local.astype(dtype).ravel(), (rows, cols)), shape=(n, n)
    )
    return mat.tocsr()


def assemble_stiffness(space: CRSpace) -> SparseOperator:
    """Broken gradient-gradient matrix; rows of the all-ones vector sum to zero."""
    local = np.einsum(
        "c,cid,cjd->cij", space.areas, space.grad_basis, space.grad_basis
    )
    return SparseOperator(_scatter(space, local, np.float64), symmetric=True)


def assemble_volume_mass(
    space: CRSpace,
    n: Union[Coefficient, complex, float, PointFunction] = 1.0,
    quad_degree: Optional[int] = None,
) -> SparseOperator:
    """Weighted volume mass matrix with weight n.

    The default midpoint rule is exact for constant n (and then diagonal,
    since the basis interpolates at edge midpoints); pass `quad_degree` to
    integrate a varying coefficient more accurately.
    """
    coeff = as_coefficient(n)
    dtype = np.float64 if coeff.is_real else np.complex128
    if quad_degree is None:
        mids = space.cell_midpoints()
        nvals = coeff.sample(mids.reshape(-1, 2)).reshape(mids.shape[:2])
        data = (space.areas[:, None] / 3.0) * nvals
        n_dof = space.n_dofs
        mat = sp.coo_matrix(
            (data.astype(dtype).ravel(), (space.cell_dofs.ravel(), space.cell_dofs.ravel())),
            shape=(n_dof, n_dof),
        ).tocsr()
        return SparseOperator(mat, symmetric=True)

    bary, w = triangle_rule(quad_degree)
    pts = space.map_points(bary)
    nvals = coeff.sample(pts.reshape(-1, 2)).reshape(pts.shape[:2])
    phi = space.basis_at(bary)
    local = np.einsum(
        "c,q,cq,qi,qj->cij", space.areas, w, nvals, phi, phi
    )
    return SparseOperator(_scatter(space, local, dtype), symmetric=True)


def assemble_boundary_mass(space: CRSpace) -> SparseOperator:
    """Boundary trace mass matrix; real, symmetric, positive semidefinite.

    Exact per edge: with the edge dof first the local block is
    [[L, 0, 0], [0, L/3, -L/3], [0, -L/3, L/3]].
    """
    be = space.mesh.boundary_edge_ids
    L = space.edge_geom.length[be]
    cd = space.cell_dofs[space.boundary_cells]
    rows_idx = np.arange(len(be))
    d_edge = be
    d_a = cd[rows_idx, space.boundary_endpoint_slots[:, 0]]
    d_b = cd[rows_idx, space.boundary_endpoint_slots[:, 1]]

    rows = np.concatenate([d_edge, d_a, d_b, d_a, d_b])
    cols = np.concatenate([d_edge, d_a, d_b, d_b, d_a])
    vals = np.concatenate([L, L / 3.0, L / 3.0, -L / 3.0, -L / 3.0])
    n = space.n_dofs
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return SparseOperator(mat, symmetric=True)


def _call_boundary_function(
    f: PointFunction, points: np.ndarray, normals: np.ndarray
) -> np.ndarray:
    """Call f(points) or f(points, normals), whichever it accepts."""
    try:
        n_params = len(inspect.signature(f).parameters)
    except (TypeError, ValueError):
        n_params = 1
    if n_params >= 2:
        return np.asarray(f(points, normals))
    return np.asarray(f(points))


def assemble_boundary_load(
    space: CRSpace, f: PointFunction, quad_points: int = 2
) -> np.ndarray:
    """Boundary functional vector with entries integral of f times each trace.

    `f` maps an (m, 2) array of boundary points to m values; it may take a
    second (m, 2) argument to receive the outward unit normal (used for
    flux data).  Two Gauss points are exact for the data appearing in the
    shipped manufactured solutions' convergence studies up to cubics.
    """
    s, w = edge_rule(quad_points)
    be = space.mesh.boundary_edge_ids
    pts = space.boundary_points(s)
    normals = np.broadcast_to(
        space.edge_geom.normal[be][:, None, :], pts.shape
    )
    fvals = _call_boundary_function(
        f, pts.reshape(-1, 2), np.ascontiguousarray(normals).reshape(-1, 2)
    ).reshape(pts.shape[:2])
    traces = space.boundary_trace_weights(s)
    L = space.edge_geom.length[be]
    contrib = np.einsum("e,q,eq,eiq->ei", L, w, fvals, traces)

    out = np.zeros(space.n_dofs, dtype=np.complex128)
    np.add.at(out, space.cell_dofs[space.boundary_cells].ravel(), contrib.ravel())
    return out


def assemble_volume_load(
    space: CRSpace, source: PointFunction, quad_degree: int = 2
) -> np.ndarray:
    """Volume functional vector for a source term, default midpoint rule."""
    bary, w = triangle_rule(quad_degree)
    pts = space.map_points(bary)
    vals = np.asarray(source(pts.reshape(-1, 2))).reshape(pts.shape[:2])
    phi = space.basis_at(bary)
    contrib = np.einsum("c,q,cq,qi->ci", space.areas, w, vals, phi)
    out = np.zeros(space.n_dofs, dtype=np.complex128)
    np.add.at(out, space.cell_dofs.ravel(), contrib.ravel())
    return out


def combine_operator(
    stiffness: SparseOperator, mass: SparseOperator, k: float
) -> SparseOperator:
    """Helmholtz-like bilinear form matrix: stiffness minus k^2 times mass."""
    mat = (stiffness.mat - (k * k) * mass.mat).tocsr()
    return SparseOperator(mat, symmetric=stiffness.symmetric and mass.symmetric)
