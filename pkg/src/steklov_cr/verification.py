"""Convergence verification: manufactured sources, error norms, references.

Provides the pieces the acceptance checks are built from: loads
manufactured from a closed-form field (flux data on the boundary plus a
compensating volume source), broken-gradient and boundary trace error
norms, the nonconformity functional that vanishes on continuous test
functions, tabulated reference eigenvalues, and order-of-convergence fits
with a Richardson limit when no reference is available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse.linalg as spla
import sympy

from .assembly import (
    Coefficient,
    CRSpace,
    as_coefficient,
    assemble_boundary_load,
    assemble_stiffness,
    assemble_volume_load,
    assemble_volume_mass,
)
from .geometry import DomainKind
from .quadrature import edge_rule, triangle_rule


@dataclass(frozen=True)
class ManufacturedSolution:
    """A closed-form field with the loads that make it solve the source problem.

    Solving the discrete problem with boundary data `neumann` and volume
    source `volume_source` should reproduce `value` up to discretization
    error; both loads are generated symbolically from one expression.
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    neumann: Callable[[np.ndarray, np.ndarray], np.ndarray]
    volume_source: Callable[[np.ndarray], np.ndarray]


def manufactured_loads(
    expr: Union[sympy.Expr, str],
    k: float,
    n: Union[Coefficient, complex, float],
) -> ManufacturedSolution:
    """Build loads for the inhomogeneous problem solved by a given field.

    The boundary datum is the outward normal derivative of the field and
    the volume source is -(laplacian + k^2 n) applied to it; `expr` uses
    symbols x and y.  The refraction must be constant here.
    """
    x, y = sympy.symbols("x y")
    phi = sympy.sympify(expr)
    coeff = as_coefficient(n)
    nval = coeff.constant
    dx = sympy.diff(phi, x)
    dy = sympy.diff(phi, y)
    lap = sympy.diff(phi, x, 2) + sympy.diff(phi, y, 2)
    zeta = -lap - k * k * nval * phi

    f_val = sympy.lambdify((x, y), phi, "numpy")
    f_dx = sympy.lambdify((x, y), dx, "numpy")
    f_dy = sympy.lambdify((x, y), dy, "numpy")
    f_zeta = sympy.lambdify((x, y), zeta, "numpy")

    def value(pts: np.ndarray) -> np.ndarray:
        return np.broadcast_to(f_val(pts[..., 0], pts[..., 1]), pts.shape[:-1]).copy()

    def gradient(pts: np.ndarray) -> np.ndarray:
        gx = np.broadcast_to(f_dx(pts[..., 0], pts[..., 1]), pts.shape[:-1])
        gy = np.broadcast_to(f_dy(pts[..., 0], pts[..., 1]), pts.shape[:-1])
        return np.stack([gx, gy], axis=-1)

    def neumann(pts: np.ndarray, normals: np.ndarray) -> np.ndarray:
        return (gradient(pts) * normals).sum(axis=-1)

    def volume_source(pts: np.ndarray) -> np.ndarray:
        return np.broadcast_to(f_zeta(pts[..., 0], pts[..., 1]), pts.shape[:-1]).copy()

    return ManufacturedSolution(
        value=value, gradient=gradient, neumann=neumann, volume_source=volume_source
    )


def broken_h1_error(
    space: CRSpace, coeffs: np.ndarray, exact: ManufacturedSolution
) -> float:
    """Cellwise H1 error (gradient plus value part), quintic quadrature."""
    bary, w = triangle_rule(5)
    pts = space.map_points(bary)
    flat = pts.reshape(-1, 2)
    phi = space.basis_at(bary)

    uh = np.einsum("ci,qi->cq", coeffs[space.cell_dofs], phi)
    diff_val = exact.value(flat).reshape(uh.shape) - uh
    grads = np.einsum("ci,cid->cd", coeffs[space.cell_dofs], space.grad_basis)
    diff_grad = exact.gradient(flat).reshape(pts.shape) - grads[:, None, :]

    dens = np.abs(diff_val) ** 2 + (np.abs(diff_grad) ** 2).sum(axis=2)
    total = (space.areas[:, None] * w[None, :] * dens).sum()
    return float(np.sqrt(total))


def boundary_l2_error(
    space: CRSpace, coeffs: np.ndarray, exact: ManufacturedSolution, quad_points: int = 4
) -> float:
    """Boundary trace error in the L2 norm of the boundary."""
    s, w = edge_rule(quad_points)
    pts = space.boundary_points(s)
    traces = space.boundary_trace_weights(s)
    cd = space.cell_dofs[space.boundary_cells]
    uh = np.einsum("ei,eiq->eq", coeffs[cd], traces)
    diff = exact.value(pts.reshape(-1, 2)).reshape(uh.shape) - uh
    be = space.mesh.boundary_edge_ids
    total = (
        space.edge_geom.length[be][:, None] * w[None, :] * np.abs(diff) ** 2
    ).sum()
    return float(np.sqrt(total))


def _consistency_vector(
    space: CRSpace,
    k: float,
    n: Union[Coefficient, complex, float],
    exact: ManufacturedSolution,
    quad_degree: int = 5,
    boundary_points: int = 4,
) -> np.ndarray:
    """Values of the nonconformity functional on every basis function.

    Entry i is a_h(phi, psi_i) - <flux, psi_i> - (source, psi_i); pairing a
    coefficient vector v via sum(conj(v) * entries) evaluates the
    functional at v.  It vanishes on continuous members of the space.
    """
    coeff = as_coefficient(n)
    bary, w = triangle_rule(quad_degree)
    pts = space.map_points(bary)
    flat = pts.reshape(-1, 2)
    phi = space.basis_at(bary)

    grad_exact = exact.gradient(flat).reshape(pts.shape)
    grad_part = np.einsum(
        "c,q,cqd,cid->ci", space.areas, w, grad_exact, space.grad_basis
    )
    nvals = coeff.sample(flat).reshape(pts.shape[:2])
    val_exact = exact.value(flat).reshape(pts.shape[:2])
    mass_part = np.einsum(
        "c,q,cq,cq,qi->ci", space.areas, w, nvals, val_exact, phi
    )
    out = np.zeros(space.n_dofs, dtype=np.complex128)
    np.add.at(out, space.cell_dofs.ravel(), (grad_part - k * k * mass_part).ravel())

    out -= assemble_boundary_load(space, exact.neumann, boundary_points)
    out -= assemble_volume_load(space, exact.volume_source, quad_degree)
    return out


def consistency_term(
    space: CRSpace,
    k: float,
    n: Union[Coefficient, complex, float],
    exact: ManufacturedSolution,
    v_coeffs: np.ndarray,
) -> complex:
    """Nonconformity error of the broken form at one test function."""
    d = _consistency_vector(space, k, n, exact)
    return complex(np.conj(v_coeffs) @ d)


def consistency_dual_norm(
    space: CRSpace,
    k: float,
    n: Union[Coefficient, complex, float],
    exact: ManufacturedSolution,
) -> float:
    """Supremum of the nonconformity functional over the unit broken-H1 ball."""
    d = _consistency_vector(space, k, n, exact)
    gram = (
        assemble_stiffness(space).mat + assemble_volume_mass(space, 1.0).mat
    ).tocsc()
    lu = spla.splu(gram)
    y = lu.solve(d.real) + 1j * lu.solve(d.imag)
    return float(np.sqrt(max((np.conj(d) @ y).real, 0.0)))


def vertex_interpolant(space: CRSpace, values_at_vertices: np.ndarray) -> np.ndarray:
    """Continuous piecewise-linear member of the space from vertex values."""
    ends = space.mesh.edges
    return 0.5 * (values_at_vertices[ends[:, 0]] + values_at_vertices[ends[:, 1]])


def midpoint_interpolant(space: CRSpace, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Natural interpolant: edge midpoint values of a function."""
    mids = 0.5 * (
        space.mesh.vertices[space.mesh.edges[:, 0]]
        + space.mesh.vertices[space.mesh.edges[:, 1]]
    )
    return np.asarray(fn(mids))


# Reference eigenvalues of the unit disk (separation of variables for the
# transmission-type boundary spectrum, truncated series) and of the
# polygonal domains (high-resolution conforming computations with
# extrapolation).  The real-refraction disk spectrum lists multiplicities
# explicitly.
_DISK_REAL = np.array(
    [5.151841, 0.223578, 0.223578, -1.269100, -1.269100, -2.472703]
)
_DISK_COMPLEX = np.array(
    [
        -0.320506 + 3.121689j,
        -0.136861 + 1.396737j,
        -0.136861 + 1.396737j,
        -1.353076 + 0.791723j,
    ]
)
_POLY_REAL = {
    DomainKind.LSHAPE: np.array(
        [2.533214, 0.8578171, 0.1245245, -1.085295, -1.091190, -1.416890]
    ),
    DomainKind.SLIT: np.array(
        [1.484713, 0.4619870, -0.1841751, -0.6900738, -1.899866, -1.928669]
    ),
}
_POLY_COMPLEX = {
    DomainKind.LSHAPE: np.array(
        [
            0.5142952 + 2.882321j,
            0.3970387 + 1.458977j,
            -0.0771773 + 1.042675j,
            -1.440507 + 0.8046939j,
            -1.657333 + 0.7665137j,
            -2.517687 + 0.5715481j,
        ]
    ),
    DomainKind.SLIT: np.array(
        [
            0.9193065 + 1.770786j,
            0.2926298 + 0.9998754j,
            -0.2626135 + 0.7574491j,
            -0.7420933 + 0.6087749j,
            -2.619376 + 0.5626407j,
            -2.849534 + 0.4931528j,
        ]
    ),
}


def disk_reference(n: Union[Coefficient, complex, float]) -> np.ndarray:
    """Leading eigenvalues of the unit disk for refraction 4 or 4+4i."""
    coeff = as_coefficient(n)
    if not coeff.is_constant:
        raise ValueError("disk references exist for constant refraction only")
    if coeff.constant == 4.0:
        return _DISK_REAL.copy()
    if coeff.constant == 4.0 + 4.0j:
        return _DISK_COMPLEX.copy()
    raise ValueError(f"no disk reference for refraction {coeff.constant}")


def polygon_reference(
    kind: DomainKind, n: Union[Coefficient, complex, float]
) -> np.ndarray:
    """Leading six reference eigenvalues of the nonconvex polygons."""
    coeff = as_coefficient(n)
    if not coeff.is_constant:
        raise ValueError("polygon references exist for constant refraction only")
    table = _POLY_REAL if coeff.constant == 4.0 else (
        _POLY_COMPLEX if coeff.constant == 4.0 + 4.0j else None
    )
    if table is None or kind not in table:
        raise ValueError(f"no reference for domain {kind} with refraction {coeff.constant}")
    return table[kind].copy()


@dataclass(frozen=True)
class RateSpec:
    """Expected convergence orders from the corner regularity of a domain.

    r is the elliptic regularity index (capped at 1), s = r/2 the pickup
    from boundary data, t the eigenfunction smoothness index; a simple
    eigenvalue converges at order 2t in the mesh size.
    """

    omega: float
    r: float
    s: float
    t: float

    @property
    def eigenvalue_order(self) -> float:
        return 2.0 * self.t

    @property
    def source_h1_order(self) -> float:
        return self.t

    @property
    def source_boundary_order(self) -> float:
        return self.t + self.s


_RATE_SPECS = {
    DomainKind.SQUARE: RateSpec(omega=math.pi / 2.0, r=1.0, s=0.5, t=1.0),
    DomainKind.DISK: RateSpec(omega=math.pi, r=1.0, s=0.5, t=1.0),
    DomainKind.LSHAPE: RateSpec(omega=1.5 * math.pi, r=2.0 / 3.0, s=1.0 / 3.0, t=2.0 / 3.0),
    DomainKind.SLIT: RateSpec(omega=2.0 * math.pi, r=0.5, s=0.25, t=0.5),
}


def rate_spec(kind: DomainKind) -> RateSpec:
    return _RATE_SPECS[kind]


@dataclass(frozen=True)
class ConvergenceReport:
    """Errors over a refinement sequence with a fitted order and a band.

    `order` is the least-squares slope of log error against log h; when
    only dof counts are known the slope against log dof is scaled by -2
    (two space dimensions).
    """

    xs: np.ndarray
    errors: np.ndarray
    x_kind: str
    target_order: float = math.nan
    tolerance: float = math.nan

    @property
    def order(self) -> float:
        return observed_order(self.xs, self.errors, self.x_kind)

    @property
    def passed(self) -> bool:
        return abs(self.order - self.target_order) <= self.tolerance


def observed_order(xs: Sequence[float], errors: Sequence[float], x_kind: str = "h") -> float:
    """Least-squares convergence order; needs three positive-error levels."""
    xs = np.asarray(xs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > 0.0
    if keep.sum() < 3:
        raise ValueError("order fit needs at least three levels with positive error")
    slope = np.polyfit(np.log(xs[keep]), np.log(errors[keep]), 1)[0]
    if x_kind == "h":
        return float(slope)
    if x_kind == "dof":
        return float(-2.0 * slope)
    raise ValueError("x_kind must be 'h' or 'dof'")


def richardson_limit(values: Sequence[complex], order: Optional[float] = None) -> complex:
    """Limit of a sequence on meshes refined by a factor 2 in h.

    With `order` given, geometric extrapolation from the last two entries;
    otherwise the quotient of successive differences estimates the decay
    from the last three.
    """
    v = np.asarray(values, dtype=complex)
    if len(v) < 2:
        raise ValueError("need at least two levels to extrapolate")
    if order is not None:
        factor = 2.0**order
        return complex((factor * v[-1] - v[-2]) / (factor - 1.0))
    if len(v) < 3:
        raise ValueError("need three levels or an assumed order")
    d1, d2 = v[-2] - v[-3], v[-1] - v[-2]
    if abs(d1 - d2) < 1e-300:
        return complex(v[-1])
    return complex(v[-1] + d2 * d2 / (d1 - d2))


def eigenvalue_order_fit(
    dofs: Sequence[int],
    lams: Sequence[complex],
    reference: Optional[complex] = None,
    expected_order: Optional[float] = None,
) -> tuple[float, complex]:
    """Observed eigenvalue convergence order over a uniform sweep.

    Without a reference the Richardson limit stands in, iterating once so
    the assumed extrapolation order matches the fitted one; the finest
    level is then left out of the fit because the limit is built from it.
    """
    dofs = np.asarray(dofs, dtype=float)
    lams = np.asarray(lams, dtype=complex)
    if reference is not None:
        errors = np.abs(lams - reference)
        return observed_order(dofs, errors, "dof"), complex(reference)
    ref = richardson_limit(lams, expected_order)
    for _ in range(2):
        order = observed_order(dofs[:-1], np.abs(lams[:-1] - ref), "dof")
        if not math.isfinite(order) or order <= 0.0:
            break
        ref = richardson_limit(lams, order)
    errors = np.abs(lams[:-1] - ref)
    return observed_order(dofs[:-1], errors, "dof"), complex(ref)


def cluster_mean(values: Sequence[complex], start: int, stop: int) -> complex:
    """Mean of a run of (nearly) multiple eigenvalues, 0-based half-open range."""
    v = np.asarray(values, dtype=complex)
    return complex(v[start:stop].mean())


@dataclass(frozen=True)
class MonotonicityReport:
    """Diagnostic flags for a refinement sequence of real eigenvalues."""

    decreasing: bool
    monotone: bool
    strict: bool


def monotonicity_check(values: Sequence[float], decreasing: bool = True) -> MonotonicityReport:
    """Flag whether a real sequence is (strictly) monotone as stated."""
    d = np.diff(np.asarray(values, dtype=float))
    if decreasing:
        return MonotonicityReport(True, bool((d <= 0).all()), bool((d < 0).all()))
    return MonotonicityReport(False, bool((d >= 0).all()), bool((d > 0).all()))
