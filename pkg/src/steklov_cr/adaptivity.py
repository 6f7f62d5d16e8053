"""Residual error indicator and adaptive bisection loop for eigenpairs.

The squared indicator of a cell combines a scaled volume residual with
normal and tangential gradient jumps across its edges:

    eta_k^2 = |k| ||k^2 n u||^2 + 1/2 sum_edges |l| ( ||J_normal||^2
              + ||J_tangent||^2 )

Interior jumps are differences of the constant cell gradients; on a
boundary edge the normal term is twice the linear residual of the
eigenvalue boundary condition, grad(u) . normal + lambda u, and the
tangential term vanishes.  Squared norms make all of it invariant under
flipping the interior edge orientation.  The quantity driving marking for
an eigenvalue is the sum of the indicators of the eigenvector and of its
adjoint; for a real refraction the two coincide.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .assembly import Coefficient, CRSpace, PointFunction, as_coefficient, build_space
from .geometry import DomainSpec, Mesh, build_domain, refine_bisect
from .solver import (
    EigenPair,
    EigenSolveError,
    SolverError,
    SortRule,
    build_pencil,
    default_sort_rule,
    solve_eigs,
)

logger = logging.getLogger(__name__)


class TrackingError(Exception):
    """The tracked eigenvalue index jumped to a different branch."""


@dataclass(frozen=True)
class EdgeJumps:
    """Gradient jump data of one finite element function.

    normal / tangential: constant interior jumps per edge (zero entries on
    boundary edges); boundary_normal: endpoint values of the linear
    boundary residual, per boundary edge.
    """

    normal: np.ndarray
    tangential: np.ndarray
    boundary_normal: np.ndarray


@dataclass(frozen=True)
class Indicator:
    """Per-cell squared error indicators attached to one eigenvalue."""

    eta_sq: np.ndarray
    lam: complex

    @property
    def total(self) -> float:
        return float(self.eta_sq.sum())


def compute_jumps(
    space: CRSpace,
    coeffs: np.ndarray,
    lam: complex,
    orientation: float = 1.0,
) -> EdgeJumps:
    """Normal and tangential jumps of the broken gradient of a function.

    `orientation` = -1 flips every interior edge normal; indicator values
    must not change under this, which is covered by the test suite.
    """
    mesh = space.mesh
    grads = np.einsum("ci,cid->cd", coeffs[space.cell_dofs], space.grad_basis)

    normal = space.edge_geom.normal * orientation
    tangent = space.edge_geom.tangent * orientation
    interior = ~mesh.boundary_edges
    k1 = mesh.edge_cells[:, 0]
    k2 = np.where(interior, mesh.edge_cells[:, 1], k1)
    diff = grads[k2] - grads[k1]
    jn = np.where(interior, (diff * normal).sum(axis=1), 0.0 + 0.0j)
    jt = np.where(interior, (diff * tangent).sum(axis=1), 0.0 + 0.0j)

    # Boundary residual of the eigenvalue condition grad(u).normal = -lam u;
    # it vanishes at an exact eigenpair, so the + sign is load-bearing.
    be = mesh.boundary_edge_ids
    flux = (grads[space.boundary_cells] * space.edge_geom.normal[be]).sum(axis=1)
    trace = space.boundary_endpoint_values(coeffs)
    boundary_normal = 2.0 * (flux[:, None] + lam * trace)

    return EdgeJumps(normal=jn, tangential=jt, boundary_normal=boundary_normal)


def indicator_for(
    space: CRSpace,
    coeffs: np.ndarray,
    lam: complex,
    k: float,
    n: Union[Coefficient, complex, float, PointFunction],
    orientation: float = 1.0,
) -> Indicator:
    """Squared residual indicator of one function/eigenvalue combination."""
    mesh = space.mesh
    coeff = as_coefficient(n)
    jumps = compute_jumps(space, coeffs, lam, orientation)
    lengths = space.edge_geom.length

    # volume residual |k| * ||k^2 n u||^2, midpoint rule (u interpolates there)
    mids = space.cell_midpoints()
    nvals = coeff.sample(mids.reshape(-1, 2)).reshape(mids.shape[:2])
    uvals = coeffs[space.cell_dofs]
    vol_sq = (space.areas / 3.0) * (
        np.abs(k * k * nvals * uvals) ** 2
    ).sum(axis=1)
    eta_sq = space.areas * vol_sq

    # interior edges: constant jumps, ||J||^2 = |l| |J|^2, halved per cell
    interior = np.flatnonzero(~mesh.boundary_edges)
    l_int = lengths[interior]
    jump_sq = 0.5 * l_int * l_int * (
        np.abs(jumps.normal[interior]) ** 2 + np.abs(jumps.tangential[interior]) ** 2
    )
    for side in (0, 1):
        np.add.at(eta_sq, mesh.edge_cells[interior, side], jump_sq)

    # boundary edges: linear residual, exact edge norm of a linear function
    be = mesh.boundary_edge_ids
    a = jumps.boundary_normal[:, 0]
    b = jumps.boundary_normal[:, 1]
    norm_sq = lengths[be] * (
        np.abs(a) ** 2 + np.abs(b) ** 2 + (a * np.conj(b)).real
    ) / 3.0
    np.add.at(eta_sq, space.boundary_cells, 0.5 * lengths[be] * norm_sq)

    return Indicator(eta_sq=eta_sq, lam=lam)


def estimate(
    space: CRSpace,
    pair: EigenPair,
    k: float,
    n: Union[Coefficient, complex, float, PointFunction],
) -> tuple[Indicator, Indicator]:
    """Indicators of an eigenpair and of its adjoint.

    The adjoint eigenfunction solves the companion problem with conjugated
    refraction and eigenvalue, so its indicator is evaluated there.
    """
    if pair.dual_coeffs is None:
        raise ValueError("pair has no adjoint vector; compute dual_pair first")
    coeff = as_coefficient(n)
    primal = indicator_for(space, pair.coeffs, pair.lam, k, coeff)
    dual = indicator_for(
        space, pair.dual_coeffs, np.conj(pair.lam), k, coeff.conjugate()
    )
    return primal, dual


def mark(indicator: Union[Indicator, np.ndarray], theta: float) -> np.ndarray:
    """Bulk marking: smallest prefix of cells (by decreasing eta^2) reaching
    a theta share of the total; ties broken by cell id.
    """
    if not (0.0 < theta <= 1.0):
        raise ValueError("theta must lie in (0, 1]")
    eta_sq = indicator.eta_sq if isinstance(indicator, Indicator) else indicator
    total = eta_sq.sum()
    if total <= 0.0:
        return np.empty(0, dtype=np.int64)
    if theta == 1.0:
        return np.flatnonzero(eta_sq > 0.0).astype(np.int64)
    order = np.argsort(-eta_sq, kind="stable")
    csum = np.cumsum(eta_sq[order])
    m = int(np.searchsorted(csum, theta * total, side="left")) + 1
    marked = np.sort(order[:m])
    if m == len(eta_sq):
        logger.warning("bulk marking selected every cell; refining uniformly")
    return marked


@dataclass
class AdaptRecord:
    level: int
    dof: int
    lam: complex
    eta_sq: float
    marked: int
    seconds: float


@dataclass
class AdaptRun:
    """History of one adaptive refinement run."""

    domain: DomainSpec
    k: float
    eig_index: int
    theta: float
    records: list[AdaptRecord] = field(default_factory=list)
    final_mesh: Optional[Mesh] = None

    @property
    def dofs(self) -> np.ndarray:
        return np.array([r.dof for r in self.records])

    @property
    def lams(self) -> np.ndarray:
        return np.array([r.lam for r in self.records])

    @property
    def eta_sqs(self) -> np.ndarray:
        return np.array([r.eta_sq for r in self.records])


def adapt_loop(
    domain: DomainSpec,
    k: float,
    n: Union[Coefficient, complex, float, PointFunction],
    eig_index: int,
    theta: float,
    max_dof: int,
    target_h: float = 0.125,
    rule: Optional[SortRule] = None,
    shift: Optional[complex] = None,
    mesh: Optional[Mesh] = None,
) -> AdaptRun:
    """Solve, estimate, mark and bisect until the dof count passes max_dof.

    Tracks the eigenvalue with 1-based position `eig_index` under the sort
    rule; a large jump of the tracked value between consecutive levels
    raises TrackingError (a smaller theta separates clustered values
    better).  Every level is recorded, including the final one whose dof
    count exceeds max_dof.
    """
    if eig_index < 1:
        raise ValueError("eig_index is 1-based")
    coeff = as_coefficient(n)
    if rule is None:
        rule = default_sort_rule(coeff)
    run = AdaptRun(domain=domain, k=k, eig_index=eig_index, theta=theta)
    if mesh is None:
        mesh = build_domain(domain, target_h)

    level = 0
    while True:
        t0 = time.perf_counter()
        space = build_space(mesh)
        problem = build_pencil(space, k, coeff)
        try:
            pairs = solve_eigs(problem, eig_index + 2, rule, shift=shift)
        except (SolverError, EigenSolveError):
            # keep what converged so far rather than discarding the run
            if run.records:
                logger.warning(
                    "eigensolver failed at level %d; returning partial run", level
                )
                run.final_mesh = mesh
                return run
            raise
        pair = pairs[eig_index - 1]

        if run.records:
            prev = run.records[-1].lam
            if abs(pair.lam - prev) > 0.25 * (1.0 + abs(prev)):
                raise TrackingError(
                    f"tracked eigenvalue jumped from {prev:.6g} to "
                    f"{pair.lam:.6g} at level {level}; a smaller theta may "
                    "keep the sort index stable"
                )

        primal, dual = estimate(space, pair, k, coeff)
        combined = primal.eta_sq + dual.eta_sq
        done = space.n_dofs > max_dof
        marked = np.empty(0, dtype=np.int64) if done else mark(combined, theta)
        run.records.append(
            AdaptRecord(
                level=level,
                dof=space.n_dofs,
                lam=pair.lam,
                eta_sq=float(combined.sum()),
                marked=len(marked),
                seconds=time.perf_counter() - t0,
            )
        )
        if done:
            run.final_mesh = mesh
            return run
        mesh = refine_bisect(mesh, marked)
        level += 1
