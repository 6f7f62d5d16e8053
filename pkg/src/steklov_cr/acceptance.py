"""Acceptance suite: nine end-to-end checks with frozen tolerances.

Each check compares a computed quantity (spectra, convergence orders,
adaptive slopes, discrete identities) against its expected value and
tolerance.  A shared context caches uniform sweeps and adaptive runs so
checks that share inputs do not recompute them.  `run_all` executes the
whole list (or the square-only quick subset) and returns structured
results; the CLI `verify` command serializes them as JSON.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .adaptivity import AdaptRun, adapt_loop, indicator_for
from .assembly import (
    assemble_boundary_load,
    assemble_boundary_mass,
    assemble_stiffness,
    assemble_volume_load,
    assemble_volume_mass,
    build_space,
    combine_operator,
)
from .geometry import DomainKind, DomainSpec, Mesh, build_domain, mesh_from_arrays
from .solver import build_pencil, default_sort_rule, dual_pair, solve_eigs, solve_source
from .verification import (
    boundary_l2_error,
    broken_h1_error,
    consistency_term,
    disk_reference,
    eigenvalue_order_fit,
    manufactured_loads,
    monotonicity_check,
    observed_order,
    polygon_reference,
    vertex_interpolant,
)

SOURCE_FIELD = "cos(pi*x)*cos(pi*y)"


@dataclass(frozen=True)
class CheckResult:
    criterion: int
    name: str
    expected: str
    observed: str
    tolerance: str
    passed: bool
    seconds: float


def _target_h(kind: DomainKind, n_sub: int) -> float:
    """Mesh parameter that makes build_domain use exactly n_sub subdivisions."""
    if kind == DomainKind.LSHAPE:
        return 1.0 / (math.sqrt(2.0) * n_sub)
    if kind == DomainKind.DISK:
        return 0.75 / n_sub
    return 1.0 / n_sub


class AcceptanceContext:
    """Caches uniform eigenvalue sweeps and adaptive runs across checks."""

    def __init__(self) -> None:
        self._sweeps: dict = {}
        self._adaptive: dict = {}

    def sweep(
        self, kind: DomainKind, n: complex, subdivisions: tuple[int, ...], count: int = 6
    ) -> tuple[np.ndarray, np.ndarray]:
        """Leading eigenvalues over a uniform family: (dofs, levels x count)."""
        key = (kind, n, subdivisions, count)
        if key not in self._sweeps:
            rule = default_sort_rule(n)
            dofs, lams = [], []
            for n_sub in subdivisions:
                mesh = build_domain(kind, _target_h(kind, n_sub))
                space = build_space(mesh)
                problem = build_pencil(space, 1.0, n)
                pairs = solve_eigs(problem, count, rule, with_duals=False)
                dofs.append(space.n_dofs)
                lams.append([p.lam for p in pairs])
            self._sweeps[key] = (np.array(dofs), np.array(lams))
        return self._sweeps[key]

    def adaptive(
        self, kind: DomainKind, n: complex, j: int, theta: float, max_dof: int
    ) -> AdaptRun:
        key = (kind, n, j, theta, max_dof)
        if key not in self._adaptive:
            self._adaptive[key] = adapt_loop(
                kind, 1.0, n, eig_index=j, theta=theta, max_dof=max_dof
            )
        return self._adaptive[key]


def check_disk_real(ctx: AcceptanceContext) -> CheckResult:
    """Criterion 1: disk spectrum, n=4, six leading eigenvalues."""
    ref = disk_reference(4.0)
    _, lams = ctx.sweep(DomainKind.DISK, 4.0 + 0.0j, (64,), count=6)
    gaps = np.abs(lams[-1] - ref)
    return CheckResult(
        criterion=1,
        name="disk spectrum, n=4",
        expected=np.array2string(ref, precision=6),
        observed=f"max |lam - ref| = {gaps.max():.2e}",
        tolerance="5e-3 per eigenvalue",
        passed=bool((gaps <= 5e-3).all()),
        seconds=0.0,
    )


def check_disk_complex(ctx: AcceptanceContext) -> CheckResult:
    """Criterion 2: disk spectrum, n=4+4i, four leading eigenvalues."""
    ref = disk_reference(4.0 + 4.0j)
    _, lams = ctx.sweep(DomainKind.DISK, 4.0 + 4.0j, (64,), count=4)
    gaps = np.abs(lams[-1] - ref)
    return CheckResult(
        criterion=2,
        name="disk spectrum, n=4+4i",
        expected=np.array2string(ref, precision=6),
        observed=f"max |lam - ref| = {gaps.max():.2e}",
        tolerance="5e-3 per eigenvalue",
        passed=bool((gaps <= 5e-3).all()),
        seconds=0.0,
    )


def check_eigenvalue_orders(ctx: AcceptanceContext, quick: bool = False) -> CheckResult:
    """Criterion 3: fitted eigenvalue convergence orders on uniform sweeps."""
    dofs, lams = ctx.sweep(DomainKind.SQUARE, 4.0 + 0.0j, (16, 32, 64, 128, 256))
    square_orders = [
        eigenvalue_order_fit(dofs, lams[:, j], expected_order=2.0)[0] for j in range(6)
    ]
    parts = [f"square={np.round(square_orders, 3)}"]
    ok = all(abs(o - 2.0) <= 0.2 for o in square_orders)

    if not quick:
        ref_l = polygon_reference(DomainKind.LSHAPE, 4.0)[1]
        dofs_l, lams_l = ctx.sweep(DomainKind.LSHAPE, 4.0 + 0.0j, (8, 16, 32, 64))
        order_l = eigenvalue_order_fit(dofs_l, lams_l[:, 1], reference=ref_l)[0]
        ref_s = polygon_reference(DomainKind.SLIT, 4.0)[1]
        dofs_s, lams_s = ctx.sweep(DomainKind.SLIT, 4.0 + 0.0j, (32, 64, 128, 256))
        order_s = eigenvalue_order_fit(dofs_s, lams_s[:, 1], reference=ref_s)[0]
        parts.append(f"lshape lam2={order_l:.3f}")
        parts.append(f"slit lam2={order_s:.3f}")
        ok = ok and abs(order_l - 4.0 / 3.0) <= 0.2 and abs(order_s - 1.0) <= 0.2
    return CheckResult(
        criterion=3,
        name="uniform eigenvalue convergence orders",
        expected="square 2.0 each; lshape lam2 1.333; slit lam2 1.0",
        observed="; ".join(parts),
        tolerance="+-0.2 on each fitted order",
        passed=ok,
        seconds=0.0,
    )


def _matched_gaps(refs: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Distance from each reference to its own nearest candidate, injectively.

    The discrete spectrum can hold eigenvalues between two tabulated ones
    (the slit with complex refraction has one between the fifth and sixth),
    so references are matched to candidate values by proximity instead of
    by shared sort position.
    """
    table = np.abs(refs[:, None] - candidates[None, :])
    gaps = np.full(len(refs), np.inf)
    for _ in range(len(refs)):
        i, j = np.unravel_index(np.argmin(table), table.shape)
        gaps[i] = table[i, j]
        table[i, :] = np.inf
        table[:, j] = np.inf
    return gaps


def check_polygon_references(ctx: AcceptanceContext) -> CheckResult:
    """Criterion 4: finest-level polygon spectra against reference tables."""
    gaps = {}
    for kind, n_sub in ((DomainKind.LSHAPE, 64), (DomainKind.SLIT, 256)):
        for n in (4.0 + 0.0j, 4.0 + 4.0j):
            ref = polygon_reference(kind, n)
            # Two spare candidates absorb any interloping eigenvalues.
            count = 6 if n.imag == 0.0 else 8
            _, lams = ctx.sweep(kind, n, _sweep_levels(kind, n, n_sub), count=count)
            gaps[f"{kind.value},n={n:g}"] = _matched_gaps(ref, lams[-1]).max()
    worst = max(gaps.values())
    return CheckResult(
        criterion=4,
        name="polygon reference spectra at finest level",
        expected="six tabulated eigenvalues per domain and refraction",
        observed="; ".join(f"{k}: {v:.2e}" for k, v in gaps.items()),
        tolerance="5e-3 per eigenvalue",
        passed=bool(worst <= 5e-3),
        seconds=0.0,
    )


def _sweep_levels(kind: DomainKind, n: complex, finest: int) -> tuple[int, ...]:
    """Full sweep for the rate-bearing real case, single level otherwise."""
    if n.imag == 0.0:
        if kind == DomainKind.LSHAPE:
            return (8, 16, 32, 64)
        return (32, 64, 128, 256)
    return (finest,)


def _tail_slope(xs: np.ndarray, ys: np.ndarray, window: int = 5) -> float:
    keep = ys > 0.0
    xs, ys = xs[keep], ys[keep]
    return float(np.polyfit(np.log(xs[-window:]), np.log(ys[-window:]), 1)[0])


def check_adaptive_slopes(ctx: AcceptanceContext) -> CheckResult:
    """Criterion 5: error and estimator decay of the adaptive runs."""
    # The slit run stops early: past ~2e4 dofs the eigenvalue error bottoms
    # out at the accuracy of the tabulated reference (~2e-4) and the slope
    # window would straddle the floor; the estimator keeps slope -1 well
    # beyond it.
    slopes = {}
    for kind, max_dof in ((DomainKind.LSHAPE, 30000), (DomainKind.SLIT, 4000)):
        run = ctx.adaptive(kind, 4.0 + 0.0j, j=2, theta=0.5, max_dof=max_dof)
        ref = polygon_reference(kind, 4.0)[1]
        errs = np.abs(run.lams - ref)
        slopes[f"{kind.value} err"] = _tail_slope(run.dofs, errs)
        slopes[f"{kind.value} eta^2"] = _tail_slope(run.dofs, run.eta_sqs)
    ok = all(abs(s + 1.0) <= 0.2 for s in slopes.values())
    return CheckResult(
        criterion=5,
        name="adaptive optimality slopes, lam2",
        expected="log-log slope -1 vs dof for error and eta^2",
        observed="; ".join(f"{k}: {v:.3f}" for k, v in slopes.items()),
        tolerance="+-0.2",
        passed=ok,
        seconds=0.0,
    )


def check_adaptive_superiority(ctx: AcceptanceContext) -> CheckResult:
    """Criterion 6: adaptive beats uniform at matched dof on the slit."""
    ref = polygon_reference(DomainKind.SLIT, 4.0)[1]
    run = ctx.adaptive(DomainKind.SLIT, 4.0 + 0.0j, j=2, theta=0.5, max_dof=55000)
    idx = int(np.argmax(run.dofs >= 50000))
    if run.dofs[idx] < 50000:
        idx = len(run.dofs) - 1
    dof_a = run.dofs[idx]
    err_a = abs(run.lams[idx] - ref)

    dofs_u, lams_u = ctx.sweep(DomainKind.SLIT, 4.0 + 0.0j, (32, 64, 128, 256))
    errs_u = np.abs(lams_u[:, 1] - ref)
    err_u = float(
        np.exp(np.interp(np.log(dof_a), np.log(dofs_u), np.log(errs_u)))
    )
    return CheckResult(
        criterion=6,
        name="adaptive superiority on the slit, lam2",
        expected="adaptive error below the uniform error at matched dof >= 5e4",
        observed=f"adaptive {err_a:.2e} at dof {dof_a} vs uniform {err_u:.2e}",
        tolerance="strict inequality",
        passed=bool(err_a < err_u),
        seconds=0.0,
    )


def check_source_rates(ctx: AcceptanceContext) -> CheckResult:
    """Criterion 7: manufactured-solution orders on the square."""
    k, n = 1.0, 4.0
    exact = manufactured_loads(SOURCE_FIELD, k, n)
    hs, e1, e0 = [], [], []
    for n_sub in (8, 16, 32, 64):
        mesh = build_domain(DomainKind.SQUARE, 1.0 / n_sub)
        space = build_space(mesh)
        a = combine_operator(
            assemble_stiffness(space), assemble_volume_mass(space, n), k
        )
        load = assemble_boundary_load(space, exact.neumann) + assemble_volume_load(
            space, exact.volume_source
        )
        u = solve_source(a, load)
        hs.append(1.0 / n_sub)
        e1.append(broken_h1_error(space, u, exact))
        e0.append(boundary_l2_error(space, u, exact))
    o1 = observed_order(hs, e1)
    o0 = observed_order(hs, e0)
    ok = abs(o1 - 1.0) <= 0.1 and abs(o0 - 2.0) <= 0.15
    return CheckResult(
        criterion=7,
        name="source problem convergence orders on the square",
        expected="broken-H1 order 1.0, boundary-L2 order 2.0",
        observed=f"broken-H1 {o1:.3f}; boundary-L2 {o0:.3f}",
        tolerance="+-0.1 and +-0.15",
        passed=ok,
        seconds=0.0,
    )


def _boundary_mass_oracle(mesh: Mesh) -> np.ndarray:
    """Hand-assembled boundary mass of a mesh, edge by edge."""
    space = build_space(mesh)
    out = np.zeros((space.n_dofs, space.n_dofs))
    for e in mesh.boundary_edge_ids:
        va, vb = mesh.edges[e]
        length = float(np.linalg.norm(mesh.vertices[vb] - mesh.vertices[va]))
        cell = mesh.edge_cells[e, 0]
        local = int(np.flatnonzero(mesh.cell_edges[cell] == e)[0])
        dof_edge = space.cell_dofs[cell, local]
        others = [space.cell_dofs[cell, i] for i in range(3) if i != local]
        out[dof_edge, dof_edge] += length
        for d in others:
            out[d, d] += length / 3.0
        out[others[0], others[1]] -= length / 3.0
        out[others[1], others[0]] -= length / 3.0
    return out


def check_discrete_identities(ctx: AcceptanceContext) -> CheckResult:
    """Criterion 8: operator identities, oracle agreement, invariances."""
    rng = np.random.default_rng(2024)
    gaps: dict[str, float] = {}

    mesh = build_domain(DomainKind.SQUARE, 0.125)
    space = build_space(mesh)
    k, n = 1.0, 4.0
    a = combine_operator(
        assemble_stiffness(space), assemble_volume_mass(space, n), k
    )
    b = assemble_boundary_mass(space)

    # NtD adjointness <T f, g> = <f, T* g> on random boundary data
    f = b.mat @ (rng.standard_normal(space.n_dofs) + 1j * rng.standard_normal(space.n_dofs))
    g = b.mat @ (rng.standard_normal(space.n_dofs) + 1j * rng.standard_normal(space.n_dofs))
    u = solve_source(a, f)
    y = solve_source(a, g, adjoint=True)
    gaps["ntd adjointness"] = abs(np.conj(g) @ u - np.conj(y) @ f)

    # real refraction gives a real spectrum
    problem = build_pencil(space, k, n)
    pairs = solve_eigs(problem, 6, with_duals=False)
    gaps["real spectrum"] = max(abs(p.lam.imag) for p in pairs)

    # dense and shift-invert paths agree on a tiny mesh
    small = build_space(build_domain(DomainKind.SQUARE, 0.25))
    small_problem = build_pencil(small, k, n)
    dense = solve_eigs(small_problem, 4, method="dense", with_duals=False)
    arn = solve_eigs(small_problem, 4, method="arnoldi", with_duals=False)
    gaps["dense vs arnoldi"] = max(
        abs(d.lam - a_.lam) for d, a_ in zip(dense, arn)
    )

    # stiffness annihilates constants; boundary mass integrates the perimeter
    one = np.ones(space.n_dofs)
    gaps["stiffness kernel"] = float(
        np.abs(assemble_stiffness(space) @ one).max()
    )
    gaps["perimeter"] = abs(
        one @ (b @ one) - DomainSpec(DomainKind.SQUARE).perimeter
    )

    # local matrices on the unit right triangle
    tri = mesh_from_arrays(
        np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]])
    )
    tri_space = build_space(tri)
    k_oracle = np.array([[4.0, -2.0, -2.0], [-2.0, 2.0, 0.0], [-2.0, 0.0, 2.0]])
    dofs = tri_space.cell_dofs[0]
    k_local = assemble_stiffness(tri_space).toarray()
    gaps["local stiffness"] = float(
        np.abs(k_local[np.ix_(dofs, dofs)] - k_oracle).max()
    )
    m_local = assemble_volume_mass(tri_space, 1.0).toarray()
    gaps["local mass"] = float(np.abs(m_local - np.eye(3) / 6.0).max())
    gaps["local boundary mass"] = float(
        np.abs(assemble_boundary_mass(tri_space).toarray() - _boundary_mass_oracle(tri)).max()
    )

    # estimator is invariant under flipping every interior edge normal
    pair = solve_eigs(problem, 2)[1]
    eta_plus = indicator_for(space, pair.coeffs, pair.lam, k, n, orientation=1.0)
    eta_minus = indicator_for(space, pair.coeffs, pair.lam, k, n, orientation=-1.0)
    gaps["estimator flip"] = float(
        np.abs(eta_plus.eta_sq - eta_minus.eta_sq).max()
    )

    # nonconformity functional vanishes on continuous test functions; a
    # quartic field keeps every quadrature in the defect exact, so the
    # identity must hold to rounding for arbitrary conforming data
    exact = manufactured_loads("x**4 - 3*x**2*y**2 + y**3 + x*y", k, n)
    rng = np.random.default_rng(20240117)
    v = vertex_interpolant(space, rng.standard_normal(mesh.n_vertices))
    gaps["conforming consistency"] = abs(consistency_term(space, k, n, exact, v))

    tols = {
        "ntd adjointness": 1e-10,
        "real spectrum": 1e-8,
        "dense vs arnoldi": 1e-9,
        "stiffness kernel": 1e-12,
        "perimeter": 1e-12,
        "local stiffness": 1e-12,
        "local mass": 1e-12,
        "local boundary mass": 1e-12,
        "estimator flip": 1e-13,
        "conforming consistency": 1e-10,
    }
    failed = [name for name, gap in gaps.items() if gap > tols[name]]
    return CheckResult(
        criterion=8,
        name="discrete identities and oracle agreement",
        expected="ten sub-checks within their stated tolerances",
        observed="; ".join(f"{k_}={v:.1e}" for k_, v in gaps.items()),
        tolerance="; ".join(f"{k_}<{v:g}" for k_, v in tols.items()),
        passed=not failed,
        seconds=0.0,
    )


def check_monotonicity(ctx: AcceptanceContext) -> CheckResult:
    """Criterion 9: lam2 decreases under uniform refinement on the polygons.

    The first square eigenvalue increases instead; that exception is
    reported as part of the observation, not failed.
    """
    _, lams_l = ctx.sweep(DomainKind.LSHAPE, 4.0 + 0.0j, (8, 16, 32, 64))
    _, lams_s = ctx.sweep(DomainKind.SLIT, 4.0 + 0.0j, (32, 64, 128, 256))
    _, lams_q = ctx.sweep(DomainKind.SQUARE, 4.0 + 0.0j, (16, 32, 64, 128, 256))
    rep_l = monotonicity_check(lams_l[:, 1].real, decreasing=True)
    rep_s = monotonicity_check(lams_s[:, 1].real, decreasing=True)
    rep_q = monotonicity_check(lams_q[:, 0].real, decreasing=False)
    observed = (
        f"lshape lam2 strictly decreasing: {rep_l.strict}; "
        f"slit lam2 strictly decreasing: {rep_s.strict}; "
        f"square lam1 increasing (documented exception): {rep_q.strict}"
    )
    return CheckResult(
        criterion=9,
        name="eigenvalue monotonicity under uniform refinement",
        expected="lshape and slit lam2 strictly decreasing",
        observed=observed,
        tolerance="strict monotonicity",
        passed=rep_l.strict and rep_s.strict,
        seconds=0.0,
    )


_FULL_SUITE: list[Callable[[AcceptanceContext], CheckResult]] = [
    check_disk_real,
    check_disk_complex,
    check_eigenvalue_orders,
    check_polygon_references,
    check_adaptive_slopes,
    check_adaptive_superiority,
    check_source_rates,
    check_discrete_identities,
    check_monotonicity,
]

_QUICK_SUITE: list[Callable[[AcceptanceContext], CheckResult]] = [
    lambda ctx: check_eigenvalue_orders(ctx, quick=True),
    check_source_rates,
    check_discrete_identities,
]


def run_all(
    quick: bool = False, log: Optional[Callable[[str], None]] = None
) -> list[CheckResult]:
    """Execute the acceptance checks, sharing cached sweeps between them."""
    ctx = AcceptanceContext()
    results = []
    for fn in _QUICK_SUITE if quick else _FULL_SUITE:
        t0 = time.perf_counter()
        try:
            result = fn(ctx)
        except Exception as exc:  # a crashed check is a failed check
            name = getattr(fn, "__name__", "check")
            result = CheckResult(
                criterion=0,
                name=name,
                expected="check completes",
                observed=f"error: {exc!r}",
                tolerance="",
                passed=False,
                seconds=0.0,
            )
        result = dataclasses.replace(result, seconds=time.perf_counter() - t0)
        results.append(result)
        if log is not None:
            status = "PASS" if result.passed else "FAIL"
            log(
                f"criterion {result.criterion}: {status} ({result.seconds:.1f}s) "
                f"{result.name}: {result.observed}"
            )
    return results
