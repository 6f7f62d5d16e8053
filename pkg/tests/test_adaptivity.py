"""Residual estimator identities, marking properties and the adaptive loop."""

import numpy as np
import pytest

from steklov_cr import (
    Coefficient,
    DomainKind,
    adapt_loop,
    build_domain,
    build_pencil,
    build_space,
    compute_jumps,
    estimate,
    indicator_for,
    mark,
    midpoint_interpolant,
    refine_uniform,
    solve_eigs,
)
from steklov_cr.geometry import mesh_from_arrays


@pytest.fixture
def two_triangle_space():
    """Unit square split along the diagonal: one interior edge."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    cells = np.array([[0, 1, 2], [0, 2, 3]])
    return build_space(mesh_from_arrays(vertices, cells))


class TestJumps:
    def test_affine_field_has_no_interior_jumps(self, two_triangle_space):
        # u(x, y) = 2x - y is in the CR space and globally affine: its
        # gradient is continuous, so interior normal and tangential jumps
        # vanish.
        space = two_triangle_space
        coeffs = midpoint_interpolant(space, lambda p: 2.0 * p[:, 0] - p[:, 1])
        jumps = compute_jumps(space, coeffs, lam=0.7)
        interior = ~space.mesh.boundary_edges
        assert np.abs(jumps.normal[interior]).max() <= 1e-13
        assert np.abs(jumps.tangential[interior]).max() <= 1e-13

    def test_boundary_jump_vanishes_at_exact_boundary_condition(
        self, two_triangle_space
    ):
        # For an affine u with grad(u).normal = -lam * u along one boundary
        # edge, that edge's boundary residual is zero.  Bottom edge of the
        # square: normal (0, -1), trace u(x, 0); choose u = y + c so that
        # -du/dy = -lam (y + c) at y = 0, i.e. lam = 1 / c.
        space = two_triangle_space
        c = 2.0
        coeffs = midpoint_interpolant(space, lambda p: p[:, 1] + c)
        jumps = compute_jumps(space, coeffs, lam=1.0 / c)
        mesh = space.mesh
        be = mesh.boundary_edge_ids
        midpoints = mesh.vertices[mesh.edges[be]].mean(axis=1)
        bottom = np.flatnonzero(np.abs(midpoints[:, 1]) < 1e-12)
        assert np.abs(jumps.boundary_normal[bottom]).max() <= 1e-13

    def test_hand_computed_interior_jump(self, two_triangle_space):
        # u = x on the lower cell and u = 1 - x on the upper cell share the
        # value 1/2 at the diagonal midpoint, so this is a CR function.
        # Gradient jump across x = y is (2, 0); with unit normal
        # +-(1, -1)/sqrt(2) and tangent (1, 1)/sqrt(2) both the normal and
        # the tangential jump have magnitude sqrt(2).
        space = two_triangle_space
        coeffs = np.zeros(space.n_dofs)
        mids = space.edge_geom.midpoint
        for cell, fn in ((0, lambda p: p[:, 0]), (1, lambda p: 1.0 - p[:, 0])):
            for dof in space.cell_dofs[cell]:
                coeffs[dof] = fn(mids[[dof]])[0]
        jumps = compute_jumps(space, coeffs, lam=0.0)
        interior = np.flatnonzero(~space.mesh.boundary_edges)
        assert len(interior) == 1
        e = interior[0]
        assert abs(jumps.normal[e]) == pytest.approx(np.sqrt(2.0), abs=1e-13)
        assert abs(jumps.tangential[e]) == pytest.approx(np.sqrt(2.0), abs=1e-13)

    def test_orientation_flip_leaves_indicator_unchanged(self, square_space):
        pencil = build_pencil(square_space, 1.0, 4.0 + 4.0j)
        pair = solve_eigs(pencil, count=2)[1]
        a = indicator_for(square_space, pair.coeffs, pair.lam, 1.0, 4.0 + 4.0j)
        b = indicator_for(
            square_space, pair.coeffs, pair.lam, 1.0, 4.0 + 4.0j, orientation=-1.0
        )
        assert np.allclose(a.eta_sq, b.eta_sq, rtol=1e-13, atol=0.0)


class TestEstimator:
    def test_primal_and_dual_agree_for_real_refraction(self, square_space):
        # Real n makes the pencil real symmetric: dual = primal, so the two
        # indicators coincide.
        pencil = build_pencil(square_space, 1.0, 4.0)
        pair = solve_eigs(pencil, count=1)[0]
        primal, dual = estimate(square_space, pair, 1.0, 4.0)
        assert np.allclose(primal.eta_sq, dual.eta_sq, rtol=1e-12, atol=1e-300)

    def test_eta_decays_like_inverse_dof_on_smooth_problem(self):
        # Uniform refinement on the square: eta^2 ~ dof^-1 for the smooth
        # first eigenfunction.
        dofs, etas = [], []
        mesh = build_domain(DomainKind.SQUARE, target_h=1.0 / 8.0)
        for _ in range(3):
            space = build_space(mesh)
            pencil = build_pencil(space, 1.0, 4.0)
            pair = solve_eigs(pencil, count=1)[0]
            primal, _ = estimate(space, pair, 1.0, 4.0)
            dofs.append(space.n_dofs)
            etas.append(primal.eta_sq.sum())
            mesh = refine_uniform(mesh)
        slope = np.polyfit(np.log(dofs), np.log(etas), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.2)


class TestMarking:
    def test_single_dominant_cell(self):
        eta_sq = np.full(100, 1e-12)
        eta_sq[17] = 1.0
        marked = mark(eta_sq, theta=0.5)
        assert marked.tolist() == [17]

    def test_uniform_indicator_marks_half(self):
        eta_sq = np.ones(10)
        marked = mark(eta_sq, theta=0.5)
        assert len(marked) == 5

    def test_minimality(self, rng):
        eta_sq = rng.uniform(0.1, 1.0, size=64)
        theta = 0.4
        marked = mark(eta_sq, theta)
        total = eta_sq.sum()
        assert eta_sq[marked].sum() >= theta * total
        # Dropping the smallest marked cell must fall below the bulk target.
        smallest = marked[np.argmin(eta_sq[marked])]
        rest = np.setdiff1d(marked, [smallest])
        assert eta_sq[rest].sum() < theta * total

    def test_monotone_in_theta(self, rng):
        eta_sq = rng.uniform(0.0, 1.0, size=64)
        sizes = [len(mark(eta_sq, t)) for t in (0.2, 0.4, 0.6, 0.8)]
        assert sizes == sorted(sizes)

    def test_theta_one_marks_positive_cells(self):
        eta_sq = np.array([0.0, 0.3, 0.0, 0.1, 0.6])
        marked = set(mark(eta_sq, theta=1.0).tolist())
        assert marked == {1, 3, 4}

    def test_indicator_object_accepted(self, square_space):
        pencil = build_pencil(square_space, 1.0, 4.0)
        pair = solve_eigs(pencil, count=1)[0]
        primal, dual = estimate(square_space, pair, 1.0, 4.0)
        marked = mark(primal, theta=0.5)
        assert len(marked) >= 1
        assert marked.dtype == np.int64

    def test_theta_out_of_range(self):
        with pytest.raises(ValueError):
            mark(np.ones(4), theta=0.0)
        with pytest.raises(ValueError):
            mark(np.ones(4), theta=1.5)


class TestAdaptLoop:
    def test_records_and_final_mesh(self):
        run = adapt_loop(
            DomainKind.SQUARE, 1.0, 4.0, eig_index=1, theta=0.5, max_dof=800
        )
        assert len(run.records) >= 2
        assert run.records[-1].dof >= 800
        assert run.final_mesh is not None
        dofs = [r.dof for r in run.records]
        assert dofs == sorted(dofs)
        assert all(r.marked > 0 for r in run.records[:-1])

    def test_lshape_eigenvalue_decreases(self):
        run = adapt_loop(
            DomainKind.LSHAPE, 1.0, 4.0, eig_index=2, theta=0.5, max_dof=2500
        )
        lams = [r.lam.real for r in run.records]
        assert all(a > b for a, b in zip(lams, lams[1:]))

    def test_eig_index_must_be_positive(self):
        with pytest.raises(ValueError):
            adapt_loop(DomainKind.SQUARE, 1.0, 4.0, eig_index=0, theta=0.5, max_dof=500)

    def test_complex_refraction_tracks_descending_imag(self):
        run = adapt_loop(
            DomainKind.SQUARE, 1.0, 4.0 + 4.0j, eig_index=1, theta=0.5, max_dof=800
        )
        assert all(abs(r.lam.imag) > 0.1 for r in run.records)
