"""Element matrices against hand-computed oracles, quadrature exactness,
and global assembly identities on structured and perturbed meshes."""

import math

import numpy as np
import pytest

from steklov_cr import (
    Coefficient,
    assemble_boundary_load,
    assemble_boundary_mass,
    assemble_stiffness,
    assemble_volume_load,
    assemble_volume_mass,
    build_domain,
    build_space,
    combine_operator,
)
from steklov_cr.geometry import DomainKind, mesh_from_arrays
from steklov_cr.quadrature import edge_rule, triangle_rule

# Dof i sits at the midpoint of the edge opposite vertex i; basis phi_i has
# value 1 there, -1 at the opposite vertex's two adjacent midpoints... no:
# phi_i = 1 - 2 lambda_i, with lambda_i the barycentric coordinate of
# vertex i.  On the unit right triangle (0,0)-(1,0)-(0,1) the exact element
# matrices below follow from direct integration.
STIFFNESS_ORACLE = np.array(
    [
        [4.0, -2.0, -2.0],
        [-2.0, 2.0, 0.0],
        [-2.0, 0.0, 2.0],
    ]
)
# integral of phi_i phi_j = |K|/3 delta_ij for CR midpoint basis.
MASS_ORACLE = np.eye(3) / 6.0


def edge_block(length):
    """Boundary mass block for one edge: own-dof entry L, the two endpoint
    slot couplings follow from traces 2s-1 and 1-2s on the edge."""
    return length * np.array(
        [
            [1.0, 0.0, 0.0],
            [0.0, 1.0 / 3.0, -1.0 / 3.0],
            [0.0, -1.0 / 3.0, 1.0 / 3.0],
        ]
    )


class TestQuadratureRules:
    def test_midpoint_rule_exact_for_quadratics(self):
        pts, wts = triangle_rule(2)
        # Integrate lambda_0^a lambda_1^b over the reference triangle and
        # compare with a!b!/(a+b+2)! * 2 (area-normalized weights).
        for a, b in ((0, 0), (1, 0), (1, 1), (2, 0), (0, 2)):
            val = (wts * pts[:, 0] ** a * pts[:, 1] ** b).sum()
            exact = (
                2.0
                * math.factorial(a)
                * math.factorial(b)
                / math.factorial(a + b + 2)
            )
            assert val == pytest.approx(exact, abs=1e-15)

    def test_seven_point_rule_exact_for_quintics(self):
        pts, wts = triangle_rule(5)
        for a, b, c in ((5, 0, 0), (3, 2, 0), (2, 2, 1), (1, 1, 3), (4, 1, 0)):
            val = (wts * pts[:, 0] ** a * pts[:, 1] ** b * pts[:, 2] ** c).sum()
            exact = (
                2.0
                * math.factorial(a)
                * math.factorial(b)
                * math.factorial(c)
                / math.factorial(a + b + c + 2)
            )
            assert val == pytest.approx(exact, abs=1e-14)

    def test_edge_rule_exactness(self):
        pts, wts = edge_rule(4)
        for p in range(8):
            assert (wts * pts**p).sum() == pytest.approx(1.0 / (p + 1), abs=1e-15)

    def test_degree_out_of_range(self):
        with pytest.raises(ValueError):
            triangle_rule(6)


class TestElementOracles:
    def test_stiffness_unit_triangle(self, unit_triangle_space):
        k_mat = assemble_stiffness(unit_triangle_space).toarray()
        local = np.zeros((3, 3))
        dofs = unit_triangle_space.cell_dofs[0]
        for i in range(3):
            for j in range(3):
                local[i, j] = k_mat[dofs[i], dofs[j]].real
        assert np.allclose(local, STIFFNESS_ORACLE, atol=1e-12)

    def test_mass_unit_triangle(self, unit_triangle_space):
        m_mat = assemble_volume_mass(unit_triangle_space, 1.0).toarray()
        dofs = unit_triangle_space.cell_dofs[0]
        local = m_mat[np.ix_(dofs, dofs)].real
        assert np.allclose(local, MASS_ORACLE, atol=1e-12)

    def test_mass_scales_with_refraction(self, unit_triangle_space):
        m4 = assemble_volume_mass(unit_triangle_space, 4.0).toarray()
        m1 = assemble_volume_mass(unit_triangle_space, 1.0).toarray()
        assert np.allclose(m4, 4.0 * m1, atol=1e-13)
        mc = assemble_volume_mass(unit_triangle_space, 4.0 + 4.0j).toarray()
        assert np.allclose(mc, (4.0 + 4.0j) * m1, atol=1e-13)

    def test_boundary_mass_unit_triangle(self, unit_triangle_space):
        space = unit_triangle_space
        b_mat = assemble_boundary_mass(space).toarray().real
        # Assemble the oracle edge blocks by hand: all three edges of the
        # single triangle lie on the boundary.
        mesh = space.mesh
        oracle = np.zeros((3, 3))
        for edge_id in mesh.boundary_edge_ids:
            a, b = mesh.edges[edge_id]
            length = np.linalg.norm(mesh.vertices[a] - mesh.vertices[b])
            cell = mesh.edge_cells[edge_id, 0]
            dofs = space.cell_dofs[cell]
            # Local slot of the edge dof: the one whose vertex is opposite.
            local = [np.where(mesh.cell_edges[cell] == edge_id)[0][0]]
            others = [s for s in range(3) if s != local[0]]
            block = edge_block(length)
            slots = local + others
            for bi, i in enumerate(slots):
                for bj, j in enumerate(slots):
                    oracle[dofs[i], dofs[j]] += block[bi, bj]
        assert np.allclose(b_mat, oracle, atol=1e-12)

    def test_stiffness_affine_invariance(self):
        # Stiffness of a CR triangle equals |K| * G G^T with G the gradient
        # matrix; verify on a skewed triangle against direct integration.
        vertices = np.array([[0.2, -0.1], [1.3, 0.4], [0.1, 1.7]])
        cells = np.array([[0, 1, 2]])
        space = build_space(mesh_from_arrays(vertices, cells))
        e1 = vertices[1] - vertices[0]
        e2 = vertices[2] - vertices[0]
        area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
        grads = space.grad_basis[0]
        oracle = area * grads @ grads.T
        dofs = space.cell_dofs[0]
        k_mat = assemble_stiffness(space).toarray().real
        assert np.allclose(k_mat[np.ix_(dofs, dofs)], oracle, atol=1e-12)


class TestGlobalIdentities:
    def test_stiffness_kernel_contains_constants(self, perturbed_space):
        k_mat = assemble_stiffness(perturbed_space)
        ones = np.ones(perturbed_space.n_dofs)
        assert np.abs(k_mat.mat @ ones).max() <= 1e-12

    def test_boundary_mass_measures_perimeter(self, perturbed_space):
        b_mat = assemble_boundary_mass(perturbed_space)
        ones = np.ones(perturbed_space.n_dofs)
        perimeter = 4.0 * np.sqrt(2.0)
        assert ones @ (b_mat.mat @ ones) == pytest.approx(perimeter, abs=1e-12)

    def test_volume_mass_measures_area(self, perturbed_space):
        m_mat = assemble_volume_mass(perturbed_space, 1.0)
        ones = np.ones(perturbed_space.n_dofs)
        area = perturbed_space.mesh.signed_areas().sum()
        assert ones @ (m_mat.mat @ ones) == pytest.approx(area, rel=1e-13)

    def test_quadrature_oracle_matches_midpoint_assembly(self, perturbed_space):
        # Mass with the 7-point rule must equal the midpoint-rule mass for
        # constant n: phi_i phi_j is quadratic, both rules are exact.
        m_mid = assemble_volume_mass(perturbed_space, 4.0).toarray()
        m_deg5 = assemble_volume_mass(perturbed_space, 4.0, quad_degree=5).toarray()
        assert np.allclose(m_mid, m_deg5, atol=1e-13)

    def test_variable_coefficient_mass(self, perturbed_space):
        # For n(x, y) = x the rows must integrate x phi_i over the support.
        m_var = assemble_volume_mass(
            perturbed_space, lambda p: p[:, 0], quad_degree=5
        )
        ones = np.ones(perturbed_space.n_dofs)
        total = ones @ (m_var.mat @ ones)
        pts, wts = triangle_rule(5)
        mesh = perturbed_space.mesh
        coords = pts @ mesh.vertices[mesh.cells]
        exact = (
            mesh.signed_areas()[:, None] * wts[None, :] * coords[..., 0]
        ).sum()
        assert total == pytest.approx(exact, rel=1e-13)

    def test_symmetry_flags(self, square_space):
        assert assemble_stiffness(square_space).symmetric
        assert assemble_volume_mass(square_space, 4.0 + 4.0j).symmetric
        assert assemble_boundary_mass(square_space).symmetric

    def test_combine_operator_is_linear_combination(self, square_space):
        k_op = assemble_stiffness(square_space)
        m_op = assemble_volume_mass(square_space, 4.0)
        a_op = combine_operator(k_op, m_op, -1.0)
        assert np.allclose(
            a_op.toarray(), k_op.toarray() - m_op.toarray(), atol=1e-14
        )

    def test_complex_refraction_gives_complex_operator(self, square_space):
        m_op = assemble_volume_mass(square_space, 4.0 + 4.0j)
        a_op = combine_operator(assemble_stiffness(square_space), m_op, -1.0)
        assert np.iscomplexobj(a_op.mat.toarray() if hasattr(a_op.mat, "toarray") else a_op.mat)


class TestLoads:
    def test_boundary_load_of_one_is_row_sum(self, square_space):
        load = assemble_boundary_load(square_space, lambda p: np.ones(len(p)))
        b_mat = assemble_boundary_mass(square_space)
        ones = np.ones(square_space.n_dofs)
        assert np.allclose(load, b_mat.mat @ ones, atol=1e-13)

    def test_volume_load_of_one_is_mass_row_sum(self, square_space):
        load = assemble_volume_load(square_space, lambda p: np.ones(len(p)))
        m_mat = assemble_volume_mass(square_space, 1.0)
        ones = np.ones(square_space.n_dofs)
        assert np.allclose(load, m_mat.mat @ ones, atol=1e-13)

    def test_boundary_load_linear_field_exact(self, unit_triangle_space):
        # f(x, y) = x integrated against traces on the three boundary edges
        # has a closed form; compare against dense numerical quadrature.
        space = unit_triangle_space
        load = assemble_boundary_load(space, lambda p: p[:, 0], quad_points=4)
        mesh = space.mesh
        pts, wts = edge_rule(12)
        oracle = np.zeros(space.n_dofs)
        for edge_id in mesh.boundary_edge_ids:
            a, b = mesh.edges[edge_id]
            pa, pb = mesh.vertices[a], mesh.vertices[b]
            length = np.linalg.norm(pb - pa)
            coords = pa[None, :] + pts[:, None] * (pb - pa)[None, :]
            fvals = coords[:, 0]
            cell = mesh.edge_cells[edge_id, 0]
            dofs = space.cell_dofs[cell]
            verts = mesh.cells[cell]
            lam = np.zeros((len(pts), 3))
            # Barycentric coordinates along the edge: endpoint vertices ramp,
            # the opposite vertex stays zero.
            ia = np.where(verts == a)[0][0]
            ib = np.where(verts == b)[0][0]
            lam[:, ia] = 1.0 - pts
            lam[:, ib] = pts
            traces = 1.0 - 2.0 * lam
            for slot in range(3):
                oracle[dofs[slot]] += length * (wts * fvals * traces[:, slot]).sum()
        assert np.allclose(load, oracle, atol=1e-13)
