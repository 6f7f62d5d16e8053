"""Mesh construction, connectivity invariants, bisection and persistence."""

import numpy as np
import pytest

from steklov_cr import (
    DomainKind,
    DomainSpec,
    MeshError,
    build_domain,
    build_space,
    load_mesh,
    refine_bisect,
    refine_uniform,
    save_mesh,
)
from steklov_cr.geometry import mesh_from_arrays


def dof_count(mesh):
    return mesh.n_edges


class TestDomainFamilies:
    @pytest.mark.parametrize("n", [2, 4, 8, 16])
    def test_square_dof_formula(self, n):
        mesh = build_domain(DomainKind.SQUARE, target_h=1.0 / n)
        assert dof_count(mesh) == 3 * n * n + 2 * n
        assert mesh.n_cells == 2 * n * n

    @pytest.mark.parametrize("n", [2, 4, 8])
    def test_lshape_dof_formula(self, n):
        mesh = build_domain(DomainKind.LSHAPE, target_h=1.0 / (np.sqrt(2.0) * n))
        assert dof_count(mesh) == 9 * n * n + 4 * n
        assert mesh.n_cells == 6 * n * n

    @pytest.mark.parametrize("n", [2, 4, 8])
    def test_slit_dof_formula(self, n):
        mesh = build_domain(DomainKind.SLIT, target_h=1.0 / n)
        assert dof_count(mesh) == 3 * n * n + 2 * n + n // 2

    @pytest.mark.parametrize("rings", [1, 2, 4, 8])
    def test_disk_dof_formula(self, rings):
        mesh = build_domain(DomainKind.DISK, target_h=0.75 / rings)
        assert dof_count(mesh) == 9 * rings * rings + 3 * rings
        assert mesh.n_cells == 6 * rings * rings

    def test_string_and_spec_inputs_agree(self):
        a = build_domain("square", target_h=0.5)
        b = build_domain(DomainSpec(DomainKind.SQUARE), target_h=0.5)
        assert np.array_equal(a.cells, b.cells)
        assert np.allclose(a.vertices, b.vertices)

    def test_slit_rounds_odd_subdivision_up(self):
        # The cut needs an even grid; an odd request bumps to the next even N.
        odd = build_domain(DomainKind.SLIT, target_h=1.0 / 3.0)
        even = build_domain(DomainKind.SLIT, target_h=0.25)
        assert odd.n_edges == even.n_edges


class TestAreasAndOrientation:
    @pytest.mark.parametrize(
        "kind, area",
        [
            (DomainKind.SQUARE, 2.0),
            (DomainKind.LSHAPE, 3.0),
            (DomainKind.SLIT, 2.0),
        ],
    )
    def test_total_area(self, kind, area):
        target = 0.25 if kind is not DomainKind.LSHAPE else 1.0 / (4.0 * np.sqrt(2.0))
        mesh = build_domain(kind, target_h=target)
        assert mesh.signed_areas().sum() == pytest.approx(area, rel=1e-12)

    def test_all_cells_counterclockwise(self):
        for kind in DomainKind:
            mesh = build_domain(kind, target_h=0.25)
            assert (mesh.signed_areas() > 0).all()

    def test_disk_area_converges_to_pi(self):
        # Polygonal approximation of the unit disk from inside.
        areas = []
        for rings in (4, 8, 16):
            mesh = build_domain(DomainKind.DISK, target_h=1.0 / rings)
            areas.append(mesh.signed_areas().sum())
        gaps = np.pi - np.asarray(areas)
        assert (gaps > 0).all()
        ratios = gaps[:-1] / gaps[1:]
        assert np.allclose(ratios, 4.0, rtol=0.1)


class TestConnectivity:
    @pytest.mark.parametrize("kind", list(DomainKind))
    def test_edge_tables_consistent(self, kind):
        mesh = build_domain(kind, target_h=0.25)
        # Every cell edge index points back to an edge made of that cell's
        # vertices; interior edges list two distinct cells, boundary one.
        for c in range(mesh.n_cells):
            verts = set(mesh.cells[c])
            for e in mesh.cell_edges[c]:
                assert set(mesh.edges[e]) <= verts
                assert c in mesh.edge_cells[e]
        interior = ~mesh.boundary_edges
        assert (mesh.edge_cells[interior] >= 0).all()
        assert (mesh.edge_cells[mesh.boundary_edges, 1] < 0).all()

    @pytest.mark.parametrize("kind", list(DomainKind))
    def test_euler_characteristic(self, kind):
        mesh = build_domain(kind, target_h=0.25)
        # V - E + F = 1 for a triangulated planar region without holes
        # (the slit does not change the count: it is cut, not removed).
        assert mesh.n_vertices - mesh.n_edges + mesh.n_cells == 1

    def test_slit_duplicates_cut_vertices(self):
        n = 4
        mesh = build_domain(DomainKind.SLIT, target_h=1.0 / n)
        square = build_domain(DomainKind.SQUARE, target_h=1.0 / n)
        # Cut runs from the midpoint to the boundary: N/2 duplicated vertices,
        # the tip itself stays shared.
        assert mesh.n_vertices == square.n_vertices + n // 2

    def test_boundary_length_square(self):
        mesh = build_domain(DomainKind.SQUARE, target_h=0.25)
        length = mesh.edge_lengths()[mesh.boundary_edge_ids].sum()
        assert length == pytest.approx(4.0 * np.sqrt(2.0), rel=1e-12)

    def test_boundary_length_slit_counts_both_sides(self):
        mesh = build_domain(DomainKind.SLIT, target_h=0.25)
        length = mesh.edge_lengths()[mesh.boundary_edge_ids].sum()
        # Outer perimeter plus both sides of the cut of length sqrt(2)/2.
        assert length == pytest.approx(4.0 * np.sqrt(2.0) + np.sqrt(2.0), rel=1e-12)


class TestUniformRefinement:
    @pytest.mark.parametrize("kind", list(DomainKind))
    def test_quadruples_cells(self, kind):
        mesh = build_domain(kind, target_h=0.5)
        fine = refine_uniform(mesh)
        assert fine.n_cells == 4 * mesh.n_cells
        assert fine.signed_areas().sum() >= mesh.signed_areas().sum() - 1e-12

    def test_square_matches_direct_build(self):
        fine = refine_uniform(build_domain(DomainKind.SQUARE, target_h=0.5))
        direct = build_domain(DomainKind.SQUARE, target_h=0.25)
        assert fine.n_edges == direct.n_edges
        assert fine.n_cells == direct.n_cells

    def test_disk_boundary_lands_on_circle(self):
        mesh = build_domain(DomainKind.DISK, target_h=0.5)
        fine = refine_uniform(mesh)
        boundary_vertices = np.unique(fine.edges[fine.boundary_edge_ids])
        radii = np.linalg.norm(fine.vertices[boundary_vertices], axis=1)
        assert np.allclose(radii, 1.0, atol=1e-14)


class TestBisection:
    def test_marked_cells_are_split(self):
        mesh = build_domain(DomainKind.SQUARE, target_h=0.25)
        fine = refine_bisect(mesh, [0])
        assert fine.n_cells > mesh.n_cells
        assert fine.signed_areas().sum() == pytest.approx(
            mesh.signed_areas().sum(), rel=1e-12
        )

    def test_empty_marking_is_identity(self):
        mesh = build_domain(DomainKind.SQUARE, target_h=0.25)
        fine = refine_bisect(mesh, [])
        assert fine.n_cells == mesh.n_cells

    def test_closure_keeps_mesh_conforming(self, rng):
        mesh = build_domain(DomainKind.LSHAPE, target_h=1.0 / (2.0 * np.sqrt(2.0)))
        for _ in range(6):
            marked = rng.choice(mesh.n_cells, size=max(1, mesh.n_cells // 5), replace=False)
            mesh = refine_bisect(mesh, marked)
            # Conformity: an interior edge is shared by exactly the two cells
            # that list it; hanging nodes would break the edge identity.
            interior = ~mesh.boundary_edges
            counts = np.zeros(mesh.n_edges, dtype=int)
            for c in range(mesh.n_cells):
                counts[mesh.cell_edges[c]] += 1
            assert (counts[interior] == 2).all()
            assert (counts[mesh.boundary_edges] == 1).all()
            assert (mesh.signed_areas() > 0).all()

    def test_shape_regularity_bounded(self, rng):
        # Newest-vertex bisection cycles through finitely many similarity
        # classes: the minimum angle never degrades below the coarse mesh's.
        mesh = build_domain(DomainKind.SQUARE, target_h=0.5)

        def min_angle(m):
            p = m.vertices[m.cells]
            angles = []
            for i in range(3):
                a = p[:, (i + 1) % 3] - p[:, i]
                b = p[:, (i + 2) % 3] - p[:, i]
                cosang = (a * b).sum(axis=1) / (
                    np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
                )
                angles.append(np.degrees(np.arccos(np.clip(cosang, -1, 1))))
            return np.min(angles)

        coarse_angle = min_angle(mesh)
        for _ in range(5):
            marked = rng.choice(mesh.n_cells, size=max(1, mesh.n_cells // 4), replace=False)
            mesh = refine_bisect(mesh, marked)
        assert min_angle(mesh) >= coarse_angle - 1e-9

    def test_disk_new_boundary_midpoints_projected(self):
        mesh = build_domain(DomainKind.DISK, target_h=1.0 / 2.0)
        boundary_cells = np.unique(mesh.edge_cells[mesh.boundary_edge_ids, 0])
        fine = refine_bisect(mesh, boundary_cells)
        boundary_vertices = np.unique(fine.edges[fine.boundary_edge_ids])
        radii = np.linalg.norm(fine.vertices[boundary_vertices], axis=1)
        assert np.allclose(radii, 1.0, atol=1e-14)


class TestPersistence:
    def test_save_load_roundtrip(self, tmp_path):
        mesh = build_domain(DomainKind.DISK, target_h=0.5)
        path = str(tmp_path / "mesh.json")
        save_mesh(mesh, path)
        back = load_mesh(path)
        assert np.allclose(back.vertices, mesh.vertices)
        assert np.array_equal(back.cells, mesh.cells)
        assert back.kind == mesh.kind
        # Circle flags survive so later refinements still project.
        assert np.array_equal(back.on_circle, mesh.on_circle)

    def test_roundtrip_preserves_spectral_setup(self, tmp_path):
        mesh = build_domain(DomainKind.SQUARE, target_h=0.25)
        path = str(tmp_path / "mesh.json")
        save_mesh(mesh, path)
        back = load_mesh(path)
        a = build_space(mesh)
        b = build_space(back)
        assert a.n_dofs == b.n_dofs
        assert np.allclose(a.areas, b.areas)


class TestFromArrays:
    def test_keeps_cell_ordering(self):
        vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        cells = np.array([[0, 1, 2], [0, 2, 3]])
        mesh = mesh_from_arrays(vertices, cells)
        assert np.array_equal(mesh.cells, cells)
        assert mesh.n_edges == 5
        assert int(mesh.boundary_edges.sum()) == 4

    def test_rejects_clockwise_cells(self):
        vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(MeshError):
            mesh_from_arrays(vertices, np.array([[0, 2, 1]]))
