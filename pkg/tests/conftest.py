"""Shared fixtures: tiny meshes with known geometry and a seeded RNG."""

import numpy as np
import pytest

from steklov_cr import DomainKind, build_domain, build_space
from steklov_cr.geometry import mesh_from_arrays


@pytest.fixture
def rng():
    return np.random.default_rng(20240117)


@pytest.fixture
def unit_triangle_mesh():
    """Single right triangle (0,0)-(1,0)-(0,1), area 1/2, hypotenuse sqrt(2)."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    cells = np.array([[0, 1, 2]])
    return mesh_from_arrays(vertices, cells)


@pytest.fixture
def unit_triangle_space(unit_triangle_mesh):
    return build_space(unit_triangle_mesh)


@pytest.fixture
def square_mesh():
    """Structured square mesh, N=4 (56 dofs): small enough for dense oracles."""
    return build_domain(DomainKind.SQUARE, target_h=0.25)


@pytest.fixture
def square_space(square_mesh):
    return build_space(square_mesh)


@pytest.fixture
def perturbed_mesh(rng):
    """Square mesh with interior vertices jiggled: breaks structured symmetry
    so assembly identities are exercised on irregular (still valid) cells."""
    mesh = build_domain(DomainKind.SQUARE, target_h=0.25)
    vertices = mesh.vertices.copy()
    half = np.sqrt(2.0) / 2.0
    interior = (np.abs(vertices[:, 0]) < half - 1e-12) & (
        np.abs(vertices[:, 1]) < half - 1e-12
    )
    shift = rng.uniform(-0.04, 0.04, size=(int(interior.sum()), 2))
    vertices[interior] += shift
    return mesh_from_arrays(vertices, mesh.cells.copy(), kind=mesh.kind)


@pytest.fixture
def perturbed_space(perturbed_mesh):
    return build_space(perturbed_mesh)
