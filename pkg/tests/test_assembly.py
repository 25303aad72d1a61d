import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp
import sympy

from viscofem.assembly import (apply_dirichlet, assemble_mass, assemble_neumann,
                               assemble_source, assemble_stiffness, export_matrix_market,
                               local_mass, local_stiffness)
from viscofem.fespace import build_space
from viscofem.mesh import triangle_mesh, unit_square_mesh


@pytest.fixture
def ref_space():
    mesh = triangle_mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])
    return build_space(mesh, 1)


def symbolic_p1_mass():
    x, y = sympy.symbols("x y")
    lam = [1 - x - y, x, y]
    return np.array([[float(sympy.integrate(sympy.integrate(a * b, (y, 0, 1 - x)), (x, 0, 1)))
                      for b in lam] for a in lam])


def test_reference_mass_matches_symbolic(ref_space):
    oracle = symbolic_p1_mass()
    assert np.allclose(oracle, np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24, atol=1e-16)
    assert np.abs(local_mass(ref_space)[0] - oracle).max() < 1e-14


def test_reference_stiffness(ref_space):
    expected = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])
    assert np.abs(local_stiffness(ref_space)[0] - expected).max() < 1e-14


def test_p2_local_mass_symbolic():
    mesh = triangle_mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])
    space = build_space(mesh, 2)
    x, y = sympy.symbols("x y")
    l0, l1, l2 = 1 - x - y, x, y
    basis = [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0]

    def integ(e):
        return float(sympy.integrate(sympy.integrate(sympy.expand(e), (y, 0, 1 - x)), (x, 0, 1)))

    mass = np.array([[integ(a * b) for b in basis] for a in basis])
    stiff = np.array([[integ(sympy.diff(a, x) * sympy.diff(b, x) + sympy.diff(a, y) * sympy.diff(b, y))
                       for b in basis] for a in basis])
    assert np.abs(local_mass(space)[0] - mass).max() < 1e-14
    assert np.abs(local_stiffness(space)[0] - stiff).max() < 1e-14


@pytest.mark.parametrize("degree", [1, 2])
def test_mass_properties(degree):
    space = build_space(unit_square_mesh(4), degree)
    M1 = assemble_mass(space, 1.0)
    M2 = assemble_mass(space, 2.0)
    assert np.abs((M2 - 2 * M1).toarray()).max() == 0.0
    ones = np.ones(space.ndofs)
    assert ones @ (M1 @ ones) == pytest.approx(1.0, abs=1e-14)
    assert ones @ (M2 @ ones) == pytest.approx(2.0, abs=1e-14)
    assert np.all(np.linalg.eigvalsh(M1.toarray()) > 0)


@pytest.mark.parametrize("degree", [1, 2])
def test_stiffness_kernel_and_energy(degree):
    space = build_space(unit_square_mesh(4), degree)
    A = assemble_stiffness(space, 3.0)
    assert np.abs(A @ np.ones(space.ndofs)).max() < 1e-13
    v = space.interpolate(lambda x, y: x)
    assert v @ (A @ v) == pytest.approx(3.0, rel=1e-13)


@pytest.mark.parametrize("degree", [1, 2])
@pytest.mark.parametrize("n", [2, 5, 8])
def test_symmetry_and_reduced_spd(degree, n):
    space = build_space(unit_square_mesh(n), degree)
    for mat in (assemble_mass(space, 1.0), assemble_stiffness(space, 1.0)):
        scale = abs(mat).max()
        assert abs(mat - mat.T).max() <= 1e-13 * scale
        red = apply_dirichlet(mat, [], space).matrix.toarray()
        np.linalg.cholesky(red)
        assert np.all(mat.diagonal() > 0)


def test_reduced_stiffness_n4_spd():
    space = build_space(unit_square_mesh(4), 1)
    red = apply_dirichlet(assemble_stiffness(space, 1.0), [], space)
    assert red.matrix.shape == (16, 16)
    assert np.linalg.eigvalsh(red.matrix.toarray()).min() > 0


def test_element_order_independent():
    mesh = unit_square_mesh(6)
    space = build_space(mesh, 2)
    rng = np.random.default_rng(3)
    perm = rng.permutation(mesh.num_triangles)
    from dataclasses import replace
    shuffled = build_space(replace(mesh, triangles=mesh.triangles[perm]), 2)
    # midpoint dof numbering depends only on the edge set, so the matrices align
    assert np.array_equal(space.dof_coords, shuffled.dof_coords)
    for build in (lambda s: assemble_mass(s, 1.0), lambda s: assemble_stiffness(s, 1.0)):
        a, b = build(space), build(shuffled)
        assert np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices)
        assert np.abs(a.data - b.data).max() <= 1e-15


@pytest.mark.parametrize("degree", [1, 2])
def test_source_loads(degree):
    space = build_space(unit_square_mesh(4), degree)
    assert np.all(assemble_source(space, lambda x, y, t: 0.0, 0.0) == 0)
    assert assemble_source(space, lambda x, y, t: 1.0, 0.0).sum() == pytest.approx(1.0, abs=1e-14)
    assert assemble_source(space, lambda x, y, t: x + y, 0.0).sum() == pytest.approx(1.0, abs=1e-14)
    b = assemble_source(space, lambda x, y, t: t * x * y, 2.0)
    assert b.sum() == pytest.approx(0.5, abs=1e-14)


@pytest.mark.parametrize("degree", [1, 2])
def test_neumann_loads(degree):
    space = build_space(unit_square_mesh(4), degree)
    assert np.all(assemble_neumann(space, lambda x, y, t: 0.0, 0.0) == 0)
    b = assemble_neumann(space, lambda x, y, t: 1.0, 0.0)
    assert b.sum() == pytest.approx(2.0, abs=1e-14)
    on_gn = np.isclose(space.dof_coords, 1.0).any(axis=1)
    assert np.all(b[~on_gn] == 0)
    g = lambda x, y, t: np.where(np.isclose(x, 1.0), y, 0.0)
    assert assemble_neumann(space, g, 0.0).sum() == pytest.approx(0.5, abs=1e-14)


def test_apply_dirichlet_small():
    mesh = unit_square_mesh(1)
    space = build_space(mesh, 1)
    A = assemble_stiffness(space, 1.0)
    b = np.arange(4.0)
    red = apply_dirichlet(A, [b], space)
    assert red.matrix.shape == (1, 1)
    assert red.vectors[0].tolist() == [b[space.free[0]]]
    x = np.linalg.solve(red.matrix.toarray(), red.vectors[0])
    full = red.expand(x)
    assert np.all(full[space.constrained] == 0)
    assert full[space.free[0]] == x[0]


def test_matrix_market_roundtrip(tmp_path):
    space = build_space(unit_square_mesh(3), 2)
    A = assemble_stiffness(space, 1.0)
    path = tmp_path / "A.mtx"
    export_matrix_market(path, A)
    B = sp.csr_matrix(scipy.io.mmread(str(path)))
    assert abs(A - B).max() < 1e-15
