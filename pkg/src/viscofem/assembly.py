"""Mass/stiffness assembly, load vectors and Dirichlet elimination."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from .fespace import FunctionSpace, _edge_lookup, edge_quadrature, quadrature


def _assemble(space: FunctionSpace, local: np.ndarray) -> sp.csr_matrix:
    dofs = space.cell_dofs
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1).ravel()
    cols = np.tile(dofs, (1, k)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(space.ndofs, space.ndofs)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def local_mass(space: FunctionSpace, rho: float = 1.0) -> np.ndarray:
    """Element mass matrices, shape (ntri, k, k)."""
    rule = quadrature(2 * space.degree)
    phi = space.element.values(rule.xi)
    ref = np.einsum("q,qi,qj->ij", rule.weights, phi, phi)
    return rho * np.abs(space.geometry.det)[:, None, None] * ref[None]


def local_stiffness(space: FunctionSpace, D: float = 1.0) -> np.ndarray:
    """Element stiffness matrices, shape (ntri, k, k).

    Uses grad phi_i . grad phi_j = ref_i^T (J^{-1} J^{-T}) ref_j so only the
    2x2 metric is stored per element.
    """
    rule = quadrature(2 * space.degree)
    ref = space.element.gradients(rule.xi)
    ref_pairs = np.einsum("q,qia,qjb->abij", rule.weights, ref, ref)
    g = space.geometry
    metric = np.einsum("tca,tcb->tab", g.inv_t, g.inv_t) * np.abs(g.det)[:, None, None]
    return D * np.einsum("tab,abij->tij", metric, ref_pairs)


def assemble_mass(space: FunctionSpace, rho: float) -> sp.csr_matrix:
    """Mass matrix M_ij = integral of rho phi_i phi_j over all dofs."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    return _assemble(space, local_mass(space, rho))


def assemble_stiffness(space: FunctionSpace, D: float) -> sp.csr_matrix:
    """Stiffness matrix A_ij = integral of D grad phi_i . grad phi_j over all dofs."""
    if D <= 0:
        raise ValueError("D must be positive")
    return _assemble(space, local_stiffness(space, D))


class _CellQuadrature:
    """Quadrature points of every cell and a scatter of per-cell vectors into a global one."""

    def __init__(self, space: FunctionSpace, exactness: int | None):
        self.rule = quadrature(exactness or 2 * space.degree + 3)
        pts = space.geometry.map(self.rule.xi)
        self.x = pts[..., 0]
        self.y = pts[..., 1]
        self.wdet = np.abs(space.geometry.det)[:, None] * self.rule.weights[None, :]
        self.cell_dofs = space.cell_dofs
        self.ndofs = space.ndofs

    def scatter(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.cell_dofs.ravel(), local.ravel(), minlength=self.ndofs)


class SourceOperator(_CellQuadrature):
    """Load vector b_i = integral of f phi_i, with the cell quadrature precomputed.

    ``f`` is called as ``f(x, y, t)`` with arrays x, y of quadrature
    points (shape (ntri, npoints)) and a scalar time.
    """

    def __init__(self, space: FunctionSpace, exactness: int | None = None):
        super().__init__(space, exactness)
        self.phi = space.element.values(self.rule.xi)

    def __call__(self, f, t: float) -> np.ndarray:
        vals = np.broadcast_to(np.asarray(f(self.x, self.y, t), dtype=float), self.x.shape)
        return self.scatter((vals * self.wdet) @ self.phi)


class NeumannOperator:
    """Precomputed edge-quadrature map for the Neumann boundary integral.

    ``g`` is called as ``g(x, y, t)``; points are interior to Neumann
    edges so the outward normal at each point is unambiguous.
    """

    def __init__(self, space: FunctionSpace):
        mesh = space.mesh
        edges = mesh.neumann_edges()
        s, w = edge_quadrature()
        p = mesh.nodes[edges]
        length = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
        pts = p[:, None, 0, :] + s[None, :, None] * (p[:, None, 1, :] - p[:, None, 0, :])
        self.x = pts[..., 0].ravel()
        self.y = pts[..., 1].ravel()
        if space.degree == 1:
            shape = np.column_stack([1 - s, s])
            dofs = edges
        else:
            shape = np.column_stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)])
            mids = space.mesh.num_nodes + _edge_lookup(space.edges, np.sort(edges, axis=1), mesh.num_nodes)
            dofs = np.column_stack([edges, mids])
        ne, nq = len(edges), len(s)
        vals = length[:, None, None] * (w[:, None] * shape)[None]
        rows = np.broadcast_to(dofs[:, None, :], vals.shape).ravel()
        cols = np.broadcast_to(np.arange(ne * nq).reshape(ne, nq, 1), vals.shape).ravel()
        self.matrix = sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(space.ndofs, ne * nq))

    def __call__(self, g, t: float) -> np.ndarray:
        if self.x.size == 0:
            return np.zeros(self.matrix.shape[0])
        vals = np.broadcast_to(np.asarray(g(self.x, self.y, t), dtype=float), self.x.shape)
        return self.matrix @ vals


def assemble_source(space: FunctionSpace, f, t: float) -> np.ndarray:
    """Full vector b_i = integral of f(., t) phi_i."""
    return SourceOperator(space)(f, t)


def assemble_neumann(space: FunctionSpace, g, t: float) -> np.ndarray:
    """Full vector b_i = boundary integral over Neumann edges of g(., t) phi_i."""
    return NeumannOperator(space)(g, t)


@dataclass(frozen=True)
class ReducedSystem:
    matrix: sp.csr_matrix
    vectors: list
    free: np.ndarray
    ndofs: int

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        full = np.zeros(self.ndofs)
        full[self.free] = reduced
        return full


def apply_dirichlet(matrix, vectors, space: FunctionSpace) -> ReducedSystem:
    """Remove constrained rows and columns (homogeneous Dirichlet data)."""
    free = space.free
    reduced = sp.csr_matrix(matrix)[free][:, free].tocsr()
    reduced.sort_indices()
    vecs = [np.asarray(v)[free] for v in vectors]
    return ReducedSystem(reduced, vecs, free, space.ndofs)


def export_matrix_market(path, matrix, comment: str = ""):
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment, symmetry="general")


class GradientSourceOperator(_CellQuadrature):
    """Load vector b_i = integral of D grad(u) . grad(phi_i) for a given gradient field.

    ``grad`` is called as ``grad(x, y)`` and returns the pair (u_x, u_y).
    """

    def __init__(self, space: FunctionSpace, D: float = 1.0, exactness: int | None = None):
        super().__init__(space, exactness)
        self.wdet = D * self.wdet
        self.ref = space.element.gradients(self.rule.xi)
        self.inv_t = space.geometry.inv_t

    def __call__(self, grad) -> np.ndarray:
        gx, gy = grad(self.x, self.y)
        g = np.stack([np.broadcast_to(np.asarray(gx, dtype=float), self.x.shape),
                      np.broadcast_to(np.asarray(gy, dtype=float), self.x.shape)], axis=-1)
        # pull the field back to reference coordinates: (J^{-T})^T g
        pulled = np.einsum("tqi,tij->tqj", g * self.wdet[..., None], self.inv_t)
        return self.scatter(np.einsum("tqj,qkj->tk", pulled, self.ref))
