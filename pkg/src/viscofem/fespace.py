"""Lagrange P1/P2 spaces on triangles: reference elements, quadrature and dof maps."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import roots_jacobi

from .mesh import Mesh

MAX_EXACTNESS = 10


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle (0,0), (1,0), (0,1).

    ``points`` are barycentric coordinates (lambda0, lambda1, lambda2) with
    reference coordinates xi = lambda1, eta = lambda2.  Weights sum to 1/2.
    """

    points: np.ndarray
    weights: np.ndarray
    exactness: int

    @property
    def xi(self) -> np.ndarray:
        return self.points[:, 1:]

    def __len__(self) -> int:
        return len(self.weights)


def quadrature(exactness: int) -> QuadratureRule:
    """Positive-weight rule exact for polynomials of total degree ``exactness``.

    Degrees 1 and 2 use the centroid and the three-point interior rule.
    Higher degrees use the collapsed (Duffy) product of Gauss-Jacobi and
    Gauss-Legendre points, which is exact for degree 2m-1 with m points
    per direction.
    """
    if not 1 <= exactness <= MAX_EXACTNESS:
        raise ValueError(f"quadrature exactness must be in [1, {MAX_EXACTNESS}], got {exactness}")
    if exactness == 1:
        bary = np.array([[1.0, 1.0, 1.0]]) / 3.0
        return QuadratureRule(bary, np.array([0.5]), 1)
    if exactness == 2:
        a, b = 2.0 / 3.0, 1.0 / 6.0
        bary = np.array([[a, b, b], [b, a, b], [b, b, a]])
        return QuadratureRule(bary, np.full(3, 1.0 / 6.0), 2)

    m = math.ceil((exactness + 1) / 2)
    xj, wj = roots_jacobi(m, 1.0, 0.0)
    xl, wl = np.polynomial.legendre.leggauss(m)
    s = 0.5 * (xj + 1.0)
    r = 0.5 * (xl + 1.0)
    ss, rr = np.meshgrid(s, r, indexing="ij")
    ww = np.outer(wj / 4.0, wl / 2.0)
    xi = ss.ravel()
    eta = (rr * (1.0 - ss)).ravel()
    bary = np.column_stack([1.0 - xi - eta, xi, eta])
    return QuadratureRule(bary, ww.ravel(), 2 * m - 1)


def edge_quadrature() -> tuple[np.ndarray, np.ndarray]:
    """Three-point Gauss-Legendre on [0, 1] (exact to degree 5)."""
    x, w = np.polynomial.legendre.leggauss(3)
    return 0.5 * (x + 1.0), 0.5 * w


class ReferenceElement:
    """Lagrange shape functions of degree 1 or 2 on the reference triangle.

    Local numbering: vertices 0, 1, 2, then (degree 2) the midpoints of
    edges (0,1), (1,2), (2,0).
    """

    EDGES = ((0, 1), (1, 2), (2, 0))

    def __init__(self, degree: int):
        if degree not in (1, 2):
            raise ValueError(f"unsupported element degree {degree}; expected 1 or 2")
        self.degree = degree
        self.ndofs = 3 if degree == 1 else 6

    @property
    def nodes(self) -> np.ndarray:
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        if self.degree == 1:
            return verts
        mids = np.array([0.5 * (verts[a] + verts[b]) for a, b in self.EDGES])
        return np.concatenate([verts, mids])

    def values(self, xi: np.ndarray) -> np.ndarray:
        """Shape-function values, shape (npoints, ndofs)."""
        xi = np.atleast_2d(xi)
        l1, l2 = xi[:, 0], xi[:, 1]
        l0 = 1.0 - l1 - l2
        if self.degree == 1:
            return np.column_stack([l0, l1, l2])
        return np.column_stack([
            l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
            4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
        ])

    def gradients(self, xi: np.ndarray) -> np.ndarray:
        """Reference gradients d/dxi, d/deta, shape (npoints, ndofs, 2)."""
        xi = np.atleast_2d(xi)
        npts = len(xi)
        # barycentric gradients in reference coordinates
        dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        if self.degree == 1:
            return np.broadcast_to(dl, (npts, 3, 2)).copy()
        lam = np.column_stack([1.0 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]])
        out = np.empty((npts, 6, 2))
        for i in range(3):
            out[:, i, :] = (4 * lam[:, i] - 1)[:, None] * dl[i]
        for k, (a, b) in enumerate(self.EDGES):
            out[:, 3 + k, :] = 4 * (lam[:, a, None] * dl[b] + lam[:, b, None] * dl[a])
        return out


@dataclass(frozen=True)
class Geometry:
    """Affine maps x = origin + J xi for every triangle."""

    origin: np.ndarray
    jac: np.ndarray
    det: np.ndarray
    inv_t: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "Geometry":
        p = mesh.nodes[mesh.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv /= det[:, None, None]
        return cls(p[:, 0], jac, det, np.transpose(inv, (0, 2, 1)))

    def map(self, xi: np.ndarray) -> np.ndarray:
        """Physical points, shape (ntri, npoints, 2)."""
        return self.origin[:, None, :] + np.einsum("tij,qj->tqi", self.jac, xi)


class FunctionSpace:
    """Continuous Lagrange space of degree 1 or 2 vanishing on the Dirichlet edges.

    Global numbering puts mesh vertices first, then one dof per edge
    midpoint in the order of :meth:`Mesh.edges`.  Coefficient vectors over
    all dofs are "full"; vectors over ``free`` dofs are "reduced".
    """

    def __init__(self, mesh: Mesh, degree: int):
        if mesh.boundary_tags is None:
            raise ValueError("mesh boundary must be classified before building a space")
        self.mesh = mesh
        self.degree = degree
        self.element = ReferenceElement(degree)
        nv = mesh.num_nodes
        tris = mesh.triangles

        if degree == 1:
            self.cell_dofs = tris.copy()
            self.dof_coords = mesh.nodes.copy()
            dirichlet = np.unique(mesh.dirichlet_edges())
        else:
            edges = mesh.edges()
            local = np.stack([np.sort(tris[:, list(e)], axis=1) for e in ReferenceElement.EDGES], axis=1)
            edge_ids = _edge_lookup(edges, local.reshape(-1, 2), nv).reshape(len(tris), 3)
            self.cell_dofs = np.concatenate([tris, nv + edge_ids], axis=1)
            mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
            self.dof_coords = np.concatenate([mesh.nodes, mids])
            dedges = np.sort(mesh.dirichlet_edges(), axis=1)
            dirichlet = np.concatenate([np.unique(dedges), nv + _edge_lookup(edges, dedges, nv)])
            self.edges = edges

        self.ndofs = len(self.dof_coords)
        mask = np.zeros(self.ndofs, dtype=bool)
        mask[dirichlet] = True
        self.constrained_mask = mask
        self.constrained = np.flatnonzero(mask)
        self.free = np.flatnonzero(~mask)
        self.free_index = np.full(self.ndofs, -1, dtype=np.int64)
        self.free_index[self.free] = np.arange(len(self.free))

    @property
    def num_free(self) -> int:
        return len(self.free)

    @cached_property
    def geometry(self) -> Geometry:
        return Geometry.from_mesh(self.mesh)

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        """Full dof vector with zeros at constrained dofs."""
        full = np.zeros(self.ndofs)
        full[self.free] = reduced
        return full

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[self.free]

    def interpolate(self, func) -> np.ndarray:
        """Full vector of nodal values func(x, y)."""
        x, y = self.dof_coords.T
        return np.broadcast_to(np.asarray(func(x, y), dtype=float), (self.ndofs,)).copy()

    def physical_gradients(self, xi: np.ndarray) -> np.ndarray:
        """Basis gradients at reference points, shape (ntri, npoints, ndofs, 2)."""
        ref = self.element.gradients(xi)
        return np.einsum("tij,qkj->tqki", self.geometry.inv_t, ref)

    def locate(self, point) -> tuple[int, np.ndarray]:
        """Index of a triangle containing the point and the point's reference coordinates."""
        g = self.geometry
        x = np.asarray(point, dtype=float)
        xi = np.einsum("tji,tj->ti", g.inv_t, x - g.origin)
        lam = np.column_stack([1.0 - xi[:, 0] - xi[:, 1], xi])
        inside = np.flatnonzero(lam.min(axis=1) >= -1e-12)
        if len(inside) == 0:
            raise ValueError(f"point {tuple(x)} lies outside the mesh")
        t = int(inside[0])
        return t, xi[t]


def _edge_lookup(edges: np.ndarray, pairs: np.ndarray, nv: int) -> np.ndarray:
    keys = edges[:, 0] * nv + edges[:, 1]
    want = pairs[:, 0] * nv + pairs[:, 1]
    idx = np.searchsorted(keys, want)
    if np.any(idx >= len(keys)) or np.any(keys[np.minimum(idx, len(keys) - 1)] != want):
        raise ValueError("edge not found in mesh edge list")
    return idx


def build_space(mesh: Mesh, degree: int) -> FunctionSpace:
    return FunctionSpace(mesh, degree)


def evaluate(space: FunctionSpace, coeffs: np.ndarray, point) -> float:
    """Value of the finite-element function with full coefficient vector at a point."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (space.ndofs,):
        raise ValueError(f"expected {space.ndofs} coefficients, got {coeffs.shape}")
    t, xi = space.locate(point)
    phi = space.element.values(xi)[0]
    return float(phi @ coeffs[space.cell_dofs[t]])
