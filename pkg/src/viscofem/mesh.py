"""Structured triangulations of the unit square with tagged boundary edges."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

DIRICHLET = 0
NEUMANN = 1

DIAGONALS = ("right", "left", "crossed")


def default_dirichlet(x, y):
    """Dirichlet on the sides x=0 and y=0, Neumann elsewhere."""
    return np.isclose(x, 0.0) | np.isclose(y, 0.0)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangle mesh.

    ``triangles`` are counterclockwise vertex triples.  ``boundary_edges``
    holds endpoint pairs oriented so the domain lies on the left, which
    makes the outward normal ``(dy, -dx)/len``.  ``boundary_tags`` is None
    until :func:`classify_boundary` has been applied.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_owner: np.ndarray
    n: int
    diagonal: str = "right"
    boundary_tags: np.ndarray | None = None

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def max_edge(self) -> float:
        p = self.nodes[self.triangles]
        lengths = [np.linalg.norm(p[:, (i + 1) % 3] - p[:, i], axis=1) for i in range(3)]
        return float(np.max(lengths))

    def boundary_normals(self) -> np.ndarray:
        p = self.nodes[self.boundary_edges]
        d = p[:, 1] - p[:, 0]
        normal = np.column_stack([d[:, 1], -d[:, 0]])
        return normal / np.linalg.norm(normal, axis=1)[:, None]

    def boundary_lengths(self) -> np.ndarray:
        p = self.nodes[self.boundary_edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def edges(self) -> np.ndarray:
        """Unique undirected edges, each row sorted, rows in lexicographic order."""
        t = self.triangles
        all_edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        all_edges.sort(axis=1)
        return np.unique(all_edges, axis=0)

    def dirichlet_edges(self) -> np.ndarray:
        if self.boundary_tags is None:
            raise ValueError("mesh boundary has not been classified")
        return self.boundary_edges[self.boundary_tags == DIRICHLET]

    def neumann_edges(self) -> np.ndarray:
        if self.boundary_tags is None:
            raise ValueError("mesh boundary has not been classified")
        return self.boundary_edges[self.boundary_tags == NEUMANN]


def unit_square_mesh(n: int, diagonal: str = "right", classify: bool = True) -> Mesh:
    """Split [0,1]^2 into n x n cells, each cut into triangles.

    ``right`` cuts along lower-left to upper-right, ``left`` along
    lower-right to upper-left, ``crossed`` adds a cell-centre node and
    four triangles per cell.  The boundary is classified with
    :func:`default_dirichlet` unless ``classify`` is False.
    """
    if n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    if diagonal not in DIAGONALS:
        raise ValueError(f"unknown diagonal pattern {diagonal!r}; expected one of {DIAGONALS}")

    ticks = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(ticks, ticks)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i = i.ravel()
    j = j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1

    if diagonal == "right":
        tris = np.concatenate([
            np.column_stack([v00, v10, v11]),
            np.column_stack([v00, v11, v01]),
        ])
    elif diagonal == "left":
        tris = np.concatenate([
            np.column_stack([v00, v10, v01]),
            np.column_stack([v10, v11, v01]),
        ])
    else:
        centres = np.column_stack([(i + 0.5) / n, (j + 0.5) / n])
        c = (n + 1) ** 2 + np.arange(n * n)
        nodes = np.concatenate([nodes, centres])
        tris = np.concatenate([
            np.column_stack([v00, v10, c]),
            np.column_stack([v10, v11, c]),
            np.column_stack([v11, v01, c]),
            np.column_stack([v01, v00, c]),
        ])
    # group triangles by cell so element order is local
    order = np.argsort(np.tile(np.arange(n * n), len(tris) // (n * n)), kind="stable")
    tris = tris[order].astype(np.int64)

    edges, owner = _boundary_edges(tris)
    mesh = Mesh(nodes=nodes, triangles=tris, boundary_edges=edges,
                boundary_owner=owner, n=n, diagonal=diagonal)
    if classify:
        mesh = classify_boundary(mesh)
    return mesh


def triangle_mesh(nodes, triangles, n: int = 1, dirichlet_predicate: Callable | None = None) -> Mesh:
    """Mesh from explicit arrays; clockwise triangles are reoriented."""
    nodes = np.asarray(nodes, dtype=float)
    tris = np.asarray(triangles, dtype=np.int64).copy()
    p = nodes[tris]
    signed = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - \
        (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    if np.any(signed == 0):
        raise ValueError("degenerate triangle")
    flip = signed < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    edges, owner = _boundary_edges(tris)
    mesh = Mesh(nodes=nodes, triangles=tris, boundary_edges=edges, boundary_owner=owner, n=n)
    return classify_boundary(mesh, dirichlet_predicate or default_dirichlet)


def _boundary_edges(tris: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Edges used by exactly one triangle, oriented as in that triangle."""
    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    owner = np.tile(np.arange(len(tris)), 3)
    key = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    on_boundary = counts[inverse.ravel()] == 1
    edges = directed[on_boundary]
    owner = owner[on_boundary]
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order], owner[order]


def classify_boundary(mesh: Mesh,
                      dirichlet_predicate: Callable = default_dirichlet) -> Mesh:
    """Tag each boundary edge by evaluating the predicate at its midpoint.

    Raises ValueError when no edge ends up Dirichlet, since the energy form
    is then not coercive.
    """
    p = mesh.nodes[mesh.boundary_edges]
    mid = 0.5 * (p[:, 0] + p[:, 1])
    is_d = np.asarray(dirichlet_predicate(mid[:, 0], mid[:, 1]), dtype=bool)
    is_d = np.broadcast_to(is_d, (len(mid),))
    if not is_d.any():
        raise ValueError("Dirichlet boundary has zero length")
    tags = np.where(is_d, DIRICHLET, NEUMANN).astype(np.int8)
    return replace(mesh, boundary_tags=tags)


def write_vtk(mesh: Mesh, path, point_data: dict | None = None, title: str = "viscofem mesh"):
    """Legacy ASCII VTK unstructured grid with optional scalar point data."""
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.num_nodes} double"]
    lines += [f"{x:.16e} {y:.16e} 0.0" for x, y in mesh.nodes]
    nt = mesh.num_triangles
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    if point_data:
        lines.append(f"POINT_DATA {mesh.num_nodes}")
        for name, values in point_data.items():
            values = np.asarray(values)[: mesh.num_nodes]
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.16e}" for v in values]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
