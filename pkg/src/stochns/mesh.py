"""Structured triangulations of the unit square.

The square is cut into ``n x n`` cells and every cell is split along its
``(0,0)-(1,1)`` diagonal, so all meshes are exactly quasi-uniform and
``build_mesh(n)`` is nested in ``build_mesh(2n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Mesh:
    n: int
    vertices: np.ndarray        # (NV, 2)
    triangles: np.ndarray       # (NT, 3), counterclockwise
    edges: np.ndarray           # (NE, 2), sorted vertex pairs
    edge_triangles: np.ndarray  # (NE, 2), -1 where there is no neighbour
    triangle_edges: np.ndarray  # (NT, 3), local edge k is opposite vertex k
    boundary_vertex: np.ndarray
    boundary_edge: np.ndarray
    h: float

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_midpoints(self):
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def locate(self, points):
        """Return (triangle index, barycentric coordinates) for each point.

        Points on shared edges are assigned to one of the adjacent triangles;
        any choice is valid for continuous fields.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.n
        sx = pts[:, 0] * n
        sy = pts[:, 1] * n
        i = np.clip(np.floor(sx).astype(np.int64), 0, n - 1)
        j = np.clip(np.floor(sy).astype(np.int64), 0, n - 1)
        upper = (sy - j) > (sx - i)
        tri = 2 * (j * n + i) + upper.astype(np.int64)
        p = self.vertices[self.triangles[tri]]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        r = pts - p[:, 0]
        l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        bary = np.column_stack([1.0 - l1 - l2, l1, l2])
        return tri, bary

    def dump(self):
        """Plain-text description, one entity per line."""
        lines = [
            "# stochns mesh v1",
            "# header: n NV NT NE h",
            "# then 'v x y boundary', 't a b c', 'e a b t0 t1 boundary' lines",
            f"{self.n} {self.n_vertices} {self.n_triangles} {self.n_edges} {self.h!r}",
        ]
        for (x, y), b in zip(self.vertices, self.boundary_vertex):
            lines.append(f"v {x!r} {y!r} {int(b)}")
        for a, b, c in self.triangles:
            lines.append(f"t {a} {b} {c}")
        for (a, b), (t0, t1), bd in zip(self.edges, self.edge_triangles, self.boundary_edge):
            lines.append(f"e {a} {b} {t0} {t1} {int(bd)}")
        return "\n".join(lines) + "\n"


def build_mesh(n):
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool) or n < 1:
        raise ValueError(f"mesh needs n >= 1 subdivisions per side, got {n!r}")
    n = int(n)
    k = np.arange(n + 1, dtype=float) / n
    X, Y = np.meshgrid(k, k, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    triangles = np.array(tris, dtype=np.int64)

    # local edge k is opposite local vertex k
    local = triangles[:, [[1, 2], [2, 0], [0, 1]]]
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    triangle_edges = inverse.reshape(-1, 3)

    edge_triangles = -np.ones((len(edges), 2), dtype=np.int64)
    counts = np.zeros(len(edges), dtype=np.int64)
    for t, row in enumerate(triangle_edges):
        for e in row:
            edge_triangles[e, counts[e]] = t
            counts[e] += 1

    boundary_vertex = (
        (vertices[:, 0] == 0.0) | (vertices[:, 0] == 1.0)
        | (vertices[:, 1] == 0.0) | (vertices[:, 1] == 1.0)
    )
    boundary_edge = counts == 1

    return Mesh(
        n=n,
        vertices=vertices,
        triangles=triangles,
        edges=edges,
        edge_triangles=edge_triangles,
        triangle_edges=triangle_edges,
        boundary_vertex=boundary_vertex,
        boundary_edge=boundary_edge,
        h=math.sqrt(2.0) / n,
    )


def refine(mesh):
    return build_mesh(2 * mesh.n)
