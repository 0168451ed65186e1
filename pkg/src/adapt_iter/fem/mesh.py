"""Structured triangulations of the test domains.

Meshes are plain arrays: ``nodes`` (N, 2), counterclockwise ``triangles``
(E, 3) and the tagged boundary edges.  Only the domains needed by the
porous-media test cases are generated: axis-aligned rectangles and the
L-shape ``(0,1)^2 minus [0.5,1]^2``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np


class Tag(enum.IntEnum):
    NONE = 0
    TOP = 1
    BOTTOM = 2
    LEFT = 3
    RIGHT = 4
    REENTRANT_H = 5
    REENTRANT_V = 6


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    nodes: np.ndarray
    triangles: np.ndarray
    bedges: np.ndarray  # (B, 2) node pairs, ordered along the boundary
    btags: np.ndarray  # (B,) Tag values
    name: str = "mesh"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def boundary_edges(self) -> dict[tuple[int, int], Tag]:
        return {(int(a), int(b)): Tag(int(t)) for (a, b), t in zip(self.bedges, self.btags)}

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self) -> float:
        return float(np.sum(self.signed_areas()))

    @property
    def h(self) -> float:
        """Longest edge length (the mesh size reported as sqrt(2)/n)."""
        p = self.nodes[self.triangles]
        lengths = [np.linalg.norm(p[:, a] - p[:, b], axis=1) for a, b in ((0, 1), (1, 2), (2, 0))]
        return float(np.max(lengths))

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique edges and the (E, 3) element-to-edge map.

        Local edge ``i`` is the edge opposite vertex ``i``: (1,2), (2,0), (0,1).
        """
        if "edges" not in self._cache:
            t = self.triangles
            local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
            flat = np.sort(local.reshape(-1, 2), axis=1)
            uniq, inv = np.unique(flat, axis=0, return_inverse=True)
            self._cache["edges"] = (uniq, inv.reshape(-1, 3))
        return self._cache["edges"]

    def edge_index(self, pairs: np.ndarray) -> np.ndarray:
        """Indices into :meth:`edges` of the given node pairs."""
        uniq, _ = self.edges()
        key = np.sort(np.asarray(pairs), axis=1)
        n = self.n_nodes
        ukey = uniq[:, 0] * n + uniq[:, 1]
        qkey = key[:, 0] * n + key[:, 1]
        idx = np.searchsorted(ukey, qkey)
        if np.any(idx >= len(ukey)) or np.any(ukey[np.minimum(idx, len(ukey) - 1)] != qkey):
            raise MeshError("edge not present in mesh")
        return idx

    def edges_with_tag(self, *tags: Tag) -> np.ndarray:
        sel = np.isin(self.btags, [int(t) for t in tags])
        return self.bedges[sel]

    def validate(self, expected_area: float | None = None) -> None:
        areas = self.signed_areas()
        if np.any(areas <= 0):
            bad = int(np.argmin(areas))
            raise MeshError(f"triangle {bad} has non-positive signed area {areas[bad]:.3e}")
        uniq, emap = self.edges()
        counts = np.bincount(emap.ravel(), minlength=len(uniq))
        bidx = self.edge_index(self.bedges)
        if np.any(counts[bidx] != 1):
            raise MeshError("a tagged boundary edge is shared by more than one triangle")
        if np.count_nonzero(counts == 1) != len(self.bedges):
            raise MeshError("boundary edge list is incomplete")
        if expected_area is not None and abs(areas.sum() - expected_area) > 1e-12 * expected_area:
            raise MeshError(f"mesh area {areas.sum()!r} differs from {expected_area!r}")

    def export_text(self, path: str | Path) -> None:
        """Write a node/element/boundary listing for debugging."""
        with open(path, "w") as f:
            f.write(f"# nodes {self.n_nodes}\n")
            for x, y in self.nodes:
                f.write(f"{x:.17g} {y:.17g}\n")
            f.write(f"# triangles {self.n_triangles}\n")
            for i, j, k in self.triangles:
                f.write(f"{i} {j} {k}\n")
            f.write(f"# boundary {len(self.bedges)}\n")
            for (a, b), t in zip(self.bedges, self.btags):
                f.write(f"{a} {b} {Tag(int(t)).name}\n")


def _boundary_edges(triangles: np.ndarray) -> np.ndarray:
    t = triangles
    local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1).reshape(-1, 2)
    key = np.sort(local, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    # keep the orientation of the owning triangle (counterclockwise boundary)
    return local[counts[inv.ravel()] == 1]


def _tagged(nodes, triangles, classify: Callable[[float, float], Tag], name: str) -> TriMesh:
    bedges = _boundary_edges(triangles)
    mid = 0.5 * (nodes[bedges[:, 0]] + nodes[bedges[:, 1]])
    tags = np.array([int(classify(x, y)) for x, y in mid], dtype=np.int64)
    order = np.lexsort((bedges[:, 1], bedges[:, 0], tags))
    return TriMesh(np.ascontiguousarray(nodes), np.ascontiguousarray(triangles),
                   bedges[order], tags[order], name=name)


def _grid(nx: int, ny: int, x0: float, x1: float, y0: float, y1: float):
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    cells = []
    for j in range(ny):
        for i in range(nx):
            n00 = j * (nx + 1) + i
            n10, n01, n11 = n00 + 1, n00 + nx + 1, n00 + nx + 2
            # alternating diagonals give the crisscross pattern
            if (i + j) % 2 == 0:
                cells.append(((n00, n10, n11), (n00, n11, n01), i, j))
            else:
                cells.append(((n00, n10, n01), (n10, n11, n01), i, j))
    return nodes, cells


def build_rect_mesh(nx: int, ny: int, rect: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)) -> TriMesh:
    """Crisscross triangulation of ``[x0,x1] x [y0,y1]`` with 2*nx*ny triangles."""
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be >= 1")
    x0, x1, y0, y1 = rect
    nodes, cells = _grid(nx, ny, x0, x1, y0, y1)
    tris = np.array([t for a, b, _, _ in cells for t in (a, b)], dtype=np.int64)
    tol = 1e-12 * max(x1 - x0, y1 - y0)

    def classify(x, y):
        if abs(y - y1) < tol:
            return Tag.TOP
        if abs(y - y0) < tol:
            return Tag.BOTTOM
        if abs(x - x0) < tol:
            return Tag.LEFT
        if abs(x - x1) < tol:
            return Tag.RIGHT
        return Tag.NONE

    return _tagged(nodes, tris, classify, name=f"rect{nx}x{ny}")


def build_lshape_mesh(n: int) -> TriMesh:
    """Triangulation of (0,1)^2 \\ [0.5,1]^2 with n cells per unit edge."""
    if n < 2 or n % 2:
        raise MeshError("the L-shape needs an even number of cells per edge (cut at 0.5)")
    nodes, cells = _grid(n, n, 0.0, 1.0, 0.0, 1.0)
    half = n // 2
    tris = np.array([t for a, b, i, j in cells if not (i >= half and j >= half) for t in (a, b)],
                    dtype=np.int64)
    used = np.unique(tris)
    renum = -np.ones(len(nodes), dtype=np.int64)
    renum[used] = np.arange(len(used))
    nodes = nodes[used]
    tris = renum[tris]
    tol = 1e-12

    def classify(x, y):
        if abs(y - 1.0) < tol:
            return Tag.TOP
        if abs(y) < tol:
            return Tag.BOTTOM
        if abs(x) < tol:
            return Tag.LEFT
        if abs(x - 1.0) < tol:
            return Tag.RIGHT
        if abs(y - 0.5) < tol and x > 0.5:
            return Tag.REENTRANT_H
        if abs(x - 0.5) < tol and y > 0.5:
            return Tag.REENTRANT_V
        return Tag.NONE

    return _tagged(nodes, tris, classify, name=f"lshape{n}")
