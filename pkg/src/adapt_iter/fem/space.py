"""Lagrange P1/P2 spaces (scalar or 2-vector) on a :class:`TriMesh`."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .mesh import Tag, TriMesh
from .quadrature import QuadRule, triangle_rule

DirichletValue = Callable[[np.ndarray, float], np.ndarray] | float


def basis_p1(lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (..., 3) and barycentric derivatives (..., 3, 3) of the P1 basis."""
    vals = lam.copy()
    dl = np.broadcast_to(np.eye(3), lam.shape[:-1] + (3, 3)).copy()
    return vals, dl


def basis_p2(lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """P2 basis: vertices l_i(2 l_i - 1), then edges 4 l_j l_k for (1,2), (2,0), (0,1)."""
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    vals = np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1], axis=-1)
    z = np.zeros_like(l0)
    # d/d(lambda_m) of each basis function
    dl = np.stack([
        np.stack([4 * l0 - 1, z, z], -1),
        np.stack([z, 4 * l1 - 1, z], -1),
        np.stack([z, z, 4 * l2 - 1], -1),
        np.stack([z, 4 * l2, 4 * l1], -1),
        np.stack([4 * l2, z, 4 * l0], -1),
        np.stack([4 * l1, 4 * l0, z], -1),
    ], axis=-2)
    return vals, dl


class Geometry:
    """Affine element maps and quadrature data shared by every space on a mesh."""

    def __init__(self, mesh: TriMesh, rule: QuadRule):
        self.mesh = mesh
        self.rule = rule
        p = mesh.nodes[mesh.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # (E, 2, 2), columns
        self.det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.linalg.inv(jac)
        # gradients of barycentric coordinates: (E, 3, 2)
        dref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        self.dlam = np.einsum("ra,eab->erb", dref, inv)
        self.x = p[:, 0][:, None, :] + np.einsum("eab,qb->eqa", jac, rule.points)
        self.dx = self.det[:, None] * rule.weights[None, :]

    @classmethod
    def of(cls, mesh: TriMesh, rule: QuadRule) -> "Geometry":
        key = ("geometry", rule.degree, len(rule))
        if key not in mesh._cache:
            mesh._cache[key] = cls(mesh, rule)
        return mesh._cache[key]


class FeSpace:
    """Continuous Lagrange space of order 1 or 2 with 1 or 2 components.

    Vector DOFs are blocked by component: ``dof = comp * n_scalar + i``.
    """

    def __init__(self, mesh: TriMesh, order: int = 1, components: int = 1, rule: QuadRule | None = None):
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if components not in (1, 2):
            raise ValueError("components must be 1 or 2")
        self.mesh = mesh
        self.order = order
        self.components = components
        self.rule = rule or triangle_rule(4)
        self.geom = Geometry.of(mesh, self.rule)

        if order == 1:
            self.scalar_dofs = mesh.triangles.copy()
            self.n_scalar = mesh.n_nodes
            self.scalar_coords = mesh.nodes.copy()
            self._basis = basis_p1
        else:
            edges, emap = mesh.edges()
            self.scalar_dofs = np.hstack([mesh.triangles, mesh.n_nodes + emap])
            self.n_scalar = mesh.n_nodes + len(edges)
            mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
            self.scalar_coords = np.vstack([mesh.nodes, mids])
            self._basis = basis_p2
        self.n_loc = self.scalar_dofs.shape[1]
        self.n_dofs = self.n_scalar * components
        self.elem_dofs = np.hstack([self.scalar_dofs + c * self.n_scalar for c in range(components)])
        self.dof_coords = np.vstack([self.scalar_coords] * components)
        self.dof_component = np.repeat(np.arange(components), self.n_scalar)

        vals, dl = self._basis(self.rule.barycentric)
        self.phi = vals  # (Q, n)
        self.dphi = np.einsum("qnr,erb->eqnb", dl, self.geom.dlam)  # (E, Q, n, 2)

        self.dirichlet_mask = np.zeros(self.n_dofs, dtype=bool)
        self._bcs: list[tuple[np.ndarray, DirichletValue]] = []
        self._ops: dict[str, np.ndarray] = {}

    def __repr__(self) -> str:
        return f"FeSpace(P{self.order}, components={self.components}, n_dofs={self.n_dofs})"

    @property
    def n_elements(self) -> int:
        return self.mesh.n_triangles

    # ------------------------------------------------------------------ operators
    def op(self, name: str) -> np.ndarray:
        """Basis functions under a differential operator, shape (E, Q, n_loc*comp, m)."""
        if name in self._ops:
            return self._ops[name]
        E, Q, n = self.n_elements, len(self.rule), self.n_loc
        phi = np.broadcast_to(self.phi[None, :, :], (E, Q, n))
        g = self.dphi
        if self.components == 1:
            if name == "val":
                out = phi[..., None]
            elif name == "grad":
                out = g
            else:
                raise KeyError(f"operator {name!r} undefined for scalar spaces")
        else:
            zeros = np.zeros((E, Q, n))
            if name == "val":
                out = np.concatenate([np.stack([phi, zeros], -1), np.stack([zeros, phi], -1)], axis=2)
            elif name == "grad":
                gx, gy = g[..., 0], g[..., 1]
                out = np.concatenate([np.stack([gx, gy, zeros, zeros], -1),
                                      np.stack([zeros, zeros, gx, gy], -1)], axis=2)
            elif name == "div":
                out = np.concatenate([g[..., 0], g[..., 1]], axis=2)[..., None]
            elif name == "eps":
                gx, gy = g[..., 0], g[..., 1]
                out = np.concatenate([np.stack([gx, 0.5 * gy, 0.5 * gy, zeros], -1),
                                      np.stack([zeros, 0.5 * gx, 0.5 * gx, gy], -1)], axis=2)
            else:
                raise KeyError(f"operator {name!r} undefined for vector spaces")
        out = np.ascontiguousarray(out)
        self._ops[name] = out
        return out

    def evaluate(self, u: np.ndarray, name: str = "val") -> np.ndarray:
        """Field ``u`` under an operator at every quadrature point, shape (E, Q, m)."""
        return np.einsum("eqim,ei->eqm", self.op(name), u[self.elem_dofs])

    def values(self, u: np.ndarray) -> np.ndarray:
        v = self.evaluate(u, "val")
        return v[..., 0] if self.components == 1 else v

    def gradients(self, u: np.ndarray) -> np.ndarray:
        g = self.evaluate(u, "grad")
        return g if self.components == 1 else g.reshape(g.shape[:2] + (2, 2))

    def interpolate(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Nodal interpolant; ``f`` maps (N, 2) points to (N,) or (N, comp)."""
        vals = np.asarray(f(self.scalar_coords), dtype=float)
        if self.components == 1:
            return vals.reshape(self.n_scalar).copy()
        return vals.reshape(self.n_scalar, self.components).T.ravel().copy()

    # ------------------------------------------------------------------ Dirichlet data
    def boundary_dofs(self, *tags: Tag) -> np.ndarray:
        """Scalar DOF indices lying on boundary edges with the given tags."""
        edges = self.mesh.edges_with_tag(*tags)
        dofs = [edges.ravel()]
        if self.order == 2 and len(edges):
            dofs.append(self.mesh.n_nodes + self.mesh.edge_index(edges))
        return np.unique(np.concatenate(dofs)) if len(edges) else np.zeros(0, dtype=np.int64)

    def add_dirichlet(self, tags, value: DirichletValue = 0.0, component: int | None = None) -> None:
        """Constrain DOFs on edges with ``tags``; vector spaces may constrain one component."""
        if isinstance(tags, Tag):
            tags = (tags,)
        sdofs = self.boundary_dofs(*tags)
        comps = range(self.components) if component is None else (component,)
        mask = np.zeros(self.n_dofs, dtype=bool)
        for c in comps:
            mask[sdofs + c * self.n_scalar] = True
        self.dirichlet_mask |= mask
        self._bcs.append((mask, value))

    def dirichlet_values(self, t: float = 0.0) -> np.ndarray:
        """Prescribed values on constrained DOFs (zero elsewhere); later BCs win on overlaps."""
        g = np.zeros(self.n_dofs)
        for mask, value in self._bcs:
            if callable(value):
                g[mask] = np.asarray(value(self.dof_coords[mask], t), dtype=float)
            else:
                g[mask] = float(value)
        return g
