"""Generic assembly of coefficient-weighted forms and weighted norms.

A bilinear form is a list of :class:`Term` objects.  Each term pairs an
operator applied to the trial function with one applied to the test function
and a coefficient sampled at the quadrature points.  The coefficient may be

* a scalar or an ``(E, Q)`` array, multiplying the dot product of the two
  operator values (which must have the same width),
* an ``(E, Q, m_test, m_trial)`` array, a full matrix coupling,
* an ``(E, Q, m)`` array when one side has width 1 (e.g. an advection
  velocity paired with a gradient),
* a callable taking a :class:`QuadContext` and returning any of the above.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .mesh import Tag
from .quadrature import line_rule
from .space import FeSpace, Geometry


class AssemblyError(ArithmeticError):
    pass


@dataclass
class QuadContext:
    """State fields available to coefficient callbacks at the quadrature points."""

    geom: Geometry
    t: float = 0.0
    fields: dict[str, tuple[FeSpace, np.ndarray]] = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def x(self) -> np.ndarray:
        return self.geom.x

    def register(self, name: str, space: FeSpace, u: np.ndarray) -> "QuadContext":
        self.fields[name] = (space, u)
        self._cache = {k: v for k, v in self._cache.items() if k[0] != name}
        return self

    def value(self, name: str) -> np.ndarray:
        key = (name, "val")
        if key not in self._cache:
            space, u = self.fields[name]
            self._cache[key] = space.values(u)
        return self._cache[key]

    def grad(self, name: str) -> np.ndarray:
        key = (name, "grad")
        if key not in self._cache:
            space, u = self.fields[name]
            self._cache[key] = space.gradients(u)
        return self._cache[key]


Coefficient = Union[float, np.ndarray, Callable[[QuadContext], Union[float, np.ndarray]]]


@dataclass(frozen=True)
class Term:
    coef: Coefficient
    trial: str = "val"
    test: str = "val"


@dataclass(frozen=True)
class Source:
    """Linear-form term: ``coef`` paired with an operator on the test function."""

    coef: Coefficient
    test: str = "val"


def _evaluate(coef: Coefficient, ctx: QuadContext | None, geom: Geometry) -> np.ndarray:
    if callable(coef):
        if ctx is None:
            ctx = QuadContext(geom)
        coef = coef(ctx)
    c = np.asarray(coef, dtype=float)
    if not np.all(np.isfinite(c)):
        if c.ndim >= 2:
            bad = np.argwhere(~np.isfinite(c))[0]
            raise AssemblyError(f"non-finite coefficient at element {bad[0]}, quadrature point {bad[1]}")
        raise AssemblyError("non-finite scalar coefficient")
    return c


def _local_matrices(terms: Sequence[Term], trial: FeSpace, test: FeSpace, ctx: QuadContext | None) -> np.ndarray:
    geom = test.geom
    dx = geom.dx
    E = test.n_elements
    local = np.zeros((E, test.elem_dofs.shape[1], trial.elem_dofs.shape[1]))
    for term in terms:
        T = trial.op(term.trial)
        R = test.op(term.test)
        mt, mr = T.shape[-1], R.shape[-1]
        c = _evaluate(term.coef, ctx, geom)
        if c.ndim <= 2:
            if mt != mr:
                raise ValueError(f"operators {term.trial!r}/{term.test!r} differ in width; give a matrix coefficient")
            w = dx * c if c.ndim == 2 else dx * float(c)
            local += np.einsum("eq,eqia,eqja->eij", w, R, T, optimize=True)
        elif c.ndim == 4:
            local += np.einsum("eq,eqia,eqab,eqjb->eij", dx, R, c, T, optimize=True)
        elif c.ndim == 3:
            if mt == 1:
                local += np.einsum("eq,eqia,eqa,eqj->eij", dx, R, c, T[..., 0], optimize=True)
            elif mr == 1:
                local += np.einsum("eq,eqi,eqb,eqjb->eij", dx, R[..., 0], c, T, optimize=True)
            else:
                raise ValueError("vector coefficient needs an operator of width 1 on one side")
        else:
            raise ValueError(f"unsupported coefficient shape {c.shape}")
    return local


def assemble(terms: Sequence[Term], trial: FeSpace, test: FeSpace | None = None,
             ctx: QuadContext | None = None) -> sp.csr_matrix:
    """Sparse matrix with entry (i, j) = sum of the terms on (trial_j, test_i)."""
    test = trial if test is None else test
    if trial.mesh is not test.mesh:
        raise ValueError("trial and test spaces must share a mesh")
    local = _local_matrices(terms, trial, test, ctx)
    rows = np.repeat(test.elem_dofs[:, :, None], trial.elem_dofs.shape[1], axis=2)
    cols = np.repeat(trial.elem_dofs[:, None, :], test.elem_dofs.shape[1], axis=1)
    A = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(test.n_dofs, trial.n_dofs))
    A = A.tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_functional(sources: Sequence[Source], test: FeSpace, ctx: QuadContext | None = None) -> np.ndarray:
    """Load vector b_i = sum over sources of the integral of coef . op(test_i)."""
    geom = test.geom
    local = np.zeros(test.elem_dofs.shape)
    for src in sources:
        R = test.op(src.test)
        c = _evaluate(src.coef, ctx, geom)
        if c.ndim <= 2:
            if R.shape[-1] != 1:
                raise ValueError("scalar source needs a width-1 test operator")
            w = geom.dx * c if c.ndim == 2 else geom.dx * float(c)
            local += np.einsum("eq,eqi->ei", w, R[..., 0])
        else:
            local += np.einsum("eq,eqa,eqia->ei", geom.dx, c, R)
    return np.bincount(test.elem_dofs.ravel(), weights=local.ravel(), minlength=test.n_dofs)


def assemble_boundary_functional(test: FeSpace, tags: Sequence[Tag], fn: Callable[[np.ndarray, float], np.ndarray],
                                 t: float = 0.0, npts: int = 3) -> np.ndarray:
    """Integral of ``fn(x, t) . v`` over boundary edges with the given tags.

    ``fn`` maps (P, 2) points to (P, components) values.  On an edge the trace
    of the Lagrange basis is the 1D Lagrange basis, so no element lookup is
    needed.
    """
    mesh = test.mesh
    edges = mesh.edges_with_tag(*tags)
    b = np.zeros(test.n_dofs)
    if len(edges) == 0:
        return b
    s, w = line_rule(npts)
    xa, xb = mesh.nodes[edges[:, 0]], mesh.nodes[edges[:, 1]]
    length = np.linalg.norm(xb - xa, axis=1)
    pts = xa[:, None, :] + s[None, :, None] * (xb - xa)[:, None, :]
    vals = np.asarray(fn(pts.reshape(-1, 2), t), dtype=float).reshape(len(edges), len(s), test.components)
    if test.order == 1:
        shape = np.stack([1 - s, s], axis=1)
        sdofs = edges
    else:
        shape = np.stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)], axis=1)
        sdofs = np.column_stack([edges, mesh.n_nodes + mesh.edge_index(edges)])
    for c in range(test.components):
        contrib = np.einsum("q,b,bq,qi->bi", w, length, vals[..., c], shape)
        b += np.bincount((sdofs + c * test.n_scalar).ravel(), weights=contrib.ravel(), minlength=test.n_dofs)
    return b


# ---------------------------------------------------------------------- norms
def quad_norm(geom: Geometry, values: np.ndarray, weight: np.ndarray | float | None = None) -> float:
    """sqrt( sum_K sum_q w_q * weight * |values|^2 ) for (E, Q) or (E, Q, m) arrays."""
    v2 = values ** 2 if values.ndim == 2 else np.sum(values ** 2, axis=tuple(range(2, values.ndim)))
    if weight is not None:
        v2 = v2 * weight
    total = float(np.sum(geom.dx * v2))
    if not np.isfinite(total):
        raise AssemblyError("non-finite value in norm evaluation")
    return float(np.sqrt(max(total, 0.0)))


@dataclass(frozen=True)
class NormTerm:
    weight: Coefficient
    field: str
    op: str = "val"


def weighted_norm(terms: Sequence[NormTerm], ctx: QuadContext) -> float:
    """sqrt of sum over terms of the integral of weight * |op(field)|^2.

    Weights must be nonnegative at every quadrature point.
    """
    total = 0.0
    for term in terms:
        w = _evaluate(term.weight, ctx, ctx.geom)
        if np.any(w < 0):
            wf = np.broadcast_to(w, ctx.geom.dx.shape)
            e, q = np.argwhere(wf < 0)[0]
            raise AssemblyError(f"negative norm weight {wf[e, q]:.3e} at element {e}, quadrature point {q}")
        space, u = ctx.fields[term.field]
        v = space.evaluate(u, term.op)
        total += float(np.sum(ctx.geom.dx * w * np.sum(v ** 2, axis=-1)))
    return float(np.sqrt(total))


# ---------------------------------------------------------------------- Dirichlet
def constrain(A: sp.spmatrix, b: np.ndarray, mask: np.ndarray, g: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
    """Eliminate rows and columns flagged in ``mask``, prescribing ``g`` there.

    Returns (A', b') with A' = D A D + I_mask, D the free-DOF projector, so a
    symmetric A stays symmetric.
    """
    A = sp.csr_matrix(A)
    free = (~mask).astype(float)
    gd = np.where(mask, g, 0.0)
    rhs = (b - A @ gd) * free + gd
    D = sp.diags(free)
    Ac = (D @ A @ D + sp.diags(mask.astype(float))).tocsr()
    Ac.eliminate_zeros()
    Ac.sort_indices()
    return Ac, rhs


def apply_dirichlet(A: sp.spmatrix, b: np.ndarray, space: FeSpace, t: float = 0.0,
                    homogeneous: bool = False) -> tuple[sp.csr_matrix, np.ndarray]:
    """Impose the space's Dirichlet data at time ``t`` (zero data if ``homogeneous``)."""
    g = np.zeros(space.n_dofs) if homogeneous else space.dirichlet_values(t)
    return constrain(A, b, space.dirichlet_mask, g)
