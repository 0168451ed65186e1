"""Triangular meshes, Lagrange spaces, quadrature and form assembly."""

from .assembly import (AssemblyError, NormTerm, QuadContext, Source, Term, apply_dirichlet, assemble,
                       assemble_boundary_functional, assemble_functional, constrain, quad_norm, weighted_norm)
from .mesh import MeshError, Tag, TriMesh, build_lshape_mesh, build_rect_mesh
from .quadrature import QuadRule, line_rule, triangle_rule
from .space import FeSpace, Geometry

__all__ = [
    "AssemblyError", "FeSpace", "Geometry", "MeshError", "NormTerm", "QuadContext", "QuadRule", "Source",
    "Tag", "Term", "TriMesh", "apply_dirichlet", "assemble", "assemble_boundary_functional",
    "assemble_functional", "build_lshape_mesh", "build_rect_mesh", "constrain", "line_rule", "quad_norm",
    "triangle_rule", "weighted_norm",
]
