"""Quadrature on the reference triangle {(x, y): x, y >= 0, x + y <= 1}."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class QuadRule:
    points: np.ndarray  # (Q, 2) reference coordinates
    weights: np.ndarray  # (Q,), sum = 1/2
    degree: int

    @property
    def barycentric(self) -> np.ndarray:
        x, y = self.points[:, 0], self.points[:, 1]
        return np.column_stack([1.0 - x - y, x, y])

    def __len__(self) -> int:
        return len(self.weights)


def _sym_orbit(a: float) -> list[tuple[float, float]]:
    # the three points with barycentric coordinates (a, a, 1-2a) and permutations
    b = 1.0 - 2.0 * a
    return [(a, a), (b, a), (a, b)]


def triangle_rule(degree: int = 4) -> QuadRule:
    """Symmetric Gauss rules exact for polynomials of the given degree."""
    if degree <= 1:
        pts = [(1.0 / 3.0, 1.0 / 3.0)]
        w = [1.0]
        deg = 1
    elif degree == 2:
        pts = _sym_orbit(1.0 / 6.0)
        w = [1.0 / 3.0] * 3
        deg = 2
    elif degree <= 4:
        # Dunavant / Strang-Fix six point rule
        pts = _sym_orbit(0.44594849091596488632) + _sym_orbit(0.09157621350977074346)
        w = [0.22338158967801146570] * 3 + [0.10995174365532186764] * 3
        deg = 4
    else:
        raise ValueError(f"no triangle rule implemented for degree {degree}")
    return QuadRule(np.array(pts, dtype=float), 0.5 * np.array(w, dtype=float), deg)


def line_rule(npts: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w
