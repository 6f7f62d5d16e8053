"""Quadrature rules on triangles (barycentric) and on edges (unit interval).

Triangle rules are returned as (points, weights) with points in barycentric
coordinates, weights summing to one; integrals are weights @ f(points) times
the cell area.  Edge rules live on [0, 1] with weights summing to one.
"""

from __future__ import annotations

import numpy as np

# Midpoint rule: exact for quadratics, and diagonal for the midpoint-value
# basis used throughout this package.
_MIDPOINT_POINTS = np.array(
    [
        [0.0, 0.5, 0.5],
        [0.5, 0.0, 0.5],
        [0.5, 0.5, 0.0],
    ]
)
_MIDPOINT_WEIGHTS = np.full(3, 1.0 / 3.0)

# Seven point rule, exact for quintics.
_A = (6.0 - np.sqrt(15.0)) / 21.0
_B = (6.0 + np.sqrt(15.0)) / 21.0
_W_A = (155.0 - np.sqrt(15.0)) / 1200.0
_W_B = (155.0 + np.sqrt(15.0)) / 1200.0
_SEVEN_POINTS = np.array(
    [
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [_A, _A, 1.0 - 2.0 * _A],
        [_A, 1.0 - 2.0 * _A, _A],
        [1.0 - 2.0 * _A, _A, _A],
        [_B, _B, 1.0 - 2.0 * _B],
        [_B, 1.0 - 2.0 * _B, _B],
        [1.0 - 2.0 * _B, _B, _B],
    ]
)
_SEVEN_WEIGHTS = np.array([9.0 / 40.0, _W_A, _W_A, _W_A, _W_B, _W_B, _W_B])


def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Smallest shipped triangle rule exact for polynomials of `degree`.

    Returns
    -------
    (points, weights) : barycentric points, shape (q, 3), and weights (q,)
        summing to one.
    """
    if degree <= 2:
        return _MIDPOINT_POINTS.copy(), _MIDPOINT_WEIGHTS.copy()
    if degree <= 5:
        return _SEVEN_POINTS.copy(), _SEVEN_WEIGHTS.copy()
    raise ValueError(f"no triangle rule of degree {degree} available (max 5)")


def edge_rule(points: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule with `points` nodes mapped to [0, 1].

    Exact for polynomials of degree 2*points - 1; weights sum to one.
    """
    if points < 1:
        raise ValueError("edge rule needs at least one point")
    x, w = np.polynomial.legendre.leggauss(points)
    return 0.5 * (x + 1.0), 0.5 * w
