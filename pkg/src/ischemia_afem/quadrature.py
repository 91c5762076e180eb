"""Quadrature rules on the reference triangle and the unit interval.

Triangle rules store barycentric points and weights normalized to sum to one,
so an integral over a physical element T is ``area(T) * sum(w_q * f(x_q))``.
Edge rules likewise integrate against arclength: ``length(F) * sum(w_g * f)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class TriangleRule:
    points: np.ndarray   # (q, 3) barycentric coordinates
    weights: np.ndarray  # (q,), sums to 1
    degree: int


@dataclass(frozen=True)
class EdgeRule:
    points: np.ndarray   # (q,) parameters in (0, 1)
    weights: np.ndarray  # (q,), sums to 1
    degree: int


def _tri_degree5():
    s15 = np.sqrt(5.0 * 3.0)
    a1 = (6.0 - s15) / 21.0
    a2 = (6.0 + s15) / 21.0
    w1 = (155.0 - s15) / 1200.0
    w2 = (155.0 + s15) / 1200.0
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [9.0 / 40.0]
    for a, w in ((a1, w1), (a2, w2)):
        for p in ((1 - 2 * a, a, a), (a, 1 - 2 * a, a), (a, a, 1 - 2 * a)):
            pts.append(p)
            wts.append(w)
    return TriangleRule(np.array(pts), np.array(wts), degree=5)


def conical_rule(r: int) -> TriangleRule:
    """Conical product rule of degree 2r-1 on the triangle.

    Tensor product of an r-point Gauss-Legendre rule with an r-point
    Gauss-Jacobi rule for the weight (1-x), collapsed onto the triangle.
    """
    if r < 1:
        raise ValueError("need at least one point per direction")
    xg, wg = np.polynomial.legendre.leggauss(r)
    s = 0.5 * (xg + 1.0)            # [0,1] nodes for the collapsed direction
    ws = 0.5 * wg
    tj, vj = roots_jacobi(r, 1.0, 0.0)
    x = 0.5 * (tj + 1.0)            # [0,1] nodes against weight (1-x)
    wx = 0.25 * vj
    X, S = np.meshgrid(x, s, indexing="ij")
    WX, WS = np.meshgrid(wx, ws, indexing="ij")
    xq = X.ravel()
    yq = ((1.0 - X) * S).ravel()
    w = (WX * WS).ravel()
    w = w / w.sum()   # normalize from reference area 1/2 to barycentric form
    bary = np.column_stack([1.0 - xq - yq, xq, yq])
    return TriangleRule(bary, w, degree=2 * r - 1)


def edge_gauss(q: int) -> EdgeRule:
    xg, wg = np.polynomial.legendre.leggauss(q)
    return EdgeRule(0.5 * (xg + 1.0), 0.5 * wg, degree=2 * q - 1)


TRI_ASSEMBLY = _tri_degree5()
TRI_ESTIMATOR = conical_rule(5)
EDGE_DEFAULT = edge_gauss(3)


def physical_points(rule: TriangleRule, vertices_of_tris: np.ndarray) -> np.ndarray:
    """Map barycentric rule points into each element, returning (M, q, 2)."""
    return np.einsum("qk,mki->mqi", rule.points, vertices_of_tris)
