"""Residual error indicators for the discrete optimality system.

Three families of per-element indicators are assembled from element residuals
and edge jumps of the state, adjoint and gradient equations:

    eta_i^2(T) = h_T^2 ||R_i||^2_{L2(T)} + sum_{F in dT} h_T ||J_i||^2_{L2(F)},

with h_T = area(T)^(1/2).  For P1 fields the divergence of the flux reduces
to -(1-sigma) grad u . grad y elementwise.  On boundary edges the bracket is
the value of the flux itself; the adjoint family additionally subtracts the
data misfit y - y_delta there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import eval_boundary_values, field_gradient, nodal_at_quad, values_at_quad
from .mesh import TriMesh
from .objective import RegularizationParams
from .quadrature import EDGE_DEFAULT, TRI_ESTIMATOR


@dataclass(frozen=True)
class EstimatorTable:
    """Per-element squared indicators for the three residual families."""

    eta1_sq: np.ndarray
    eta2_sq: np.ndarray
    eta3_sq: np.ndarray

    def __post_init__(self):
        n = len(self.eta1_sq)
        if len(self.eta2_sq) != n or len(self.eta3_sq) != n:
            raise ValueError("indicator arrays must have equal length")
        for arr in (self.eta1_sq, self.eta2_sq, self.eta3_sq):
            if np.any(arr < 0):
                raise ValueError("squared indicators must be nonnegative")

    @property
    def totals(self):
        return np.array([self.eta1_sq.sum(), self.eta2_sq.sum(),
                         self.eta3_sq.sum()])

    @property
    def total(self):
        return float(self.totals.sum())

    @property
    def dominant_index(self):
        return int(np.argmax(self.totals))

    @property
    def dominant(self):
        return (self.eta1_sq, self.eta2_sq, self.eta3_sq)[self.dominant_index]

    @property
    def argmax_element(self):
        return int(np.argmax(self.dominant))


def _edge_linear(values, et):
    """Endpoint values of a nodal field on every edge, shape (E, 2)."""
    v = np.asarray(values)
    return v[et.edges[:, 0]], v[et.edges[:, 1]]


def _normal_flux(mesh, grad_elem, et):
    """Normal flux of a piecewise-constant vector field on both edge sides."""
    plus = np.einsum("ej,ej->e", grad_elem[et.tri_plus], et.normal)
    minus = np.zeros_like(plus)
    inner = ~et.is_boundary
    minus[inner] = np.einsum("ej,ej->e", grad_elem[et.tri_minus[inner]],
                             et.normal[inner])
    return plus, minus


def _edge_norm_sq(et, vals_g, w):
    """L2 norm squared over each edge from Gauss-point values (E, g)."""
    return et.length * (vals_g**2 @ w)


def _accumulate(mesh, interior_sq, edge_sq):
    et = mesh.edge_tables()
    h = mesh.meshsize()
    per_elem_edges = edge_sq[et.tri_edges].sum(axis=1)
    return mesh.areas() * interior_sq + h * per_elem_edges


def eta1_parts(mesh: TriMesh, u, y, f, sigma):
    """Interior residual norms (M,) and edge jump norms (E,) for the state."""
    rule = TRI_ESTIMATOR
    uq = nodal_at_quad(mesh, u, rule)
    yq = nodal_at_quad(mesh, y, rule)
    fq = values_at_quad(mesh, f, rule)
    gu = field_gradient(mesh, u)
    gy = field_gradient(mesh, y)
    dot = np.sum(gu * gy, axis=1)
    res = -(1.0 - sigma) * dot[:, None] - (1.0 - uq) * yq**3 + fq
    interior = mesh.areas() * (res**2 @ rule.weights)

    et = mesh.edge_tables()
    ua, ub = _edge_linear(u, et)
    t = EDGE_DEFAULT.points
    a_g = 1.0 - (1.0 - sigma) * (ua[:, None] * (1 - t) + ub[:, None] * t)
    plus, minus = _normal_flux(mesh, gy, et)
    jump = (plus - minus)[:, None] * a_g
    return interior, _edge_norm_sq(et, jump, EDGE_DEFAULT.weights)


def eta1(mesh: TriMesh, u, y, f, sigma):
    """Squared state-equation indicator per element."""
    interior, edges = eta1_parts(mesh, u, y, f, sigma)
    return _accumulate(mesh, interior, edges)


def eta2_parts(mesh: TriMesh, u, y, p, ydelta, sigma):
    rule = TRI_ESTIMATOR
    y = np.asarray(y, dtype=float)
    uq = nodal_at_quad(mesh, u, rule)
    yq = nodal_at_quad(mesh, y, rule)
    pq = nodal_at_quad(mesh, p, rule)
    gu = field_gradient(mesh, u)
    gp = field_gradient(mesh, p)
    dot = np.sum(gu * gp, axis=1)
    res = -(1.0 - sigma) * dot[:, None] - 3.0 * (1.0 - uq) * yq**2 * pq
    interior = mesh.areas() * (res**2 @ rule.weights)

    et = mesh.edge_tables()
    ua, ub = _edge_linear(u, et)
    t = EDGE_DEFAULT.points
    a_g = 1.0 - (1.0 - sigma) * (ua[:, None] * (1 - t) + ub[:, None] * t)
    plus, minus = _normal_flux(mesh, gp, et)
    jump = (plus - minus)[:, None] * a_g
    # boundary edges: flux value minus the data misfit at the Gauss points
    bidx = np.flatnonzero(et.is_boundary)
    if len(bidx):
        pa = mesh.vertices[et.edges[bidx, 0]]
        pb = mesh.vertices[et.edges[bidx, 1]]
        pts = pa[:, None, :] * (1 - t)[None, :, None] + pb[:, None, :] * t[None, :, None]
        ya, yb = y[et.edges[bidx, 0]], y[et.edges[bidx, 1]]
        y_g = ya[:, None] * (1 - t) + yb[:, None] * t
        d_g = eval_boundary_values(ydelta, pts)
        jump[bidx] -= y_g - d_g
    return interior, _edge_norm_sq(et, jump, EDGE_DEFAULT.weights)


def eta2(mesh: TriMesh, u, y, p, ydelta, sigma):
    """Squared adjoint-equation indicator per element."""
    interior, edges = eta2_parts(mesh, u, y, p, ydelta, sigma)
    return _accumulate(mesh, interior, edges)


def eta3_parts(mesh: TriMesh, u, y, p, reg: RegularizationParams, sigma):
    rule = TRI_ESTIMATOR
    uq = nodal_at_quad(mesh, u, rule)
    yq = nodal_at_quad(mesh, y, rule)
    pq = nodal_at_quad(mesh, p, rule)
    gy = field_gradient(mesh, y)
    gp = field_gradient(mesh, p)
    dot = np.sum(gy * gp, axis=1)
    res = (1.0 - sigma) * dot[:, None] + yq**3 * pq \
        + reg.alpha / reg.epsilon * (1.0 - 2.0 * uq)
    interior = mesh.areas() * (res**2 @ rule.weights)

    et = mesh.edge_tables()
    gu = field_gradient(mesh, u)
    plus, minus = _normal_flux(mesh, gu, et)
    jump = 2.0 * reg.alpha * reg.epsilon * (plus - minus)
    edge_sq = et.length * jump**2
    return interior, edge_sq


def eta3(mesh: TriMesh, u, y, p, reg: RegularizationParams, sigma):
    """Squared gradient-equation indicator per element."""
    interior, edges = eta3_parts(mesh, u, y, p, reg, sigma)
    return _accumulate(mesh, interior, edges)


def estimate(mesh, u, states, adjoints, ydeltas, sources, reg, sigma,
             mode="max") -> EstimatorTable:
    """Assemble the combined estimator table over all sources."""
    tables = []
    for y, p, d, f in zip(states, adjoints, ydeltas, sources):
        tables.append(EstimatorTable(eta1(mesh, u, y, f, sigma),
                                     eta2(mesh, u, y, p, d, sigma),
                                     eta3(mesh, u, y, p, reg, sigma)))
    return combine(tables, mode=mode)


def combine(tables, mode="max") -> EstimatorTable:
    """Combine per-source tables elementwise by max (default) or sum."""
    if not tables:
        raise ValueError("need at least one table")
    n = len(tables[0].eta1_sq)
    if any(len(t.eta1_sq) != n for t in tables):
        raise ValueError("tables belong to different meshes")
    if mode == "max":
        op = lambda arrs: np.max(arrs, axis=0)
    elif mode == "sum":
        op = lambda arrs: np.sum(arrs, axis=0)
    else:
        raise ValueError(f"unknown combination mode: {mode}")
    return EstimatorTable(op([t.eta1_sq for t in tables]),
                          op([t.eta2_sq for t in tables]),
                          op([t.eta3_sq for t in tables]))
