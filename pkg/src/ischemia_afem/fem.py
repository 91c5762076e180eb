"""P1 finite elements for the semilinear Neumann problem on the square.

The state equation in weak form reads: find y such that

    (a(u) grad y, grad v) + (b(u) y^3, v) = (f, v)   for all v,

with a(u) = 1 - (1 - sigma) u, b(u) = 1 - u and homogeneous Neumann data.
The adjoint problem uses the state Jacobian and is driven by the boundary
misfit y - y_delta.  Nodal fields are plain float arrays indexed by vertex id;
a field belongs to the mesh whose vertex count matches its length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import NewtonDivergedError, SingularSystemError
from .mesh import TriMesh
from .quadrature import (
    EDGE_DEFAULT,
    TRI_ASSEMBLY,
    EdgeRule,
    TriangleRule,
    physical_points,
)

# Residual sanity threshold for the direct solver.  Rounding in the LU
# factorization grows with problem size, so this is deliberately loose; a
# genuinely singular matrix blows far past it or yields non-finite values.
LINEAR_RESIDUAL_TOL = 1e-8


@dataclass
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 50
    max_halvings: int = 30


def a_coeff(u, sigma):
    """Conductivity a(u) = 1 - (1 - sigma) u."""
    return 1.0 - (1.0 - sigma) * np.asarray(u)


def b_coeff(u):
    """Semilinear weight b(u) = 1 - u."""
    return 1.0 - np.asarray(u)


def _check_field(mesh, values, name):
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.num_vertices,):
        raise ValueError(f"{name} must have one value per vertex "
                         f"({values.shape} vs {mesh.num_vertices})")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains non-finite entries")
    return values


def element_grads(mesh: TriMesh):
    """Gradients of the three local basis functions, shape (M, 3, 2)."""
    cached = getattr(mesh, "_p1_grads", None)
    if cached is not None:
        return cached
    p = mesh.vertices[mesh.triangles]
    area = mesh.areas()
    g = np.empty((mesh.num_triangles, 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = p[:, j, 1] - p[:, k, 1]
        g[:, i, 1] = p[:, k, 0] - p[:, j, 0]
    g /= (2.0 * area)[:, None, None]
    mesh._p1_grads = g
    return g


def field_gradient(mesh, values):
    """Piecewise-constant gradient of a P1 field, shape (M, 2)."""
    g = element_grads(mesh)
    return np.einsum("mi,mij->mj", np.asarray(values)[mesh.triangles], g)


def nodal_at_quad(mesh, values, rule: TriangleRule):
    """Evaluate a nodal field at quadrature points of every element, (M, q)."""
    return np.asarray(values)[mesh.triangles] @ rule.points.T


def quad_xy(mesh, rule: TriangleRule):
    return physical_points(rule, mesh.vertices[mesh.triangles])


def values_at_quad(mesh, source, rule: TriangleRule):
    """Evaluate a source term at quadrature points.

    Accepts a scalar, a callable of an (..., 2) coordinate array, or a nodal
    field on the mesh.
    """
    m, q = mesh.num_triangles, len(rule.weights)
    if np.isscalar(source):
        return np.full((m, q), float(source))
    if callable(source):
        xy = quad_xy(mesh, rule)
        vals = np.asarray(source(xy.reshape(-1, 2)), dtype=float)
        return vals.reshape(m, q)
    return nodal_at_quad(mesh, _check_field(mesh, source, "source"), rule)


def _scatter_matrix(mesh, elem):
    tris = mesh.triangles
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    mat = sp.coo_matrix((elem.ravel(), (rows, cols)),
                        shape=(mesh.num_vertices,) * 2)
    return mat.tocsr()


def stiffness_matrix(mesh, coeff_elem):
    """Assemble (c grad ., grad .) with a per-element constant coefficient."""
    g = element_grads(mesh)
    elem = np.einsum("m,mik,mjk->mij", np.asarray(coeff_elem) * mesh.areas(), g, g)
    return _scatter_matrix(mesh, elem)


def mass_matrix_quad(mesh, weight_q, rule: TriangleRule = TRI_ASSEMBLY):
    """Assemble (w ., .) from weight values at quadrature points, (M, q)."""
    lam = rule.points
    elem = np.einsum("q,mq,qi,qj->mij", rule.weights, weight_q, lam, lam)
    elem *= mesh.areas()[:, None, None]
    return _scatter_matrix(mesh, elem)


def load_vector_quad(mesh, values_q, rule: TriangleRule = TRI_ASSEMBLY):
    """Assemble (v, phi_i) from integrand values at quadrature points."""
    contrib = np.einsum("q,mq,qi->mi", rule.weights, values_q, rule.points)
    contrib *= mesh.areas()[:, None]
    return np.bincount(mesh.triangles.ravel(), weights=contrib.ravel(),
                       minlength=mesh.num_vertices)


def lumped_mass(mesh):
    """Row-sum lumped mass vector: m_j = sum_T area(T)/3 over T containing j."""
    a3 = np.repeat(mesh.areas() / 3.0, 3)
    return np.bincount(mesh.triangles.ravel(), weights=a3,
                       minlength=mesh.num_vertices)


@dataclass(frozen=True)
class BoundaryQuad:
    """Gauss points on the boundary edges of a mesh."""

    edge_ids: np.ndarray
    va: np.ndarray
    vb: np.ndarray
    lengths: np.ndarray
    points: np.ndarray   # (B, g, 2)
    t: np.ndarray        # (g,)
    w: np.ndarray        # (g,)


def boundary_quad(mesh, rule: EdgeRule = EDGE_DEFAULT) -> BoundaryQuad:
    cached = getattr(mesh, "_bquad", None)
    if cached is not None and cached.t.shape == rule.points.shape \
            and np.array_equal(cached.t, rule.points):
        return cached
    et = mesh.edge_tables()
    ids = np.flatnonzero(et.is_boundary)
    va = et.edges[ids, 0]
    vb = et.edges[ids, 1]
    pa = mesh.vertices[va]
    pb = mesh.vertices[vb]
    t = rule.points
    pts = pa[:, None, :] * (1.0 - t)[None, :, None] + pb[:, None, :] * t[None, :, None]
    bq = BoundaryQuad(edge_ids=ids, va=va, vb=vb, lengths=et.length[ids],
                      points=pts, t=t, w=rule.weights)
    mesh._bquad = bq
    return bq


def eval_boundary_values(ydelta, points):
    """Evaluate boundary data at an (..., 2) array of boundary points.

    Accepts None (zero), a scalar, a callable, or an object exposing
    ``eval_xy`` such as measured boundary data.
    """
    shape = points.shape[:-1]
    flat = points.reshape(-1, 2)
    if ydelta is None:
        return np.zeros(shape)
    if np.isscalar(ydelta):
        return np.full(shape, float(ydelta))
    if hasattr(ydelta, "eval_xy"):
        return np.asarray(ydelta.eval_xy(flat), dtype=float).reshape(shape)
    if callable(ydelta):
        return np.asarray(ydelta(flat), dtype=float).reshape(shape)
    raise TypeError("unsupported boundary data object")


def edge_trace(values, bq: BoundaryQuad):
    """Trace of a P1 field at the boundary Gauss points, (B, g)."""
    vals = np.asarray(values)
    return vals[bq.va][:, None] * (1.0 - bq.t) + vals[bq.vb][:, None] * bq.t


def boundary_load(mesh, edge_vals, bq: BoundaryQuad):
    """Assemble the boundary functional (g, phi_i)_dOmega from edge values."""
    ca = bq.lengths * np.sum(bq.w * (1.0 - bq.t) * edge_vals, axis=1)
    cb = bq.lengths * np.sum(bq.w * bq.t * edge_vals, axis=1)
    nv = mesh.num_vertices
    return (np.bincount(bq.va, weights=ca, minlength=nv)
            + np.bincount(bq.vb, weights=cb, minlength=nv))


def _solve_linear(mat, rhs):
    rhs = np.asarray(rhs, dtype=float)
    bnorm = np.max(np.abs(rhs)) if rhs.size else 0.0
    if bnorm == 0.0:
        return np.zeros_like(rhs)
    try:
        lu = splu(mat.tocsc())
        x = lu.solve(rhs)
    except RuntimeError as exc:
        raise SingularSystemError(f"sparse factorization failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("linear solve produced non-finite values")
    rel = np.max(np.abs(mat @ x - rhs)) / bnorm
    if rel > LINEAR_RESIDUAL_TOL:
        raise SingularSystemError(f"linear solve residual {rel:.2e} exceeds "
                                  f"{LINEAR_RESIDUAL_TOL:.0e}")
    return x


def assemble_state_jacobian(mesh, u, y, sigma, rule: TriangleRule = TRI_ASSEMBLY):
    """Jacobian of the state residual: K(a(u)) + M(3 b(u) y^2)."""
    u = _check_field(mesh, u, "u")
    y = _check_field(mesh, y, "y")
    a_elem = a_coeff(u[mesh.triangles].mean(axis=1), sigma)
    k_mat = stiffness_matrix(mesh, a_elem)
    uq = nodal_at_quad(mesh, u, rule)
    yq = nodal_at_quad(mesh, y, rule)
    return k_mat + mass_matrix_quad(mesh, 3.0 * (1.0 - uq) * yq**2, rule)


def solve_state(mesh, u, source, sigma, y0=None, newton: NewtonConfig | None = None):
    """Solve the semilinear state equation by damped Newton iteration.

    ``source`` may be a scalar, a callable of coordinates, or a nodal field.
    The default initial guess is the constant cbrt(mean f) with magnitude
    floored at 0.1, since a zero start makes the first Jacobian singular.
    """
    newton = newton or NewtonConfig()
    u = _check_field(mesh, u, "u")
    if np.all(u >= 1.0 - 1e-12):
        raise SingularSystemError("b(u) vanishes identically; "
                                  "the Neumann problem loses uniqueness")
    rule = TRI_ASSEMBLY
    uq = nodal_at_quad(mesh, u, rule)
    b_quad = 1.0 - uq
    fq = values_at_quad(mesh, source, rule)
    a_elem = a_coeff(u[mesh.triangles].mean(axis=1), sigma)
    k_mat = stiffness_matrix(mesh, a_elem)
    f_vec = load_vector_quad(mesh, fq, rule)

    if y0 is None:
        fbar = f_vec.sum() / mesh.areas().sum()
        c = np.cbrt(fbar)
        if abs(c) < 0.1:
            c = 0.1 if c >= 0 else -0.1
        y = np.full(mesh.num_vertices, c)
    else:
        y = _check_field(mesh, y0, "y0").copy()

    def residual(yv):
        yq = nodal_at_quad(mesh, yv, rule)
        return k_mat @ yv + load_vector_quad(mesh, b_quad * yq**3, rule) - f_vec

    r = residual(y)
    rnorm = np.max(np.abs(r))
    for _ in range(newton.max_iter):
        if rnorm <= newton.tol:
            return y
        yq = nodal_at_quad(mesh, y, rule)
        jac = k_mat + mass_matrix_quad(mesh, 3.0 * b_quad * yq**2, rule)
        step = _solve_linear(jac, -r)
        s = 1.0
        for _ in range(newton.max_halvings + 1):
            y_try = y + s * step
            r_try = residual(y_try)
            rn_try = np.max(np.abs(r_try))
            if rn_try <= (1.0 - 1e-4 * s) * rnorm:
                y, r, rnorm = y_try, r_try, rn_try
                break
            s *= 0.5
        else:
            raise NewtonDivergedError(
                f"step halving stalled at residual {rnorm:.3e}",
                residual_norm=rnorm, iterations=newton.max_iter)
    if rnorm <= newton.tol:
        return y
    raise NewtonDivergedError(
        f"no convergence in {newton.max_iter} iterations "
        f"(residual {rnorm:.3e})", residual_norm=rnorm,
        iterations=newton.max_iter)


def solve_adjoint(mesh, u, y, ydelta, sigma):
    """Solve the linearized adjoint problem driven by the boundary misfit."""
    u = _check_field(mesh, u, "u")
    y = _check_field(mesh, y, "y")
    rule = TRI_ASSEMBLY
    uq = nodal_at_quad(mesh, u, rule)
    yq = nodal_at_quad(mesh, y, rule)
    weight = 3.0 * (1.0 - uq) * yq**2
    total = np.einsum("m,q,mq->", mesh.areas(), rule.weights, weight)
    if total <= 0.0:
        raise SingularSystemError("adjoint operator has no zeroth-order mass; "
                                  "the Neumann system is singular")
    a_elem = a_coeff(u[mesh.triangles].mean(axis=1), sigma)
    jac = stiffness_matrix(mesh, a_elem) + mass_matrix_quad(mesh, weight, rule)
    bq = boundary_quad(mesh)
    mis = edge_trace(y, bq) - eval_boundary_values(ydelta, bq.points)
    rhs = boundary_load(mesh, mis, bq)
    return _solve_linear(jac, rhs)


def boundary_misfit(mesh, y, ydelta):
    """One half of the squared L2 boundary misfit of y against the data."""
    y = _check_field(mesh, y, "y")
    bq = boundary_quad(mesh)
    mis = edge_trace(y, bq) - eval_boundary_values(ydelta, bq.points)
    return 0.5 * np.sum(bq.lengths * np.sum(bq.w * mis**2, axis=1))


def transfer(values, from_mesh: TriMesh, to_mesh: TriMesh):
    """Interpolate a P1 field from a mesh onto one of its refinements.

    Walks the provenance chain of ``to_mesh`` back to ``from_mesh`` and fills
    each appended vertex with the midpoint average of its recorded edge, which
    reproduces the P1 interpolant exactly.
    """
    values = _check_field(from_mesh, values, "values")
    chain = []
    m = to_mesh
    while m is not from_mesh:
        if m.parent is None:
            raise ValueError("to_mesh is not a refinement of from_mesh")
        chain.append(m)
        m = m.parent
    out = values.copy()
    for step in reversed(chain):
        base = len(out)
        grown = np.empty(step.num_vertices)
        grown[:base] = out
        for k, (va, vb) in enumerate(step.new_vertex_edges):
            grown[base + k] = 0.5 * (grown[va] + grown[vb])
        out = grown
    return out


def l2_error(mesh, values, exact_fn, rule: TriangleRule | None = None):
    """L2 distance between a P1 field and a callable reference."""
    from .quadrature import TRI_ESTIMATOR
    rule = rule or TRI_ESTIMATOR
    vq = nodal_at_quad(mesh, values, rule)
    eq = np.asarray(exact_fn(quad_xy(mesh, rule).reshape(-1, 2))).reshape(vq.shape)
    per_elem = np.einsum("q,mq->m", rule.weights, (vq - eq) ** 2) * mesh.areas()
    return float(np.sqrt(per_elem.sum()))


def h1_seminorm_error(mesh, values, grad_fn, rule: TriangleRule | None = None):
    """H1 seminorm distance between a P1 field and a reference gradient."""
    from .quadrature import TRI_ESTIMATOR
    rule = rule or TRI_ESTIMATOR
    gv = field_gradient(mesh, values)
    xy = quad_xy(mesh, rule)
    ge = np.asarray(grad_fn(xy.reshape(-1, 2))).reshape(xy.shape)
    diff = gv[:, None, :] - ge
    per_elem = np.einsum("q,mqk->m", rule.weights, diff**2) * mesh.areas()
    return float(np.sqrt(per_elem.sum()))


def eval_structured(n, values, points):
    """Evaluate a P1 field on the structured n-per-side mesh at given points.

    Used to warm-start solves between unrelated structured meshes.  Points
    must lie in the closed square.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (n * n,):
        raise ValueError("field length does not match the structured mesh")
    pts = np.asarray(points, dtype=float)
    if np.max(np.abs(pts)) > 1.0 + 1e-12:
        raise ValueError("points outside the domain")
    h = 2.0 / (n - 1)
    fx = (pts[:, 0] + 1.0) / h
    fy = (pts[:, 1] + 1.0) / h
    ix = np.clip(np.floor(fx).astype(int), 0, n - 2)
    iy = np.clip(np.floor(fy).astype(int), 0, n - 2)
    s = fx - ix
    t = fy - iy
    v00 = values[iy * n + ix]
    v10 = values[iy * n + ix + 1]
    v01 = values[(iy + 1) * n + ix]
    v11 = values[(iy + 1) * n + ix + 1]
    lower = v00 + (v10 - v00) * s + (v11 - v10) * t
    upper = v00 + (v11 - v01) * s + (v01 - v00) * t
    return np.where(s >= t, lower, upper)
