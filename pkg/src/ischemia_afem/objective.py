"""Tikhonov objective with Ginzburg-Landau regularization and its minimizer.

The discrete functional over the admissible set {0 <= u <= 1, u = 0 on the
boundary band} reads

    J(u) = sum_i 1/2 ||y_i(u) - y_i_delta||^2_{L2(boundary)}
         + alpha (eps ||grad u||^2 + 1/eps int u(1-u)),

with one state y_i per source.  The reduced gradient pairs the adjoint states
with the linearized constraint; minimization uses a projected limited-memory
quasi-Newton method with an Armijo line search, all in the lumped nodal inner
product.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import SOURCES
from .fem import (
    NewtonConfig,
    boundary_misfit,
    field_gradient,
    load_vector_quad,
    lumped_mass,
    nodal_at_quad,
    solve_adjoint,
    solve_state,
    stiffness_matrix,
)
from .mesh import TriMesh, boundary_band
from .quadrature import TRI_ASSEMBLY


@dataclass(frozen=True)
class RegularizationParams:
    alpha: float
    epsilon: float

    def __post_init__(self):
        if self.alpha <= 0 or self.epsilon <= 0:
            raise ValueError("alpha and epsilon must be positive")


@dataclass(frozen=True)
class ProblemParams:
    """Full problem description: regularization, contrast, band and sources."""

    alpha: float
    epsilon: float
    sigma: float
    d0: float = 0.1
    sources: tuple = ("f1", "f2")

    @property
    def reg(self):
        return RegularizationParams(self.alpha, self.epsilon)

    def source_fns(self):
        return tuple(SOURCES[s] if isinstance(s, str) else s for s in self.sources)


@dataclass(frozen=True)
class AdmissibleSet:
    """Box constraints plus the zero band near the boundary."""

    band_mask: np.ndarray
    lower: float = 0.0
    upper: float = 1.0

    @classmethod
    def from_mesh(cls, mesh: TriMesh, d0: float):
        return cls(band_mask=boundary_band(mesh, d0).mask)

    def project(self, u):
        v = np.clip(np.asarray(u, dtype=float), self.lower, self.upper)
        v[self.band_mask] = 0.0
        return v


@dataclass
class OptimizerConfig:
    tol: float = 1e-6
    max_iter: int = 200
    memory: int = 10
    armijo: float = 1e-4
    max_halvings: int = 30

    def __post_init__(self):
        if self.max_iter < 1 or self.memory < 1 or self.max_halvings < 1:
            raise ValueError("iteration counts must be positive")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")


@dataclass
class OptimalityTriplet:
    u: np.ndarray
    states: tuple
    adjoints: tuple
    objective: float
    stationarity: float
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)
    reason: str = ""


def regularizer(mesh, u, reg: RegularizationParams):
    """alpha (eps ||grad u||^2 + 1/eps int u(1-u)) for a P1 field u."""
    gu = field_gradient(mesh, u)
    grad_term = np.sum(mesh.areas() * np.sum(gu**2, axis=1))
    uq = nodal_at_quad(mesh, u, TRI_ASSEMBLY)
    well = np.einsum("m,q,mq->", mesh.areas(), TRI_ASSEMBLY.weights,
                     uq * (1.0 - uq))
    return reg.alpha * (reg.epsilon * grad_term + well / reg.epsilon)


def eval_objective(mesh, u, states, ydeltas, reg: RegularizationParams):
    """Boundary misfit summed over sources plus the regularizer."""
    if len(states) != len(ydeltas):
        raise ValueError("need one state per dataset")
    misfit = sum(boundary_misfit(mesh, y, d) for y, d in zip(states, ydeltas))
    return misfit + regularizer(mesh, u, reg)


def reduced_gradient(mesh, u, states, adjoints, reg: RegularizationParams,
                     sigma, band_mask=None):
    """Lumped-L2 Riesz representative of the objective's derivative in u.

    The underlying functional pairs a direction v with
    sum_i [(1-sigma)(v grad y_i, grad p_i) + (v, y_i^3 p_i)]
    + 2 alpha eps (grad u, grad v) + alpha/eps (1-2u, v).
    Entries on band nodes are zeroed, matching the projected geometry.
    """
    u = np.asarray(u, dtype=float)
    rule = TRI_ASSEMBLY
    areas = mesh.areas()
    nv = mesh.num_vertices
    G = np.zeros(nv)
    for y, p in zip(states, adjoints):
        gy = field_gradient(mesh, y)
        gp = field_gradient(mesh, p)
        dot = np.sum(gy * gp, axis=1)
        G += (1.0 - sigma) * np.bincount(mesh.triangles.ravel(),
                                         weights=np.repeat(areas * dot / 3.0, 3),
                                         minlength=nv)
        yq = nodal_at_quad(mesh, y, rule)
        pq = nodal_at_quad(mesh, p, rule)
        G += load_vector_quad(mesh, yq**3 * pq, rule)
    k_one = stiffness_matrix(mesh, np.ones(mesh.num_triangles))
    G += 2.0 * reg.alpha * reg.epsilon * (k_one @ u)
    uq = nodal_at_quad(mesh, u, rule)
    G += reg.alpha / reg.epsilon * load_vector_quad(mesh, 1.0 - 2.0 * uq, rule)
    g = G / lumped_mass(mesh)
    if band_mask is not None:
        g = g.copy()
        g[band_mask] = 0.0
    return g


def _solve_states(mesh, u, sources, ydeltas, sigma, newton, warm, threads):
    def one(i):
        y0 = warm[i] if warm is not None else None
        return solve_state(mesh, u, sources[i], sigma, y0=y0, newton=newton)

    idx = range(len(sources))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, idx))
    return [one(i) for i in idx]


def _solve_adjoints(mesh, u, states, ydeltas, sigma, threads):
    def one(i):
        return solve_adjoint(mesh, u, states[i], ydeltas[i], sigma)

    idx = range(len(states))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, idx))
    return [one(i) for i in idx]


def minimize(mesh, u0, ydeltas, problem: ProblemParams,
             opt: OptimizerConfig | None = None, *, y_warm=None, threads=1,
             newton: NewtonConfig | None = None) -> OptimalityTriplet:
    """Projected limited-memory quasi-Newton descent on the reduced objective.

    Stationarity is measured as ||u - P(u - g)|| in the lumped L2 norm.  The
    objective never increases across accepted steps; if the line search cannot
    make progress the best iterate is returned flagged as non-converged.
    """
    opt = opt or OptimizerConfig()
    sources = problem.source_fns()
    if len(sources) != len(ydeltas):
        raise ValueError("need one dataset per source")
    adm = AdmissibleSet.from_mesh(mesh, problem.d0)
    reg = problem.reg
    m_lump = lumped_mass(mesh)

    def dot_m(a, b):
        return float(np.sum(m_lump * a * b))

    def norm_m(a):
        return np.sqrt(max(dot_m(a, a), 0.0))

    u = adm.project(np.asarray(u0, dtype=float))
    states = _solve_states(mesh, u, sources, ydeltas, problem.sigma, newton,
                           y_warm, threads)
    adjoints = _solve_adjoints(mesh, u, states, ydeltas, problem.sigma, threads)
    J = eval_objective(mesh, u, states, ydeltas, reg)
    g = reduced_gradient(mesh, u, states, adjoints, reg, problem.sigma,
                         adm.band_mask)

    mem_s, mem_y, mem_rho = [], [], []
    trace = []
    converged = False
    reason = ""
    it = 0
    for it in range(opt.max_iter + 1):
        stat = norm_m(u - adm.project(u - g))
        trace.append((it, J, stat))
        if stat <= opt.tol:
            converged = True
            break
        if it == opt.max_iter:
            reason = "max_iter"
            break

        def backtrack(d):
            step = 1.0
            for _ in range(opt.max_halvings + 1):
                u_try = adm.project(u + step * d)
                du = u_try - u
                if norm_m(du) == 0.0:
                    return None
                slope = dot_m(g, du)
                states_try = _solve_states(mesh, u_try, sources, ydeltas,
                                           problem.sigma, newton, states,
                                           threads)
                J_try = eval_objective(mesh, u_try, states_try, ydeltas, reg)
                if slope < 0.0 and J_try <= J + opt.armijo * slope:
                    return u_try, states_try, J_try
                step *= 0.5
            return None

        d = _two_loop(g, mem_s, mem_y, mem_rho, dot_m)
        if dot_m(g, d) >= 0.0:
            mem_s.clear(); mem_y.clear(); mem_rho.clear()
            d = -g
        hit = backtrack(d)
        if hit is None and mem_s:
            # quasi-Newton direction failed; retry as plain projected descent
            mem_s.clear(); mem_y.clear(); mem_rho.clear()
            hit = backtrack(-g)
        if hit is None:
            reason = "line_search"
            break
        u_try, states_try, J_try = hit

        adjoints_try = _solve_adjoints(mesh, u_try, states_try, ydeltas,
                                       problem.sigma, threads)
        g_try = reduced_gradient(mesh, u_try, states_try, adjoints_try, reg,
                                 problem.sigma, adm.band_mask)
        s_vec = u_try - u
        y_vec = g_try - g
        sy = dot_m(s_vec, y_vec)
        if sy > 1e-10 * norm_m(s_vec) * norm_m(y_vec):
            mem_s.append(s_vec)
            mem_y.append(y_vec)
            mem_rho.append(1.0 / sy)
            if len(mem_s) > opt.memory:
                mem_s.pop(0); mem_y.pop(0); mem_rho.pop(0)
        u, states, adjoints, J, g = u_try, states_try, adjoints_try, J_try, g_try

    stat = norm_m(u - adm.project(u - g))
    return OptimalityTriplet(u=u, states=tuple(states), adjoints=tuple(adjoints),
                             objective=J, stationarity=stat,
                             converged=converged, iterations=it, trace=trace,
                             reason=reason)


def _two_loop(g, mem_s, mem_y, mem_rho, dot_m):
    q = -g.copy()
    if not mem_s:
        return q
    alphas = []
    for s, y, rho in zip(reversed(mem_s), reversed(mem_y), reversed(mem_rho)):
        a = rho * dot_m(s, q)
        alphas.append(a)
        q -= a * y
    gamma = dot_m(mem_s[-1], mem_y[-1]) / dot_m(mem_y[-1], mem_y[-1])
    q *= gamma
    for (s, y, rho), a in zip(zip(mem_s, mem_y, mem_rho), reversed(alphas)):
        b = rho * dot_m(y, q)
        q += (a - b) * s
    return q
