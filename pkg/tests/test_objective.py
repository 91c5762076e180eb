import numpy as np
import pytest

from ischemia_afem.data import BoundaryData, Circle, boundary_path, make_data
from ischemia_afem.fem import (
    boundary_misfit,
    lumped_mass,
    solve_adjoint,
    solve_state,
)
from ischemia_afem.mesh import boundary_band, build_structured
from ischemia_afem.objective import (
    AdmissibleSet,
    OptimizerConfig,
    ProblemParams,
    RegularizationParams,
    eval_objective,
    minimize,
    reduced_gradient,
    regularizer,
)
from ischemia_afem.quadrature import TRI_ESTIMATOR, conical_rule
from ischemia_afem.fem import nodal_at_quad, field_gradient


def data_from_nodal_trace(mesh, y):
    ids, s = boundary_path(mesh)
    return BoundaryData(s, y[ids])


def solve_all(mesh, u, problem):
    return [solve_state(mesh, u, f, problem.sigma) for f in problem.source_fns()]


def full_objective(mesh, u, problem, ydeltas):
    states = solve_all(mesh, u, problem)
    return eval_objective(mesh, u, states, ydeltas, problem.reg)


def test_params_validation():
    with pytest.raises(ValueError):
        RegularizationParams(alpha=-1.0, epsilon=0.1)
    with pytest.raises(ValueError):
        RegularizationParams(alpha=1.0, epsilon=0.0)


def test_admissible_projection():
    mesh = build_structured(11)
    adm = AdmissibleSet.from_mesh(mesh, d0=0.1)
    rng = np.random.default_rng(0)
    u = rng.normal(0.5, 1.0, mesh.num_vertices)
    p = adm.project(u)
    assert np.all(p >= 0) and np.all(p <= 1)
    assert np.all(p[adm.band_mask] == 0)
    assert np.array_equal(adm.project(p), p)


def test_regularizer_closed_forms():
    mesh = build_structured(13)
    reg = RegularizationParams(alpha=2e-3, epsilon=0.05)
    nv = mesh.num_vertices
    assert regularizer(mesh, np.zeros(nv), reg) == 0.0
    assert abs(regularizer(mesh, np.ones(nv), reg)) <= 1e-15
    # constant one half: gradient vanishes, double-well is 1/4 of the area
    val = regularizer(mesh, np.full(nv, 0.5), reg)
    assert np.isclose(val, reg.alpha / reg.epsilon)
    # linear field u = x: ||grad u||^2 = 4, int u(1-u) = -4/3
    u = mesh.vertices[:, 0].copy()
    val = regularizer(mesh, u, reg)
    expect = reg.alpha * (reg.epsilon * 4.0 - (4.0 / 3.0) / reg.epsilon)
    assert np.isclose(val, expect, atol=1e-12)


def test_objective_zero_case_and_additivity():
    mesh = build_structured(9)
    problem = ProblemParams(alpha=1.5e-3, epsilon=1 / (16 * np.pi), sigma=1e-4)
    u = np.zeros(mesh.num_vertices)
    states = solve_all(mesh, u, problem)
    ydeltas = [data_from_nodal_trace(mesh, y) for y in states]
    J = eval_objective(mesh, u, states, ydeltas, problem.reg)
    assert abs(J) <= 1e-20
    # multi-source misfit decomposes as the sum of single-source misfits
    other = [data_from_nodal_trace(mesh, y + 0.1) for y in states]
    J2 = eval_objective(mesh, u, states, other, problem.reg)
    parts = sum(boundary_misfit(mesh, y, d) for y, d in zip(states, other))
    assert J2 == parts + regularizer(mesh, u, problem.reg)


def test_objective_matches_refined_quadrature():
    mesh = build_structured(7)
    rng = np.random.default_rng(6)
    u = np.clip(rng.uniform(0, 1, mesh.num_vertices), 0, 1)
    reg = RegularizationParams(alpha=3e-3, epsilon=0.02)
    got = regularizer(mesh, u, reg)
    # independent evaluation with a degree-13 rule
    rule = conical_rule(7)
    gu = field_gradient(mesh, u)
    grad_term = np.sum(mesh.areas() * np.sum(gu**2, axis=1))
    uq = nodal_at_quad(mesh, u, rule)
    well = np.einsum("m,q,mq->", mesh.areas(), rule.weights, uq * (1 - uq))
    expect = reg.alpha * (reg.epsilon * grad_term + well / reg.epsilon)
    assert abs(got - expect) <= 1e-10 * max(1.0, abs(expect))


def test_reduced_gradient_matches_finite_differences():
    mesh = build_structured(9)
    nv = mesh.num_vertices
    problem = ProblemParams(alpha=1.5e-3, epsilon=1 / (16 * np.pi), sigma=1e-4,
                            d0=0.1, sources=("f1", "f2"))
    ydeltas = make_data(Circle((0.3, 0.3), 0.3), problem.sources,
                        sigma=problem.sigma, fine_n=33, noise_pct=0.0, seed=1)
    band = boundary_band(mesh, problem.d0).mask
    x = mesh.vertices
    u = 0.3 + 0.2 * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
    u[band] = 0.0

    states = solve_all(mesh, u, problem)
    adjoints = [solve_adjoint(mesh, u, y, d, problem.sigma)
                for y, d in zip(states, ydeltas)]
    g = reduced_gradient(mesh, u, states, adjoints, problem.reg, problem.sigma,
                         band)
    m = lumped_mass(mesh)
    rng = np.random.default_rng(17)
    h = 1e-5
    for _ in range(5):
        v = rng.normal(size=nv)
        v[band] = 0.0
        v /= np.sqrt(np.sum(m * v * v))
        lhs = np.sum(m * g * v)
        fd = (full_objective(mesh, u + h * v, problem, ydeltas)
              - full_objective(mesh, u - h * v, problem, ydeltas)) / (2 * h)
        assert abs(lhs - fd) <= 1e-4 * max(abs(fd), 1e-12)


def test_gradient_sigma_one_drops_coupling():
    mesh = build_structured(7)
    nv = mesh.num_vertices
    rng = np.random.default_rng(3)
    u = np.clip(rng.uniform(0.1, 0.9, nv), 0, 1)
    y = rng.normal(size=nv)
    p = rng.normal(size=nv)
    reg = RegularizationParams(alpha=1e-3, epsilon=0.02)
    g1 = reduced_gradient(mesh, u, [y], [p], reg, sigma=1.0)
    g0 = reduced_gradient(mesh, u, [y], [p], reg, sigma=0.0)
    # the difference is exactly the sigma-weighted gradient coupling term
    gy = field_gradient(mesh, y)
    gp = field_gradient(mesh, p)
    dot = np.sum(gy * gp, axis=1)
    coupling = np.bincount(mesh.triangles.ravel(),
                           weights=np.repeat(mesh.areas() * dot / 3.0, 3),
                           minlength=nv) / lumped_mass(mesh)
    assert np.allclose(g0 - g1, coupling, atol=1e-14)


def test_minimize_trivial_stationary_at_zero():
    mesh = build_structured(9)
    problem = ProblemParams(alpha=1.5e-3, epsilon=1 / (16 * np.pi), sigma=1e-4,
                            d0=0.1, sources=("f1",))
    # exact data generated from the empty inclusion on a finer mesh
    fine = build_structured(17)
    y_fine = solve_state(fine, np.zeros(fine.num_vertices),
                         lambda xy: xy[:, 0], 1e-4)
    ids, s = boundary_path(fine)
    ydeltas = [BoundaryData(s, y_fine[ids])]
    trip = minimize(mesh, np.zeros(mesh.num_vertices), ydeltas, problem)
    assert trip.converged
    assert trip.iterations <= 1
    assert np.max(np.abs(trip.u)) <= 1e-12
    assert trip.stationarity <= 1e-6


def test_minimize_descends_and_stays_feasible():
    mesh = build_structured(11)
    problem = ProblemParams(alpha=1.5e-3, epsilon=1 / (16 * np.pi), sigma=1e-4,
                            d0=0.1, sources=("f1", "f2"))
    ydeltas = make_data(Circle((0.3, 0.3), 0.3), problem.sources,
                        sigma=problem.sigma, fine_n=41, noise_pct=0.0, seed=2)
    adm = AdmissibleSet.from_mesh(mesh, problem.d0)
    u0 = adm.project(np.full(mesh.num_vertices, 0.5))
    trip = minimize(mesh, u0, ydeltas, problem,
                    OptimizerConfig(max_iter=40))
    objs = [row[1] for row in trip.trace]
    assert all(b <= a + 1e-14 for a, b in zip(objs, objs[1:]))
    assert np.all(trip.u >= 0) and np.all(trip.u <= 1)
    assert np.all(trip.u[adm.band_mask] == 0)
    # the misfit part must have dropped from the flat start
    J0 = full_objective(mesh, u0, problem, ydeltas)
    assert trip.objective < J0


def test_minimize_vi_residual_at_solution():
    mesh = build_structured(9)
    problem = ProblemParams(alpha=1.5e-3, epsilon=1 / (16 * np.pi), sigma=1e-4,
                            d0=0.1, sources=("f1",))
    ydeltas = make_data(Circle((0.3, 0.3), 0.3), problem.sources,
                        sigma=problem.sigma, fine_n=33, noise_pct=0.0, seed=4)
    adm = AdmissibleSet.from_mesh(mesh, problem.d0)
    trip = minimize(mesh, adm.project(np.full(mesh.num_vertices, 0.5)),
                    ydeltas, problem, OptimizerConfig(max_iter=150))
    g = reduced_gradient(mesh, trip.u, trip.states, trip.adjoints, problem.reg,
                         problem.sigma, adm.band_mask)
    m = lumped_mass(mesh)
    rng = np.random.default_rng(23)
    for _ in range(100):
        v = adm.project(rng.uniform(0, 1, mesh.num_vertices))
        w = v - trip.u
        norm = np.sqrt(np.sum(m * w * w))
        assert np.sum(m * g * w) >= -1e-6 * max(norm, 1e-30)


def test_alpha_misfit_tradeoff():
    mesh = build_structured(11)
    ydeltas = make_data(Circle((0.3, 0.3), 0.3), ("f1", "f2"), sigma=1e-4,
                        fine_n=41, noise_pct=0.0, seed=7)
    misfits = []
    for alpha in (1e-4, 1e-3, 1e-2):
        problem = ProblemParams(alpha=alpha, epsilon=1 / (16 * np.pi),
                                sigma=1e-4, d0=0.1, sources=("f1", "f2"))
        adm = AdmissibleSet.from_mesh(mesh, problem.d0)
        trip = minimize(mesh, adm.project(np.full(mesh.num_vertices, 0.5)),
                        ydeltas, problem, OptimizerConfig(max_iter=80))
        misfit = sum(boundary_misfit(mesh, y, d)
                     for y, d in zip(trip.states, ydeltas))
        misfits.append(misfit)
    assert misfits[0] <= misfits[1] + 1e-12
    assert misfits[1] <= misfits[2] + 1e-12
