"""Adaptive solve-estimate-mark-refine loop and its uniform counterpart."""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError
from .estimator import EstimatorTable, estimate
from .fem import eval_structured, transfer
from .mesh import TriMesh, bisect, build_structured
from .objective import OptimizerConfig, ProblemParams, minimize
from .vtkio import write_vtk

# the published uniform baseline steps the structured resolution by this much
UNIFORM_LADDER_STEP = 15


@dataclass(frozen=True)
class LoopConfig:
    """Settings of the outer adaptive loop."""

    theta: float = 0.65
    tol: float = 1e-6
    max_levels: int = 6
    marking: str = "dorfler"
    combine: str = "max"
    bisections: int = 3

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")
        if self.max_levels < 1:
            raise ValueError("need at least one level")
        if self.marking not in ("dorfler", "maximum"):
            raise ValueError(f"unknown marking strategy: {self.marking}")
        if self.bisections < 1:
            raise ValueError("need at least one bisection per marked element")


@dataclass(frozen=True)
class HistoryRecord:
    level: int
    nodes: int
    objective: float
    eta1_sq: float
    eta2_sq: float
    eta3_sq: float
    marked: int
    wall_time: float

    @property
    def eta_total(self):
        return self.eta1_sq + self.eta2_sq + self.eta3_sq


@dataclass
class RunHistory:
    """Per-level records of an adaptive or uniform run."""

    records: list[HistoryRecord] = field(default_factory=list)

    def append(self, rec: HistoryRecord):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    COLUMNS = ("k", "nodes", "objective", "eta1_sq", "eta2_sq", "eta3_sq",
               "marked")

    def to_csv(self, path):
        """Write the history table.

        Wall times are kept out of the file so that reruns with the same
        configuration and seed stay byte-identical; timing lives in the run
        manifest instead.
        """
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.records:
                w.writerow([r.level, r.nodes, repr(float(r.objective)),
                            repr(float(r.eta1_sq)), repr(float(r.eta2_sq)),
                            repr(float(r.eta3_sq)), r.marked])


def mark(table: EstimatorTable, theta, marking="dorfler"):
    """Select triangle ids to refine from the dominant indicator.

    The greedy rule walks elements in descending indicator order (ties by
    lower id) until the marked share reaches theta of the total.  An all-zero
    table returns the single argmax element so the loop always advances.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    vals = table.dominant
    m = len(vals)
    if m == 0:
        raise ValueError("empty estimator table")
    order = np.lexsort((np.arange(m), -vals))
    csum = np.cumsum(vals[order])
    total = float(csum[-1])
    if total <= 0.0:
        return np.array([int(np.argmax(vals))])
    if marking == "maximum":
        return np.flatnonzero(vals >= 0.5 * vals.max())
    if marking != "dorfler":
        raise ValueError(f"unknown marking strategy: {marking}")
    cut = int(np.searchsorted(csum, theta * total, side="left"))
    cut = min(cut, m - 1)
    return np.sort(order[:cut + 1])


def _refine(mesh, marked, rounds):
    """Bisect every marked element ``rounds`` times (descendants included)."""
    current = np.asarray(marked)
    for r in range(rounds):
        refined = bisect(mesh, current)
        if r + 1 < rounds:
            current = np.flatnonzero(np.isin(refined.element_parent, current))
        mesh = refined
    return mesh


def _dump_level(out_dir, level, mesh, triplet, table, history):
    os.makedirs(out_dir, exist_ok=True)
    gen = mesh.generation
    if gen is None:
        gen = np.zeros(mesh.num_triangles, dtype=np.int64)
    write_vtk(os.path.join(out_dir, f"mesh_{level}.vtk"), mesh,
              cell_data={"generation": gen}, title=f"mesh level {level}")
    fields = {"u": triplet.u}
    for i, (y, p) in enumerate(zip(triplet.states, triplet.adjoints), start=1):
        fields[f"y{i}"] = y
        fields[f"p{i}"] = p
    write_vtk(os.path.join(out_dir, f"u_{level}.vtk"), mesh,
              point_data=fields, title=f"iterate at level {level}")
    with open(os.path.join(out_dir, f"eta_{level}.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "eta1_sq", "eta2_sq", "eta3_sq"])
        for t in range(mesh.num_triangles):
            w.writerow([t, repr(float(table.eta1_sq[t])),
                        repr(float(table.eta2_sq[t])),
                        repr(float(table.eta3_sq[t]))])
    mode = "a" if level > 0 else "w"
    with open(os.path.join(out_dir, "trace.csv"), mode, newline="") as fh:
        w = csv.writer(fh)
        if level == 0:
            w.writerow(["level", "iteration", "objective", "stationarity"])
        for it, obj, stat in triplet.trace:
            w.writerow([level, it, repr(float(obj)), repr(float(stat))])
    history.to_csv(os.path.join(out_dir, "history.csv"))


def _attach_level(exc, level, history):
    exc.level = level
    exc.history = history
    return exc


def run(mesh: TriMesh, ydeltas, problem: ProblemParams,
        loop: LoopConfig | None = None, opt: OptimizerConfig | None = None,
        *, u0=None, threads=1, out_dir=None):
    """Adaptive loop: minimize, estimate, mark, bisect, up to max_levels.

    Returns the final optimality triplet, the run history and the final
    mesh.  Solver failures gain ``level`` and ``history`` attributes before
    propagating so callers can keep partial results.
    """
    loop = loop or LoopConfig()
    u = np.zeros(mesh.num_vertices) if u0 is None else np.asarray(u0, float)
    y_warm = None
    triplet = None
    history = RunHistory()
    sources = problem.source_fns()

    for level in range(loop.max_levels):
        t0 = time.perf_counter()
        try:
            triplet = minimize(mesh, u, ydeltas, problem, opt,
                               y_warm=y_warm, threads=threads)
        except SolverError as exc:
            _attach_level(exc, level, history)
            raise
        table = estimate(mesh, triplet.u, triplet.states, triplet.adjoints,
                         ydeltas, sources, problem.reg, problem.sigma,
                         mode=loop.combine)
        last = level == loop.max_levels - 1
        stop = last or table.total <= loop.tol
        marked = np.array([], dtype=int) if stop else mark(
            table, loop.theta, loop.marking)
        history.append(HistoryRecord(
            level=level, nodes=mesh.num_vertices,
            objective=triplet.objective,
            eta1_sq=float(table.totals[0]), eta2_sq=float(table.totals[1]),
            eta3_sq=float(table.totals[2]), marked=len(marked),
            wall_time=time.perf_counter() - t0))
        if out_dir is not None:
            _dump_level(out_dir, level, mesh, triplet, table, history)
        if stop:
            break
        assert table.argmax_element in marked
        dom = table.dominant
        assert dom[marked].sum() >= loop.theta * dom.sum() * (1 - 1e-12)
        refined = _refine(mesh, marked, loop.bisections)
        assert refined.num_vertices > mesh.num_vertices
        u = transfer(triplet.u, mesh, refined)
        y_warm = [transfer(y, mesh, refined) for y in triplet.states]
        mesh = refined
    return triplet, history, mesh


def run_uniform(mesh: TriMesh, ydeltas, problem: ProblemParams, levels: int,
                opt: OptimizerConfig | None = None, *, u0=None, threads=1,
                out_dir=None, combine="max"):
    """Uniform-refinement baseline with the same solve and history plumbing.

    Starting from a structured mesh, each level steps the per-side resolution
    by UNIFORM_LADDER_STEP, reproducing the published node counts 676, 1681,
    3136, 5041 from a 26-per-side start.  ``levels=0`` is a single solve.
    """
    if levels < 0:
        raise ValueError("levels must be nonnegative")
    if mesh.structured_n is None:
        raise ValueError("uniform baseline expects a structured initial mesh")
    u = np.zeros(mesh.num_vertices) if u0 is None else np.asarray(u0, float)
    y_warm = None
    triplet = None
    history = RunHistory()
    sources = problem.source_fns()

    for level in range(levels + 1):
        t0 = time.perf_counter()
        try:
            triplet = minimize(mesh, u, ydeltas, problem, opt,
                               y_warm=y_warm, threads=threads)
        except SolverError as exc:
            _attach_level(exc, level, history)
            raise
        table = estimate(mesh, triplet.u, triplet.states, triplet.adjoints,
                         ydeltas, sources, problem.reg, problem.sigma,
                         mode=combine)
        last = level == levels
        history.append(HistoryRecord(
            level=level, nodes=mesh.num_vertices,
            objective=triplet.objective,
            eta1_sq=float(table.totals[0]), eta2_sq=float(table.totals[1]),
            eta3_sq=float(table.totals[2]),
            marked=0 if last else mesh.num_triangles,
            wall_time=time.perf_counter() - t0))
        if out_dir is not None:
            _dump_level(out_dir, level, mesh, triplet, table, history)
        if last:
            break
        n_next = mesh.structured_n + UNIFORM_LADDER_STEP
        refined = build_structured(n_next)
        u = eval_structured(mesh.structured_n, triplet.u, refined.vertices)
        y_warm = [eval_structured(mesh.structured_n, y, refined.vertices)
                  for y in triplet.states]
        mesh = refined
    return triplet, history, mesh
