"""Synthetic experiments: ground-truth inclusions, fine-grid forward solves,
boundary traces and the noise model.

Boundary traces are parameterized by arclength along the perimeter of the
square (-1,1)^2, starting at the corner (-1,-1) and walking counterclockwise:
bottom [0,2], right [2,4], top [4,6], left [6,8).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .fem import solve_state
from .mesh import TriMesh, build_structured


def source_f1(xy):
    return xy[:, 0]


def source_f2(xy):
    return xy[:, 1]


def source_f3(xy):
    return 0.5 * (xy[:, 0] + xy[:, 1])


SOURCES = {"f1": source_f1, "f2": source_f2, "f3": source_f3}


@dataclass(frozen=True)
class Circle:
    center: tuple
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        d2 = (pts[:, 0] - self.center[0]) ** 2 + (pts[:, 1] - self.center[1]) ** 2
        return d2 <= self.radius**2

    def boundary_clearance(self):
        cx, cy = self.center
        return min(1 - abs(cx), 1 - abs(cy)) - self.radius


@dataclass(frozen=True)
class Ellipse:
    center: tuple
    semi_axes: tuple

    def __post_init__(self):
        if min(self.semi_axes) <= 0:
            raise ValueError("semi-axes must be positive")

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        a, b = self.semi_axes
        rx = (pts[:, 0] - self.center[0]) / a
        ry = (pts[:, 1] - self.center[1]) / b
        return rx**2 + ry**2 <= 1.0

    def boundary_clearance(self):
        cx, cy = self.center
        a, b = self.semi_axes
        return min(1 - abs(cx) - a, 1 - abs(cy) - b)


@dataclass(frozen=True)
class ShapeUnion:
    shapes: tuple

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(len(pts), dtype=bool)
        for s in self.shapes:
            out |= s.contains(pts)
        return out

    def boundary_clearance(self):
        if not self.shapes:
            return np.inf
        return min(s.boundary_clearance() for s in self.shapes)


def rasterize(shape, mesh: TriMesh, d0: float = 0.0):
    """Nodal indicator of the inclusion: 1 inside, 0 outside.

    Rejects shapes that intrude into the zero band of width d0 along the
    boundary, where the control is pinned to zero.
    """
    if shape.boundary_clearance() < d0 - 1e-12:
        raise ValueError("inclusion violates the boundary band of width "
                         f"{d0} (clearance {shape.boundary_clearance():.4f})")
    return shape.contains(mesh.vertices).astype(float)


def jaccard(mask_a, mask_b):
    """Jaccard overlap of two vertex sets given as boolean masks."""
    a = np.asarray(mask_a, dtype=bool)
    b = np.asarray(mask_b, dtype=bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def arclength_of(points):
    """Arclength parameter of points on the boundary of the square.

    Raises if any point is farther than 1e-9 from the boundary.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    tol = 1e-9
    on_bottom = np.abs(y + 1) <= tol
    on_right = np.abs(x - 1) <= tol
    on_top = np.abs(y - 1) <= tol
    on_left = np.abs(x + 1) <= tol
    if not np.all(on_bottom | on_right | on_top | on_left):
        bad = np.flatnonzero(~(on_bottom | on_right | on_top | on_left))[0]
        raise ValueError(f"point {tuple(pts[bad])} is not on the boundary")
    if np.max(np.abs(pts)) > 1 + tol:
        raise ValueError("point outside the closed square")
    s = np.select([on_bottom, on_right, on_top, on_left],
                  [x + 1.0, 3.0 + y, 5.0 - x, 7.0 - y])
    return np.mod(s, 8.0)


class BoundaryData:
    """Arclength-parameterized boundary samples for one source.

    Evaluation is piecewise linear and periodic over the perimeter length 8.
    ``delta`` records the L2 boundary distance between the stored noisy and
    clean samples.
    """

    def __init__(self, arclength, values, clean_values=None, *, source_id="",
                 seed=None, noise_pct=0.0, sigma=None, fine_n=None):
        s = np.asarray(arclength, dtype=float)
        v = np.asarray(values, dtype=float)
        if s.ndim != 1 or s.shape != v.shape or len(s) < 2:
            raise ValueError("need matching 1-d arclength/value arrays")
        order = np.argsort(s)
        self.arclength = s[order]
        self.values = v[order]
        if np.any(np.diff(self.arclength) <= 0):
            raise ValueError("arclength samples must be distinct")
        if self.arclength[0] < 0 or self.arclength[-1] >= 8.0:
            raise ValueError("arclength samples must lie in [0, 8)")
        cv = self.values if clean_values is None else np.asarray(clean_values, float)[order]
        self.clean_values = cv
        self.source_id = source_id
        self.seed = seed
        self.noise_pct = noise_pct
        self.sigma = sigma
        self.fine_n = fine_n
        self._s_ext = np.concatenate([[self.arclength[-1] - 8.0], self.arclength,
                                      [self.arclength[0] + 8.0]])
        self._v_ext = np.concatenate([[self.values[-1]], self.values,
                                      [self.values[0]]])
        self.delta = self._l2_distance(self.values, self.clean_values)

    def _l2_distance(self, a, b):
        d = a - b
        s = np.concatenate([self.arclength, [self.arclength[0] + 8.0]])
        d = np.concatenate([d, [d[0]]])
        seg = np.diff(s)
        # exact integral of the piecewise-linear square
        return float(np.sqrt(np.sum(seg / 3.0 * (d[:-1] ** 2 + d[:-1] * d[1:] + d[1:] ** 2))))

    def eval_s(self, s):
        s = np.mod(np.asarray(s, dtype=float), 8.0)
        return np.interp(s, self._s_ext, self._v_ext)

    def eval_xy(self, points):
        return self.eval_s(arclength_of(points))


def eval_boundary(data: BoundaryData, point):
    """Evaluate boundary data at a single point on the boundary."""
    return float(data.eval_xy(np.atleast_2d(point))[0])


def boundary_path(mesh: TriMesh):
    """Boundary vertex ids ordered by arclength, with their parameters."""
    ids = mesh.boundary_vertices()
    s = arclength_of(mesh.vertices[ids])
    order = np.argsort(s)
    return ids[order], s[order]


def make_data(shape, sources, *, sigma, fine_n=401, noise_pct=0.0, seed=0,
              d0=0.0):
    """Generate boundary measurements on the fine structured mesh.

    Solves the state per source with the rasterized ground truth, extracts the
    boundary trace and perturbs each sample with i.i.d. Gaussian noise scaled
    by noise_pct percent of the trace's max magnitude.
    """
    fine = build_structured(fine_n)
    u_true = rasterize(shape, fine, d0)
    ids, s = boundary_path(fine)
    rng = np.random.default_rng(seed)
    out = []
    for name in sources:
        f = SOURCES[name] if isinstance(name, str) else name
        label = name if isinstance(name, str) else getattr(name, "__name__", "custom")
        y = solve_state(fine, u_true, f, sigma)
        trace = y[ids]
        if noise_pct > 0:
            scale = noise_pct / 100.0 * np.max(np.abs(trace))
            noisy = trace + scale * rng.standard_normal(len(trace))
        else:
            noisy = trace.copy()
        out.append(BoundaryData(s, noisy, trace, source_id=label, seed=seed,
                                noise_pct=noise_pct, sigma=sigma, fine_n=fine_n))
    return out


def save_boundary_data(path, datasets):
    """Write boundary datasets to one CSV with identifying header comments."""
    first = datasets[0]
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={first.seed}\n")
        fh.write(f"# noise_pct={first.noise_pct!r}\n")
        fh.write(f"# sigma={first.sigma!r}\n")
        fh.write(f"# fine_n={first.fine_n}\n")
        writer = csv.writer(fh)
        writer.writerow(["source_id", "arclength", "value", "clean_value"])
        for ds in datasets:
            for s, v, c in zip(ds.arclength, ds.values, ds.clean_values):
                writer.writerow([ds.source_id, repr(float(s)), repr(float(v)),
                                 repr(float(c))])


def load_boundary_data(path):
    """Read boundary datasets written by save_boundary_data."""
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        header = None
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
                continue
            if header is None:
                header = line.split(",")
                if header != ["source_id", "arclength", "value", "clean_value"]:
                    raise ValueError(f"unexpected columns in {path}: {header}")
                continue
            rows.append(next(csv.reader([line])))
    if not rows:
        raise ValueError(f"no samples found in {path}")
    seed = int(meta["seed"]) if meta.get("seed", "None") != "None" else None
    noise_pct = float(meta.get("noise_pct", 0.0))
    sigma = float(meta["sigma"]) if meta.get("sigma", "None") != "None" else None
    fine_n = int(meta["fine_n"]) if meta.get("fine_n", "None") != "None" else None
    datasets = []
    by_source = {}
    for sid, s, v, c in rows:
        by_source.setdefault(sid, []).append((float(s), float(v), float(c)))
    for sid, vals in by_source.items():
        arr = np.array(vals)
        datasets.append(BoundaryData(arr[:, 0], arr[:, 1], arr[:, 2],
                                     source_id=sid, seed=seed,
                                     noise_pct=noise_pct, sigma=sigma,
                                     fine_n=fine_n))
    return datasets, meta


@dataclass(frozen=True)
class Preset:
    shape: object
    alpha: float
    epsilon: float
    sources: tuple


PRESETS = {
    "circle": Preset(Circle((0.3, 0.3), 0.3),
                     alpha=1.5e-3, epsilon=1.0 / (16 * np.pi),
                     sources=("f1", "f2")),
    "ellipse": Preset(Ellipse((0.0, 0.3), (0.45, 0.2)),
                      alpha=1.5e-3, epsilon=1.0 / (16 * np.pi),
                      sources=("f1", "f2")),
    "two_circles": Preset(ShapeUnion((Circle((-0.4, -0.3), 0.25),
                                      Circle((0.4, 0.3), 0.25))),
                          alpha=1e-3, epsilon=1.0 / (16 * np.pi),
                          sources=("f1", "f2", "f3")),
    "four_circles": Preset(ShapeUnion((Circle((-0.45, -0.45), 0.2),
                                       Circle((0.45, -0.45), 0.2),
                                       Circle((-0.45, 0.45), 0.2),
                                       Circle((0.45, 0.45), 0.2))),
                           alpha=2e-3, epsilon=1.0 / (12 * np.pi),
                           sources=("f1", "f2", "f3")),
}
