"""Legacy ASCII VTK writer for triangle meshes with attached fields.

The legacy format is used on purpose: runs are meant to be diffable, and the
ASCII layout keeps vertices and triangles in creation order so repeated runs
produce byte-identical files.  Scalars are written with repr so values round
trip exactly.
"""

import numpy as np


def _fmt(x):
    return repr(float(x))


def _scalar_block(name, arr):
    arr = np.asarray(arr)
    if arr.ndim != 1:
        raise ValueError(f"field {name!r} must be one-dimensional")
    if np.issubdtype(arr.dtype, np.integer):
        lines = [f"SCALARS {name} int 1", "LOOKUP_TABLE default"]
        lines.extend(str(int(v)) for v in arr)
    else:
        lines = [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines.extend(_fmt(v) for v in arr)
    return lines


def write_vtk(path, mesh, point_data=None, cell_data=None, title="triangulation"):
    """Write a mesh and optional named scalar fields to a legacy VTK file.

    ``point_data`` maps names to per-vertex arrays, ``cell_data`` to
    per-triangle arrays.  Triangles are written as VTK cell type 5.
    """
    n, m = mesh.num_vertices, mesh.num_triangles
    lines = ["# vtk DataFile Version 3.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    for x, y in mesh.vertices:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0.0")
    lines.append(f"CELLS {m} {4 * m}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {m}")
    lines.extend(["5"] * m)
    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, arr in point_data.items():
            if len(arr) != n:
                raise ValueError(f"point field {name!r} has wrong length")
            lines.extend(_scalar_block(name, arr))
    if cell_data:
        lines.append(f"CELL_DATA {m}")
        for name, arr in cell_data.items():
            if len(arr) != m:
                raise ValueError(f"cell field {name!r} has wrong length")
            lines.extend(_scalar_block(name, arr))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
