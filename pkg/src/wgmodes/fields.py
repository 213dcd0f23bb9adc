"""Legacy VTK (ASCII, unstructured grid) export of mode fields.

Per cell: Ê at the centroid, real and imaginary parts, as 3-vectors with a
zero z component.  Per node: Ẽ₃ real and imaginary parts.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .fem import eval_edge_field, eval_vertex_field

VTK_TRIANGLE = 5
CENTROID = np.array([[1 / 3, 1 / 3, 1 / 3]])


def _f(x):
    return repr(float(x))


def vtk_text(mesh, modeset, title="wgmodes fields"):
    nodes, tris = mesh.nodes, mesh.triangles
    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
           "DATASET UNSTRUCTURED_GRID",
           f"POINTS {len(nodes)} double"]
    out += [f"{_f(x)} {_f(y)} 0.0" for x, y in nodes]
    out.append(f"CELLS {len(tris)} {4 * len(tris)}")
    out += [f"3 {a} {b} {c}" for a, b, c in tris]
    out.append(f"CELL_TYPES {len(tris)}")
    out += [str(VTK_TRIANGLE)] * len(tris)

    modes = list(modeset) if modeset is not None else []
    if modes:
        dofmap = modeset.blocks.dofmap
        out.append(f"CELL_DATA {len(tris)}")
        for j, m in enumerate(modes):
            vals, _ = eval_edge_field(mesh, dofmap, m.u, CENTROID)
            v = vals[:, 0, :]
            for part, arr in (("re", v.real), ("im", v.imag)):
                out.append(f"VECTORS Et_{part}_{j} double")
                out += [f"{_f(x)} {_f(y)} 0.0" for x, y in arr]
        out.append(f"POINT_DATA {len(nodes)}")
        for j, m in enumerate(modes):
            p = dofmap.expand_vertices(m.p)
            for part, arr in (("re", np.real(p)), ("im", np.imag(p))):
                out.append(f"SCALARS E3t_{part}_{j} double 1")
                out.append("LOOKUP_TABLE default")
                out += [_f(x) for x in arr]
    return "\n".join(out) + "\n"


def export_fields(mesh, modeset, path, title="wgmodes fields"):
    Path(path).write_text(vtk_text(mesh, modeset, title))
