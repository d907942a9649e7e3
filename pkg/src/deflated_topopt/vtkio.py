"""Legacy-VTK (ASCII, unstructured grid) export and import.

Meshes are written as triangle cells plus line cells for the tagged
boundary edges; boundary tags go into integer cell data (triangles carry
-1).  Nodal fields are written as point data.  The reader understands the
subset written here, which is enough to round-trip meshes and to seed a
run from a previously exported level-set field.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh

_VTK_TRIANGLE = 5
_VTK_LINE = 3


class VtkData:
    """Parsed contents of one legacy-VTK unstructured grid file."""

    def __init__(self, points, triangles, lines, cell_tags,
                 point_scalars, point_vectors):
        self.points = points
        self.triangles = triangles
        self.lines = lines
        self.cell_tags = cell_tags
        self.point_scalars = point_scalars
        self.point_vectors = point_vectors

    def to_mesh(self):
        if self.lines.size == 0:
            raise ValueError("file has no boundary line cells")
        return Mesh(self.points[:, :2], self.triangles, self.lines, self.cell_tags)


def write_vtk(path, mesh, point_scalars=None, point_vectors=None, title="deflated-topopt"):
    """Write mesh and nodal fields.

    point_scalars / point_vectors map field name to an array of length
    num_vertices (scalars) or shape (num_vertices, 2) (vectors).
    """
    point_scalars = point_scalars or {}
    point_vectors = point_vectors or {}
    nv = mesh.num_vertices
    nt = mesh.num_triangles
    nb = mesh.boundary_edges.shape[0]

    with open(path, "w") as f:
        f.write("# vtk DataFile Version 2.0\n")
        f.write(f"{title}\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {nv} double\n")
        for x, y in mesh.vertices:
            f.write(f"{float(x)!r} {float(y)!r} 0.0\n")

        f.write(f"CELLS {nt + nb} {4 * nt + 3 * nb}\n")
        for a, b, c in mesh.triangles:
            f.write(f"3 {a} {b} {c}\n")
        for a, b in mesh.boundary_edges:
            f.write(f"2 {a} {b}\n")

        f.write(f"CELL_TYPES {nt + nb}\n")
        for _ in range(nt):
            f.write(f"{_VTK_TRIANGLE}\n")
        for _ in range(nb):
            f.write(f"{_VTK_LINE}\n")

        f.write(f"CELL_DATA {nt + nb}\n")
        f.write("SCALARS boundary_tag int 1\n")
        f.write("LOOKUP_TABLE default\n")
        for _ in range(nt):
            f.write("-1\n")
        for tag in mesh.boundary_tags:
            f.write(f"{int(tag)}\n")

        if point_scalars or point_vectors:
            f.write(f"POINT_DATA {nv}\n")
            for name, values in point_scalars.items():
                values = np.asarray(values, dtype=float)
                if values.shape != (nv,):
                    raise ValueError(f"scalar field {name!r} has wrong length")
                f.write(f"SCALARS {name} double 1\n")
                f.write("LOOKUP_TABLE default\n")
                for v in values:
                    f.write(f"{float(v)!r}\n")
            for name, values in point_vectors.items():
                values = np.asarray(values, dtype=float)
                if values.shape != (nv, 2):
                    raise ValueError(f"vector field {name!r} has wrong shape")
                f.write(f"VECTORS {name} double\n")
                for vx, vy in values:
                    f.write(f"{float(vx)!r} {float(vy)!r} 0.0\n")


def read_vtk(path):
    with open(path) as f:
        tokens = f.read().split()
    pos = 0

    def take(n):
        nonlocal pos
        out = tokens[pos:pos + n]
        if len(out) != n:
            raise ValueError("truncated VTK file")
        pos += n
        return out

    def seek(word):
        nonlocal pos
        while pos < len(tokens):
            if tokens[pos].upper() == word:
                pos += 1
                return True
            pos += 1
        return False

    if not seek("POINTS"):
        raise ValueError("POINTS section missing")
    npts = int(take(1)[0])
    take(1)  # dtype
    coords = np.array(take(3 * npts), dtype=float).reshape(npts, 3)

    if not seek("CELLS"):
        raise ValueError("CELLS section missing")
    ncells = int(take(1)[0])
    total = int(take(1)[0])
    flat = np.array(take(total), dtype=np.int64)
    cells = []
    i = 0
    for _ in range(ncells):
        k = flat[i]
        cells.append(flat[i + 1:i + 1 + k])
        i += 1 + k

    if not seek("CELL_TYPES"):
        raise ValueError("CELL_TYPES section missing")
    take(1)
    types = np.array(take(ncells), dtype=int)

    triangles = np.array([c for c, t in zip(cells, types) if t == _VTK_TRIANGLE],
                         dtype=np.int64).reshape(-1, 3)
    lines = np.array([c for c, t in zip(cells, types) if t == _VTK_LINE],
                     dtype=np.int64).reshape(-1, 2)

    cell_tags = np.zeros(0, dtype=np.int64)
    point_scalars = {}
    point_vectors = {}

    mark = pos
    if seek("CELL_DATA"):
        take(1)
        if tokens[pos].upper() == "SCALARS":
            take(1)
            take(1)  # name
            take(2)  # dtype, ncomp
            take(2)  # LOOKUP_TABLE default
            data = np.array(take(ncells), dtype=np.int64)
            cell_tags = data[types == _VTK_LINE]
    else:
        pos = mark

    mark = pos
    if seek("POINT_DATA"):
        take(1)
        while pos < len(tokens):
            kind = tokens[pos].upper()
            if kind == "SCALARS":
                take(1)
                name = take(1)[0]
                take(2)
                take(2)
                point_scalars[name] = np.array(take(npts), dtype=float)
            elif kind == "VECTORS":
                take(1)
                name = take(1)[0]
                take(1)
                point_vectors[name] = np.array(take(3 * npts), dtype=float).reshape(npts, 3)[:, :2]
            else:
                break
    else:
        pos = mark

    return VtkData(coords, triangles, lines, cell_tags, point_scalars, point_vectors)
