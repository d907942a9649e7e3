#!/usr/bin/env python3
"""Render the minimizers of a finished run as a PNG grid.

Usage: plot_minimizers.py <run output dir> [grid.png]

Fluid regions are drawn in blue, solid in orange, with the objective (and
constraint gap, when present) in each panel title.
"""

import csv
import math
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import matplotlib.tri as mtri

from deflated_topopt import vtkio


def main(argv):
    if not argv:
        print(__doc__)
        return 2
    outdir = argv[0]
    target = argv[1] if len(argv) > 1 else os.path.join(outdir, "minimizers.png")

    with open(os.path.join(outdir, "manifest.csv")) as f:
        rows = list(csv.DictReader(f))
    if not rows or "vtk" not in rows[0]:
        print("manifest has no field minimizers to draw")
        return 1

    cols = min(5, len(rows))
    nrows = math.ceil(len(rows) / cols)
    fig, axes = plt.subplots(nrows, cols, figsize=(3.2 * cols, 2.4 * nrows),
                             squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")

    for k, row in enumerate(rows):
        data = vtkio.read_vtk(os.path.join(outdir, row["vtk"]))
        tri = mtri.Triangulation(data.points[:, 0], data.points[:, 1],
                                 data.triangles)
        ax = axes[k // cols][k % cols]
        ax.tricontourf(tri, data.point_scalars["psi"], levels=[-1e9, 0.0, 1e9],
                       colors=["#006BA4", "#FF800E"])
        ax.set_aspect("equal")
        title = f"#{row['index']}  J={float(row['objective']):.4g}"
        if row.get("constraint_gap_percent"):
            title += f"  gap={float(row['constraint_gap_percent']):.2f}%"
        ax.set_title(title, fontsize=8)

    fig.tight_layout()
    fig.savefig(target, dpi=150)
    print(f"wrote {target}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
