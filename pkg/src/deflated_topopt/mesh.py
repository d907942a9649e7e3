"""Triangular meshes of the hold-all domains with tagged boundaries.

Two generators are provided: a structured rectangle mesh (right-triangle or
crossed pattern) and the 1.5 x 1.0 rectangle with five circular holes used by
the double-pipe benchmark.  Meshes are immutable after construction; all
arrays are read-only views.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy.spatial import Delaunay


class MeshError(ValueError):
    """Raised for invalid mesh inputs or failed construction checks."""


class BoundaryTag(IntEnum):
    WALL = 0
    INFLOW = 1
    OUTFLOW = 2
    HOLE = 3


# geometry of the double-pipe benchmark domain
DOUBLE_PIPE_WIDTH = 1.5
DOUBLE_PIPE_HEIGHT = 1.0
HOLE_RADIUS = 0.05
HOLE_CENTERS = (
    (0.5, 1.0 / 3.0),
    (0.5, 2.0 / 3.0),
    (1.0, 0.25),
    (1.0, 0.5),
    (1.0, 0.75),
)

BIPOLAR_WIDTH = 1.0
BIPOLAR_HEIGHT = 1.0
BIPOLAR_BAND = (0.35, 0.65)

_GEOM_TOL = 1e-9


@dataclass(eq=False)
class Mesh:
    """Conforming triangulation with boundary tags.

    vertices : (nv, 2) coordinates
    triangles : (nt, 3) vertex indices, counterclockwise
    boundary_edges : (nb, 2) vertex index pairs (sorted)
    boundary_tags : (nb,) BoundaryTag values, one per boundary edge
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    edges: np.ndarray = field(init=False)
    tri_edges: np.ndarray = field(init=False)
    element_areas: np.ndarray = field(init=False)
    total_area: float = field(init=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.boundary_edges = np.ascontiguousarray(self.boundary_edges, dtype=np.int64)
        self.boundary_tags = np.ascontiguousarray(self.boundary_tags, dtype=np.int64)

        self.element_areas = _signed_areas(self.vertices, self.triangles)
        if np.any(self.element_areas <= 0.0):
            raise MeshError("triangle with nonpositive signed area")
        self.total_area = float(self.element_areas.sum())

        self.edges, self.tri_edges, edge_count = _build_edges(self.triangles)
        if np.any(edge_count > 2):
            raise MeshError("edge shared by more than two triangles")
        topo_boundary = self.edges[edge_count == 1]
        tagged = np.sort(self.boundary_edges, axis=1)
        if topo_boundary.shape != tagged.shape or not np.array_equal(
            topo_boundary, tagged[np.lexsort((tagged[:, 1], tagged[:, 0]))]
        ):
            raise MeshError("tagged boundary does not match topological boundary")
        if self.boundary_tags.shape[0] != self.boundary_edges.shape[0]:
            raise MeshError("each boundary edge needs exactly one tag")
        # closed loops: every boundary vertex lies on exactly two boundary edges
        degree = np.bincount(self.boundary_edges.ravel(), minlength=self.num_vertices)
        bverts = np.unique(self.boundary_edges.ravel())
        if np.any(degree[bverts] != 2):
            raise MeshError("boundary edges do not form closed loops")

        self._cache = {}
        for arr in (self.vertices, self.triangles, self.boundary_edges,
                    self.boundary_tags, self.edges, self.tri_edges,
                    self.element_areas):
            arr.setflags(write=False)

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    @property
    def num_edges(self):
        return self.edges.shape[0]

    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    def edge_midpoints(self):
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    def boundary_edges_with_tag(self, tag):
        return self.boundary_edges[self.boundary_tags == int(tag)]


def _signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    d1 = vertices[triangles[:, 1]] - p0
    d2 = vertices[triangles[:, 2]] - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _build_edges(triangles):
    """Unique edges, per-triangle edge map (local edge i opposite vertex i),
    and the number of triangles sharing each edge."""
    nt = triangles.shape[0]
    raw = np.concatenate(
        [triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]]
    )
    raw = np.sort(raw, axis=1)
    edges, inverse = np.unique(raw, axis=0, return_inverse=True)
    tri_edges = inverse.reshape(3, nt).T.copy()
    counts = np.bincount(inverse, minlength=edges.shape[0])
    return edges, tri_edges, counts


def _orient_ccw(vertices, triangles):
    areas = _signed_areas(vertices, triangles)
    flipped = triangles.copy()
    neg = areas < 0.0
    flipped[neg] = flipped[neg][:, [0, 2, 1]]
    return flipped


def _tag_boundary(vertices, triangles, tagger):
    edges, _, counts = _build_edges(triangles)
    boundary = edges[counts == 1]
    mids = 0.5 * (vertices[boundary[:, 0]] + vertices[boundary[:, 1]])
    tags = np.array([int(tagger(x, y)) for x, y in mids], dtype=np.int64)
    return boundary, tags


# ---------------------------------------------------------------------------
# boundary taggers (evaluated on edge midpoints)

def tag_all_wall(x, y):
    return BoundaryTag.WALL


def double_pipe_tagger(x, y):
    """In/outflow bands y in (1/6, 2/6) and (4/6, 5/6) on the vertical sides."""
    in_band = (1.0 / 6.0 < y < 2.0 / 6.0) or (4.0 / 6.0 < y < 5.0 / 6.0)
    if abs(x) < _GEOM_TOL and in_band:
        return BoundaryTag.INFLOW
    if abs(x - DOUBLE_PIPE_WIDTH) < _GEOM_TOL and in_band:
        return BoundaryTag.OUTFLOW
    return BoundaryTag.WALL


def bipolar_tagger(x, y):
    """Inflow x=0 and outflow x=1 over the band y in (0.35, 0.65)."""
    lo, hi = BIPOLAR_BAND
    if abs(x) < _GEOM_TOL and lo < y < hi:
        return BoundaryTag.INFLOW
    if abs(x - BIPOLAR_WIDTH) < _GEOM_TOL and lo < y < hi:
        return BoundaryTag.OUTFLOW
    return BoundaryTag.WALL


TAGGERS = {
    "all_wall": tag_all_wall,
    "double_pipe": double_pipe_tagger,
    "bipolar": bipolar_tagger,
}


# ---------------------------------------------------------------------------
# generators

def generate_rect_mesh(width, height, nx, ny, tagger, pattern="right"):
    """Structured mesh of [0,width] x [0,height].

    pattern "right" splits each cell into two right triangles,
    (nx+1)(ny+1) vertices; "crossed" adds cell centers, four triangles
    per cell.  Tags are assigned by evaluating ``tagger`` on boundary
    edge midpoints.
    """
    if nx < 2 or ny < 2:
        raise MeshError("nx and ny must both be at least 2")
    if width <= 0.0 or height <= 0.0:
        raise MeshError("degenerate rectangle dimensions")

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    ii = ii.ravel()
    jj = jj.ravel()
    a = vid(ii, jj)
    b = vid(ii + 1, jj)
    c = vid(ii + 1, jj + 1)
    d = vid(ii, jj + 1)

    if pattern == "right":
        triangles = np.concatenate(
            [np.column_stack([a, b, c]), np.column_stack([a, c, d])]
        )
    elif pattern == "crossed":
        centers = 0.25 * (vertices[a] + vertices[b] + vertices[c] + vertices[d])
        m = vertices.shape[0] + np.arange(nx * ny)
        vertices = np.concatenate([vertices, centers])
        triangles = np.concatenate(
            [
                np.column_stack([a, b, m]),
                np.column_stack([b, c, m]),
                np.column_stack([c, d, m]),
                np.column_stack([d, a, m]),
            ]
        )
    else:
        raise MeshError(f"unknown pattern {pattern!r}")

    triangles = _orient_ccw(vertices, triangles)
    boundary, tags = _tag_boundary(vertices, triangles, tagger)
    return Mesh(vertices, triangles, boundary, tags)


def hole_polygon(center, segments):
    """Vertices of the regular polygon approximating one hole, CCW."""
    k = np.arange(segments)
    ang = 2.0 * np.pi * k / segments
    return np.column_stack(
        [center[0] + HOLE_RADIUS * np.cos(ang), center[1] + HOLE_RADIUS * np.sin(ang)]
    )


def hole_polygon_area(segments):
    return 0.5 * segments * HOLE_RADIUS ** 2 * math.sin(2.0 * math.pi / segments)


def double_pipe_area_defect(segments):
    """Upper bound on |total_area - (1.5 - 5 pi r^2)| from the polygonal holes."""
    return 5.0 * (math.pi * HOLE_RADIUS ** 2 - hole_polygon_area(segments))


def _points_in_convex_polygon(points, polygon):
    inside = np.ones(points.shape[0], dtype=bool)
    n = polygon.shape[0]
    for k in range(n):
        p0 = polygon[k]
        p1 = polygon[(k + 1) % n]
        edge = p1 - p0
        rel = points - p0
        inside &= edge[0] * rel[:, 1] - edge[1] * rel[:, 0] > 0.0
    return inside


def generate_double_pipe_mesh(resolution, hole_segments=48):
    """Mesh of the double-pipe domain with the five circular holes removed.

    Holes are approximated by regular ``hole_segments``-gons; the resulting
    defect in total_area is bounded by ``double_pipe_area_defect``.  Grid
    points near the holes are dropped and the point cloud is Delaunay
    triangulated, so the polygon edges are guaranteed to appear in the mesh
    (checked, raises MeshError otherwise).
    """
    if resolution <= 0.0 or resolution >= 2.0 * HOLE_RADIUS:
        raise MeshError("resolution must be positive and below the hole diameter")
    if hole_segments < 32:
        raise MeshError("at least 32 segments per hole are required")

    width, height = DOUBLE_PIPE_WIDTH, DOUBLE_PIPE_HEIGHT
    nx = max(2, round(width / resolution))
    ny = max(2, round(height / resolution))
    hx, hy = width / nx, height / ny

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    grid = np.column_stack([gx.ravel(), gy.ravel()])

    ring_spacing = 2.0 * HOLE_RADIUS * math.sin(math.pi / hole_segments)
    clearance = max(0.45 * min(hx, hy), 1.5 * ring_spacing)

    keep = np.ones(grid.shape[0], dtype=bool)
    for cx, cy in HOLE_CENTERS:
        dist = np.hypot(grid[:, 0] - cx, grid[:, 1] - cy)
        keep &= dist > HOLE_RADIUS + clearance
    kept_grid = grid[keep]
    polygons = [hole_polygon(c, hole_segments) for c in HOLE_CENTERS]
    points = np.concatenate([kept_grid] + polygons)

    tri = Delaunay(points)
    triangles = _orient_ccw(points, tri.simplices.astype(np.int64))

    centroids = points[triangles].mean(axis=1)
    drop = np.zeros(triangles.shape[0], dtype=bool)
    for poly in polygons:
        near = np.hypot(centroids[:, 0] - poly[:, 0].mean(),
                        centroids[:, 1] - poly[:, 1].mean()) < HOLE_RADIUS
        cand = np.where(near)[0]
        if cand.size:
            drop[cand[_points_in_convex_polygon(centroids[cand], poly)]] = True
    triangles = triangles[~drop]

    # the polygon edges must be conforming mesh edges
    edges, _, _ = _build_edges(triangles)
    edge_set = set(map(tuple, edges))
    offset = kept_grid.shape[0]
    for h in range(len(HOLE_CENTERS)):
        base = offset + h * hole_segments
        for k in range(hole_segments):
            a = base + k
            b = base + (k + 1) % hole_segments
            if (min(a, b), max(a, b)) not in edge_set:
                raise MeshError("hole polygon edge missing from triangulation; "
                                "refine resolution or segment count")

    areas = _signed_areas(points, triangles)
    if areas.min() < 1e-3 * resolution ** 2:
        raise MeshError("mesh quality floor violated near the holes")

    def tagger(x, y):
        for cx, cy in HOLE_CENTERS:
            if math.hypot(x - cx, y - cy) < HOLE_RADIUS + 0.5 * clearance:
                return BoundaryTag.HOLE
        return double_pipe_tagger(x, y)

    boundary, tags = _tag_boundary(points, triangles, tagger)
    mesh = Mesh(points, triangles, boundary, tags)

    expected = width * height - 5.0 * hole_polygon_area(hole_segments)
    if abs(mesh.total_area - expected) > 1e-9:
        raise MeshError("triangulation does not cover the holed rectangle")
    return mesh


def double_pipe_hole_mask(mesh):
    """Per-element mask of the five hole disks, for the run mode that keeps
    the holes as fixed solid instead of removing them from the mesh."""
    centroids = mesh.centroids()
    mask = np.zeros(mesh.num_triangles, dtype=bool)
    for cx, cy in HOLE_CENTERS:
        mask |= np.hypot(centroids[:, 0] - cx, centroids[:, 1] - cy) < HOLE_RADIUS
    return mask
