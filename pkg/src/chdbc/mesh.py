"""Friedrichs-Keller triangulations of rectangles with an ordered boundary polyline."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle (x0, y0) to (x1, y1) with positive area."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError("rectangle must have positive area: x0 < x1 and y0 < y1")


@dataclass(frozen=True)
class TriMesh:
    """Structured triangulation of a rectangle.

    Attributes
    ----------
    vertices : (n, 2) float array
        Vertex coordinates, row-major from the lower-left corner; vertex
        (ix, iy) has index iy*(nx+1) + ix.
    triangles : (2*nx*ny, 3) int array
        Vertex index triples, all counterclockwise.
    boundary_loop : (2*nx+2*ny,) int array
        Vertex indices tracing the boundary once, counterclockwise,
        starting at the lower-left corner.
    boundary_edges : (2*nx+2*ny, 2) int array
        Consecutive pairs from boundary_loop, closed around the loop.
    h : float
        Grid spacing (uniform in both directions).
    nx, ny : int
        Cell counts per direction.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_loop: np.ndarray
    boundary_edges: np.ndarray
    h: float
    nx: int
    ny: int


def build_friedrichs_keller(domain, nx, ny):
    """Triangulate a rectangle by splitting each grid cell along one diagonal.

    Every cell is split by its lower-left to upper-right diagonal, so the
    mesh is deterministic and golden files depend only on (domain, nx, ny).

    Args
    ----
    domain : Rect
    nx, ny : int
        Cell counts; the spacings (x1-x0)/nx and (y1-y0)/ny must agree to
        1e-12 (uniform isotropic grid).

    Returns
    -------
    TriMesh
    """
    if not (isinstance(nx, (int, np.integer)) and isinstance(ny, (int, np.integer))):
        raise TypeError("nx and ny must be integers")
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be positive")
    hx = (domain.x1 - domain.x0) / nx
    hy = (domain.y1 - domain.y0) / ny
    if abs(hx - hy) > 1e-12:
        raise ValueError(
            f"anisotropic spacing: (x1-x0)/nx = {hx!r} but (y1-y0)/ny = {hy!r}"
        )

    xs = domain.x0 + hx * np.arange(nx + 1)
    ys = domain.y0 + hy * np.arange(ny + 1)
    gx, gy = np.meshgrid(xs, ys)  # row-major: y varies over rows
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    # two CCW triangles per cell: (a, b, c) and (a, c, d) with c the
    # upper-right corner, so the shared diagonal runs lower-left to upper-right
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    a = (iy * (nx + 1) + ix).ravel()
    b = a + 1
    c = a + nx + 2
    d = a + nx + 1
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([a, b, c])
    triangles[1::2] = np.column_stack([a, c, d])

    bottom = np.arange(nx + 1)
    right = (np.arange(1, ny + 1)) * (nx + 1) + nx
    top = ny * (nx + 1) + np.arange(nx - 1, -1, -1)
    left = np.arange(ny - 1, 0, -1) * (nx + 1)
    boundary_loop = np.concatenate([bottom, right, top, left])
    boundary_edges = np.column_stack([boundary_loop, np.roll(boundary_loop, -1)])

    return TriMesh(
        vertices=vertices,
        triangles=triangles,
        boundary_loop=boundary_loop,
        boundary_edges=boundary_edges,
        h=float(hx),
        nx=int(nx),
        ny=int(ny),
    )


def boundary_arc_lengths(mesh):
    """Length of each boundary edge, in loop order. The sum is the perimeter."""
    p = mesh.vertices[mesh.boundary_edges[:, 0]]
    q = mesh.vertices[mesh.boundary_edges[:, 1]]
    return np.sqrt(np.sum((q - p) ** 2, axis=1))


def triangle_areas(mesh):
    """Signed area of every triangle (positive for the CCW orientation used here)."""
    p = mesh.vertices[mesh.triangles]
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )
