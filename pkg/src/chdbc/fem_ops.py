"""P1 finite-element operators on the bulk and on the boundary polyline.

Assembles mass and stiffness matrices for the rectangle (triangles) and
for the closed boundary curve (1D segments in arc length), solves the
mean-zero Neumann Poisson problems that define the inverse Laplacians,
and evaluates the H^-1-type metric coupling bulk and surface.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import boundary_arc_lengths, triangle_areas


def _dot(a, b):
    # deterministic replacement for BLAS dot: pairwise summation, no threading
    return float(np.multiply(a, b).sum())


@dataclass
class FemOperators:
    """Assembled operators for one mesh.  Treat as immutable after assembly.

    m_bulk/k_bulk act on fields over all vertices; m_surf/k_surf act on
    fields over boundary positions (loop order).  trace[k] is the global
    vertex index of boundary position k, and trace_matrix is the
    corresponding restriction operator.  w_bulk = m_bulk @ 1 and
    w_surf = m_surf @ 1 are the nodal quadrature weights used for all
    potential terms.
    """

    m_bulk: sp.csr_matrix
    k_bulk: sp.csr_matrix
    m_surf: sp.csr_matrix
    k_surf: sp.csr_matrix
    trace: np.ndarray
    trace_matrix: sp.csr_matrix
    bulk_volume: float
    surf_measure: float
    w_bulk: np.ndarray
    w_surf: np.ndarray
    _bulk_lu: object = field(default=None, repr=False, compare=False)
    _surf_lu: object = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class MeanPair:
    """Bulk and surface averages of a nodal field."""

    m1: float
    m2: float


def assemble(mesh, lumped=False):
    """Assemble mass/stiffness operators for a TriMesh.

    Exact element integration for affine P1: bulk local mass is
    (area/12)*[[2,1,1],[1,2,1],[1,1,2]], bulk local stiffness comes from
    the constant hat gradients; boundary elements are 1D P1 segments with
    local mass (len/6)*[[2,1],[1,2]] and stiffness (1/len)*[[1,-1],[-1,1]].
    With lumped=True the mass matrices are replaced by their row-sum
    diagonals (the default everywhere else is exact mass).
    """
    tri = mesh.triangles
    n = len(mesh.vertices)
    areas = triangle_areas(mesh)
    if np.any(areas <= 0):
        raise ValueError("degenerate triangle: non-positive area")

    p = mesh.vertices[tri]  # (ntri, 3, 2)
    # grad of hat i is perp(p_k - p_j) / (2A), (i, j, k) cyclic
    g = np.empty_like(p)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = p[:, j, 1] - p[:, k, 1]
        g[:, i, 1] = p[:, k, 0] - p[:, j, 0]
    g /= (2.0 * areas)[:, None, None]
    k_loc = areas[:, None, None] * np.einsum("tid,tjd->tij", g, g)
    m_ref = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    m_loc = areas[:, None, None] * m_ref

    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    k_bulk = sp.coo_matrix((k_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    m_bulk = sp.coo_matrix((m_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    nb = len(mesh.boundary_loop)
    lens = boundary_arc_lengths(mesh)
    ei = np.arange(nb)
    ej = (ei + 1) % nb
    srows = np.concatenate([ei, ei, ej, ej])
    scols = np.concatenate([ei, ej, ei, ej])
    m_vals = np.concatenate([lens / 3.0, lens / 6.0, lens / 6.0, lens / 3.0])
    k_vals = np.concatenate([1.0 / lens, -1.0 / lens, -1.0 / lens, 1.0 / lens])
    m_surf = sp.coo_matrix((m_vals, (srows, scols)), shape=(nb, nb)).tocsr()
    k_surf = sp.coo_matrix((k_vals, (srows, scols)), shape=(nb, nb)).tocsr()

    w_bulk = np.asarray(m_bulk @ np.ones(n))
    w_surf = np.asarray(m_surf @ np.ones(nb))
    if lumped:
        m_bulk = sp.diags(w_bulk, format="csr")
        m_surf = sp.diags(w_surf, format="csr")

    trace_matrix = sp.csr_matrix(
        (np.ones(nb), (ei, mesh.boundary_loop)), shape=(nb, n)
    )
    return FemOperators(
        m_bulk=m_bulk,
        k_bulk=k_bulk,
        m_surf=m_surf,
        k_surf=k_surf,
        trace=mesh.boundary_loop.copy(),
        trace_matrix=trace_matrix,
        bulk_volume=float(w_bulk.sum()),
        surf_measure=float(w_surf.sum()),
        w_bulk=w_bulk,
        w_surf=w_surf,
    )


def mean_pair(ops, phi):
    """Generalized averages (bulk mean, surface mean) of a nodal field."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != ops.w_bulk.shape:
        raise ValueError("field length does not match vertex count")
    m1 = _dot(ops.w_bulk, phi) / ops.bulk_volume
    m2 = _dot(ops.w_surf, phi[ops.trace]) / ops.surf_measure
    return MeanPair(m1=m1, m2=m2)


def _augmented_lu(k, w):
    # one Lagrange-multiplier row pins the weighted mean; keeps the system
    # symmetric and the solution exactly mean-free, independent of node order
    n = k.shape[0]
    a = sp.bmat(
        [[k, w.reshape(n, 1)], [w.reshape(1, n), None]], format="csc"
    )
    return spla.splu(a)


def _bulk_lu(ops):
    if ops._bulk_lu is None:
        ops._bulk_lu = _augmented_lu(ops.k_bulk, ops.w_bulk)
    return ops._bulk_lu


def _surf_lu(ops):
    if ops._surf_lu is None:
        ops._surf_lu = _augmented_lu(ops.k_surf, ops.w_surf)
    return ops._surf_lu


def _solve_bulk(ops, rhs):
    # k_bulk u = m_bulk rhs with weighted-mean-zero u; no precondition check
    b = np.zeros(len(rhs) + 1)
    b[:-1] = ops.m_bulk @ rhs
    return _bulk_lu(ops).solve(b)[:-1]


def _solve_surf(ops, rhs):
    b = np.zeros(len(rhs) + 1)
    b[:-1] = ops.m_surf @ rhs
    return _surf_lu(ops).solve(b)[:-1]


def solve_neumann_poisson(ops, rhs):
    """Apply the mean-zero inverse Neumann Laplacian to a bulk field.

    Solves k_bulk u = m_bulk rhs subject to a zero weighted mean of u.
    The right-hand side must itself have (near) zero bulk mean.
    """
    rhs = np.asarray(rhs, dtype=float)
    scale = float(np.max(np.abs(rhs))) if rhs.size else 0.0
    mean = _dot(ops.w_bulk, rhs) / ops.bulk_volume
    if abs(mean) > 1e-10 * scale:
        raise ValueError(f"right-hand side has nonzero bulk mean {mean!r}")
    return _solve_bulk(ops, rhs)


def solve_surface_poisson(ops, rhs):
    """Apply the mean-zero inverse Laplace-Beltrami operator to a boundary field."""
    rhs = np.asarray(rhs, dtype=float)
    scale = float(np.max(np.abs(rhs))) if rhs.size else 0.0
    mean = _dot(ops.w_surf, rhs) / ops.surf_measure
    if abs(mean) > 1e-10 * scale:
        raise ValueError(f"right-hand side has nonzero surface mean {mean!r}")
    return _solve_surf(ops, rhs)


def _check_mean_free(ops, a, who):
    m = mean_pair(ops, a)
    if abs(m.m1) > 1e-10 or abs(m.m2) > 1e-10:
        raise ValueError(f"{who} is not mean-free in bulk and on the surface: {m}")


def vkstar_inner(ops, a, b):
    """Metric inner product of two fields with zero bulk and surface means.

    <a, b> = u_a' k_bulk u_b + v_a' k_surf v_b where u = inverse Neumann
    Laplacian of the field and v = inverse Laplace-Beltrami of its trace.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_mean_free(ops, a, "first argument")
    _check_mean_free(ops, b, "second argument")
    ua = _solve_bulk(ops, a)
    ub = _solve_bulk(ops, b)
    va = _solve_surf(ops, a[ops.trace])
    vb = _solve_surf(ops, b[ops.trace])
    return _dot(ua, ops.k_bulk @ ub) + _dot(va, ops.k_surf @ vb)


def vkstar_norm_sq(ops, a):
    """Squared metric norm of a mean-free field (bulk + surface parts)."""
    a = np.asarray(a, dtype=float)
    _check_mean_free(ops, a, "argument")
    u = _solve_bulk(ops, a)
    v = _solve_surf(ops, a[ops.trace])
    return _dot(u, ops.k_bulk @ u) + _dot(v, ops.k_surf @ v)


def dual_norm_bulk_sq(ops, phi):
    """Squared dual (H^1(Omega)*-type) norm, defined for any bulk mean.

    ||phi||^2 = ||grad (-Lap)^-1 (phi - <phi>)||^2 + <phi>^2.  For a
    mean-free field this is the bulk part of vkstar_norm_sq.
    """
    phi = np.asarray(phi, dtype=float)
    m = _dot(ops.w_bulk, phi) / ops.bulk_volume
    u = _solve_bulk(ops, phi - m)
    return _dot(u, ops.k_bulk @ u) + m * m


def dual_norm_surf_sq(ops, psi):
    """Surface analog of dual_norm_bulk_sq for a field on boundary positions."""
    psi = np.asarray(psi, dtype=float)
    m = _dot(ops.w_surf, psi) / ops.surf_measure
    v = _solve_surf(ops, psi - m)
    return _dot(v, ops.k_surf @ v) + m * m
