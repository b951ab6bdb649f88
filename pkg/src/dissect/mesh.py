"""Hexahedral high-order Poisson discretisation on structured grids.

Builds the element-level inputs the rest of the package consumes: dense
symmetric stiffness matrices, load vectors and a global numbering of the
unknowns through shared geometric entities.

Basis
-----
The 1D basis on [-1, 1] is hierarchic: the two linear hat functions
``(1 - x)/2`` and ``(1 + x)/2`` plus integrated Legendre modes

    N_k(x) = (P_k(x) - P_{k-2}(x)) / sqrt(4k - 2),   k = 2..p,

which vanish at both endpoints. The 3D basis is the full tensor product,
so one element of degree p carries (p+1)^3 shape functions split into
8 vertex, 12(p-1) edge, 6(p-1)^2 face and (p-1)^3 interior modes.

Stiffness is the Laplace bilinear form

    K[a, b] = integral grad(N_a) . grad(N_b) |J|

integrated with a (p+1)-point Gauss rule per direction (exact on affine
elements). Homogeneous Dirichlet conditions on the whole domain boundary
are applied at generation time by dropping the boundary rows/columns,
so every remaining DOF is unconstrained.

Edge and face modes are ordered by global axis order, which makes the
mode ordering on a shared entity identical in every adjacent element of
a structured grid.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import DegenerateElementError, FormatError, InvalidArgumentError

__all__ = [
    "Element",
    "Mesh",
    "LayoutEntry",
    "ManufacturedSolution",
    "dof_layout",
    "element_stiffness",
    "element_load",
    "generate_mesh",
    "manufactured_problem",
    "solution_error_at_gauss",
    "mesh_to_dict",
    "mesh_from_dict",
    "write_mesh_json",
    "load_mesh_json",
]


# ---------------------------------------------------------------------------
# 1D basis
# ---------------------------------------------------------------------------


def _legendre_values(p, x):
    """Legendre polynomials P_0..P_p evaluated at the points x, shape (p+1, len(x))."""
    x = np.asarray(x, dtype=float)
    val = np.zeros((p + 1, x.size))
    val[0] = 1.0
    if p >= 1:
        val[1] = x
    for k in range(2, p + 1):
        val[k] = ((2 * k - 1) * x * val[k - 1] - (k - 1) * val[k - 2]) / k
    return val

def shape_functions_1d(p, x):
    """Values and derivatives of the (p+1) hierarchic 1D functions at x.

    Returns (N, dN), each of shape (p+1, len(x)). Row 0 and 1 are the hat
    functions attached to x = -1 and x = +1; row k >= 2 is the integrated
    Legendre mode of degree k.
    """
    x = np.asarray(x, dtype=float)
    leg = _legendre_values(max(p, 1), x)
    n = np.zeros((p + 1, x.size))
    dn = np.zeros((p + 1, x.size))
    n[0] = 0.5 * (1.0 - x)
    dn[0] = -0.5
    if p >= 1:
        n[1] = 0.5 * (1.0 + x)
        dn[1] = 0.5
    for k in range(2, p + 1):
        n[k] = (leg[k] - leg[k - 2]) / math.sqrt(4 * k - 2)
        dn[k] = math.sqrt((2 * k - 1) / 2.0) * leg[k - 1]
    return n, dn


# ---------------------------------------------------------------------------
# element DOF layout
# ---------------------------------------------------------------------------

# Local conventions: vertex v = vx + 2*vy + 4*vz. Edges 0-3 run along x
# (keyed by the y/z ends), 4-7 along y, 8-11 along z. Faces 0/1 are normal
# to x, 2/3 to y, 4/5 to z. Face modes iterate over the two tangent axes
# in global axis order.


@dataclass(frozen=True)
class LayoutEntry:
    """One row of an element matrix: which local entity and mode it belongs to."""

    kind: str  # "vertex" | "edge" | "face" | "interior"
    index: int  # local vertex/edge/face number (0 for interior)
    mode: int  # hierarchic mode number within the entity (0 for vertices)


def dof_layout(p):
    """Row layout of a degree-p element.

    Returns (entries, tensor) where entries is the list of LayoutEntry in row
    order and tensor[r] = (a, b, c) gives the 1D function indices of row r.
    """
    entries = []
    tensor = []
    for v in range(8):
        vx, vy, vz = v & 1, (v >> 1) & 1, (v >> 2) & 1
        entries.append(LayoutEntry("vertex", v, 0))
        tensor.append((vx, vy, vz))
    # edges along x, y, z
    for e, (ey, ez) in enumerate([(0, 0), (1, 0), (0, 1), (1, 1)]):
        for m in range(p - 1):
            entries.append(LayoutEntry("edge", e, m))
            tensor.append((2 + m, ey, ez))
    for e, (ex, ez) in enumerate([(0, 0), (1, 0), (0, 1), (1, 1)]):
        for m in range(p - 1):
            entries.append(LayoutEntry("edge", 4 + e, m))
            tensor.append((ex, 2 + m, ez))
    for e, (ex, ey) in enumerate([(0, 0), (1, 0), (0, 1), (1, 1)]):
        for m in range(p - 1):
            entries.append(LayoutEntry("edge", 8 + e, m))
            tensor.append((ex, ey, 2 + m))
    # faces normal to x, y, z; tangent modes in global axis order
    for fx in (0, 1):
        for m1 in range(p - 1):
            for m2 in range(p - 1):
                entries.append(LayoutEntry("face", fx, m1 * (p - 1) + m2))
                tensor.append((fx, 2 + m1, 2 + m2))
    for fy in (0, 1):
        for m1 in range(p - 1):
            for m2 in range(p - 1):
                entries.append(LayoutEntry("face", 2 + fy, m1 * (p - 1) + m2))
                tensor.append((2 + m1, fy, 2 + m2))
    for fz in (0, 1):
        for m1 in range(p - 1):
            for m2 in range(p - 1):
                entries.append(LayoutEntry("face", 4 + fz, m1 * (p - 1) + m2))
                tensor.append((2 + m1, 2 + m2, fz))
    for mx in range(p - 1):
        for my in range(p - 1):
            for mz in range(p - 1):
                m = (mx * (p - 1) + my) * (p - 1) + mz
                entries.append(LayoutEntry("interior", 0, m))
                tensor.append((2 + mx, 2 + my, 2 + mz))
    return entries, np.array(tensor, dtype=np.int64)


# ---------------------------------------------------------------------------
# element integration
# ---------------------------------------------------------------------------


def _geometry_at(corners, xi, eta, zeta):
    """Trilinear map and Jacobians at a tensor grid of reference points.

    Returns (points, jac, det) with shapes (nq, 3), (nq, 3, 3), (nq,), where
    nq = len(xi) * len(eta) * len(zeta) and jac[q, i, j] = d x_i / d xi_j.
    """
    lin_x, dlin_x = shape_functions_1d(1, xi)
    lin_y, dlin_y = shape_functions_1d(1, eta)
    lin_z, dlin_z = shape_functions_1d(1, zeta)
    vertex_axes = np.array([(v & 1, (v >> 1) & 1, (v >> 2) & 1) for v in range(8)])
    vx, vy, vz = vertex_axes[:, 0], vertex_axes[:, 1], vertex_axes[:, 2]
    nq = xi.size * eta.size * zeta.size
    # vertex shape values / reference gradients on the grid, flattened x-fastest? use ijk order
    val = np.einsum("vi,vj,vk->vijk", lin_x[vx], lin_y[vy], lin_z[vz]).reshape(8, nq)
    g0 = np.einsum("vi,vj,vk->vijk", dlin_x[vx], lin_y[vy], lin_z[vz]).reshape(8, nq)
    g1 = np.einsum("vi,vj,vk->vijk", lin_x[vx], dlin_y[vy], lin_z[vz]).reshape(8, nq)
    g2 = np.einsum("vi,vj,vk->vijk", lin_x[vx], lin_y[vy], dlin_z[vz]).reshape(8, nq)
    pts = val.T @ corners
    jac = np.empty((nq, 3, 3))
    jac[:, :, 0] = g0.T @ corners
    jac[:, :, 1] = g1.T @ corners
    jac[:, :, 2] = g2.T @ corners
    det = np.linalg.det(jac)
    return pts, jac, det


def _basis_on_grid(p, xi, eta, zeta, derivatives=True):
    """All (p+1)^3 basis values (and reference gradients) on a tensor grid."""
    _, tensor = dof_layout(p)
    nx_, dnx = shape_functions_1d(p, xi)
    ny_, dny = shape_functions_1d(p, eta)
    nz_, dnz = shape_functions_1d(p, zeta)
    a, b, c = tensor[:, 0], tensor[:, 1], tensor[:, 2]
    nrow = len(tensor)
    nq = xi.size * eta.size * zeta.size
    val = np.einsum("ri,rj,rk->rijk", nx_[a], ny_[b], nz_[c]).reshape(nrow, nq)
    if not derivatives:
        return val, None
    grad = np.empty((nrow, nq, 3))
    grad[:, :, 0] = np.einsum("ri,rj,rk->rijk", dnx[a], ny_[b], nz_[c]).reshape(nrow, nq)
    grad[:, :, 1] = np.einsum("ri,rj,rk->rijk", nx_[a], dny[b], nz_[c]).reshape(nrow, nq)
    grad[:, :, 2] = np.einsum("ri,rj,rk->rijk", nx_[a], ny_[b], dnz[c]).reshape(nrow, nq)
    return val, grad


def element_stiffness(corners, p):
    """Dense stiffness matrix of one hexahedral element.

    Parameters
    ----------
    corners : (8, 3) array
        Vertex coordinates in local vertex order (v = vx + 2*vy + 4*vz).
    p : int
        Polynomial degree, p >= 1.

    Returns
    -------
    (K, layout) : the full (p+1)^3 square matrix (no boundary conditions
    applied) and the list of LayoutEntry describing each row.
    """
    corners = np.asarray(corners, dtype=float)
    if corners.shape != (8, 3):
        raise InvalidArgumentError("corners must be an (8, 3) array")
    if p < 1:
        raise InvalidArgumentError("polynomial degree must be >= 1")
    pts1, wts1 = leggauss(p + 1)
    entries, _ = dof_layout(p)
    _, jac, det = _geometry_at(corners, pts1, pts1, pts1)
    if np.any(det <= 0.0):
        raise DegenerateElementError(
            "non-positive Jacobian at a quadrature point (degenerate hexahedron)"
        )
    _, grad_ref = _basis_on_grid(p, pts1, pts1, pts1)
    inv_jac = np.linalg.inv(jac)
    grad_phys = np.einsum("rqd,qdm->rqm", grad_ref, inv_jac)
    weights = np.einsum("i,j,k->ijk", wts1, wts1, wts1).reshape(-1) * det
    k_mat = np.einsum("rqm,sqm,q->rs", grad_phys, grad_phys, weights)
    return k_mat, entries


def element_load(corners, p, source, n_gauss=None):
    """Load vector entries f_a = integral source(x) N_a |J| for one element.

    Uses (p+2)^3 Gauss points by default; the stiffness rule would be exact
    for polynomial sources only, and the trig case benefits from the margin.
    """
    corners = np.asarray(corners, dtype=float)
    ng = n_gauss if n_gauss is not None else p + 2
    pts1, wts1 = leggauss(ng)
    pts, _, det = _geometry_at(corners, pts1, pts1, pts1)
    if np.any(det <= 0.0):
        raise DegenerateElementError("non-positive Jacobian in load integration")
    val, _ = _basis_on_grid(p, pts1, pts1, pts1, derivatives=False)
    weights = np.einsum("i,j,k->ijk", wts1, wts1, wts1).reshape(-1) * det
    return val @ (weights * source(pts))


# ---------------------------------------------------------------------------
# mesh data model
# ---------------------------------------------------------------------------


@dataclass
class Element:
    """One hexahedral element after boundary-condition elimination.

    ``dof_ids`` lists the surviving global DOFs in layout order; ``K`` and
    ``f`` are the matching rows/columns of the full element matrices.
    ``kept`` maps each surviving row back to its position in the full
    (p+1)^3 layout (None for elements imported without geometry).
    """

    id: int
    corners: Optional[np.ndarray]
    degree: Optional[int]
    dof_ids: np.ndarray
    K: np.ndarray
    f: np.ndarray
    kept: Optional[np.ndarray] = None
    bbox: Optional[np.ndarray] = None  # (2, 3): min corner, max corner

    @property
    def n_dofs(self):
        return len(self.dof_ids)


@dataclass
class Mesh:
    """Collection of elements plus the global DOF bookkeeping."""

    elements: list
    n_dofs: int
    dof_entity: dict = field(default_factory=dict)
    extents: Optional[tuple] = None
    grid: Optional[tuple] = None
    degree: Optional[int] = None
    load_case: Optional[str] = None

    def element_by_id(self, eid):
        if not hasattr(self, "_by_id"):
            self._by_id = {e.id: e for e in self.elements}
        return self._by_id[eid]


def _entity_ids(nx, ny, nz, p):
    """Allocate dense global ids to all non-boundary entities.

    Returns (ids, n, tags) where ids maps an entity key to the id of its
    first mode, n is the total free DOF count and tags maps each DOF id to
    its (kind, position, mode) entity tag.
    """
    ids = {}
    tags = {}
    n = 0

    def alloc(key, modes, kind, pos):
        nonlocal n
        ids[key] = n
        for m in range(modes):
            tags[n + m] = (kind, pos, m)
        n += modes

    for iz in range(nz + 1):
        for iy in range(ny + 1):
            for ix in range(nx + 1):
                if 0 < ix < nx and 0 < iy < ny and 0 < iz < nz:
                    alloc(("v", ix, iy, iz), 1, "vertex", (ix, iy, iz))
    if p >= 2:
        nm_e = p - 1
        for iz in range(nz + 1):
            for iy in range(ny + 1):
                for ix in range(nx):
                    if 0 < iy < ny and 0 < iz < nz:
                        alloc(("ex", ix, iy, iz), nm_e, "edge-mode", ("x", ix, iy, iz))
        for iz in range(nz + 1):
            for iy in range(ny):
                for ix in range(nx + 1):
                    if 0 < ix < nx and 0 < iz < nz:
                        alloc(("ey", ix, iy, iz), nm_e, "edge-mode", ("y", ix, iy, iz))
        for iz in range(nz):
            for iy in range(ny + 1):
                for ix in range(nx + 1):
                    if 0 < ix < nx and 0 < iy < ny:
                        alloc(("ez", ix, iy, iz), nm_e, "edge-mode", ("z", ix, iy, iz))
        nm_f = (p - 1) ** 2
        for iz in range(nz):
            for iy in range(ny):
                for ix in range(nx + 1):
                    if 0 < ix < nx:
                        alloc(("fx", ix, iy, iz), nm_f, "face-mode", ("x", ix, iy, iz))
        for iz in range(nz):
            for iy in range(ny + 1):
                for ix in range(nx):
                    if 0 < iy < ny:
                        alloc(("fy", ix, iy, iz), nm_f, "face-mode", ("y", ix, iy, iz))
        for iz in range(nz + 1):
            for iy in range(ny):
                for ix in range(nx):
                    if 0 < iz < nz:
                        alloc(("fz", ix, iy, iz), nm_f, "face-mode", ("z", ix, iy, iz))
        nm_c = (p - 1) ** 3
        for iz in range(nz):
            for iy in range(ny):
                for ix in range(nx):
                    alloc(("c", ix, iy, iz), nm_c, "interior-mode", (ix, iy, iz))
    return ids, n, tags


_EDGE_KEYS = (
    # (entity kind, fixed offsets): local edge index -> global entity key parts
    [("ex", (0, 0)), ("ex", (1, 0)), ("ex", (0, 1)), ("ex", (1, 1))],
    [("ey", (0, 0)), ("ey", (1, 0)), ("ey", (0, 1)), ("ey", (1, 1))],
    [("ez", (0, 0)), ("ez", (1, 0)), ("ez", (0, 1)), ("ez", (1, 1))],
)


def _entity_key(entry, p, ix, iy, iz):
    """Global entity key and mode offset for one layout entry of cell (ix, iy, iz)."""
    if entry.kind == "vertex":
        v = entry.index
        return ("v", ix + (v & 1), iy + ((v >> 1) & 1), iz + ((v >> 2) & 1)), 0
    if entry.kind == "edge":
        e = entry.index
        if e < 4:  # along x
            ey, ez = e & 1, e >> 1
            return ("ex", ix, iy + ey, iz + ez), entry.mode
        if e < 8:  # along y
            ex, ez = (e - 4) & 1, (e - 4) >> 1
            return ("ey", ix + ex, iy, iz + ez), entry.mode
        ex, ey = (e - 8) & 1, (e - 8) >> 1
        return ("ez", ix + ex, iy + ey, iz), entry.mode
    if entry.kind == "face":
        f = entry.index
        if f < 2:
            return ("fx", ix + f, iy, iz), entry.mode
        if f < 4:
            return ("fy", ix, iy + (f - 2), iz), entry.mode
        return ("fz", ix, iy, iz + (f - 4)), entry.mode
    return ("c", ix, iy, iz), entry.mode


def generate_mesh(nx, ny, nz, extents=(1.0, 1.0, 1.0), p=1):
    """Structured nx*ny*nz hexahedral grid on [0,Lx]x[0,Ly]x[0,Lz] of degree p.

    Homogeneous Dirichlet conditions on the whole boundary are eliminated
    here: boundary entities receive no DOF ids and the matching rows and
    columns are dropped from every element matrix.
    """
    for name, v in (("nx", nx), ("ny", ny), ("nz", nz)):
        if int(v) != v or v < 1:
            raise InvalidArgumentError(f"{name} must be a positive integer, got {v!r}")
    if int(p) != p or p < 1:
        raise InvalidArgumentError(f"degree must be a positive integer, got {p!r}")
    lx, ly, lz = (float(e) for e in extents)
    if lx <= 0 or ly <= 0 or lz <= 0:
        raise InvalidArgumentError(f"extents must be positive, got {extents!r}")
    nx, ny, nz, p = int(nx), int(ny), int(nz), int(p)

    ids, n_dofs, tags = _entity_ids(nx, ny, nz, p)
    hx, hy, hz = lx / nx, ly / ny, lz / nz
    ref_corners = np.array(
        [((v & 1) * hx, ((v >> 1) & 1) * hy, ((v >> 2) & 1) * hz) for v in range(8)]
    )
    k_full, layout = element_stiffness(ref_corners, p)

    elements = []
    for iz in range(nz):
        for iy in range(ny):
            for ix in range(nx):
                eid = ix + nx * (iy + ny * iz)
                origin = np.array([ix * hx, iy * hy, iz * hz])
                corners = ref_corners + origin
                kept = []
                dof_ids = []
                for r, entry in enumerate(layout):
                    key, mode = _entity_key(entry, p, ix, iy, iz)
                    if key in ids:
                        kept.append(r)
                        dof_ids.append(ids[key] + mode)
                kept = np.array(kept, dtype=np.int64)
                dof_ids = np.array(dof_ids, dtype=np.int64)
                elements.append(
                    Element(
                        id=eid,
                        corners=corners,
                        degree=p,
                        dof_ids=dof_ids,
                        K=k_full[np.ix_(kept, kept)],
                        f=np.zeros(len(kept)),
                        kept=kept,
                        bbox=np.array([corners.min(axis=0), corners.max(axis=0)]),
                    )
                )
    return Mesh(
        elements=elements,
        n_dofs=n_dofs,
        dof_entity=tags,
        extents=(lx, ly, lz),
        grid=(nx, ny, nz),
        degree=p,
    )


# ---------------------------------------------------------------------------
# manufactured solutions
# ---------------------------------------------------------------------------


@dataclass
class ManufacturedSolution:
    """Exact solution u and forcing f = -laplacian(u) of a verification case."""

    case: str
    u: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray], np.ndarray]


def _case_poly2(lx, ly, lz):
    def u(pts):
        pts = np.asarray(pts, dtype=float)
        x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
        return x * (lx - x) * y * (ly - y) * z * (lz - z)

    def f(pts):
        pts = np.asarray(pts, dtype=float)
        x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
        gx, gy, gz = x * (lx - x), y * (ly - y), z * (lz - z)
        return 2.0 * (gy * gz + gx * gz + gx * gy)

    return u, f


def _case_trig(lx, ly, lz):
    kx, ky, kz = math.pi / lx, math.pi / ly, math.pi / lz
    lam = kx * kx + ky * ky + kz * kz

    def u(pts):
        pts = np.asarray(pts, dtype=float)
        return (
            np.sin(kx * pts[..., 0])
            * np.sin(ky * pts[..., 1])
            * np.sin(kz * pts[..., 2])
        )

    def f(pts):
        return lam * u(pts)

    return u, f


_CASES = {"poly2": _case_poly2, "trig": _case_trig}


def manufactured_problem(mesh, case):
    """Fill the element load vectors of mesh for the given case id.

    Returns the :class:`ManufacturedSolution` (exact u and forcing f) so the
    caller can verify the discrete solution pointwise.
    """
    if case not in _CASES:
        raise InvalidArgumentError(
            f"unknown manufactured case {case!r}; expected one of {sorted(_CASES)}"
        )
    if mesh.extents is None:
        raise InvalidArgumentError("mesh carries no geometry; cannot build loads")
    u_fn, f_fn = _CASES[case](*mesh.extents)
    for elem in mesh.elements:
        if elem.corners is None or elem.degree is None:
            raise InvalidArgumentError("mesh carries no geometry; cannot build loads")
        full = element_load(elem.corners, elem.degree, f_fn)
        elem.f = full[elem.kept]
    mesh.load_case = case
    return ManufacturedSolution(case=case, u=u_fn, f=f_fn)


def solution_error_at_gauss(mesh, values, exact_u, n_gauss=None):
    """Discrete L2 error of the FE solution against exact_u at Gauss points.

    values maps DOF id -> coefficient (an array indexed by id). Eliminated
    boundary DOFs contribute zero, consistent with homogeneous Dirichlet data.
    """
    values = np.asarray(values, dtype=float)
    total = 0.0
    for elem in mesh.elements:
        p = elem.degree
        ng = n_gauss if n_gauss is not None else p + 2
        pts1, wts1 = leggauss(ng)
        pts, _, det = _geometry_at(elem.corners, pts1, pts1, pts1)
        val, _ = _basis_on_grid(p, pts1, pts1, pts1, derivatives=False)
        coeff = np.zeros(len(val))
        coeff[elem.kept] = values[elem.dof_ids]
        u_h = coeff @ val
        weights = np.einsum("i,j,k->ijk", wts1, wts1, wts1).reshape(-1) * det
        diff = u_h - exact_u(pts)
        total += float(weights @ (diff * diff))
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# JSON mesh exchange
# ---------------------------------------------------------------------------


def _lower_triangle(k_mat):
    n = k_mat.shape[0]
    return [k_mat[i, j] for i in range(n) for j in range(i + 1)]


def _from_lower_triangle(vals, n):
    k_mat = np.zeros((n, n))
    pos = 0
    for i in range(n):
        for j in range(i + 1):
            k_mat[i, j] = vals[pos]
            k_mat[j, i] = vals[pos]
            pos += 1
    return k_mat


def mesh_to_dict(mesh):
    """Serializable form of a mesh: the documented exchange schema."""
    doc = {
        "n_dofs": mesh.n_dofs,
        "elements": [
            {
                "id": e.id,
                "dofs": [int(d) for d in e.dof_ids],
                "k_lower": _lower_triangle(e.K),
                "f": list(e.f),
            }
            for e in mesh.elements
        ],
    }
    for rec, e in zip(doc["elements"], mesh.elements):
        if e.bbox is not None:
            rec["bbox"] = [list(e.bbox[0]), list(e.bbox[1])]
    if mesh.extents is not None:
        doc["extents"] = list(mesh.extents)
    return doc


def _synthetic_bboxes(n):
    """Unit-box layout on a cubic grid for meshes imported without geometry."""
    side = max(1, math.ceil(n ** (1.0 / 3.0)))
    while side**3 < n:
        side += 1
    boxes = []
    for i in range(n):
        ix, iy, iz = i % side, (i // side) % side, i // (side * side)
        lo = np.array([float(ix), float(iy), float(iz)])
        boxes.append(np.array([lo, lo + 1.0]))
    return boxes


def mesh_from_dict(doc):
    """Rebuild a mesh from the exchange schema.

    Element matrices are restored bit-for-bit. Elements without a "bbox"
    entry get synthetic unit boxes laid out on a cubic grid by id, which is
    enough to drive the spatial partitioner (any partition tree is valid for
    correctness; geometry only affects its quality).
    """
    try:
        n_dofs = int(doc["n_dofs"])
        raw_elements = doc["elements"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"mesh document missing required field: {exc}") from exc
    elements = []
    fallback = None
    for idx, rec in enumerate(raw_elements):
        try:
            eid = int(rec["id"])
            dofs = np.array([int(d) for d in rec["dofs"]], dtype=np.int64)
            k_lower = rec["k_lower"]
            f_vec = np.array([float(v) for v in rec["f"]], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed element record #{idx}: {exc}") from exc
        n = len(dofs)
        if len(k_lower) != n * (n + 1) // 2:
            raise FormatError(
                f"element {eid}: k_lower has {len(k_lower)} entries, "
                f"expected {n * (n + 1) // 2}"
            )
        if len(f_vec) != n:
            raise FormatError(f"element {eid}: f has {len(f_vec)} entries, expected {n}")
        if "bbox" in rec:
            bbox = np.array(rec["bbox"], dtype=float)
            if bbox.shape != (2, 3):
                raise FormatError(f"element {eid}: bbox must be a 2x3 array")
        else:
            if fallback is None:
                fallback = _synthetic_bboxes(len(raw_elements))
            bbox = fallback[idx]
        elements.append(
            Element(
                id=eid,
                corners=None,
                degree=None,
                dof_ids=dofs,
                K=_from_lower_triangle(k_lower, n),
                f=f_vec,
                kept=None,
                bbox=bbox,
            )
        )
    extents = tuple(doc["extents"]) if "extents" in doc else None
    return Mesh(elements=elements, n_dofs=n_dofs, extents=extents)


def write_mesh_json(mesh, path):
    with open(path, "w") as fh:
        json.dump(mesh_to_dict(mesh), fh)


def load_mesh_json(path):
    with open(path, "r") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON at byte {exc.pos}: {exc.msg}", offset=exc.pos)
    return mesh_from_dict(doc)
