"""Numerical kernels of the nested-dissection solve.

Each tree node assembles the contributions of its children (or its element
matrix at a leaf) into a local system ``K u = d`` ordered eliminated-first,
condenses the eliminated block via a Cholesky factorization of K_ii,

    S = K_bb - K_bi K_ii^{-1} K_ib,      g = d_b - K_bi K_ii^{-1} d_i,

and passes (S, g) upward. The factor, the coupling block and the eliminated
right-hand side are retained in an EliminationRecord, which is all back
substitution and later incremental re-solves need:

    u_i = K_ii^{-1} (d_i - K_ib u_b).

Assembly always adds contributions in ascending source-id order, so the
result is bitwise identical no matter in which order contributions arrive.
That is what makes the parallel scheduler's output bit-for-bit equal to the
sequential solve.
"""

import base64
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    AssemblyScopeError,
    FormatError,
    IncompleteSolutionError,
    InvalidArgumentError,
    SingularSystemError,
)
from .mesh import Element, Mesh, mesh_from_dict, mesh_to_dict

__all__ = [
    "NodeSystem",
    "SchurContribution",
    "ElementBlock",
    "EliminationRecord",
    "Solution",
    "RecordCache",
    "assemble",
    "condense",
    "back_substitute",
    "solve_sequential",
    "dense_reference_solve",
    "incremental_resolve",
    "ResolveResult",
    "apply_modifications",
    "element_block",
    "save_record_cache",
    "load_record_cache",
    "dumps_record_cache",
    "loads_record_cache",
]

_PIVOT_RTOL = 1e-13


@dataclass
class NodeSystem:
    """Local equation system of one tree node, eliminated DOFs first."""

    node_id: int
    dof_ids: np.ndarray
    K: np.ndarray
    d: np.ndarray
    n_interior: int
    n_interface: int


@dataclass
class SchurContribution:
    """Condensed matrix and right-hand side a node sends to its parent."""

    source: int
    dof_ids: np.ndarray
    S: np.ndarray
    g: np.ndarray

    @property
    def nbytes(self):
        return self.S.nbytes + self.g.nbytes + self.dof_ids.nbytes


@dataclass
class ElementBlock:
    """Element stiffness/load pair entering assembly at a leaf."""

    source: int
    dof_ids: np.ndarray
    K: np.ndarray
    f: np.ndarray

    @property
    def nbytes(self):
        return self.K.nbytes + self.f.nbytes + self.dof_ids.nbytes


def element_block(elem: Element) -> ElementBlock:
    return ElementBlock(source=elem.id, dof_ids=elem.dof_ids, K=elem.K, f=elem.f)


@dataclass
class EliminationRecord:
    """Everything needed to recover u_i without re-factorizing."""

    node_id: int
    chol_lower: np.ndarray  # Cholesky factor of K_ii
    coupling: np.ndarray  # K_ib
    rhs_interior: np.ndarray  # d_i
    interior_dofs: np.ndarray
    interface_dofs: np.ndarray

    @property
    def nbytes(self):
        return (
            self.chol_lower.nbytes
            + self.coupling.nbytes
            + self.rhs_interior.nbytes
            + self.interior_dofs.nbytes
            + self.interface_dofs.nbytes
        )


@dataclass
class Solution:
    """Value of every free DOF, indexed by DOF id."""

    values: np.ndarray

    def __getitem__(self, dof):
        return self.values[dof]

    def __len__(self):
        return len(self.values)


@dataclass
class RecordCache:
    """Per-node elimination records and Schur contributions of one solve."""

    records: dict = field(default_factory=dict)
    contributions: dict = field(default_factory=dict)

    def __getitem__(self, node_id):
        return self.records[node_id]

    def __contains__(self, node_id):
        return node_id in self.records

    def __len__(self):
        return len(self.records)


# ---------------------------------------------------------------------------
# node-level kernels
# ---------------------------------------------------------------------------


def _contribution_entries(c):
    if isinstance(c, SchurContribution):
        return c.source, c.dof_ids, c.S, c.g
    if isinstance(c, ElementBlock):
        return c.source, c.dof_ids, c.K, c.f
    raise InvalidArgumentError(f"unsupported contribution type {type(c).__name__}")


def assemble(contributions, node) -> NodeSystem:
    """Superpose contributions into the node's local system.

    Contributions are added in ascending source-id order, entries row-major,
    which makes the result independent of input order down to the last bit.
    """
    local = {}
    dof_ids = list(node.eliminated_dofs) + list(node.interface_dofs)
    for i, d in enumerate(dof_ids):
        local[d] = i
    n = len(dof_ids)
    k_mat = np.zeros((n, n))
    d_vec = np.zeros(n)
    for c in sorted(contributions, key=lambda c: _contribution_entries(c)[0]):
        source, ids, mat, vec = _contribution_entries(c)
        try:
            idx = np.array([local[int(d)] for d in ids], dtype=np.intp)
        except KeyError as exc:
            raise AssemblyScopeError(
                f"contribution {source} references DOF {exc.args[0]} outside "
                f"the scope of node {node.id}"
            ) from exc
        k_mat[np.ix_(idx, idx)] += mat
        d_vec[idx] += vec
    return NodeSystem(
        node_id=node.id,
        dof_ids=np.array(dof_ids, dtype=np.int64),
        K=k_mat,
        d=d_vec,
        n_interior=len(node.eliminated_dofs),
        n_interface=len(node.interface_dofs),
    )


def _locate_bad_pivot(k_ii, tol):
    """First elimination step whose pivot falls at or below tol (else None)."""
    a = k_ii.copy()
    n = a.shape[0]
    for k in range(n):
        pivot = a[k, k]
        if abs(pivot) <= tol or pivot <= 0.0:
            return k
        root = np.sqrt(pivot)
        a[k + 1 :, k] /= root
        a[k + 1 :, k + 1 :] -= np.outer(a[k + 1 :, k], a[k + 1 :, k])
    return None


def condense(sys: NodeSystem):
    """Partial symmetric elimination of the leading n_interior block.

    Returns the interface SchurContribution and the EliminationRecord holding
    the Cholesky factor for back substitution and re-use.
    """
    ni, nb = sys.n_interior, sys.n_interface
    interior = sys.dof_ids[:ni]
    interface = sys.dof_ids[ni:]
    k_ii = sys.K[:ni, :ni]
    k_ib = sys.K[:ni, ni:]
    k_bb = sys.K[ni:, ni:]
    d_i = sys.d[:ni]
    d_b = sys.d[ni:]

    if ni == 0:
        chol = np.zeros((0, 0))
        s_mat = k_bb.copy()
        g_vec = d_b.copy()
    else:
        max_diag = float(np.max(np.abs(np.diag(k_ii)))) if ni else 0.0
        tol = _PIVOT_RTOL * max_diag
        try:
            chol = np.linalg.cholesky(k_ii)
        except np.linalg.LinAlgError:
            bad = _locate_bad_pivot(k_ii, tol)
            bad = 0 if bad is None else bad
            raise SingularSystemError(
                f"non-positive pivot while eliminating DOF {int(interior[bad])} "
                f"at node {sys.node_id}",
                dof_id=int(interior[bad]),
            )
        small = np.flatnonzero(np.diag(chol) ** 2 <= tol)
        if small.size:
            bad = int(small[0])
            raise SingularSystemError(
                f"pivot below threshold while eliminating DOF {int(interior[bad])} "
                f"at node {sys.node_id}",
                dof_id=int(interior[bad]),
            )
        if nb:
            w = scipy.linalg.solve_triangular(chol, k_ib, lower=True)
            s_mat = k_bb - w.T @ w
            s_mat = 0.5 * (s_mat + s_mat.T)
            g_vec = d_b - w.T @ scipy.linalg.solve_triangular(chol, d_i, lower=True)
        else:
            s_mat = np.zeros((0, 0))
            g_vec = np.zeros(0)

    contribution = SchurContribution(
        source=sys.node_id, dof_ids=interface.copy(), S=s_mat, g=g_vec
    )
    record = EliminationRecord(
        node_id=sys.node_id,
        chol_lower=chol,
        coupling=k_ib.copy(),
        rhs_interior=d_i.copy(),
        interior_dofs=interior.copy(),
        interface_dofs=interface.copy(),
    )
    return contribution, record


def back_substitute(record: EliminationRecord, u_b):
    """Interior values u_i = K_ii^{-1} (d_i - K_ib u_b).

    u_b may be a vector aligned with record.interface_dofs or a mapping
    DOF id -> value covering all of them.
    """
    nb = len(record.interface_dofs)
    if isinstance(u_b, (dict,)):
        try:
            u_b = np.array([u_b[int(d)] for d in record.interface_dofs])
        except KeyError as exc:
            raise IncompleteSolutionError(
                f"missing interface value for DOF {exc.args[0]}"
            ) from exc
    else:
        u_b = np.asarray(u_b, dtype=float)
        if u_b.shape != (nb,):
            raise IncompleteSolutionError(
                f"interface vector has shape {u_b.shape}, expected ({nb},)"
            )
    if len(record.interior_dofs) == 0:
        return np.zeros(0)
    rhs = record.rhs_interior - record.coupling @ u_b if nb else record.rhs_interior
    y = scipy.linalg.solve_triangular(record.chol_lower, rhs, lower=True)
    return scipy.linalg.solve_triangular(record.chol_lower.T, y, lower=False)


# ---------------------------------------------------------------------------
# tree-level drivers
# ---------------------------------------------------------------------------


def _node_contributions(tree, mesh, nid, contributions):
    node = tree.nodes[nid]
    if node.is_leaf:
        inputs = []
        if node.element is not None:
            inputs.append(element_block(mesh.element_by_id(node.element)))
        return inputs
    return [contributions[c] for c in node.children]


def solve_sequential(tree, mesh):
    """Bottom-up condensation followed by top-down back substitution.

    The tree must have been annotated by ``assign_dofs``. Returns the full
    Solution and the RecordCache for incremental re-solves.
    """
    cache = RecordCache()
    for nid in tree.post_order():
        node = tree.nodes[nid]
        sys = assemble(_node_contributions(tree, mesh, nid, cache.contributions), node)
        contribution, record = condense(sys)
        cache.contributions[nid] = contribution
        cache.records[nid] = record
    return _back_substitute_all(tree, cache), cache


def _back_substitute_all(tree, cache):
    values = np.zeros(
        sum(len(tree.nodes[nid].eliminated_dofs) for nid in range(len(tree.nodes)))
    )
    for nid in tree.pre_order():
        record = cache.records[nid]
        u_b = values[record.interface_dofs] if len(record.interface_dofs) else np.zeros(0)
        u_i = back_substitute(record, u_b)
        if len(record.interior_dofs):
            values[record.interior_dofs] = u_i
    return Solution(values=values)


def dense_reference_solve(mesh):
    """Assemble the full system and solve it with a dense factorization."""
    n = mesh.n_dofs
    k_mat = np.zeros((n, n))
    d_vec = np.zeros(n)
    for elem in sorted(mesh.elements, key=lambda e: e.id):
        idx = elem.dof_ids
        k_mat[np.ix_(idx, idx)] += elem.K
        d_vec[idx] += elem.f
    if n == 0:
        return Solution(values=np.zeros(0))
    try:
        factor = scipy.linalg.cho_factor(k_mat, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"global matrix is not SPD: {exc}") from exc
    return Solution(values=scipy.linalg.cho_solve(factor, d_vec))


def global_residual(mesh, solution):
    """Relative residual ||K u - d|| / ||d|| of the assembled global system."""
    n = mesh.n_dofs
    k_mat = np.zeros((n, n))
    d_vec = np.zeros(n)
    for elem in sorted(mesh.elements, key=lambda e: e.id):
        idx = elem.dof_ids
        k_mat[np.ix_(idx, idx)] += elem.K
        d_vec[idx] += elem.f
    denom = np.linalg.norm(d_vec)
    if denom == 0.0:
        return float(np.linalg.norm(k_mat @ solution.values))
    return float(np.linalg.norm(k_mat @ solution.values - d_vec) / denom)


# ---------------------------------------------------------------------------
# incremental re-solve
# ---------------------------------------------------------------------------


def apply_modifications(mesh, modifications):
    """New mesh with the listed element stiffnesses scaled (K_e -> c K_e)."""
    mods = dict(modifications)
    by_id = {e.id: e for e in mesh.elements}
    for eid, factor in mods.items():
        if eid not in by_id:
            raise InvalidArgumentError(f"unknown element id {eid}")
        if not factor > 0.0:
            raise InvalidArgumentError(
                f"scale factor for element {eid} must be positive, got {factor}"
            )
    elements = []
    for e in mesh.elements:
        if e.id in mods:
            elements.append(
                Element(
                    id=e.id,
                    corners=e.corners,
                    degree=e.degree,
                    dof_ids=e.dof_ids,
                    K=e.K * mods[e.id],
                    f=e.f,
                    kept=e.kept,
                    bbox=e.bbox,
                )
            )
        else:
            elements.append(e)
    return Mesh(
        elements=elements,
        n_dofs=mesh.n_dofs,
        dof_entity=mesh.dof_entity,
        extents=mesh.extents,
        grid=mesh.grid,
        degree=mesh.degree,
        load_case=mesh.load_case,
    )


@dataclass
class ResolveResult:
    solution: Solution
    recompute_count: int
    cache: RecordCache
    mesh: Mesh
    dirty_nodes: tuple


def incremental_resolve(tree, mesh, cache, modifications):
    """Re-solve after scaling element stiffnesses, re-using untouched records.

    Only the nodes on the root paths of modified leaves are re-condensed;
    every other record and contribution is carried over unchanged from the
    previous run. Back substitution is always performed in full.
    """
    mods = dict(modifications)
    new_mesh = apply_modifications(mesh, mods)
    dirty = set()
    for eid in mods:
        dirty.update(tree.root_path(tree.element_leaf(eid)))

    new_cache = RecordCache(
        records=dict(cache.records), contributions=dict(cache.contributions)
    )
    for nid in tree.post_order():
        if nid not in dirty:
            continue
        node = tree.nodes[nid]
        sys = assemble(
            _node_contributions(tree, new_mesh, nid, new_cache.contributions), node
        )
        contribution, record = condense(sys)
        new_cache.contributions[nid] = contribution
        new_cache.records[nid] = record
    solution = _back_substitute_all(tree, new_cache)
    return ResolveResult(
        solution=solution,
        recompute_count=len(dirty),
        cache=new_cache,
        mesh=new_mesh,
        dirty_nodes=tuple(sorted(dirty)),
    )


# ---------------------------------------------------------------------------
# record cache persistence
# ---------------------------------------------------------------------------

_CACHE_MAGIC = b"NDRC"
_CACHE_VERSION = 1


def dumps_record_cache(cache, mesh=None, meta=None):
    """Serialize a RecordCache (optionally with its mesh) to bytes.

    Layout: 4-byte magic, u16 version, then an npz archive of plain arrays
    (no pickled objects, safe to load from untrusted sources).
    """
    arrays = {}
    for nid, rec in cache.records.items():
        arrays[f"rec/{nid}/chol"] = rec.chol_lower
        arrays[f"rec/{nid}/coupling"] = rec.coupling
        arrays[f"rec/{nid}/rhs"] = rec.rhs_interior
        arrays[f"rec/{nid}/interior"] = rec.interior_dofs
        arrays[f"rec/{nid}/interface"] = rec.interface_dofs
    for nid, con in cache.contributions.items():
        arrays[f"con/{nid}/S"] = con.S
        arrays[f"con/{nid}/g"] = con.g
        arrays[f"con/{nid}/dofs"] = con.dof_ids
    if mesh is not None:
        mesh_bytes = json.dumps(mesh_to_dict(mesh)).encode()
        arrays["mesh_json"] = np.frombuffer(mesh_bytes, dtype=np.uint8)
    meta_bytes = json.dumps(meta or {}).encode()
    arrays["meta_json"] = np.frombuffer(meta_bytes, dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return _CACHE_MAGIC + struct.pack("<H", _CACHE_VERSION) + buf.getvalue()


def loads_record_cache(blob):
    """Inverse of dumps_record_cache; returns (cache, mesh_or_None, meta)."""
    if len(blob) < 6 or blob[:4] != _CACHE_MAGIC:
        raise FormatError("record cache: bad magic at byte 0", offset=0)
    (version,) = struct.unpack("<H", blob[4:6])
    if version != _CACHE_VERSION:
        raise FormatError(
            f"record cache: unsupported version {version} at byte 4", offset=4
        )
    try:
        data = np.load(io.BytesIO(blob[6:]), allow_pickle=False)
    except Exception as exc:
        raise FormatError(f"record cache: corrupt payload at byte 6: {exc}", offset=6)
    cache = RecordCache()
    rec_parts = {}
    con_parts = {}
    mesh = None
    meta = {}
    for key in data.files:
        if key == "mesh_json":
            mesh = mesh_from_dict(json.loads(bytes(data[key].tobytes()).decode()))
        elif key == "meta_json":
            meta = json.loads(bytes(data[key].tobytes()).decode())
        else:
            section, nid, name = key.split("/")
            store = rec_parts if section == "rec" else con_parts
            store.setdefault(int(nid), {})[name] = data[key]
    for nid, parts in rec_parts.items():
        cache.records[nid] = EliminationRecord(
            node_id=nid,
            chol_lower=parts["chol"],
            coupling=parts["coupling"],
            rhs_interior=parts["rhs"],
            interior_dofs=parts["interior"],
            interface_dofs=parts["interface"],
        )
    for nid, parts in con_parts.items():
        cache.contributions[nid] = SchurContribution(
            source=nid, dof_ids=parts["dofs"], S=parts["S"], g=parts["g"]
        )
    return cache, mesh, meta


def save_record_cache(path, cache, mesh=None, meta=None):
    with open(path, "wb") as fh:
        fh.write(dumps_record_cache(cache, mesh=mesh, meta=meta))


def load_record_cache(path):
    with open(path, "rb") as fh:
        return loads_record_cache(fh.read())


def cache_to_base64(cache, mesh=None, meta=None):
    return base64.b64encode(dumps_record_cache(cache, mesh=mesh, meta=meta)).decode()


def cache_from_base64(text):
    try:
        blob = base64.b64decode(text.encode(), validate=True)
    except Exception as exc:
        raise FormatError(f"record cache: invalid base64: {exc}") from exc
    return loads_record_cache(blob)
