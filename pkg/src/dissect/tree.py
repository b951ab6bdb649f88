"""Spatial partition hierarchy and task partitioning.

The domain box is subdivided recursively: while the box is elongated
(longest/shortest edge ratio above a threshold) it is bisected in its
longest dimension only, otherwise it is split into octants. Recursion
stops once a box holds at most one element centroid; empty children are
pruned. Node ids are assigned in preorder of this purely geometric
construction, so they are independent of the order elements are given in.

Each DOF is eliminated at the lowest common ancestor of all leaves whose
elements reference it; everything a subtree references but does not
eliminate is that subtree's interface. The per-node elimination workload
estimate is the dominant flop count of condensing n_i rows against n_b
retained rows:

    w(n_i, n_b) = n_i^3/3 + n_i^2 n_b + n_i n_b^2

Task partitioning cuts the tree into parts no heavier than
total/(k_traders * alpha) plus one residual upper fragment, then assigns
parts to traders largest-first onto the least-loaded trader.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InconsistencyError, InvalidArgumentError, NonSeparableError

__all__ = [
    "TreeNode",
    "PartitionTree",
    "TraderPart",
    "TraderAssignment",
    "build_tree",
    "assign_dofs",
    "estimate_workload",
    "partition_tasks",
    "tree_to_dict",
]

_MAX_DEPTH = 64


@dataclass
class TreeNode:
    id: int
    bbox: np.ndarray  # (2, 3): min corner, max corner
    parent: Optional[int]
    depth: int
    children: list = field(default_factory=list)
    element: Optional[int] = None
    eliminated_dofs: list = field(default_factory=list)
    interface_dofs: list = field(default_factory=list)
    workload: float = 0.0

    @property
    def is_leaf(self):
        return not self.children


@dataclass
class PartitionTree:
    nodes: list  # index == node id (preorder)
    root: int = 0

    @property
    def depth(self):
        return max(n.depth for n in self.nodes)

    @property
    def n_elements(self):
        return sum(1 for n in self.nodes if n.element is not None)

    def leaves(self):
        return [n for n in self.nodes if n.is_leaf]

    def element_leaf(self, eid):
        if not hasattr(self, "_elem_leaf"):
            self._elem_leaf = {
                n.element: n.id for n in self.nodes if n.element is not None
            }
        return self._elem_leaf[eid]

    def post_order(self):
        order = []

        def visit(nid):
            for c in self.nodes[nid].children:
                visit(c)
            order.append(nid)

        visit(self.root)
        return order

    def pre_order(self):
        order = []
        stack = [self.root]
        while stack:
            nid = stack.pop()
            order.append(nid)
            stack.extend(reversed(self.nodes[nid].children))
        return order

    def root_path(self, nid):
        """Node ids from nid up to and including the root."""
        path = [nid]
        while self.nodes[path[-1]].parent is not None:
            path.append(self.nodes[path[-1]].parent)
        return path


def build_tree(elements, aspect_threshold=2.0):
    """Build the partition tree over (element id, bbox) pairs.

    Boxes with longest/shortest edge ratio strictly above aspect_threshold
    are bisected along their longest axis (ties broken toward x); otherwise
    the box splits into 8 octants. Children that receive no element centroid
    are pruned. Raises NonSeparableError when two centroids coincide.
    """
    if aspect_threshold < 1.0:
        raise InvalidArgumentError("aspect_threshold must be >= 1")
    items = []
    for eid, bbox in elements:
        bbox = np.asarray(bbox, dtype=float).reshape(2, 3)
        items.append((int(eid), bbox, 0.5 * (bbox[0] + bbox[1])))
    if not items:
        raise InvalidArgumentError("cannot build a tree over zero elements")
    seen = {}
    for eid, _, cen in items:
        key = (cen[0], cen[1], cen[2])
        if key in seen:
            raise NonSeparableError(
                f"elements {seen[key]} and {eid} have identical centroids {key}"
            )
        seen[key] = eid

    lo = np.min([b[0] for _, b, _ in items], axis=0)
    hi = np.max([b[1] for _, b, _ in items], axis=0)
    nodes = []

    def new_node(bbox, parent, depth):
        node = TreeNode(id=len(nodes), bbox=bbox, parent=parent, depth=depth)
        nodes.append(node)
        return node

    def subdivide(node, members):
        if len(members) <= 1:
            if members:
                node.element = members[0][0]
            return
        if node.depth >= _MAX_DEPTH:
            raise NonSeparableError(
                "maximum subdivision depth exceeded; element centroids too close"
            )
        blo, bhi = node.bbox
        edges = bhi - blo
        mid = 0.5 * (blo + bhi)
        ratio = edges.max() / edges.min() if edges.min() > 0 else np.inf
        if ratio > aspect_threshold:
            axis = int(np.argmax(edges))
            child_boxes = []
            for side in (0, 1):
                clo, chi = blo.copy(), bhi.copy()
                if side == 0:
                    chi[axis] = mid[axis]
                else:
                    clo[axis] = mid[axis]
                child_boxes.append((np.array([clo, chi]), side))
            buckets = [[] for _ in range(2)]
            for item in members:
                buckets[0 if item[2][axis] < mid[axis] else 1].append(item)
        else:
            child_boxes = []
            for o in range(8):
                ox, oy, oz = o & 1, (o >> 1) & 1, (o >> 2) & 1
                clo, chi = blo.copy(), bhi.copy()
                for ax, bit in ((0, ox), (1, oy), (2, oz)):
                    if bit == 0:
                        chi[ax] = mid[ax]
                    else:
                        clo[ax] = mid[ax]
                child_boxes.append((np.array([clo, chi]), o))
            buckets = [[] for _ in range(8)]
            for item in members:
                cen = item[2]
                o = (
                    (0 if cen[0] < mid[0] else 1)
                    + 2 * (0 if cen[1] < mid[1] else 1)
                    + 4 * (0 if cen[2] < mid[2] else 1)
                )
                buckets[o].append(item)
        for (cbox, idx) in child_boxes:
            if not buckets[idx]:
                continue  # prune empty children
            child = new_node(cbox, node.id, node.depth + 1)
            node.children.append(child.id)
            subdivide(child, buckets[idx])

    root = new_node(np.array([lo, hi]), None, 0)
    subdivide(root, items)
    return PartitionTree(nodes=nodes, root=root.id)


def estimate_workload(n_i, n_b):
    """Elimination-step estimate for condensing n_i rows against n_b rows."""
    if n_i < 0 or n_b < 0:
        raise InvalidArgumentError("DOF counts must be non-negative")
    n_i = float(n_i)
    n_b = float(n_b)
    return n_i**3 / 3.0 + n_i**2 * n_b + n_i * n_b**2


def _lca(tree, a, b):
    na, nb = tree.nodes[a], tree.nodes[b]
    while na.depth > nb.depth:
        na = tree.nodes[na.parent]
    while nb.depth > na.depth:
        nb = tree.nodes[nb.parent]
    while na.id != nb.id:
        na = tree.nodes[na.parent]
        nb = tree.nodes[nb.parent]
    return na.id


def assign_dofs(tree, mesh):
    """Annotate the tree with eliminated/interface DOF sets and workloads.

    A DOF is eliminated at the lowest common ancestor of all leaves whose
    elements reference it. Within each node both lists are sorted ascending,
    which fixes the canonical elimination and assembly order everywhere else.
    """
    by_id = {e.id: e for e in mesh.elements}
    tree_elems = set()
    for node in tree.nodes:
        if node.element is not None:
            if node.element not in by_id:
                raise InconsistencyError(
                    f"tree references element {node.element} absent from the mesh"
                )
            tree_elems.add(node.element)
    missing = set(by_id) - tree_elems
    if missing:
        raise InconsistencyError(
            f"mesh elements absent from the tree: {sorted(missing)[:8]}"
        )

    dof_leaves = {}
    for node in tree.nodes:
        if node.element is None:
            continue
        for d in by_id[node.element].dof_ids:
            dof_leaves.setdefault(int(d), []).append(node.id)
    if mesh.n_dofs and set(dof_leaves) != set(range(mesh.n_dofs)):
        raise InconsistencyError("element DOF ids do not cover 0..n_dofs-1")

    eliminated = {n.id: [] for n in tree.nodes}
    for d, leaves in dof_leaves.items():
        home = leaves[0]
        for other in leaves[1:]:
            home = _lca(tree, home, other)
        eliminated[home].append(d)

    referenced = {}
    elim_below = {}
    for nid in tree.post_order():
        node = tree.nodes[nid]
        ref = set()
        below = set(eliminated[nid])
        if node.element is not None:
            ref.update(int(d) for d in by_id[node.element].dof_ids)
        for c in node.children:
            ref |= referenced[c]
            below |= elim_below[c]
        referenced[nid] = ref
        elim_below[nid] = below
        node.eliminated_dofs = sorted(eliminated[nid])
        node.interface_dofs = sorted(ref - below)
        node.workload = estimate_workload(
            len(node.eliminated_dofs), len(node.interface_dofs)
        )
    return tree


@dataclass
class TraderPart:
    part_id: int
    root_id: int
    node_ids: tuple
    workload: float


@dataclass
class TraderAssignment:
    parts: list
    owner: dict  # node id -> trader index
    n_traders: int

    def trader_nodes(self, trader):
        return [nid for nid, t in self.owner.items() if t == trader]

    def trader_workloads(self):
        loads = [0.0] * self.n_traders
        for part in self.parts:
            loads[self.owner[part.root_id]] += part.workload
        return loads


def partition_tasks(tree, k_traders, alpha=2.0):
    """Cut the tree into parts and assign them to traders.

    Any subtree heavier than total/(k_traders*alpha) is split; the nodes at
    which splits happened form one contiguous upper fragment. Parts go to
    traders largest-workload-first onto the currently least-loaded trader,
    ties broken by smallest node id / smallest trader index.
    """
    if k_traders < 1:
        raise InvalidArgumentError("k_traders must be >= 1")
    if alpha < 1.0:
        raise InvalidArgumentError("alpha must be >= 1")

    subtree_w = {}
    subtree_nodes = {}
    for nid in tree.post_order():
        node = tree.nodes[nid]
        w = node.workload
        ids = [nid]
        for c in node.children:
            w += subtree_w[c]
            ids.extend(subtree_nodes[c])
        subtree_w[nid] = w
        subtree_nodes[nid] = ids

    total = subtree_w[tree.root]
    threshold = total / (k_traders * alpha)
    part_roots = []
    fragment = []

    def cut(nid):
        node = tree.nodes[nid]
        if node.is_leaf or subtree_w[nid] <= threshold:
            part_roots.append(nid)
            return
        fragment.append(nid)
        for c in node.children:
            cut(c)

    if total <= 0.0:
        part_roots.append(tree.root)
    else:
        cut(tree.root)

    parts = []
    for root_id in sorted(part_roots):
        parts.append(
            TraderPart(
                part_id=len(parts),
                root_id=root_id,
                node_ids=tuple(sorted(subtree_nodes[root_id])),
                workload=subtree_w[root_id],
            )
        )
    if fragment:
        frag = tuple(sorted(fragment))
        parts.append(
            TraderPart(
                part_id=len(parts),
                root_id=frag[0],
                node_ids=frag,
                workload=sum(tree.nodes[n].workload for n in frag),
            )
        )

    # longest-processing-time-first onto the least-loaded trader
    order = sorted(parts, key=lambda q: (-q.workload, min(q.node_ids)))
    loads = [(0.0, t) for t in range(k_traders)]
    owner = {}
    for part in order:
        loads.sort(key=lambda lt: (lt[0], lt[1]))
        load, trader = loads[0]
        for nid in part.node_ids:
            owner[nid] = trader
        loads[0] = (load + part.workload, trader)
    return TraderAssignment(parts=parts, owner=owner, n_traders=k_traders)


def tree_to_dict(tree, assignment=None):
    """Debug dump of the tree (and trader ownership when provided)."""
    out = {"root": tree.root, "depth": tree.depth, "nodes": []}
    for n in tree.nodes:
        rec = {
            "id": n.id,
            "parent": n.parent,
            "depth": n.depth,
            "children": list(n.children),
            "element": n.element,
            "bbox": [list(map(float, n.bbox[0])), list(map(float, n.bbox[1]))],
            "n_eliminated": len(n.eliminated_dofs),
            "n_interface": len(n.interface_dofs),
            "workload": n.workload,
        }
        if assignment is not None:
            rec["trader"] = assignment.owner.get(n.id)
        out["nodes"].append(rec)
    return out
