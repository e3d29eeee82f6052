"""Hierarchical tree over labelsets built by complete-linkage clustering.

Labelsets are clustered under the Hamming distance. The resulting
dendrogram is read top-down as layers: layer ``i`` holds every node at
depth ``i`` plus any leaf that already ended at a shallower depth, so each
layer partitions the labelset collection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import MultiLabelDataset, decode_labelset, encode_labels


class TreeError(ValueError):
    pass


class MembershipError(KeyError):
    pass


def hamming(s: Sequence[int], t: Sequence[int]) -> int:
    if len(s) != len(t):
        raise ValueError(f"length mismatch: {len(s)} vs {len(t)}")
    return sum(int(a) != int(b) for a, b in zip(s, t))


def complete_linkage(A: Iterable, B: Iterable, base=hamming) -> int:
    """Largest `base` distance between a member of `A` and a member of `B`."""
    return max(base(s, t) for s in A for t in B)


@dataclass(frozen=True)
class TreeNode:
    id: int
    depth: int
    members: tuple[int, ...]
    parent: int | None
    children: tuple[int, ...]

    @property
    def is_leaf(self) -> bool:
        return not self.children


class LabelTree:
    """Immutable labelset tree with materialised layers.

    Attributes
    ----------
    nodes : list of TreeNode, indexed by node id
    root : int
    layers : list of lists of node ids; ``layers[i - 1]`` is layer ``i``
    merges : list of (left id, right id, distance) in merge order
    """

    def __init__(self, nodes: list[TreeNode], root: int, c: int, merges=()):
        self.nodes = list(nodes)
        self.root = root
        self.c = c
        self.merges = list(merges)
        self.depth = np.array([nd.depth for nd in self.nodes], dtype=np.int64)
        self.parent = np.array([-1 if nd.parent is None else nd.parent for nd in self.nodes],
                               dtype=np.int64)
        leaves = [nd for nd in self.nodes if nd.is_leaf]
        leaves.sort(key=lambda nd: nd.members[0])
        self.leaves = np.array([nd.id for nd in leaves], dtype=np.int64)
        self.leaf_codes = np.array([nd.members[0] for nd in leaves], dtype=np.int64)
        self.L = int(self.depth[self.leaves].max())
        self.layers = self._layered()
        self._layer_lookup = [
            {code: k for k, nid in enumerate(layer) for code in self.nodes[nid].members}
            for layer in self.layers
        ]
        self._leaf_pos = {int(code): p for p, code in enumerate(self.leaf_codes)}
        # every node below the root in order of increasing depth
        self.order = np.array(sorted((nd.id for nd in self.nodes if nd.id != root),
                                     key=lambda i: (self.nodes[i].depth, i)), dtype=np.int64)

    def _layered(self) -> list[list[int]]:
        out = []
        for i in range(1, self.L + 1):
            ids = [nd.id for nd in self.nodes
                   if nd.depth == i or (nd.is_leaf and 0 < nd.depth < i)]
            ids.sort(key=lambda j: self.nodes[j].members[0])
            out.append(ids)
        return out

    @property
    def labelsets(self) -> tuple[int, ...]:
        return self.nodes[self.root].members

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def node_of(self, layer: int, y: int) -> int:
        """Position ``k`` (0-based) of the layer-`layer` node containing code `y`."""
        if not 1 <= layer <= self.L:
            raise ValueError(f"layer must be in 1..{self.L}, got {layer}")
        try:
            return self._layer_lookup[layer - 1][int(y)]
        except KeyError:
            raise MembershipError(f"labelset {y} is not in the tree") from None

    def leaf_position(self, codes) -> np.ndarray:
        """Index into `leaves` for each code, -1 where the code is not a leaf."""
        return np.array([self._leaf_pos.get(int(v), -1) for v in np.atleast_1d(codes)],
                        dtype=np.int64)

    def path(self, node_id: int) -> list[int]:
        """Node ids from depth 1 down to `node_id`."""
        out = []
        while node_id != self.root:
            out.append(node_id)
            node_id = self.nodes[node_id].parent
        return out[::-1]

    def leaf_paths(self) -> np.ndarray:
        """(n_leaves, L) node ids along each root-to-leaf path.

        Column ``i - 1`` is the node that holds the leaf in layer ``i``;
        shallow leaves repeat themselves as pass-through nodes.
        """
        P = np.empty((len(self.leaves), self.L), dtype=np.int64)
        for r, leaf in enumerate(self.leaves):
            p = self.path(int(leaf))
            P[r, :len(p)] = p
            P[r, len(p):] = p[-1]
        return P

    def outline(self) -> str:
        lines = []

        def walk(nid, indent):
            nd = self.nodes[nid]
            codes = ",".join(str(v) for v in nd.members)
            lines.append(f"{'  ' * indent}[{nd.id}] depth={nd.depth} {{{codes}}}")
            for ch in nd.children:
                walk(ch, indent + 1)

        walk(self.root, 0)
        return "\n".join(lines)

    def adjacency(self) -> str:
        rows = ["node_id,depth,parent_id,members"]
        for nd in self.nodes:
            parent = "" if nd.parent is None else str(nd.parent)
            rows.append(f"{nd.id},{nd.depth},{parent},{';'.join(str(v) for v in nd.members)}")
        return "\n".join(rows)

    def __eq__(self, other):
        return (isinstance(other, LabelTree) and self.c == other.c
                and self.root == other.root and self.nodes == other.nodes)

    def __repr__(self):
        return f"LabelTree(c={self.c}, leaves={len(self.leaves)}, L={self.L})"


def _assemble(codes, merges, c) -> LabelTree:
    m = len(codes)
    members = [(int(v),) for v in codes]
    children = [() for _ in codes]
    for a, b, _ in merges:
        members.append(tuple(sorted(members[a] + members[b])))
        children.append((a, b))
    parent = [None] * len(members)
    for nid, ch in enumerate(children):
        for x in ch:
            parent[x] = nid
    root = len(members) - 1
    depth = [0] * len(members)
    for nid in range(root, m - 1, -1):
        for x in children[nid]:
            depth[x] = depth[nid] + 1
    nodes = [TreeNode(i, depth[i], members[i], parent[i], children[i])
             for i in range(len(members))]
    return LabelTree(nodes, root, c, merges)


def _cube_merges(c):
    # Merge order complete linkage produces on all 2**c codes under the
    # lexicographic tie-break: siblings differing in the lowest free bit.
    merges = []
    level = list(range(1 << c))
    next_id = 1 << c
    for stage in range(1, c + 1):
        nxt = []
        for a, b in zip(level[0::2], level[1::2]):
            merges.append((a, b, stage))
            nxt.append(next_id)
            next_id += 1
        level = nxt
    return merges


_CUBE_SHORTCUT = 1 << 10


def build_tree(labelsets: Iterable[int], c: int) -> LabelTree:
    """Agglomerative complete-linkage tree under Hamming distance.

    Ties on the minimum distance go to the pair whose cluster
    representatives (smallest member codes) are lexicographically least,
    which makes the tree a deterministic function of the input set.
    """
    codes = np.array(sorted({int(v) for v in labelsets}), dtype=np.int64)
    m = len(codes)
    if m < 2:
        raise TreeError("need at least two labelsets to build a tree")
    if codes[0] < 0 or codes[-1] >= (1 << c):
        raise TreeError(f"codes out of range for c={c}")
    if m == (1 << c) and m > _CUBE_SHORTCUT:
        return _assemble(codes, _cube_merges(c), c)

    D = np.bitwise_count(codes[:, None] ^ codes[None, :]).astype(np.float64)
    np.fill_diagonal(D, np.inf)
    node_at = list(range(m))
    merges = []
    for step in range(m - 1):
        # row-major argmin on a symmetric matrix whose rows are ordered by
        # representative code yields the lexicographically least pair
        i, j = divmod(int(np.argmin(D)), m)
        merges.append((node_at[i], node_at[j], int(D[i, j])))
        merged = np.maximum(D[i], D[j])
        D[i, :] = merged
        D[:, i] = merged
        D[i, i] = np.inf
        D[j, :] = np.inf
        D[:, j] = np.inf
        node_at[i] = m + step
    return _assemble(codes, merges, c)


def flat_tree(labelsets: Iterable[int], c: int) -> LabelTree:
    """One-layer tree: every labelset is a leaf directly under the root."""
    codes = sorted({int(v) for v in labelsets})
    if not codes:
        raise TreeError("need at least one labelset")
    m = len(codes)
    nodes = [TreeNode(i, 1, (v,), m, ()) for i, v in enumerate(codes)]
    nodes.append(TreeNode(m, 0, tuple(codes), None, tuple(range(m))))
    return LabelTree(nodes, m, c)


def layered_view(tree: LabelTree) -> list[list[TreeNode]]:
    return [[tree.nodes[i] for i in layer] for layer in tree.layers]


def node_of(tree: LabelTree, layer: int, y: int) -> int:
    return tree.node_of(layer, y)


def transform_layer(ds: MultiLabelDataset, tree: LabelTree, layer: int) -> np.ndarray:
    """Class index (position within the layer) of each row's labelset."""
    lookup = tree._layer_lookup[layer - 1]
    out = np.empty(ds.n, dtype=np.int64)
    for r, code in enumerate(encode_labels(ds.labels).tolist()):
        try:
            out[r] = lookup[code]
        except KeyError:
            raise MembershipError(f"row {r}: labelset {code} is not in the tree") from None
    return out


def labelset_vectors(tree: LabelTree) -> list[tuple[int, ...]]:
    return [decode_labelset(v, tree.c) for v in tree.labelsets]
