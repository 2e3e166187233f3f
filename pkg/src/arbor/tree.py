"""Leaf-labeled trees, tree surgery, tree metrics and Newick serialization.

Vertices are plain integers. Leaf ``i`` (``1 <= i <= m``) is the vertex with
id ``i``; every other vertex is unobserved and carries an id outside
``1..m`` (trees built here use ``m+1, m+2, ...``). Edges are stored as
sorted pairs ``(min, max)``.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import NewickError, TreeError

Edge = tuple[int, int]
#: a quartet split ``((i, j), (k, l))`` meaning ij/kl; ``None`` denotes the star
Pairing = tuple[tuple[int, int], tuple[int, int]]


def edge_key(u: int, v: int) -> Edge:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class LeafLabeledTree:
    """An undirected tree whose degree-one vertices are exactly ``1..m``.

    Unlabeled vertices of degree two are allowed (binary rooted trees,
    caterpillars); use :func:`suppress_degree_two` to remove them.
    """

    edges: frozenset
    m: int
    root: int | None = None

    def __post_init__(self):
        edges = frozenset(edge_key(int(u), int(v)) for u, v in self.edges)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "m", int(self.m))
        self._validate()

    def _validate(self):
        if self.m < 2:
            raise TreeError("a leaf-labeled tree needs at least two leaves")
        if any(u == v for u, v in self.edges):
            raise TreeError("self-loop in edge set")
        verts = self.vertices
        if len(self.edges) != len(verts) - 1:
            raise TreeError(f"{len(verts)} vertices but {len(self.edges)} edges; not a tree")
        adj = self.adjacency
        seen = {verts[0]}
        stack = [verts[0]]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) != len(verts):
            raise TreeError("edge set is not connected")
        for i in range(1, self.m + 1):
            if i not in adj:
                raise TreeError(f"leaf label {i} missing from the tree")
            if len(adj[i]) != 1:
                raise TreeError(f"label {i} is not a leaf (degree {len(adj[i])})")
        for v in verts:
            if len(adj[v]) == 1 and not 1 <= v <= self.m:
                raise TreeError(f"unlabeled vertex {v} has degree one")
        if self.root is not None and self.root not in adj:
            raise TreeError(f"root {self.root} is not a vertex")

    @cached_property
    def adjacency(self) -> dict[int, tuple[int, ...]]:
        adj: dict[int, list[int]] = {}
        for u, v in self.edges:
            adj.setdefault(u, []).append(v)
            adj.setdefault(v, []).append(u)
        return {k: tuple(sorted(nb)) for k, nb in sorted(adj.items())}

    @cached_property
    def vertices(self) -> tuple[int, ...]:
        return tuple(sorted({x for e in self.edges for x in e}))

    @property
    def leaves(self) -> range:
        return range(1, self.m + 1)

    @cached_property
    def hidden(self) -> tuple[int, ...]:
        """Unobserved (internal) vertices, sorted."""
        return tuple(v for v in self.vertices if not 1 <= v <= self.m)

    @cached_property
    def sorted_edges(self) -> tuple[Edge, ...]:
        return tuple(sorted(self.edges))

    def is_leaf(self, v: int) -> bool:
        return 1 <= v <= self.m

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def neighbors(self, v: int) -> tuple[int, ...]:
        return self.adjacency[v]

    def inner_edges(self) -> list[Edge]:
        return [e for e in self.sorted_edges if not (self.is_leaf(e[0]) or self.is_leaf(e[1]))]

    def default_root(self) -> int:
        """Explicit root if set, else the smallest unobserved vertex, else leaf 1."""
        if self.root is not None:
            return self.root
        return self.hidden[0] if self.hidden else 1

    def with_root(self, root: int | None) -> LeafLabeledTree:
        return LeafLabeledTree(self.edges, self.m, root)

    def is_trivalent(self) -> bool:
        return all(self.degree(v) == 3 for v in self.hidden)

    def rooted(self, root: int | None = None) -> RootedView:
        return _rooted_view(self, self.default_root() if root is None else root)

    def relabel(self, mapping: dict[int, int]) -> LeafLabeledTree:
        """Rename unobserved vertices; leaves keep their ids."""
        f = lambda v: mapping.get(v, v)  # noqa: E731
        root = None if self.root is None else f(self.root)
        return LeafLabeledTree({(f(u), f(v)) for u, v in self.edges}, self.m, root)


@dataclass(frozen=True)
class RootedView:
    """Orientation of a tree away from ``root``: preorder plus parent/children maps."""

    root: int
    order: tuple[int, ...]
    parent: dict
    children: dict

    def directed_edges(self):
        """Edges ``(parent, child)`` in preorder of the child."""
        return [(self.parent[v], v) for v in self.order[1:]]


def orient(adjacency: dict, root: int) -> RootedView:
    """Breadth-first orientation of any tree given as an adjacency map."""
    if root not in adjacency:
        raise TreeError(f"root {root} is not a vertex")
    parent = {root: None}
    order = [root]
    children: dict[int, list[int]] = {root: []}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for w in adjacency[u]:
            if w not in parent:
                parent[w] = u
                children[u].append(w)
                children[w] = []
                order.append(w)
                queue.append(w)
    return RootedView(root, tuple(order), parent, {k: tuple(v) for k, v in children.items()})


@lru_cache(maxsize=4096)
def _rooted_view(tree: LeafLabeledTree, root: int) -> RootedView:
    return orient(tree.adjacency, root)


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------


def star_tree(m: int) -> LeafLabeledTree:
    c = m + 1
    return LeafLabeledTree({(i, c) for i in range(1, m + 1)}, m)


def quartet_tree(split: Pairing = ((1, 2), (3, 4))) -> LeafLabeledTree:
    """Trivalent tree on four leaves; vertex 5 joins ``split[0]``, vertex 6 ``split[1]``."""
    (a, b), (c, d) = split
    return LeafLabeledTree({(a, 5), (b, 5), (5, 6), (c, 6), (d, 6)}, 4)


def caterpillar_tree(m: int) -> LeafLabeledTree:
    """Hidden chain ``m+1 - m+2 - ... - 2m`` with leaf ``i`` hanging from ``m+i``."""
    edges = {(i, m + i) for i in range(1, m + 1)}
    edges |= {(m + i, m + i + 1) for i in range(1, m)}
    return LeafLabeledTree(edges, m)


def random_trivalent_tree(m: int, rng: np.random.Generator) -> LeafLabeledTree:
    """Uniform-by-insertion random trivalent tree on ``m >= 2`` leaves."""
    if m == 2:
        return LeafLabeledTree({(1, 2)}, 2)
    order = list(rng.permutation(np.arange(1, m + 1)))
    a, b, c = (int(x) for x in order[:3])
    nxt = m + 1
    edges = [(a, nxt), (b, nxt), (c, nxt)]
    nxt += 1
    for leaf in order[3:]:
        u, v = edges.pop(int(rng.integers(len(edges))))
        w = nxt
        nxt += 1
        edges += [(u, w), (w, v), (int(leaf), w)]
    return LeafLabeledTree(set(edges), m)


# ---------------------------------------------------------------------------
# graph operations
# ---------------------------------------------------------------------------


def contract_edge(t: LeafLabeledTree, e: Edge) -> LeafLabeledTree:
    """Merge the endpoints of inner edge ``e`` into a new vertex."""
    u, v = edge_key(*e)
    if (u, v) not in t.edges:
        raise TreeError(f"edge {e} not in tree")
    if t.is_leaf(u) or t.is_leaf(v):
        raise TreeError(f"edge {e} is incident to a labeled leaf")
    w = max(t.vertices) + 1
    edges = set()
    for a, b in t.edges:
        if (a, b) == (u, v):
            continue
        a = w if a in (u, v) else a
        b = w if b in (u, v) else b
        edges.add((a, b))
    root = w if t.root in (u, v) else t.root
    return LeafLabeledTree(edges, t.m, root)


def suppress_degree_two(t: LeafLabeledTree) -> LeafLabeledTree:
    """Suppress unlabeled degree-two vertices until none remain.

    A suppressed root leaves the result unrooted.
    """
    adj = {v: set(nb) for v, nb in t.adjacency.items()}
    root = t.root
    changed = True
    while changed:
        changed = False
        for v in sorted(adj):
            if len(adj[v]) == 2 and not t.is_leaf(v):
                a, b = adj.pop(v)
                adj[a].discard(v)
                adj[b].discard(v)
                adj[a].add(b)
                adj[b].add(a)
                if root == v:
                    root = None
                changed = True
    edges = {edge_key(u, w) for u, nb in adj.items() for w in nb}
    return LeafLabeledTree(edges, t.m, root)


def path_between(t: LeafLabeledTree, i: int, j: int) -> list[Edge]:
    """Edges of the unique ``i``-``j`` path, each oriented in walking direction."""
    for x in (i, j):
        if x not in t.adjacency:
            raise TreeError(f"vertex {x} not in tree")
    view = t.rooted(i)
    path = []
    v = j
    while v != i:
        p = view.parent[v]
        path.append((p, v))
        v = p
    return path[::-1]


def path_vertices(t: LeafLabeledTree, i: int, j: int) -> list[int]:
    if i == j:
        return [i]
    return [i] + [b for _, b in path_between(t, i, j)]


def _bfs_distances(t: LeafLabeledTree, source: int) -> dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for w in t.adjacency[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def tree_depth(t: LeafLabeledTree) -> int:
    """Largest edge-count distance from an internal vertex to its nearest leaf."""
    if not t.hidden:
        return 0
    # multi-source BFS from all leaves
    dist = {i: 0 for i in t.leaves}
    queue = deque(t.leaves)
    while queue:
        u = queue.popleft()
        for w in t.adjacency[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return max(dist[v] for v in t.hidden)


def _canonical_pairing(a, b, c, d) -> Pairing:
    p, q = tuple(sorted((a, b))), tuple(sorted((c, d)))
    return (p, q) if p < q else (q, p)


def pairings(quad) -> list[Pairing]:
    """The three splits of four labels: ij/kl, ik/jl, il/jk."""
    i, j, k, l = quad
    return [
        _canonical_pairing(i, j, k, l),
        _canonical_pairing(i, k, j, l),
        _canonical_pairing(i, l, j, k),
    ]


def quartet_topology(t: LeafLabeledTree, leaves) -> Pairing | None:
    """Induced split of four leaves, or ``None`` when the induced subtree is a star."""
    quad = tuple(int(x) for x in leaves)
    if len(set(quad)) != 4:
        raise TreeError("quartet needs four distinct labels")
    for x in quad:
        if not t.is_leaf(x):
            raise TreeError(f"{x} is not a leaf label")
    for (a, b), (c, d) in pairings(quad):
        if not set(path_vertices(t, a, b)) & set(path_vertices(t, c, d)):
            return ((a, b), (c, d))
    return None


def splits(t: LeafLabeledTree, trivial: bool = False) -> frozenset:
    """Leaf bipartitions induced by the edges.

    Each split is the frozenset of labels on the side *not* containing leaf 1.
    Pendant-edge splits are included only when ``trivial`` is true.
    """
    view = t.rooted(1)
    below: dict[int, frozenset] = {}
    for v in reversed(view.order):
        s = {v} if t.is_leaf(v) else set()
        for c in view.children[v]:
            s |= below[c]
        below[v] = frozenset(s)
    out = set()
    for p, c in view.directed_edges():
        side = below[c]
        if trivial or 1 < len(side) < t.m - 1:
            out.add(side)
    return frozenset(out)


# ---------------------------------------------------------------------------
# tree metrics
# ---------------------------------------------------------------------------


def leaf_distances(t: LeafLabeledTree, lengths) -> np.ndarray:
    """Path-sum distance matrix between leaves; entry ``[i-1, j-1]`` is d_ij."""
    missing = [e for e in t.edges if e not in lengths]
    if missing:
        raise TreeError(f"missing edge lengths for {sorted(missing)}")
    D = np.zeros((t.m, t.m))
    for i in t.leaves:
        view = t.rooted(i)
        acc = {i: 0.0}
        for p, c in view.directed_edges():
            acc[c] = acc[p] + float(lengths[edge_key(p, c)])
        for j in t.leaves:
            D[i - 1, j - 1] = acc[j]
    return D


def four_point_check(D, tol: float = 1e-10) -> bool:
    """True iff, for every quadruple, the two largest pair sums agree within ``tol``.

    Quadruples touching a non-finite entry are skipped.
    """
    D = np.asarray(D, dtype=float)
    m = D.shape[0]
    if m < 4:
        return True
    quads = np.array(list(itertools.combinations(range(m), 4)))
    i, j, k, l = quads.T
    sums = np.stack([D[i, j] + D[k, l], D[i, k] + D[j, l], D[i, l] + D[j, k]], axis=1)
    finite = np.isfinite(sums).all(axis=1)
    sums = np.sort(sums[finite], axis=1)
    return bool(np.all(sums[:, 2] - sums[:, 1] <= tol))


# ---------------------------------------------------------------------------
# Newick
# ---------------------------------------------------------------------------

_SPECIAL = set("(),:;")


class _Node:
    __slots__ = ("label", "length", "children", "pos")

    def __init__(self, pos):
        self.label = None
        self.length = None
        self.children = []
        self.pos = pos


class _NewickParser:
    def __init__(self, text):
        self.s = text
        self.i = 0

    def skip(self):
        while self.i < len(self.s) and self.s[self.i].isspace():
            self.i += 1

    def peek(self):
        self.skip()
        return self.s[self.i] if self.i < len(self.s) else ""

    def parse(self) -> _Node:
        node = self.subtree()
        if self.peek() != ";":
            raise NewickError("expected ';'", self.i)
        self.i += 1
        if self.peek():
            raise NewickError("trailing characters after ';'", self.i)
        return node

    def subtree(self) -> _Node:
        node = _Node(self.i)
        if self.peek() == "(":
            self.i += 1
            node.children.append(self.subtree())
            while self.peek() == ",":
                self.i += 1
                node.children.append(self.subtree())
            if self.peek() != ")":
                raise NewickError("expected ',' or ')'", self.i)
            self.i += 1
        node.label = self.token()
        if self.peek() == ":":
            self.i += 1
            start = self.i
            text = self.token()
            try:
                node.length = float(text)
            except (TypeError, ValueError):
                raise NewickError(f"bad branch length {text!r}", start) from None
            if not node.length >= 0:
                raise NewickError(f"negative branch length {text!r}", start)
        if not node.children and node.label is None:
            raise NewickError("leaf without a label", node.pos)
        return node

    def token(self):
        self.skip()
        start = self.i
        while self.i < len(self.s) and self.s[self.i] not in _SPECIAL and not self.s[self.i].isspace():
            self.i += 1
        return self.s[start:self.i] or None


def newick_parse(text: str) -> tuple[LeafLabeledTree, dict | None]:
    """Parse Newick text with integer leaf labels ``1..m``.

    Returns ``(tree, lengths)``; ``lengths`` is ``None`` when no branch carries
    a length. Unlabeled vertices get ids ``m+1, m+2, ...`` in preorder. The
    top node becomes the tree root only when it has exactly two children.
    """
    top = _NewickParser(text).parse()
    nodes = []
    stack = [top]
    while stack:
        nd = stack.pop()
        nodes.append(nd)
        stack.extend(reversed(nd.children))
    labels = []
    for nd in nodes:
        if nd.label is not None:
            try:
                val = int(nd.label)
            except ValueError:
                raise NewickError(f"label {nd.label!r} is not an integer", nd.pos) from None
            labels.append(val)
    m = len(labels)
    if sorted(labels) != list(range(1, m + 1)):
        raise NewickError(f"labels must be exactly 1..{m}, got {sorted(labels)}", 0)
    ids = {}
    nxt = m + 1
    for nd in nodes:
        if nd.label is not None:
            ids[id(nd)] = int(nd.label)
        else:
            ids[id(nd)] = nxt
            nxt += 1
    edges = set()
    lengths = {}
    n_len = 0
    for nd in nodes:
        for c in nd.children:
            e = edge_key(ids[id(nd)], ids[id(c)])
            edges.add(e)
            if c.length is not None:
                lengths[e] = c.length
                n_len += 1
    if 0 < n_len < len(edges):
        raise NewickError("branch lengths given for some but not all edges", 0)
    root = ids[id(top)] if len(top.children) == 2 and top.label is None else None
    tree = LeafLabeledTree(edges, m, root)
    return tree, (lengths if n_len else None)


def _write_order(t: LeafLabeledTree):
    """Root and child ordering used by the writer (children by smallest leaf below)."""
    root = t.default_root()
    view = t.rooted(root)
    key: dict[int, int] = {}
    for v in reversed(view.order):
        cand = [v] if t.is_leaf(v) else []
        key[v] = min(cand + [key[c] for c in view.children[v]])
    children = {v: sorted(view.children[v], key=key.__getitem__) for v in view.order}
    return root, children


def newick_write(t: LeafLabeledTree, lengths=None) -> str:
    """Render ``t`` rooted at :meth:`LeafLabeledTree.default_root`.

    Lengths are written with ``repr`` so floats round-trip exactly.
    """
    root, children = _write_order(t)

    def rec(v):
        if children[v]:
            parts = []
            for c in children[v]:
                s = rec(c)
                if lengths is not None:
                    s += ":" + repr(float(lengths[edge_key(v, c)]))
                parts.append(s)
            inner = "(" + ",".join(parts) + ")"
            return inner + (str(v) if t.is_leaf(v) else "")
        return str(v)

    return rec(root) + ";"


def canonical_relabel(t: LeafLabeledTree) -> dict[int, int]:
    """Map unobserved ids to the ids :func:`newick_parse` assigns to ``newick_write(t)``."""
    root, children = _write_order(t)
    mapping = {}
    nxt = t.m + 1
    stack = [root]
    while stack:
        v = stack.pop()
        if not t.is_leaf(v):
            mapping[v] = nxt
            nxt += 1
        stack.extend(reversed(children[v]))
    return mapping


def canonicalize(t: LeafLabeledTree, lengths=None):
    """Relabel ``t`` (and ``lengths``) so that a Newick round-trip preserves vertex ids."""
    mapping = canonical_relabel(t)
    f = lambda v: mapping.get(v, v)  # noqa: E731
    new = t.relabel(mapping)
    if lengths is None:
        return new, None
    return new, {edge_key(f(u), f(v)): x for (u, v), x in lengths.items()}


def tree_to_json(t: LeafLabeledTree, lengths=None) -> dict:
    out = {
        "vertices": list(t.vertices),
        "edges": [list(e) for e in t.sorted_edges],
        "labels": {str(i): i for i in t.leaves},
        "root": t.root,
    }
    if lengths is not None:
        out["lengths"] = [[u, v, float(lengths[(u, v)])] for u, v in t.sorted_edges]
    return out


def tree_from_json(obj: dict) -> tuple[LeafLabeledTree, dict | None]:
    labels = obj.get("labels", {})
    if any(int(k) != int(v) for k, v in labels.items()):
        raise TreeError("leaf label i must be vertex i")
    m = len(labels) if labels else sum(
        1 for v in obj["vertices"] if sum(v in e for e in obj["edges"]) == 1
    )
    tree = LeafLabeledTree({tuple(e) for e in obj["edges"]}, m, obj.get("root"))
    if set(tree.vertices) != set(obj.get("vertices", tree.vertices)):
        raise TreeError("vertex list does not match edges")
    lengths = None
    if obj.get("lengths") is not None:
        lengths = {edge_key(int(u), int(v)): float(x) for u, v, x in obj["lengths"]}
    return tree, lengths


def isomorphic(a: LeafLabeledTree, b: LeafLabeledTree) -> bool:
    """Leaf-labeled isomorphism for trees without unlabeled degree-two vertices."""
    return a.m == b.m and splits(a, trivial=True) == splits(b, trivial=True)


def edge_split(t: LeafLabeledTree, e: Edge) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Leaf bipartition ``(A, B)`` induced by removing edge ``e``; ``A`` holds leaf 1."""
    u, v = edge_key(*e)
    view = t.rooted(u)
    side = set()
    stack = [v]
    while stack:
        x = stack.pop()
        if t.is_leaf(x):
            side.add(x)
        stack.extend(view.children[x])
    other = set(t.leaves) - side
    A, B = sorted(other), sorted(side)
    if 1 not in A:
        A, B = B, A
    return tuple(A), tuple(B)

