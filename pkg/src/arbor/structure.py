"""Chow-Liu trees, tree surgery and structural EM.

Intermediate trees of structural EM live on the vertex set of the current
latent model, so observed variables can sit at internal vertices. Those
trees are held as :class:`MarkedTree` objects and turned back into
leaf-labeled latent models by :func:`tree_surgery`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import inference
from .data import Dataset
from .em import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    PSEUDOCOUNT,
    ScoredModel,
    best_of,
    bic_score,
    em_fixed_tree,
    gaussian_expected_moments,
    random_init,
)
from .errors import DataError, DegenerateError, NumericalError
from .models import GaussianParams, MarkovParams, gaussian_loglik_from_moments, tau_from_joint
from .streams import generator, ordered_map
from .tree import LeafLabeledTree, canonical_relabel, edge_key, orient, random_trivalent_tree

INNER_ITER = 5
SOFT_LIMIT = 1.0 - 1e-6


# ---------------------------------------------------------------------------
# weights and spanning trees
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Complete graph on ``vertices`` with symmetric edge weights ``W``."""

    vertices: tuple
    W: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        k = len(self.vertices)
        if W.shape != (k, k) or not np.array_equal(W, W.T):
            raise DataError("weights must be a symmetric square matrix over the vertices")
        if not np.all(np.isfinite(W)):
            raise DataError("weights must be finite")
        object.__setattr__(self, "vertices", tuple(int(v) for v in self.vertices))
        object.__setattr__(self, "W", W)

    def weight(self, u, v) -> float:
        i, j = self.vertices.index(u), self.vertices.index(v)
        return float(self.W[i, j])

    def total(self, edges) -> float:
        return float(sum(self.weight(u, v) for u, v in edges))


def _plugin_mi(P) -> float:
    P = np.asarray(P, dtype=float)
    P = P / P.sum()
    pu, pv = P.sum(axis=1), P.sum(axis=0)
    outer = np.outer(pu, pv)
    mask = P > 0
    return float(max(0.0, np.sum(P[mask] * np.log(P[mask] / outer[mask]))))


def _gaussian_mi(r) -> float:
    r2 = min(float(r) ** 2, 1.0 - 1e-15)
    return -0.5 * math.log1p(-r2)


def mutual_information_weights(data: Dataset, kind: str = "gaussian") -> WeightedGraph:
    """Plug-in mutual information for discrete data, ``-log(1 - r^2) / 2`` for Gaussian."""
    from .distance import empirical_second_order, pair_tables

    kind = {"gaussian": "gaussian", "markov": "markov", "discrete": "markov"}.get(kind)
    if kind is None:
        raise DataError("kind must be gaussian or markov")
    if data.n < 2:
        raise DataError("need at least two rows")
    m = data.m
    W = np.zeros((m, m))
    if kind == "gaussian":
        R = empirical_second_order(data, "gaussian").values
        for i in range(m):
            for j in range(i + 1, m):
                W[i, j] = W[j, i] = _gaussian_mi(R[i, j])
    else:
        for c in range(m):
            if np.unique(data.values[:, c]).size < 2:
                raise DegenerateError(f"column {c + 1} is constant")
        for (i, j), P in pair_tables(data).items():
            W[i - 1, j - 1] = W[j - 1, i - 1] = _plugin_mi(P)
    return WeightedGraph(tuple(range(1, m + 1)), W)


def max_spanning_tree(w: WeightedGraph) -> list:
    """Kruskal on decreasing weight; equal weights go in lexicographic edge order."""
    verts = w.vertices
    cand = sorted(
        (-w.W[a, b], min(verts[a], verts[b]), max(verts[a], verts[b]))
        for a in range(len(verts))
        for b in range(a + 1, len(verts))
    )
    parent = {v: v for v in verts}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = []
    for _, u, v in cand:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[max(ru, rv)] = min(ru, rv)
            edges.append((u, v))
            if len(edges) == len(verts) - 1:
                break
    return sorted(edges)


def chow_liu(w: WeightedGraph) -> MarkedTree:
    """Maximum-weight spanning tree over the observed variables (structure only)."""
    if len(w.vertices) < 2:
        raise DataError("need at least two variables")
    return MarkedTree(frozenset(max_spanning_tree(w)), len(w.vertices))


# ---------------------------------------------------------------------------
# trees with observed vertices anywhere
# ---------------------------------------------------------------------------


def _adjacency(edges) -> dict:
    adj: dict = {}
    for u, v in edges:
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    return {k: tuple(sorted(nb)) for k, nb in adj.items()}


@dataclass(frozen=True, eq=False)
class MarkedTree:
    """Tree over arbitrary integer vertices; ``1..m`` are observed, the rest hidden.

    Parameters are optional. Gaussian trees carry ``corr`` (edge -> rho) and
    ``var`` (observed vertex -> variance); discrete trees carry ``joints``
    (sorted edge ``(a, b)`` -> table indexed ``[y_a, y_b]``) and ``marg``.
    """

    edges: frozenset
    m: int
    corr: dict | None = None
    var: dict | None = None
    joints: dict | None = None
    marg: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "edges", frozenset(edge_key(int(u), int(v)) for u, v in self.edges))
        verts = {x for e in self.edges for x in e} or set(range(1, self.m + 1))
        if len(self.edges) != len(verts) - 1:
            raise DataError("marked tree must be a tree")
        if any(i not in verts for i in range(1, self.m + 1)):
            raise DataError("every observed variable must be a vertex")

    @property
    def kind(self) -> str | None:
        if self.corr is not None:
            return "gaussian"
        if self.joints is not None:
            return "markov"
        return None

    @property
    def adjacency(self) -> dict:
        return _adjacency(self.edges)

    @property
    def vertices(self) -> tuple:
        return tuple(sorted(self.adjacency))

    @property
    def hidden(self) -> tuple:
        return tuple(v for v in self.vertices if v > self.m)

    def joint(self, a, b) -> np.ndarray:
        """Joint table oriented ``[y_a, y_b]``."""
        P = self.joints[edge_key(a, b)]
        return P if a < b else P.T

    @classmethod
    def from_directed(cls, edges, m, root, root_dist, trans) -> MarkedTree:
        """Discrete marked tree from a root distribution and parent-to-child transitions."""
        view = orient(_adjacency(edges), root)
        marg = {root: np.asarray(root_dist, float)}
        joints = {}
        for a, b in view.directed_edges():
            M = np.asarray(trans[(a, b)], float)
            marg[b] = marg[a] @ M
            J = marg[a][:, None] * M
            joints[edge_key(a, b)] = J if a < b else J.T
        return cls(frozenset(edges), m, joints=joints, marg=marg)

    def directed(self, root=None):
        """``(view, root_dist, transitions)`` for a discrete marked tree."""
        root = min(self.vertices) if root is None else root
        view = orient(self.adjacency, root)
        trans = {}
        for a, b in view.directed_edges():
            J = self.joint(a, b)
            trans[(a, b)] = J / J.sum(axis=1, keepdims=True)
        return view, self.marg[root], trans

    def leaf_correlations(self) -> np.ndarray:
        """Observed-variable correlations (Gaussian) from path products."""
        adj = self.adjacency
        obs = list(range(1, self.m + 1))
        R = np.eye(self.m)
        for i in obs:
            view = orient(adj, i)
            acc = {i: 1.0}
            for a, b in view.directed_edges():
                acc[b] = acc[a] * self.corr[edge_key(a, b)]
            R[i - 1] = [acc[j] for j in obs]
        return R

    def loglik(self, data: Dataset) -> float:
        if data.m != self.m:
            raise DataError("dataset width does not match the observed variables")
        if self.kind == "gaussian":
            s = np.sqrt([self.var[i] for i in range(1, self.m + 1)])
            C = self.leaf_correlations() * np.outer(s, s)
            return gaussian_loglik_from_moments(C, data.second_moment, data.total_weight)
        if self.kind != "markov":
            raise DataError("marked tree has no parameters")
        view, pi, trans = self.directed()
        X, w = data.compressed
        ev = {i: X[:, i - 1] for i in range(1, self.m + 1)}
        d = pi.shape[0]
        ll = inference.sum_product(view, pi, trans, ev, d, X.shape[0]).loglik
        pos = w > 0
        if np.any(np.isneginf(ll[pos])):
            return -math.inf
        return float(np.dot(w[pos], ll[pos]))


# ---------------------------------------------------------------------------
# surgery
# ---------------------------------------------------------------------------


class _Work:
    """Mutable copy of a marked tree used while rewriting."""

    def __init__(self, mt: MarkedTree):
        self.m = mt.m
        self.gauss = mt.kind == "gaussian"
        self.adj = {v: set(nb) for v, nb in mt.adjacency.items()}
        if self.gauss:
            self.val = dict(mt.corr)
            self.var = dict(mt.var)
        else:
            self.val = {e: np.array(P, float) for e, P in mt.joints.items()}
            self.marg = {v: np.array(p, float) for v, p in mt.marg.items()}
        self.next_id = max(self.adj) + 1

    def get(self, a, b):
        x = self.val[edge_key(a, b)]
        if self.gauss or a < b:
            return x
        return x.T

    def put(self, a, b, x):
        if not self.gauss and a > b:
            x = x.T
        self.val[edge_key(a, b)] = x
        self.adj[a].add(b)
        self.adj[b].add(a)

    def drop(self, a, b):
        del self.val[edge_key(a, b)]
        self.adj[a].discard(b)
        self.adj[b].discard(a)

    def fresh(self, like):
        h = self.next_id
        self.next_id += 1
        self.adj[h] = set()
        if not self.gauss:
            self.marg[h] = self.marg[like].copy()
        return h

    def identity(self, v):
        return 1.0 if self.gauss else np.diag(self.marg[v])

    def strength(self, a, v):
        x = self.get(a, v)
        return abs(x) if self.gauss else abs(tau_from_joint(x))

    def remove_hidden_leaves(self) -> bool:
        changed = False
        while True:
            leaves = [v for v, nb in self.adj.items() if v > self.m and len(nb) <= 1]
            if not leaves:
                return changed
            for v in leaves:
                for u in list(self.adj[v]):
                    self.drop(u, v)
                del self.adj[v]
                if not self.gauss:
                    del self.marg[v]
            changed = True

    def suppress(self) -> bool:
        changed = False
        for v in sorted(self.adj):
            if v > self.m and len(self.adj[v]) == 2:
                a, b = sorted(self.adj[v])
                if self.gauss:
                    x = self.get(a, v) * self.get(v, b)
                else:
                    x = self.get(a, v) @ (self.get(v, b) / self.marg[v][:, None])
                self.drop(a, v)
                self.drop(v, b)
                del self.adj[v]
                if not self.gauss:
                    del self.marg[v]
                self.put(a, b, x)
                changed = True
        return changed

    def detach_observed(self):
        for v in range(1, self.m + 1):
            if len(self.adj.get(v, ())) >= 2:
                h = self.fresh(v)
                for u in sorted(self.adj[v]):
                    x = self.get(u, v)
                    self.drop(u, v)
                    self.put(u, h, x)
                self.put(h, v, self.identity(v))

    def split_high_degree(self):
        for v in sorted(self.adj):
            while v > self.m and len(self.adj[v]) > 3:
                nb = sorted(self.adj[v])
                best = max(
                    ((self.strength(a, v) * self.strength(b, v), -a, -b) for i, a in enumerate(nb) for b in nb[i + 1 :])
                )
                a, b = -best[1], -best[2]
                w = self.fresh(v)
                for u in (a, b):
                    x = self.get(u, v)
                    self.drop(u, v)
                    self.put(u, w, x)
                self.put(w, v, self.identity(v))


def tree_surgery(mt: MarkedTree, trivalent: bool = False):
    """Rewrite a parameterized marked tree into a leaf-labeled latent tree model.

    Hidden leaves are pruned, hidden degree-two chains collapse into one
    edge, and each internal observed vertex hands its edges to a new hidden
    twin attached to it by a perfect-dependence edge. With ``trivalent``
    every hidden vertex of degree above three is split as well. The
    observed distribution is unchanged.
    """
    if mt.kind is None:
        raise DataError("surgery needs a parameterized tree")
    w = _Work(mt)
    while w.remove_hidden_leaves() | w.suppress():
        pass
    w.detach_observed()
    if trivalent:
        w.split_high_degree()
    edges = {edge_key(a, b) for a, nb in w.adj.items() for b in nb}
    tree = LeafLabeledTree(edges, mt.m)
    mapping = canonical_relabel(tree)
    f = lambda v: mapping.get(v, v)  # noqa: E731
    tree = tree.relabel(mapping)
    if w.gauss:
        corr = {edge_key(f(a), f(b)): float(np.clip(x, -1.0, 1.0)) for (a, b), x in w.val.items()}
        return GaussianParams(tree, corr, w.var)
    inv = {f(v): v for v in w.adj}
    view = tree.rooted()
    trans = {}
    for a, b in view.directed_edges():
        J = w.get(inv[a], inv[b])
        trans[(a, b)] = J / J.sum(axis=1, keepdims=True)
    pi = w.marg[inv[view.root]]
    return MarkovParams(tree, pi / pi.sum(), trans)


# ---------------------------------------------------------------------------
# expected statistics over all vertices
# ---------------------------------------------------------------------------


def _safe_div(a, b):
    return np.divide(a, b, out=np.zeros_like(a), where=b > 0)


def expected_pair_tables(p: MarkovParams, data: Dataset):
    """Expected joint tables for every vertex pair given the observed rows.

    Returns ``(tables, node)``: ``tables[(u, v)]`` for ``u < v`` indexed
    ``[y_u, y_v]`` and ``node[v]`` the expected marginal, both normalized.
    """
    X, w = data.compressed
    n, d = X.shape[0], p.d
    ev = {i: X[:, i - 1] for i in p.tree.leaves}
    res = inference.sum_product(p.view, p.root_dist, p.transitions, ev, d, n, posteriors=True, pairwise=True)
    if np.any(np.isneginf(res.loglik) & (w > 0)):
        raise DegenerateError("observation has probability zero under the current parameters")
    wn = w / w.sum()
    cond = {}
    for (a, b), P in res.pair.items():
        cond[(a, b)] = _safe_div(P, res.node[a][:, :, None])
        cond[(b, a)] = _safe_div(P.transpose(0, 2, 1), res.node[b][:, :, None])
    adj = p.tree.adjacency
    tables = {}
    node = {v: wn @ res.node[v] for v in p.tree.vertices}
    for u in p.tree.vertices:
        view = orient(adj, u)
        J = {u: res.node[u][:, :, None] * np.eye(d)[None]}
        for a, b in view.directed_edges():
            J[b] = np.einsum("nxa,nab->nxb", J[a], cond[(a, b)])
            if u < b:
                tables[(u, b)] = np.einsum("n,nxy->xy", wn, J[b])
    return tables, node


def _expected_graph(p, data):
    """Weighted graph over all vertices plus the statistics to parameterize any spanning tree."""
    verts = p.tree.vertices
    k = len(verts)
    W = np.zeros((k, k))
    if isinstance(p, GaussianParams):
        S, sverts, _ = gaussian_expected_moments(p, data.second_moment)
        idx = {v: i for i, v in enumerate(sverts)}
        for a in range(k):
            for b in range(a + 1, k):
                u, v = verts[a], verts[b]
                r = S[idx[u], idx[v]] / math.sqrt(S[idx[u], idx[u]] * S[idx[v], idx[v]])
                W[a, b] = W[b, a] = _gaussian_mi(r)
        return WeightedGraph(verts, W), (S, idx)
    tables, node = expected_pair_tables(p, data)
    for a in range(k):
        for b in range(a + 1, k):
            W[a, b] = W[b, a] = _plugin_mi(tables[(verts[a], verts[b])])
    return WeightedGraph(verts, W), (tables, node)


def _fit_marked(edges, m, stats, gaussian, pseudo=PSEUDOCOUNT) -> MarkedTree:
    if gaussian:
        S, idx = stats
        corr = {}
        for u, v in edges:
            r = S[idx[u], idx[v]] / math.sqrt(S[idx[u], idx[u]] * S[idx[v], idx[v]])
            corr[edge_key(u, v)] = float(np.clip(r, -1.0, 1.0))
        var = {i: float(S[idx[i], idx[i]]) for i in range(1, m + 1)}
        return MarkedTree(frozenset(edges), m, corr=corr, var=var)
    tables, node = stats
    root = min(x for e in edges for x in e)
    view = orient(_adjacency(edges), root)
    trans = {}
    for a, b in view.directed_edges():
        J = tables[(a, b)] if a < b else tables[(b, a)].T
        J = J + pseudo
        trans[(a, b)] = J / J.sum(axis=1, keepdims=True)
    pi = node[root] + pseudo
    return MarkedTree.from_directed(edges, m, root, pi / pi.sum(), trans)


def structure_step(p, data, trivalent=False):
    """One structural M-step: Chow-Liu on expected statistics, then surgery."""
    graph, stats = _expected_graph(p, data)
    edges = max_spanning_tree(graph)
    mt = _fit_marked(edges, p.m, stats, isinstance(p, GaussianParams))
    return tree_surgery(mt, trivalent)


def soften(p):
    """Pull near-deterministic edges back inside the parameter space so EM can move them."""
    if isinstance(p, GaussianParams):
        corr = {e: (math.copysign(0.9, r) if abs(r) > SOFT_LIMIT else r) for e, r in p.edge_corr.items()}
        return GaussianParams(p.tree, corr, p.leaf_var)
    d = p.d
    trans = {}
    for e, M in p.transitions.items():
        near_perm = np.all(np.isclose(M.max(axis=1), 1.0, atol=1e-6)) and len(set(M.argmax(axis=1))) == d
        trans[e] = 0.9 * M + 0.1 / d if near_perm else M
    return MarkovParams(p.tree, p.root_dist, trans)


# ---------------------------------------------------------------------------
# structural EM
# ---------------------------------------------------------------------------


def _inner(p, data, iters, tol):
    try:
        out = em_fixed_tree(p.tree, data, init=p, max_iter=iters, tol=tol)
    except NumericalError:
        return None
    return out if math.isfinite(out.loglik) else None


def structural_em(
    data: Dataset,
    init: ScoredModel,
    max_iter: int = 100,
    inner_iter: int = INNER_ITER,
    tol: float = DEFAULT_TOL,
    trivalent: bool = False,
) -> ScoredModel:
    """Alternate expected-statistics Chow-Liu moves with short parameter EM runs.

    A move is kept only when it strictly raises the observed log-likelihood,
    so the returned trace is nondecreasing. ``init`` comes back unchanged when
    no move improves on it.
    """
    cur = init
    trace = list(init.trace) or [init.loglik]
    for _ in range(max_iter):
        try:
            proposal = structure_step(cur.model, data, trivalent)
        except NumericalError:
            break
        cands = [c for c in (_inner(proposal, data, inner_iter, tol), _inner(soften(proposal), data, inner_iter, tol)) if c]
        if not cands:
            break
        best = best_of(cands)
        if best.loglik - cur.loglik <= tol * (1.0 + abs(cur.loglik)):
            break
        trace.append(best.loglik)
        cur = best
    if cur is init:
        return init
    out = bic_score(cur.model, data, ll=cur.loglik, trace=trace)
    out.seed = init.seed
    return out


def _observed_chow_liu(data: Dataset, kind: str) -> MarkedTree:
    """Fully observed Chow-Liu fit: maximum-MI tree plus maximum-likelihood edge parameters."""
    w = mutual_information_weights(data, kind)
    edges = sorted(chow_liu(w).edges)
    m = data.m
    if kind == "gaussian":
        S = data.second_moment
        return _fit_marked(edges, m, (S, {i: i - 1 for i in range(1, m + 1)}), True)
    from .distance import pair_tables

    d = data.states
    tables = pair_tables(data)
    node = {i: np.bincount(data.values[:, i - 1], weights=data.row_weights, minlength=d) / data.total_weight for i in range(1, m + 1)}
    return _fit_marked(edges, m, (tables, node), False)


def learn_chow_liu(data: Dataset, kind: str | None = None, trivalent: bool = False):
    """Chow-Liu tree and the equivalent leaf-labeled latent model.

    Returns ``(marked_tree, scored_model)``; the latent model reproduces the
    Chow-Liu likelihood exactly.
    """
    kind = kind or ("markov" if data.discrete else "gaussian")
    mt = _observed_chow_liu(data, kind)
    model = tree_surgery(mt, trivalent)
    return mt, bic_score(model, data)


def learn_structural_em(
    data: Dataset,
    restarts: int = 10,
    seed: int = 0,
    max_iter: int = 100,
    inner_iter: int = INNER_ITER,
    tol: float = DEFAULT_TOL,
    trivalent: bool = False,
    polish_iter: int = DEFAULT_MAX_ITER,
    threads: int | None = None,
) -> ScoredModel:
    """Structural EM from several starts; the best run is then refined by plain EM.

    Start 0 is the Chow-Liu model; start ``k >= 1`` is a random trivalent
    tree with random parameters drawn from stream ``k``.
    """
    kind = "markov" if data.discrete else "gaussian"
    m = data.m

    def start(k):
        if k == 0:
            model = learn_chow_liu(data, kind, trivalent)[1].model
            rng = None
        else:
            rng = generator(seed, "sem-restart", k)
            tree = random_trivalent_tree(m, rng)
            model = random_init(tree, data, rng)
        first = _inner(model, data, inner_iter, tol)
        if first is None:
            return None
        first.seed = k
        return structural_em(data, first, max_iter, inner_iter, tol, trivalent)

    runs = [r for r in ordered_map(start, range(max(1, restarts)), threads) if r is not None]
    if not runs:
        raise NumericalError("every structural EM start degenerated")
    best = best_of(runs)
    polished = em_fixed_tree(best.tree, data, init=best.model, max_iter=polish_iter, tol=tol)
    out = bic_score(polished.model, data, ll=polished.loglik, trace=best.trace + polished.trace[1:])
    out.seed = best.seed
    return out


__all__ = [
    "WeightedGraph",
    "MarkedTree",
    "mutual_information_weights",
    "max_spanning_tree",
    "chow_liu",
    "tree_surgery",
    "expected_pair_tables",
    "structure_step",
    "structural_em",
    "learn_chow_liu",
    "learn_structural_em",
]
