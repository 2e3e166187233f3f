"""Gaussian and general Markov latent tree models.

Gaussian models are parameterized by one correlation per edge plus the leaf
variances; unobserved variables have mean 0 and variance 1. General Markov
models carry a root distribution and one row-stochastic transition matrix
per edge directed away from the root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import expm

from . import inference
from .data import CONTINUOUS, DISCRETE, Dataset
from .errors import DataError, DegenerateError
from .tree import Edge, LeafLabeledTree, edge_key, path_between

ROW_SUM_TOL = 1e-12


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Edge correlations and leaf variances of a Gaussian latent tree model.

    ``magnitudes_only`` marks parameters recovered from distances, whose
    edge signs are unidentified.
    """

    tree: LeafLabeledTree
    edge_corr: dict
    leaf_var: dict = field(default_factory=dict)
    magnitudes_only: bool = False

    def __post_init__(self):
        corr = {edge_key(*e): float(r) for e, r in self.edge_corr.items()}
        if set(corr) != set(self.tree.edges):
            raise DataError("edge correlations must be keyed exactly by the tree edges")
        bad = [e for e, r in corr.items() if not abs(r) <= 1.0]
        if bad:
            raise DataError(f"edge correlations outside [-1, 1] on {bad}")
        var = {i: float(self.leaf_var.get(i, 1.0)) for i in self.tree.leaves}
        if any(not v > 0 for v in var.values()):
            raise DataError("leaf variances must be positive")
        object.__setattr__(self, "edge_corr", corr)
        object.__setattr__(self, "leaf_var", var)

    @property
    def m(self) -> int:
        return self.tree.m

    def is_parsimonious(self) -> bool:
        """(A1) hidden degree >= 3 and (A2) every |rho_uv| strictly inside (0, 1)."""
        a1 = all(self.tree.degree(h) >= 3 for h in self.tree.hidden)
        return a1 and all(0.0 < abs(r) < 1.0 for r in self.edge_corr.values())

    def scale(self, v: int) -> float:
        return math.sqrt(self.leaf_var[v]) if self.tree.is_leaf(v) else 1.0


@dataclass(frozen=True, eq=False)
class MarkovParams:
    """General Markov model on ``tree`` rooted at ``tree.default_root()``."""

    tree: LeafLabeledTree
    root_dist: np.ndarray
    transitions: dict

    def __post_init__(self):
        pi = np.asarray(self.root_dist, dtype=float)
        d = pi.shape[0]
        if pi.ndim != 1 or np.any(pi <= 0) or abs(pi.sum() - 1.0) > ROW_SUM_TOL * d:
            raise DataError("root distribution must be a strictly positive probability vector")
        view = self.tree.rooted()
        wanted = set(view.directed_edges())
        trans = {(int(a), int(b)): np.asarray(M, dtype=float) for (a, b), M in self.transitions.items()}
        if set(trans) != wanted:
            raise DataError(
                f"transitions must be keyed by directed edges away from root {view.root}; "
                f"missing {sorted(wanted - set(trans))}, unexpected {sorted(set(trans) - wanted)}"
            )
        for k, M in trans.items():
            if M.shape != (d, d):
                raise DataError(f"transition {k} has shape {M.shape}, expected {(d, d)}")
            if np.any(M < 0) or np.any(np.abs(M.sum(axis=1) - 1.0) > ROW_SUM_TOL * d):
                raise DataError(f"transition {k} is not row-stochastic")
        object.__setattr__(self, "root_dist", pi)
        object.__setattr__(self, "transitions", trans)

    @property
    def d(self) -> int:
        return self.root_dist.shape[0]

    @property
    def m(self) -> int:
        return self.tree.m

    @property
    def view(self):
        return self.tree.rooted()

    @property
    def root(self) -> int:
        return self.view.root

    @cached_property
    def marginals(self) -> dict:
        """Marginal distribution of every vertex."""
        view = self.view
        out = {view.root: self.root_dist}
        for p, c in view.directed_edges():
            out[c] = out[p] @ self.transitions[(p, c)]
        return out


@dataclass(frozen=True, eq=False)
class RateModel:
    """Rate matrix ``Q`` shared by all edges plus one time ``t_uv > 0`` per edge."""

    Q: np.ndarray
    edge_times: dict

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DataError("rate matrix must be square")
        off = Q - np.diag(np.diag(Q))
        scale = max(1.0, float(np.abs(Q).max()))
        if np.any(off < 0) or np.any(np.abs(Q.sum(axis=1)) > 1e-12 * scale * Q.shape[0]):
            raise DataError("rate matrix needs nonnegative off-diagonal entries and zero row sums")
        times = {edge_key(*e): float(t) for e, t in self.edge_times.items()}
        if any(not t > 0 for t in times.values()):
            raise DataError("edge times must be positive")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "edge_times", times)


@dataclass(frozen=True, eq=False)
class VectorMoments:
    """Second-order moments of vector-valued vertex variables.

    ``blocks`` maps ``(u, v)`` to the cross-covariance ``Sigma_uv``; the
    transpose is implied for ``(v, u)``.
    """

    blocks: dict

    def cov(self, u, v) -> np.ndarray:
        if (u, v) in self.blocks:
            return np.asarray(self.blocks[(u, v)], dtype=float)
        return np.asarray(self.blocks[(v, u)], dtype=float).T

    @classmethod
    def from_samples(cls, samples: dict) -> VectorMoments:
        """Empirical moments from ``{vertex: (n, k) array}``."""
        centred = {v: np.asarray(x, float) - np.asarray(x, float).mean(axis=0) for v, x in samples.items()}
        keys = sorted(centred)
        n = len(next(iter(centred.values())))
        blocks = {}
        for a in keys:
            for b in keys:
                if a <= b:
                    blocks[(a, b)] = centred[a].T @ centred[b] / n
        return cls(blocks)

    @classmethod
    def from_discrete_joint(cls, P, u="u", v="v") -> VectorMoments:
        """Moments of the embedding state 0 -> origin, state s -> e_s in R^{d-1}."""
        P = np.asarray(P, dtype=float)
        pu, pv = P.sum(axis=1), P.sum(axis=0)
        a, b = pu[1:], pv[1:]
        return cls(
            {
                (u, u): np.diag(a) - np.outer(a, a),
                (v, v): np.diag(b) - np.outer(b, b),
                (u, v): P[1:, 1:] - np.outer(a, b),
            }
        )


# ---------------------------------------------------------------------------
# Gaussian second-order structure
# ---------------------------------------------------------------------------


def _mirror(R):
    """Copy the upper triangle down; products taken in opposite orders can differ in the last bit."""
    iu = np.triu_indices(R.shape[0], 1)
    R[(iu[1], iu[0])] = R[iu]
    return R


def path_products(tree: LeafLabeledTree, edge_value: dict, sources=None) -> dict:
    """Products of edge values along every path from each source vertex.

    Returns ``{source: {vertex: product}}``.
    """
    out = {}
    for s in tree.vertices if sources is None else sources:
        view = tree.rooted(s)
        acc = {s: 1.0}
        for p, c in view.directed_edges():
            acc[c] = acc[p] * edge_value[edge_key(p, c)]
        out[s] = acc
    return out


def gaussian_vertex_correlations(p: GaussianParams) -> tuple[np.ndarray, tuple]:
    """Correlation matrix over all vertices, in ``p.tree.vertices`` order."""
    verts = p.tree.vertices
    prods = path_products(p.tree, p.edge_corr)
    R = np.array([[prods[a][b] for b in verts] for a in verts])
    return _mirror(R), verts


def gaussian_leaf_correlations(p: GaussianParams) -> np.ndarray:
    """Leaf correlation matrix; entry ``[i-1, j-1]`` is the path product over i..j."""
    leaves = list(p.tree.leaves)
    prods = path_products(p.tree, p.edge_corr, leaves)
    return _mirror(np.array([[prods[i][j] for j in leaves] for i in leaves]))


def gaussian_vertex_covariance(p: GaussianParams) -> tuple[np.ndarray, tuple]:
    R, verts = gaussian_vertex_correlations(p)
    s = np.array([p.scale(v) for v in verts])
    return R * np.outer(s, s), verts


def gaussian_leaf_covariance(p: GaussianParams) -> np.ndarray:
    s = np.sqrt([p.leaf_var[i] for i in p.tree.leaves])
    return gaussian_leaf_correlations(p) * np.outer(s, s)


# ---------------------------------------------------------------------------
# general Markov second-order structure
# ---------------------------------------------------------------------------


def _down_product(p: MarkovParams, top: int, bottom: int) -> np.ndarray:
    """Transition matrix from ``top`` to its descendant ``bottom``."""
    view = p.view
    chain = []
    v = bottom
    while v != top:
        chain.append((view.parent[v], v))
        v = view.parent[v]
    M = np.eye(p.d)
    for e in reversed(chain):
        M = M @ p.transitions[e]
    return M


def _lca(view, u, v):
    anc = set()
    x = u
    while x is not None:
        anc.add(x)
        x = view.parent[x]
    x = v
    while x not in anc:
        x = view.parent[x]
    return x


def markov_pairwise(p: MarkovParams, u: int, v: int):
    """Exact joint table of ``(Y_u, Y_v)`` and both marginal vectors.

    Returns ``(P_uv, p_u, p_v)``; ``P_uv[a, b] = P(Y_u = a, Y_v = b)``.
    """
    view = p.view
    w = _lca(view, u, v)
    A = _down_product(p, w, u)
    B = _down_product(p, w, v)
    P = A.T @ (p.marginals[w][:, None] * B)
    return P, P.sum(axis=1), P.sum(axis=0)


def reverse_transition(M, p_parent, p_child) -> np.ndarray:
    """Bayes inversion: conditional of the parent given the child."""
    if np.any(p_child <= 0):
        raise DegenerateError("child marginal has a zero entry; reverse conditional undefined")
    return (M.T * p_parent[None, :]) / p_child[:, None]


def reroot(p: MarkovParams, new_root: int) -> MarkovParams:
    """The same joint distribution parameterized from a different root."""
    tree = p.tree.with_root(new_root)
    marg = p.marginals
    trans = {}
    for a, b in tree.rooted().directed_edges():
        if (a, b) in p.transitions:
            trans[(a, b)] = p.transitions[(a, b)]
        else:
            trans[(a, b)] = reverse_transition(p.transitions[(b, a)], marg[b], marg[a])
    return MarkovParams(tree, marg[new_root], trans)


def tau_from_joint(P) -> float:
    """``det(P) / sqrt(det(P_uu) det(P_vv))`` for a joint table ``P``."""
    P = np.asarray(P, dtype=float)
    denom = np.prod(P.sum(axis=1)) * np.prod(P.sum(axis=0))
    if not denom > 0:
        raise DegenerateError("a marginal has a zero entry; tau undefined")
    return float(np.linalg.det(P) / math.sqrt(denom))


def tau(p: MarkovParams, u: int, v: int) -> float:
    if u == v:
        return 1.0
    return tau_from_joint(markov_pairwise(p, u, v)[0])


def tau_edge(p: MarkovParams, u: int, v: int) -> float:
    """Determinant association of the edge ``u - v``; lies in [-1, 1]."""
    if edge_key(u, v) not in p.tree.edges:
        raise DataError(f"{(u, v)} is not an edge")
    return tau(p, u, v)


def tau_edge_via_transition(p: MarkovParams, u: int, v: int) -> float:
    """Same value from ``det M^{uv} * sqrt(det P^{uu} / det P^{vv})``; ``u`` is the parent."""
    if (u, v) not in p.transitions:
        u, v = v, u
    M = p.transitions[(u, v)]
    pu, pv = p.marginals[u], p.marginals[v]
    if np.prod(pv) <= 0:
        raise DegenerateError("child marginal has a zero entry; tau undefined")
    return float(np.linalg.det(M) * math.sqrt(np.prod(pu) / np.prod(pv)))


def edge_taus(p: MarkovParams) -> dict:
    return {e: tau_edge(p, *e) for e in p.tree.sorted_edges}


def tau_matrix(p: MarkovParams) -> np.ndarray:
    """Leaf tau matrix from path products of edge values."""
    leaves = list(p.tree.leaves)
    prods = path_products(p.tree, edge_taus(p), leaves)
    return _mirror(np.array([[prods[i][j] for j in leaves] for i in leaves]))


def linear_tau(mo: VectorMoments, u, v) -> float:
    """``det(Sigma_uu^{-1/2} Sigma_uv Sigma_vv^{-1/2})``."""

    def inv_sqrt(S):
        w, V = np.linalg.eigh(S)
        if w.min() <= 0:
            raise DegenerateError("diagonal block is not positive definite")
        return (V / np.sqrt(w)) @ V.T

    return float(np.linalg.det(inv_sqrt(mo.cov(u, u)) @ mo.cov(u, v) @ inv_sqrt(mo.cov(v, v))))


# ---------------------------------------------------------------------------
# rate matrices
# ---------------------------------------------------------------------------


def jukes_cantor(d: int = 4, rate: float = 1.0) -> np.ndarray:
    """Rate matrix with every off-diagonal entry equal to ``rate``."""
    return rate * (np.ones((d, d)) - d * np.eye(d))


def rate_transition(r: RateModel, e: Edge) -> np.ndarray:
    """``exp(t_e Q)``, renormalized against roundoff."""
    t = r.edge_times[edge_key(*e)]
    M = expm(t * r.Q)
    M = np.clip(M, 0.0, None)
    return M / M.sum(axis=1, keepdims=True)


def markov_from_rates(tree: LeafLabeledTree, r: RateModel, root_dist=None) -> MarkovParams:
    d = r.Q.shape[0]
    pi = np.full(d, 1.0 / d) if root_dist is None else np.asarray(root_dist, float)
    trans = {(a, b): rate_transition(r, (a, b)) for a, b in tree.rooted().directed_edges()}
    return MarkovParams(tree, pi, trans)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def simulate(p, n: int, seed=None, hidden: bool = False) -> Dataset:
    """Root-first ancestral sampling of ``n`` i.i.d. rows.

    ``seed`` may be an int or a :class:`numpy.random.Generator`. With
    ``hidden=True`` the dataset carries every unobserved vertex's draws in
    ``Dataset.hidden``.
    """
    if n < 1:
        raise DataError("n must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    view = p.tree.rooted()
    draws = {}
    if isinstance(p, GaussianParams):
        draws[view.root] = rng.standard_normal(n)
        for a, b in view.directed_edges():
            r = p.edge_corr[edge_key(a, b)]
            draws[b] = r * draws[a] + math.sqrt(max(0.0, 1.0 - r * r)) * rng.standard_normal(n)
        X = np.column_stack([draws[i] * p.scale(i) for i in p.tree.leaves])
        kind, states = CONTINUOUS, None
    else:
        draws[view.root] = _categorical(rng, np.broadcast_to(p.root_dist, (n, p.d)))
        for a, b in view.directed_edges():
            draws[b] = _categorical(rng, p.transitions[(a, b)][draws[a]])
        X = np.column_stack([draws[i] for i in p.tree.leaves])
        kind, states = DISCRETE, p.d
    hid = {v: draws[v] for v in p.tree.hidden} if hidden else None
    return Dataset(X, kind, states, hidden=hid)


def _categorical(rng, probs):
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cum[:, -1]
    return np.minimum((u[:, None] >= cum).sum(axis=1), probs.shape[1] - 1)


# ---------------------------------------------------------------------------
# likelihood and hidden-state inference
# ---------------------------------------------------------------------------


def _leaf_evidence(p: MarkovParams, X):
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != p.m:
        raise DataError(f"expected {p.m} observed columns, got {X.shape[1]}")
    if X.size and (X.min() < 0 or X.max() >= p.d or np.any(X != np.round(X))):
        raise DataError(f"observation outside state space 0..{p.d - 1}")
    X = X.astype(np.int64)
    return {i: X[:, i - 1] for i in p.tree.leaves}, X.shape[0]


def row_logliks(p: MarkovParams, X) -> np.ndarray:
    ev, n = _leaf_evidence(p, X)
    return inference.sum_product(p.view, p.root_dist, p.transitions, ev, p.d, n).loglik


def gaussian_loglik_from_moments(C, S, n) -> float:
    """Zero-mean normal log-likelihood of ``n`` rows with second moment ``S``."""
    m = C.shape[0]
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        return -math.inf
    logdet = 2.0 * np.log(np.diag(L)).sum()
    Linv = np.linalg.solve(L, np.eye(m))
    quad = float(np.sum((Linv.T @ Linv) * S))
    return -0.5 * n * (m * math.log(2 * math.pi) + logdet + quad)


def loglik(p, data: Dataset) -> float:
    """Observed-data log-likelihood (weighted rows supported).

    Discrete rows of probability zero make the result ``-inf``.
    """
    if data.m != p.m:
        raise DataError(f"dataset has {data.m} columns, model has {p.m} leaves")
    if data.n == 0:
        return 0.0
    if isinstance(p, GaussianParams):
        if data.discrete:
            raise DataError("Gaussian model needs continuous data")
        return gaussian_loglik_from_moments(gaussian_leaf_covariance(p), data.second_moment, data.total_weight)
    if not data.discrete:
        raise DataError("Markov model needs discrete data")
    X, w = data.compressed
    ll = row_logliks(p, X)
    pos = w > 0
    if np.any(np.isneginf(ll[pos])):
        return -math.inf
    return float(np.dot(w[pos], ll[pos]))


def infer_hidden(p, row) -> dict:
    """Posterior of every unobserved vertex given one observation of the leaves.

    Discrete models return ``{vertex: probability vector}``; Gaussian models
    return ``{vertex: (mean, variance)}``.
    """
    if isinstance(p, GaussianParams):
        x = np.asarray(row, dtype=float).reshape(-1)
        if x.shape[0] != p.m:
            raise DataError(f"expected {p.m} observed values")
        z = {i: np.array([x[i - 1] / p.scale(i)]) for i in p.tree.leaves}
        if all(abs(r) < 1.0 for r in p.edge_corr.values()):
            post = inference.gaussian_bp(p.tree.rooted(), p.edge_corr, z)
            return {v: (float(mu[0]), float(var)) for v, (mu, var) in post.items()}
        # perfectly correlated edges make the precision undefined; condition on the covariance
        R, verts = gaussian_vertex_correlations(p)
        idx = {v: k for k, v in enumerate(verts)}
        obs = [idx[i] for i in p.tree.leaves]
        hid = [idx[h] for h in p.tree.hidden]
        Z = np.array([[z[i][0] for i in p.tree.leaves]])
        mu, cov, _ = inference.gaussian_condition(R, obs, hid, Z)
        return {h: (float(mu[0, k]), float(cov[k, k])) for k, h in enumerate(p.tree.hidden)}
    ev, _ = _leaf_evidence(p, row)
    res = inference.sum_product(p.view, p.root_dist, p.transitions, ev, p.d, 1, posteriors=True)
    if np.isneginf(res.loglik[0]):
        raise DegenerateError("observation has probability zero under the model")
    return {h: res.node[h][0] for h in p.tree.hidden}


def map_hidden(p: MarkovParams, row) -> tuple[dict, float]:
    """Max-product: jointly most probable hidden states and the joint log-probability."""
    ev, _ = _leaf_evidence(p, row)
    states, logp = inference.max_product(p.view, p.root_dist, p.transitions, {k: int(v[0]) for k, v in ev.items()}, p.d)
    return {h: states[h] for h in p.tree.hidden}, logp


def leaf_joint(p: MarkovParams) -> np.ndarray:
    """Full joint probability tensor over the leaves, axes in label order."""
    grids = np.indices((p.d,) * p.m).reshape(p.m, -1).T
    return np.exp(row_logliks(p, grids)).reshape((p.d,) * p.m)


# ---------------------------------------------------------------------------
# state-space regularity
# ---------------------------------------------------------------------------


def regularity_check(tree: LeafLabeledTree, state_spaces) -> bool:
    """Every unobserved vertex has fewer states than prod(neighbours) / max(neighbours)."""
    for v in tree.hidden:
        sizes = [int(state_spaces[u]) for u in tree.neighbors(v)]
        if not int(state_spaces[v]) * max(sizes) < math.prod(sizes):
            return False
    return True


def saturation_bound(observed_sizes) -> int:
    """Smallest hidden state count at which a latent class model must be saturated."""
    sizes = [int(s) for s in observed_sizes]
    total = math.prod(sizes)
    return -(-total // max(sizes))


def path_tau_check(p: MarkovParams, u: int, v: int) -> float:
    """Product of edge taus along the path ``u..v`` (equals :func:`tau` on any pair)."""
    out = 1.0
    for a, b in path_between(p.tree, u, v):
        out *= tau_edge(p, a, b)
    return out
