"""Independent reference computations for the test suite.

Each oracle recomputes a quantity by brute force (enumeration, dense linear
algebra, series expansion) without going through the package's message
passing or path-product code.
"""

import itertools
from collections import deque

import numpy as np

from arbor.models import GaussianParams, MarkovParams
from arbor.tree import edge_key, random_trivalent_tree

# acceptance summary lines, printed by conftest at the end of the session
RESULTS = []


def record(number, ok, detail=""):
    RESULTS.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


# ---------------------------------------------------------------------------
# random models
# ---------------------------------------------------------------------------


def random_tree(rng, m, trivalent=True):
    """Random leaf-labeled tree; non-trivalent variants get a contracted inner edge."""
    t = random_trivalent_tree(m, rng)
    if trivalent or m < 4:
        return t
    from arbor.tree import contract_edge

    inner = t.inner_edges()
    return contract_edge(t, inner[int(rng.integers(len(inner)))])


def random_markov(rng, tree, d, strength=None):
    view = tree.rooted()
    pi = rng.dirichlet(np.ones(d) * 2)
    trans = {}
    for e in view.directed_edges():
        if strength is None:
            trans[e] = rng.dirichlet(np.ones(d), size=d)
        else:
            lam = rng.uniform(*strength)
            trans[e] = lam * np.eye(d) + (1 - lam) * rng.dirichlet(np.ones(d), size=d)
    return MarkovParams(tree, pi, trans)


def random_gaussian(rng, tree, lo=0.2, hi=0.9, signs=True):
    corr = {}
    for e in tree.sorted_edges:
        r = rng.uniform(lo, hi)
        corr[e] = -r if signs and rng.random() < 0.3 else r
    var = {i: float(rng.uniform(0.5, 3.0)) for i in tree.leaves}
    return GaussianParams(tree, corr, var)


# ---------------------------------------------------------------------------
# discrete enumeration
# ---------------------------------------------------------------------------


def full_joint(p: MarkovParams):
    """Joint tensor over every vertex (axes follow ``p.tree.vertices``) by direct products."""
    verts = list(p.tree.vertices)
    pos = {v: k for k, v in enumerate(verts)}
    d = p.d
    grid = np.indices((d,) * len(verts)).reshape(len(verts), -1)
    prob = p.root_dist[grid[pos[p.root]]].copy()
    for (a, b), M in p.transitions.items():
        prob *= M[grid[pos[a]], grid[pos[b]]]
    return prob.reshape((d,) * len(verts)), verts


def marginal(P, verts, keep):
    """Marginal over ``keep`` (in that order) of a tensor with axes ``verts``."""
    axes = tuple(k for k, v in enumerate(verts) if v not in keep)
    Q = P.sum(axis=axes)
    remaining = [v for v in verts if v in keep]
    return np.transpose(Q, [remaining.index(v) for v in keep])


def brute_posteriors(p: MarkovParams, row):
    P, verts = full_joint(p)
    idx = tuple(int(row[v - 1]) if 1 <= v <= p.m else slice(None) for v in verts)
    Q = P[idx]
    Q = Q / Q.sum()
    hid = [v for v in verts if v > p.m]
    out = {}
    for k, h in enumerate(hid):
        out[h] = Q.sum(axis=tuple(j for j in range(len(hid)) if j != k))
    return out


def brute_loglik(p: MarkovParams, X):
    P, verts = full_joint(p)
    L = marginal(P, verts, list(p.tree.leaves))
    return float(sum(np.log(L[tuple(int(x) for x in row)]) for row in X))


def det_tau(P):
    P = np.asarray(P)
    return np.linalg.det(P) / np.sqrt(np.prod(P.sum(1)) * np.prod(P.sum(0)))


# ---------------------------------------------------------------------------
# Gaussian dense oracles
# ---------------------------------------------------------------------------


def full_covariance(p: GaussianParams):
    """Covariance over all vertices from the structural equations ``X = B X + D e``."""
    verts = list(p.tree.vertices)
    pos = {v: k for k, v in enumerate(verts)}
    view = p.tree.rooted()
    k = len(verts)
    B = np.zeros((k, k))
    D = np.zeros(k)
    D[pos[view.root]] = 1.0
    for a, b in view.directed_edges():
        r = p.edge_corr[edge_key(a, b)]
        B[pos[b], pos[a]] = r
        D[pos[b]] = np.sqrt(1 - r * r)
    A = np.linalg.solve(np.eye(k) - B, np.diag(D))
    S = A @ A.T
    s = np.array([np.sqrt(p.leaf_var[v]) if 1 <= v <= p.m else 1.0 for v in verts])
    return S * np.outer(s, s), verts


def gaussian_density_loglik(C, X):
    from scipy.stats import multivariate_normal

    return float(multivariate_normal(mean=np.zeros(C.shape[0]), cov=C).logpdf(X).sum())


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------


def bfs_path(edges, i, j):
    adj = {}
    for u, v in edges:
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    prev = {i: None}
    q = deque([i])
    while q:
        u = q.popleft()
        for w in adj[u]:
            if w not in prev:
                prev[w] = u
                q.append(w)
    path = [j]
    while path[-1] != i:
        path.append(prev[path[-1]])
    return path[::-1]


def bfs_distance(edges, lengths, i, j):
    path = bfs_path(edges, i, j)
    return sum(lengths[edge_key(a, b)] for a, b in zip(path, path[1:]))


def brute_quartet(tree, quad):
    """Pairing whose two paths share no vertex, or None."""
    a, b, c, d = quad
    for (x, y), (z, w) in (((a, b), (c, d)), ((a, c), (b, d)), ((a, d), (b, c))):
        if not set(bfs_path(tree.edges, x, y)) & set(bfs_path(tree.edges, z, w)):
            return ((x, y), (z, w))
    return None


def prufer_trees(m):
    """All labeled trees on ``1..m`` via Pruefer sequences."""
    if m == 2:
        yield [(1, 2)]
        return
    for seq in itertools.product(range(1, m + 1), repeat=m - 2):
        degree = [1] * (m + 1)
        for x in seq:
            degree[x] += 1
        edges = []
        for x in seq:
            leaf = min(v for v in range(1, m + 1) if degree[v] == 1)
            edges.append(tuple(sorted((leaf, x))))
            degree[leaf] -= 1
            degree[x] -= 1
        u, v = [w for w in range(1, m + 1) if degree[w] == 1]
        edges.append((u, v))
        yield edges


def random_labeled_tree(rng, n):
    """Uniform random tree on ``1..n`` from a random Pruefer sequence."""
    if n == 2:
        return [(1, 2)]
    seq = list(rng.integers(1, n + 1, size=n - 2))
    degree = [1] * (n + 1)
    for x in seq:
        degree[x] += 1
    edges = []
    for x in seq:
        leaf = min(v for v in range(1, n + 1) if degree[v] == 1)
        edges.append((leaf, int(x)))
        degree[leaf] -= 1
        degree[x] -= 1
    u, v = [w for w in range(1, n + 1) if degree[w] == 1]
    edges.append((u, v))
    return edges


# ---------------------------------------------------------------------------
# misc numerics
# ---------------------------------------------------------------------------


def taylor_expm(A, terms=80):
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


def exact_discrete_dataset(p: MarkovParams):
    """Every leaf configuration as a row weighted by its model probability."""
    from arbor.data import Dataset
    from arbor.models import leaf_joint

    L = leaf_joint(p)
    X = np.indices(L.shape).reshape(p.m, -1).T
    return Dataset(X, "discrete", p.d, weights=L.reshape(-1))


def exact_gaussian_dataset(p: GaussianParams):
    """Weighted rows whose second moment equals the model leaf covariance."""
    from arbor.data import Dataset
    from arbor.models import gaussian_leaf_covariance

    C = gaussian_leaf_covariance(p)
    L = np.linalg.cholesky(C)
    m = C.shape[0]
    return Dataset(np.sqrt(m) * L.T, "continuous", weights=np.full(m, 1.0 / m))
