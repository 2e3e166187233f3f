"""EM for latent tree models on a fixed tree, BIC scoring and random restarts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import inference
from .data import Dataset
from .errors import DataError, DegenerateError
from .models import (
    GaussianParams,
    MarkovParams,
    gaussian_loglik_from_moments,
    gaussian_vertex_covariance,
    loglik,
)
from .streams import generator, ordered_map
from .tree import LeafLabeledTree, edge_key

PSEUDOCOUNT = 1e-6
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500


@dataclass
class ScoredModel:
    model: GaussianParams | MarkovParams
    loglik: float
    dim: int
    bic: float
    n: float
    trace: list = field(default_factory=list)
    status: str = "ok"
    seed: int | None = None

    @property
    def tree(self) -> LeafLabeledTree:
        return self.model.tree


def model_dimension(model) -> int:
    """Parameter count: ``m + |E|`` (Gaussian) or ``(d-1) + |E| d (d-1)`` (Markov)."""
    E = len(model.tree.edges)
    if isinstance(model, GaussianParams):
        return model.m + E
    d = model.d
    return (d - 1) + E * d * (d - 1)


def bic_score(model, data: Dataset, ll: float | None = None, trace=None) -> ScoredModel:
    """BIC = loglik - dim/2 * log n.

    A hidden vertex of degree below three violates (A1); the score is still
    returned with ``status = "dimension-unreliable"``.
    """
    ll = loglik(model, data) if ll is None else ll
    n = data.total_weight
    dim = model_dimension(model)
    bic = ll - 0.5 * dim * math.log(n) if n > 0 else ll
    status = "ok" if all(model.tree.degree(h) >= 3 for h in model.tree.hidden) else "dimension-unreliable"
    return ScoredModel(model, ll, dim, bic, n, list(trace) if trace is not None else [ll], status)


# ---------------------------------------------------------------------------
# discrete E/M steps
# ---------------------------------------------------------------------------


def _discrete_evidence(p: MarkovParams, data: Dataset):
    if not data.discrete:
        raise DataError("Markov model needs discrete data")
    if data.states > p.d:
        raise DataError(f"data has {data.states} states, model has {p.d}")
    X, w = data.compressed
    return {i: X[:, i - 1] for i in p.tree.leaves}, w, X.shape[0]


def discrete_estep(p: MarkovParams, data: Dataset):
    """Observed loglik plus expected root counts and directed-edge pair counts."""
    ev, w, n = _discrete_evidence(p, data)
    res = inference.sum_product(p.view, p.root_dist, p.transitions, ev, p.d, n, posteriors=True, pairwise=True)
    bad = np.isneginf(res.loglik) & (w > 0)
    if np.any(bad):
        X, _ = data.compressed
        row = int(np.flatnonzero(np.all(data.values == X[np.argmax(bad)], axis=1))[0])
        raise DegenerateError("observation has probability zero under the current parameters", row=row)
    ll = float(np.dot(w[w > 0], res.loglik[w > 0]))
    root_counts = w @ res.node[p.root]
    pair_counts = {e: np.einsum("n,nab->ab", w, P) for e, P in res.pair.items()}
    return ll, root_counts, pair_counts


def discrete_mstep(p: MarkovParams, root_counts, pair_counts, pseudo=PSEUDOCOUNT) -> MarkovParams:
    pi = root_counts + pseudo
    trans = {}
    for e, N in pair_counts.items():
        N = N + pseudo
        trans[e] = N / N.sum(axis=1, keepdims=True)
    return MarkovParams(p.tree, pi / pi.sum(), trans)


# ---------------------------------------------------------------------------
# Gaussian E/M steps
# ---------------------------------------------------------------------------


def gaussian_expected_moments(p: GaussianParams, S_xx: np.ndarray):
    """Expected second moments over all vertices given the observed second moment.

    Returns ``(S, verts, C)`` where ``S`` and the model covariance ``C`` are
    indexed by ``verts``.
    """
    C, verts = gaussian_vertex_covariance(p)
    idx = {v: k for k, v in enumerate(verts)}
    obs = [idx[i] for i in p.tree.leaves]
    hid = [idx[h] for h in p.tree.hidden]
    S = np.zeros_like(C)
    S[np.ix_(obs, obs)] = S_xx
    if hid:
        _, cond, B = inference.gaussian_condition(C, obs, hid, np.zeros((0, len(obs))))
        S_hx = B @ S_xx
        S[np.ix_(hid, obs)] = S_hx
        S[np.ix_(obs, hid)] = S_hx.T
        S[np.ix_(hid, hid)] = cond + B @ S_xx @ B.T
    return S, verts, C


def gaussian_estep(p: GaussianParams, data: Dataset):
    if data.discrete:
        raise DataError("Gaussian model needs continuous data")
    S_xx = data.second_moment
    S, verts, C = gaussian_expected_moments(p, S_xx)
    idx = {v: k for k, v in enumerate(verts)}
    obs = [idx[i] for i in p.tree.leaves]
    ll = gaussian_loglik_from_moments(C[np.ix_(obs, obs)], S_xx, data.total_weight)
    if not math.isfinite(ll):
        raise DegenerateError("leaf covariance is singular under the current parameters")
    return ll, S, idx


def gaussian_mstep(p: GaussianParams, S, idx) -> GaussianParams:
    corr = {}
    for u, v in p.tree.edges:
        a, b = idx[u], idx[v]
        corr[(u, v)] = float(np.clip(S[a, b] / math.sqrt(S[a, a] * S[b, b]), -1.0, 1.0))
    var = {i: float(S[idx[i], idx[i]]) for i in p.tree.leaves}
    return GaussianParams(p.tree, corr, var)


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def em_step(p, data, pseudo=PSEUDOCOUNT):
    """One EM iteration. Returns ``(loglik at p, updated params)``."""
    if isinstance(p, GaussianParams):
        ll, S, idx = gaussian_estep(p, data)
        return ll, gaussian_mstep(p, S, idx)
    ll, rc, pc = discrete_estep(p, data)
    return ll, discrete_mstep(p, rc, pc, pseudo)


def observed_loglik(p, data) -> float:
    if isinstance(p, GaussianParams):
        return gaussian_estep(p, data)[0]
    return loglik(p, data)


def converged(old: float, new: float, tol: float) -> bool:
    return new - old < tol * (1.0 + abs(old))


def em_fixed_tree(
    tree: LeafLabeledTree,
    data: Dataset,
    init=None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    seed: int | None = None,
    pseudocount: float = PSEUDOCOUNT,
) -> ScoredModel:
    """Maximize the observed likelihood over parameters on a fixed tree.

    ``init`` is a parameter object on ``tree``; when omitted a random start
    is drawn from ``seed``. The returned trace lists the observed loglik of
    every visited parameter, starting with ``init``. ``pseudocount`` smooths
    discrete expected counts; pass 0 for the unsmoothed update.
    """
    if init is None:
        init = random_init(tree, data, np.random.default_rng(seed))
    if init.tree.edges != tree.edges:
        raise DataError("initial parameters live on a different tree")
    p = init
    ll, nxt = em_step(p, data, pseudocount)
    trace = [ll]
    for _ in range(max_iter):
        ll_new, after = em_step(nxt, data, pseudocount)
        trace.append(ll_new)
        p, nxt = nxt, after
        if converged(ll, ll_new, tol):
            ll = ll_new
            break
        ll = ll_new
    out = bic_score(p, data, ll=trace[-1], trace=trace)
    out.seed = seed
    return out


def random_init(tree: LeafLabeledTree, data: Dataset, rng: np.random.Generator):
    """Random starting parameters matched to the data type."""
    if data.discrete:
        d = data.states
        view = tree.rooted()
        pi = rng.dirichlet(np.full(d, 5.0))
        trans = {}
        for e in view.directed_edges():
            lam = rng.uniform(0.3, 0.7)
            R = rng.dirichlet(np.ones(d), size=d)
            trans[e] = lam * np.eye(d) + (1 - lam) * R
        return MarkovParams(tree, pi, trans)
    S = data.second_moment
    corr = {e: float(rng.uniform(0.3, 0.9)) for e in tree.sorted_edges}
    var = {i: float(S[i - 1, i - 1]) for i in tree.leaves}
    return GaussianParams(tree, corr, var)


def best_of(results: list[ScoredModel]) -> ScoredModel:
    """Highest final loglik; ties go to the earliest restart."""
    order = sorted(range(len(results)), key=lambda k: (-results[k].loglik, k))
    return results[order[0]]


def fit_em(
    tree: LeafLabeledTree,
    data: Dataset,
    restarts: int = 10,
    seed: int = 0,
    init=None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    threads: int | None = None,
) -> ScoredModel:
    """EM from ``restarts`` seeded random starts (plus ``init`` if given); keeps the best."""

    def run(k):
        if k < 0:
            return em_fixed_tree(tree, data, init, max_iter, tol, seed=None)
        rng = generator(seed, "em-restart", k)
        out = em_fixed_tree(tree, data, random_init(tree, data, rng), max_iter, tol)
        out.seed = k
        return out

    jobs = ([-1] if init is not None else []) + list(range(restarts))
    if not jobs:
        raise DataError("need at least one restart or an initial parameter")
    return best_of(ordered_map(run, jobs, threads))


def edge_params(model) -> dict:
    """Per-edge scalar summary: correlation (Gaussian) or tau (Markov)."""
    if isinstance(model, GaussianParams):
        return dict(model.edge_corr)
    from .models import edge_taus

    return edge_taus(model)


__all__ = [
    "ScoredModel",
    "bic_score",
    "model_dimension",
    "em_fixed_tree",
    "fit_em",
    "random_init",
    "edge_key",
]
