"""Exact inference on trees: sum-product, max-product and Gaussian belief propagation.

All routines work on a :class:`~arbor.tree.RootedView` and accept evidence at
any subset of vertices, so they serve both leaf-labeled models and the
intermediate trees of structural EM (where observed variables may be
internal). Discrete passes are vectorized over rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DiscretePass:
    loglik: np.ndarray  # (n,), -inf for zero-probability rows
    node: dict | None = None  # vertex -> (n, d) posterior
    pair: dict | None = None  # (parent, child) -> (n, d, d) posterior


def _normalize_rows(a):
    s = a.sum(axis=tuple(range(1, a.ndim)))
    safe = np.where(s > 0, s, 1.0)
    return a / safe.reshape((-1,) + (1,) * (a.ndim - 1)), s


def sum_product(view, root_dist, trans, evidence, d, n, posteriors=False, pairwise=False):
    """Upward-downward pass.

    ``evidence`` maps vertex -> (n,) int array of observed states; ``trans``
    maps ``(parent, child)`` -> d x d row-stochastic matrix. Messages are
    normalized at every step and the scales accumulated in log space.
    """
    order, parent, children = view.order, view.parent, view.children
    ev = {}
    for v, states in evidence.items():
        e = np.zeros((n, d))
        e[np.arange(n), states] = 1.0
        ev[v] = e
    lam = {}
    msg = {}
    logc = np.zeros(n)
    with np.errstate(divide="ignore"):
        for v in reversed(order):
            L = ev[v].copy() if v in ev else np.ones((n, d))
            for c in children[v]:
                L *= msg[c]
            lam[v] = L
            if v != view.root:
                mm, s = _normalize_rows(L @ trans[(parent[v], v)].T)
                logc += np.log(s)
                msg[v] = mm
        z = lam[view.root] @ root_dist
        loglik = np.log(z) + logc
    out = DiscretePass(loglik)
    if not (posteriors or pairwise):
        return out
    alpha = {view.root: np.broadcast_to(root_dist, (n, d)).copy()}
    node = {}
    pair = {} if pairwise else None
    for v in order:
        base = alpha[v] * ev[v] if v in ev else alpha[v]
        node[v] = _normalize_rows(alpha[v] * lam[v])[0]
        kids = children[v]
        for c in kids:
            beta = base.copy()
            for c2 in kids:
                if c2 != c:
                    beta *= msg[c2]
            M = trans[(v, c)]
            alpha[c] = _normalize_rows(beta @ M)[0]
            if pairwise:
                joint = beta[:, :, None] * M[None, :, :] * lam[c][:, None, :]
                pair[(v, c)] = _normalize_rows(joint)[0]
    out.node = node
    out.pair = pair
    return out


def max_product(view, root_dist, trans, evidence, d):
    """Jointly most probable completion of a single observation.

    ``evidence`` maps vertex -> observed state. Returns ``(states, logp)``
    where ``states`` covers every vertex; ties go to the lowest state.
    """
    order, parent, children = view.order, view.parent, view.children
    with np.errstate(divide="ignore"):
        logM = {k: np.log(M) for k, M in trans.items()}
        score = {}
        back = {}
        for v in reversed(order):
            s = np.zeros(d)
            if v in evidence:
                s = np.full(d, -np.inf)
                s[evidence[v]] = 0.0
            for c in children[v]:
                cand = logM[(v, c)] + score[c][None, :]
                back[c] = cand.argmax(axis=1)
                s = s + cand.max(axis=1)
            score[v] = s
        top = np.log(root_dist) + score[view.root]
    states = {view.root: int(top.argmax())}
    for v in order[1:]:
        states[v] = int(back[v][states[parent[v]]])
    return states, float(top.max())


def gaussian_bp(view, edge_corr, observed):
    """Posterior means and variances of unobserved standardized vertices.

    ``edge_corr`` maps sorted edge -> correlation (|rho| < 1); ``observed``
    maps vertex -> (n,) array of standardized values. Every vertex has unit
    variance a priori. Returns ``{vertex: (mean (n,), variance)}``.
    """
    order, parent, children = view.order, view.parent, view.children
    n = len(next(iter(observed.values()))) if observed else 1
    Jd = {v: 0.0 for v in order}
    Jo = {}
    Jd[view.root] += 1.0
    for v in order[1:]:
        p = parent[v]
        r = edge_corr[(p, v) if p < v else (v, p)]
        q = 1.0 - r * r
        Jd[v] += 1.0 / q
        Jd[p] += r * r / q
        Jo[(p, v)] = Jo[(v, p)] = -r / q
    h = {v: np.zeros(n) for v in order if v not in observed}
    for (a, b), Jab in Jo.items():
        if a in h and b in observed:
            h[a] = h[a] - Jab * observed[b]
    up_J, up_h = {}, {}
    hat_J, hat_h = {}, {}
    for v in reversed(order):
        if v in observed:
            continue
        J, hh = Jd[v], h[v].copy()
        for c in children[v]:
            if c in up_J:
                J += up_J[c]
                hh += up_h[c]
        hat_J[v], hat_h[v] = J, hh
        p = parent[v]
        if p is not None and p not in observed:
            up_J[v] = -Jo[(p, v)] ** 2 / J
            up_h[v] = -Jo[(p, v)] * hh / J
    tot_J, tot_h = {}, {}
    for v in order:
        if v in observed:
            continue
        p = parent[v]
        if p is not None and p not in observed:
            ex_J = tot_J[p] - up_J[v]
            ex_h = tot_h[p] - up_h[v]
            tot_J[v] = hat_J[v] - Jo[(p, v)] ** 2 / ex_J
            tot_h[v] = hat_h[v] - Jo[(p, v)] * ex_h / ex_J
        else:
            tot_J[v], tot_h[v] = hat_J[v], hat_h[v]
    return {v: (tot_h[v] / tot_J[v], 1.0 / tot_J[v]) for v in tot_J}


def gaussian_condition(C, obs, hid, Z):
    """Condition a zero-mean Gaussian with covariance ``C`` on rows ``Z``.

    ``obs``/``hid`` index into ``C``; ``Z`` is (n, len(obs)). Returns the
    (n, len(hid)) conditional means, the conditional covariance and the
    regression matrix ``B`` with ``mean = Z @ B.T``.
    """
    Coo = C[np.ix_(obs, obs)]
    Cho = C[np.ix_(hid, obs)]
    B = np.linalg.solve(Coo, Cho.T).T
    cov = C[np.ix_(hid, hid)] - B @ Cho.T
    return Z @ B.T, cov, B
