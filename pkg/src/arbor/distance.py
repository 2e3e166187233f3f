"""Distance-based structure and parameter recovery.

Sample correlations (Gaussian) or sample taus (discrete) become additive
distances ``-log|value|``; Neighbor-Joining turns those into a tree with
edge lengths, and ``exp(-length)`` gives back edge-parameter magnitudes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import Dataset
from .errors import (
    DataError,
    DegenerateError,
    InconsistentInputError,
    NonIdentifiableError,
    NumericalError,
)
from .models import GaussianParams, MarkovParams
from .tree import LeafLabeledTree, Pairing, edge_key, pairings

GAUSSIAN = "gaussian-correlation"
MARKOV = "markov-tau"


@dataclass(frozen=True, eq=False)
class EmpiricalSecondOrder:
    kind: str
    values: np.ndarray
    n: float

    def __post_init__(self):
        V = np.asarray(self.values, dtype=float)
        if V.ndim != 2 or V.shape[0] != V.shape[1] or not np.allclose(V, V.T, atol=1e-12, rtol=0):
            raise DataError("second-order matrix must be square and symmetric")
        if np.any(np.abs(V) > 1.0 + 1e-12):
            raise DataError("second-order entries must lie in [-1, 1]")
        V = np.clip((V + V.T) / 2, -1.0, 1.0)
        np.fill_diagonal(V, 1.0)
        object.__setattr__(self, "values", V)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, ij):
        i, j = ij
        return self.values[i - 1, j - 1]


def _kind(kind: str) -> str:
    aliases = {"gaussian": GAUSSIAN, "markov": MARKOV, GAUSSIAN: GAUSSIAN, MARKOV: MARKOV}
    if kind not in aliases:
        raise DataError(f"unknown second-order kind {kind!r}")
    return aliases[kind]


def pair_tables(data: Dataset) -> dict:
    """Empirical joint tables ``{(i, j): d x d}`` for every leaf pair ``i < j``."""
    if not data.discrete:
        raise DataError("pairwise tables need discrete data")
    d = data.states
    X = data.values
    w = data.row_weights
    tot = w.sum()
    out = {}
    for a, b in itertools.combinations(range(data.m), 2):
        flat = np.bincount(X[:, a] * d + X[:, b], weights=w, minlength=d * d)
        out[(a + 1, b + 1)] = flat.reshape(d, d) / tot
    return out


def taus_from_tables(tables: dict, m: int) -> np.ndarray:
    T = np.eye(m)
    for (i, j), P in tables.items():
        pu, pv = P.sum(axis=1), P.sum(axis=0)
        denom = np.prod(pu) * np.prod(pv)
        if not denom > 0:
            bad = i if np.prod(pu) <= 0 else j
            raise DegenerateError(f"column {bad} does not visit every state; tau undefined")
        T[i - 1, j - 1] = T[j - 1, i - 1] = np.linalg.det(P) / math.sqrt(denom)
    return T


def empirical_second_order(data: Dataset, kind: str = "gaussian") -> EmpiricalSecondOrder:
    """Sample correlations, or sample taus from empirical pairwise tables."""
    kind = _kind(kind)
    if data.total_weight <= 0 or data.n < 2:
        raise DataError("need at least two rows")
    if kind == GAUSSIAN:
        X = data.values.astype(float)
        w = data.row_weights / data.row_weights.sum()
        Xc = X - w @ X
        S = (Xc * w[:, None]).T @ Xc
        sd = np.sqrt(np.diag(S))
        if np.any(sd <= 0):
            raise DegenerateError(f"column {int(np.argmin(sd)) + 1} is constant")
        R = S / np.outer(sd, sd)
        return EmpiricalSecondOrder(GAUSSIAN, np.clip((R + R.T) / 2, -1.0, 1.0), data.total_weight)
    tables = pair_tables(data)
    return EmpiricalSecondOrder(MARKOV, np.clip(taus_from_tables(tables, data.m), -1, 1), data.total_weight)


def second_order_from_model(p) -> EmpiricalSecondOrder:
    """Exact model correlations (Gaussian) or taus (Markov) as an EmpiricalSecondOrder."""
    from .models import gaussian_leaf_correlations, tau_matrix

    if isinstance(p, GaussianParams):
        return EmpiricalSecondOrder(GAUSSIAN, gaussian_leaf_correlations(p), math.inf)
    return EmpiricalSecondOrder(MARKOV, tau_matrix(p), math.inf)


def distances_from_second_order(s: EmpiricalSecondOrder) -> np.ndarray:
    """``-log|value|`` entrywise; zero values map to ``+inf``."""
    with np.errstate(divide="ignore"):
        D = -np.log(np.abs(s.values))
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


# ---------------------------------------------------------------------------
# Neighbor-Joining
# ---------------------------------------------------------------------------


class NJResult(NamedTuple):
    tree: LeafLabeledTree
    lengths: dict
    clamped: tuple  # edges whose negative length estimate was set to 0


def neighbor_joining(D) -> NJResult:
    """Saitou-Nei Neighbor-Joining on a leaf distance matrix.

    Row ``i`` of ``D`` is leaf ``i + 1``. Ties in the Q-criterion go to the
    lexicographically smallest active pair. New vertices are numbered
    ``m+1, m+2, ...`` in joining order; the last one is the centre of the
    final three-way join.
    """
    D = np.array(D, dtype=float)
    m = D.shape[0]
    if D.ndim != 2 or D.shape[1] != m:
        raise DataError("distance matrix must be square")
    if m < 3:
        raise DataError("Neighbor-Joining needs at least three leaves")
    if not np.all(np.isfinite(D)):
        raise NumericalError(
            "infinite distance (zero correlation): the data split into a forest, which is not supported"
        )
    nodes = list(range(1, m + 1))
    active = D.copy()
    nxt = m + 1
    edges = {}
    while len(nodes) > 3:
        r = len(nodes)
        R = active.sum(axis=1)
        Q = (r - 2) * active - R[:, None] - R[None, :]
        iu = np.triu_indices(r, 1)
        vals = Q[iu]
        k = int(np.flatnonzero(vals == vals.min())[0])
        a, b = int(iu[0][k]), int(iu[1][k])
        dab = active[a, b]
        la = 0.5 * dab + (R[a] - R[b]) / (2.0 * (r - 2))
        lb = dab - la
        u = nxt
        nxt += 1
        edges[edge_key(nodes[a], u)] = la
        edges[edge_key(nodes[b], u)] = lb
        dnew = 0.5 * (active[a] + active[b] - dab)
        keep = [x for x in range(r) if x not in (a, b)]
        new = np.zeros((r - 1, r - 1))
        new[: r - 2, : r - 2] = active[np.ix_(keep, keep)]
        new[r - 2, : r - 2] = new[: r - 2, r - 2] = dnew[keep]
        active = new
        nodes = [nodes[x] for x in keep] + [u]
    c = nxt
    (x, y, z) = nodes
    dxy, dxz, dyz = active[0, 1], active[0, 2], active[1, 2]
    edges[edge_key(x, c)] = 0.5 * (dxy + dxz - dyz)
    edges[edge_key(y, c)] = 0.5 * (dxy + dyz - dxz)
    edges[edge_key(z, c)] = 0.5 * (dxz + dyz - dxy)
    clamped = tuple(sorted(e for e, v in edges.items() if v < 0))
    lengths = {e: max(0.0, float(v)) for e, v in edges.items()}
    return NJResult(LeafLabeledTree(set(lengths), m), lengths, clamped)


# ---------------------------------------------------------------------------
# quartets and parameter recovery
# ---------------------------------------------------------------------------


def quartet_products(s: EmpiricalSecondOrder, quad) -> list[tuple[Pairing, float]]:
    """``|s_ij s_kl|`` for the three pairings of ``quad``."""
    out = []
    for (a, b), (c, d) in pairings(quad):
        out.append((((a, b), (c, d)), abs(s[a, b] * s[c, d])))
    return out


def quartet_select(s: EmpiricalSecondOrder, quad, tol: float = 0.0) -> Pairing | None:
    """Pairing with the largest ``|s_ij s_kl|``; ``None`` (star) if all three agree within ``tol``.

    Agreement is relative: ``max - min <= tol * max``.
    """
    quad = tuple(int(x) for x in quad)
    if len(set(quad)) != 4:
        raise DataError("quartet needs four distinct indices")
    prods = quartet_products(s, quad)
    vals = [v for _, v in prods]
    hi, lo = max(vals), min(vals)
    if hi - lo <= tol * hi:
        return None
    return prods[vals.index(hi)][0]


def edge_correlations_from_lengths(t: LeafLabeledTree, lengths, leaf_var=None) -> GaussianParams:
    """Edge-correlation magnitudes ``exp(-d_uv)``; signs stay unresolved."""
    if any(v < 0 for v in lengths.values()):
        raise DataError("edge lengths must be nonnegative")
    corr = {edge_key(*e): math.exp(-float(v)) for e, v in lengths.items()}
    return GaussianParams(t, corr, leaf_var or {}, magnitudes_only=True)


def edge_taus_from_lengths(lengths) -> dict:
    return {edge_key(*e): math.exp(-float(v)) for e, v in lengths.items()}


def triple_recover(r12: float, r13: float, r23: float) -> tuple[float, float, float]:
    """Star-tree edge correlations reproducing three observed correlations.

    The sign of the first is fixed positive; the others follow.
    """
    if r12 == 0 or r13 == 0 or r23 == 0:
        raise NonIdentifiableError(
            "a zero observed correlation leaves a positive-dimensional set of edge parameters"
        )
    sq = (r12 * r13 / r23, r12 * r23 / r13, r13 * r23 / r12)
    eps = 1e-12
    if any(not (0.0 < v <= 1.0 + eps) for v in sq):
        raise InconsistentInputError(
            f"correlations ({r12}, {r13}, {r23}) are not realizable on a 3-leaf star"
        )
    r1 = math.sqrt(min(sq[0], 1.0))
    return r1, r12 / r1, r13 / r1


def symmetric_transition(d: int, tau_value: float) -> np.ndarray:
    """Equal-off-diagonal stochastic matrix with determinant ``tau_value``."""
    if d < 2:
        raise DataError("need at least two states")
    if not -1.0 <= tau_value <= 1.0:
        raise InconsistentInputError(f"tau {tau_value} outside [-1, 1]")
    if d % 2 == 1 and tau_value < 0:
        raise InconsistentInputError(f"negative tau unreachable with symmetric {d}x{d} matrices")
    # the nontrivial eigenvalue has multiplicity d - 1
    lam = math.copysign(abs(tau_value) ** (1.0 / (d - 1)), tau_value)
    if lam < -1.0 / (d - 1) - 1e-15:
        raise InconsistentInputError(
            f"tau {tau_value} below the smallest determinant {(-1.0 / (d - 1)) ** (d - 1)} "
            f"of a symmetric {d}x{d} stochastic matrix"
        )
    off = (1.0 - lam) / d
    M = np.full((d, d), off)
    np.fill_diagonal(M, 1.0 - (d - 1) * off)
    return np.clip(M, 0.0, 1.0)


def symmetric_discrete_recover(t: LeafLabeledTree, taus: dict, d: int) -> MarkovParams:
    """Symmetric model (uniform root, equal off-diagonals) with the given edge taus."""
    taus = {edge_key(*e): float(v) for e, v in taus.items()}
    if set(taus) != set(t.edges):
        raise DataError("one tau per tree edge required")
    bad = [e for e, v in taus.items() if not 0 < abs(v) <= 1.0]
    if bad:
        raise InconsistentInputError(f"|tau| must lie in (0, 1] on {bad}")
    trans = {(a, b): symmetric_transition(d, taus[edge_key(a, b)]) for a, b in t.rooted().directed_edges()}
    return MarkovParams(t, np.full(d, 1.0 / d), trans)
