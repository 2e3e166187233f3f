"""Tetrad residuals, quartet inequalities and edge-flattening rank distances."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .distance import EmpiricalSecondOrder, empirical_second_order
from .errors import DataError
from .streams import generator, ordered_map
from .tree import LeafLabeledTree, edge_split, quartet_topology

FLATTEN_LIMIT = 4096


@dataclass
class QuartetRecord:
    quartet: tuple
    pairing: tuple
    residual: float
    scale: float
    band: tuple | None = None

    def to_dict(self):
        out = {
            "type": "quartet",
            "quartet": list(self.quartet),
            "pairing": [list(x) for x in self.pairing],
            "residual": self.residual,
            "scale": self.scale,
        }
        if self.band is not None:
            out["band"] = list(self.band)
        return out


@dataclass
class SplitRecord:
    split: tuple
    singular_values: list
    rank_distance: float

    def to_dict(self):
        return {
            "type": "split",
            "split": [list(s) for s in self.split],
            "singular_values": list(self.singular_values),
            "rank_distance": self.rank_distance,
        }


@dataclass
class InvariantReport:
    quartets: list = field(default_factory=list)
    splits: list = field(default_factory=list)

    def records(self):
        return [q.to_dict() for q in self.quartets] + [s.to_dict() for s in self.splits]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())

    def summary_table(self) -> str:
        lines = []
        if self.quartets:
            lines.append(f"{'quartet':<14}{'split':<10}{'residual':>14}{'scale':>12}{'rel':>10}")
            for q in self.quartets:
                (a, b), (c, d) = q.pairing
                rel = abs(q.residual) / q.scale if q.scale > 0 else 0.0
                lines.append(
                    f"{','.join(map(str, q.quartet)):<14}{f'{a}{b}|{c}{d}':<10}"
                    f"{q.residual:>14.3e}{q.scale:>12.3e}{rel:>10.3f}"
                )
        if self.splits:
            if lines:
                lines.append("")
            lines.append(f"{'split':<24}{'rank distance':>16}")
            for s in self.splits:
                label = "".join(map(str, s.split[0])) + "|" + "".join(map(str, s.split[1]))
                lines.append(f"{label:<24}{s.rank_distance:>16.3e}")
        return "\n".join(lines) + "\n"


def tetrad(s, pairing) -> tuple[float, float]:
    """Tetrad for split ij|kl: ``s_ik s_jl - s_il s_jk`` and the larger monomial magnitude."""
    (i, j), (k, l) = pairing
    a, b = s[i, k] * s[j, l], s[i, l] * s[j, k]
    return float(a - b), float(max(abs(a), abs(b)))


def tetrad_residuals(s: EmpiricalSecondOrder, t: LeafLabeledTree) -> InvariantReport:
    """Tetrad residual for every four-leaf subset that forms a quartet in ``t``."""
    if t.m < 4:
        raise DataError("tetrads need at least four leaves")
    if s.m != t.m:
        raise DataError("second-order matrix and tree disagree on the leaf count")
    report = InvariantReport()
    for quad in itertools.combinations(t.leaves, 4):
        pairing = quartet_topology(t, quad)
        if pairing is None:
            continue
        r, sc = tetrad(s, pairing)
        report.quartets.append(QuartetRecord(quad, pairing, r, sc))
    return report


def bootstrap_tetrads(
    data: Dataset, t: LeafLabeledTree, kind="gaussian", resamples=200, seed=0, level=0.95, threads=None
) -> InvariantReport:
    """Tetrad residuals with percentile bands from row resampling."""
    base = tetrad_residuals(empirical_second_order(data, kind), t)
    if resamples <= 0 or not base.quartets:
        return base

    def one(b):
        rng = generator(seed, "bootstrap", b)
        rows = rng.integers(0, data.n, size=data.n)
        s = empirical_second_order(data.subset(rows), kind)
        return [tetrad(s, q.pairing)[0] for q in base.quartets]

    draws = np.array(ordered_map(one, range(resamples), threads))
    lo, hi = np.percentile(draws, [50 * (1 - level), 50 * (1 + level)], axis=0)
    for q, a, b in zip(base.quartets, lo, hi):
        q.band = (float(a), float(b))
    return base


def quartet_inequality_check(s, quad, split, tol: float = 1e-12) -> tuple[bool, dict]:
    """Dominance of the hypothesized pair product and equality of the two cross products.

    Returns ``(ok, margins)`` with ``margins["slack"] = |s_ij s_kl| - |s_ik s_jl|``
    and ``margins["cross_gap"] = |s_ik s_jl| - |s_il s_jk|``.
    """
    quad = tuple(int(x) for x in quad)
    (i, j), (k, l) = split
    if len(set(quad)) != 4 or {i, j, k, l} != set(quad):
        raise DataError("split must partition the four quartet indices")
    main = abs(s[i, j] * s[k, l])
    c1, c2 = abs(s[i, k] * s[j, l]), abs(s[i, l] * s[j, k])
    slack = main - c1
    gap = c1 - c2
    scale = max(main, c1, c2, 1.0e-300)
    ok = slack >= -tol * scale and abs(gap) <= tol * scale
    return bool(ok), {"slack": float(slack), "cross_gap": float(gap)}


def _check_split(split, m):
    A, B = (tuple(sorted(int(x) for x in part)) for part in split)
    if not A or not B or set(A) & set(B) or set(A) | set(B) != set(range(1, m + 1)):
        raise DataError(f"{split} is not a bipartition of the leaves 1..{m}")
    return A, B


def flatten(P: np.ndarray, split) -> np.ndarray:
    """Reshape a joint tensor (axes in label order) into a d^|A| x d^|B| matrix.

    Rows enumerate A-states in row-major order of the sorted labels of A;
    columns do the same for B.
    """
    m = P.ndim
    A, B = _check_split(split, m)
    d = P.shape[0]
    if d ** len(A) > FLATTEN_LIMIT or d ** len(B) > FLATTEN_LIMIT:
        raise DataError(f"flattening larger than {FLATTEN_LIMIT} rows or columns")
    axes = [a - 1 for a in A] + [b - 1 for b in B]
    return np.transpose(P, axes).reshape(d ** len(A), d ** len(B))


def rank_distance(F: np.ndarray, rank: int) -> tuple[float, list]:
    sv = np.linalg.svd(F, compute_uv=False)
    return float(math.sqrt(float(np.sum(sv[rank:] ** 2)))), [float(x) for x in sv]


def empirical_joint(data: Dataset, d: int) -> np.ndarray:
    if not data.discrete:
        raise DataError("edge rank test needs discrete data")
    if data.states > d:
        raise DataError(f"data has {data.states} states, test declared {d}")
    m = data.m
    if d**m > FLATTEN_LIMIT**2:
        raise DataError("joint table too large")
    flat = np.ravel_multi_index(tuple(data.values.T), (d,) * m)
    counts = np.bincount(flat, weights=data.row_weights, minlength=d**m)
    return (counts / counts.sum()).reshape((d,) * m)


def edge_rank_test_joint(P: np.ndarray, split, d: int) -> SplitRecord:
    A, B = _check_split(split, P.ndim)
    dist, sv = rank_distance(flatten(P, (A, B)), d)
    return SplitRecord((A, B), sv, dist)


def edge_rank_test(data: Dataset, split, d: int) -> SplitRecord:
    """Frobenius distance from the empirical flattening along ``split`` to rank-``d`` matrices."""
    _check_split(split, data.m)
    return edge_rank_test_joint(empirical_joint(data, d), split, d)


def tree_rank_report(P_or_data, t: LeafLabeledTree, d: int) -> InvariantReport:
    """Rank distances for every nontrivial edge split of ``t``."""
    P = empirical_joint(P_or_data, d) if isinstance(P_or_data, Dataset) else np.asarray(P_or_data)
    report = InvariantReport()
    seen = set()
    for e in t.inner_edges():
        sp = edge_split(t, e)
        if sp not in seen:
            seen.add(sp)
            report.splits.append(edge_rank_test_joint(P, sp, d))
    return report
