"""JSON files for model parameters, scored models and run manifests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .em import ScoredModel
from .errors import DataError
from .models import GaussianParams, MarkovParams
from .tree import canonical_relabel, edge_key, newick_parse, newick_write


def _canonical(model):
    """Relabel hidden vertices so the Newick string alone fixes every id."""
    t = model.tree
    mapping = canonical_relabel(t)
    if all(mapping.get(v, v) == v for v in t.vertices):
        return model
    f = lambda v: mapping.get(v, v)  # noqa: E731
    tree = t.relabel(mapping)
    if isinstance(model, GaussianParams):
        corr = {edge_key(f(a), f(b)): r for (a, b), r in model.edge_corr.items()}
        return GaussianParams(tree, corr, model.leaf_var, model.magnitudes_only)
    trans = {(f(a), f(b)): M for (a, b), M in model.transitions.items()}
    return MarkovParams(tree, model.root_dist, trans)


def model_to_json(model) -> dict:
    model = _canonical(model)
    t = model.tree
    out = {"newick": newick_write(t), "root": t.default_root()}
    if isinstance(model, GaussianParams):
        out["type"] = "gaussian"
        out["edge_corr"] = [[u, v, model.edge_corr[(u, v)]] for u, v in t.sorted_edges]
        out["leaf_var"] = {str(i): model.leaf_var[i] for i in t.leaves}
        if model.magnitudes_only:
            out["signs"] = "unresolved"
    else:
        out["type"] = "markov"
        out["states"] = model.d
        out["root_dist"] = model.root_dist.tolist()
        out["transitions"] = [
            {"parent": a, "child": b, "matrix": model.transitions[(a, b)].tolist()}
            for a, b in model.view.directed_edges()
        ]
    return out


def model_from_json(obj: dict):
    try:
        tree, _ = newick_parse(obj["newick"])
        kind = obj["type"]
    except KeyError as exc:
        raise DataError(f"model file lacks field {exc.args[0]!r}") from None
    if obj.get("root") is not None:
        tree = tree.with_root(int(obj["root"]))
    if kind == "gaussian":
        corr = {edge_key(int(u), int(v)): float(r) for u, v, r in obj["edge_corr"]}
        var = {int(k): float(v) for k, v in obj.get("leaf_var", {}).items()}
        return GaussianParams(tree, corr, var, obj.get("signs") == "unresolved")
    if kind == "markov":
        trans = {(int(r["parent"]), int(r["child"])): np.array(r["matrix"], float) for r in obj["transitions"]}
        return MarkovParams(tree, np.array(obj["root_dist"], float), trans)
    raise DataError(f"unknown model type {kind!r}")


def scored_to_json(s: ScoredModel) -> dict:
    return {
        "newick": newick_write(_canonical(s.model).tree),
        "params": model_to_json(s.model),
        "loglik": s.loglik,
        "dim": s.dim,
        "bic": s.bic,
        "n": s.n,
        "status": s.status,
        "trace": list(s.trace),
    }


def load_model(path):
    """Parameter file, or the ``params`` member of a scored-model file."""
    obj = read_json(path)
    if "params" in obj and "type" not in obj:
        obj = obj["params"]
    return model_from_json(obj)


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
