"""Command-line entry point: ``arbor <subcommand> [options]``.

Every run writes its artifacts plus ``manifest.json`` into ``--out``.
Exit status: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import CONTINUOUS, DISCRETE, read_csv, write_csv
from .distance import (
    distances_from_second_order,
    edge_correlations_from_lengths,
    edge_taus_from_lengths,
    empirical_second_order,
    neighbor_joining,
    symmetric_discrete_recover,
)
from .em import bic_score, fit_em
from .errors import ArborError, DataError, NumericalError
from .invariants import bootstrap_tetrads, tree_rank_report, FLATTEN_LIMIT
from .modelio import dumps, file_digest, load_model, model_to_json, scored_to_json
from .models import GaussianParams, infer_hidden, map_hidden, simulate
from .streams import fresh_seed, generator
from .structure import learn_chow_liu, learn_structural_em
from .tree import newick_parse, newick_write

log = logging.getLogger("arbor")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


class Run:
    """Collects artifacts for one invocation and writes them with a manifest."""

    def __init__(self, args, seed):
        self.args = args
        self.seed = seed
        self.out = Path(args.out)
        self.outputs = {}
        self.extra = {}

    def text(self, name, content: str):
        path = self.out / name
        path.write_text(content)
        self.outputs[name] = path

    def json(self, name, obj):
        self.text(name, dumps(obj))

    def figure(self, name, fn, *a, **kw):
        if self.args.no_figures:
            return
        path = self.out / name
        fn(*a, path=path, **kw)
        self.outputs[name] = path

    def finish(self):
        config = {
            k: v
            for k, v in sorted(vars(self.args).items())
            if k not in ("out", "command", "seed") and v is not None
        }
        inputs = {}
        for key in ("data", "model", "tree"):
            val = getattr(self.args, key, None)
            if val and Path(val).is_file():
                inputs[key] = {"path": str(val), "sha256": file_digest(val)}
        manifest = {
            "arbor_version": __version__,
            "command": self.args.command,
            "config": config,
            "seed": self.seed,
            "inputs": inputs,
            "outputs": {k: file_digest(p) for k, p in sorted(self.outputs.items())},
            **self.extra,
        }
        (self.out / "manifest.json").write_text(dumps(manifest))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _kind(args, model=None) -> str:
    if args.kind:
        return args.kind
    if model is not None:
        return "gaussian" if isinstance(model, GaussianParams) else "markov"
    raise DataError("--kind is required for this input")


def _load_data(args, kind):
    if not args.data:
        raise DataError("--data is required")
    return read_csv(args.data, CONTINUOUS if kind == "gaussian" else DISCRETE, args.states)


def _load_tree(spec):
    if spec is None:
        raise DataError("--tree is required")
    p = Path(spec)
    text = p.read_text() if p.is_file() else spec
    return newick_parse(text.strip())


def _trace_csv(trace):
    return _csv_text(["iteration", "loglik"], [(k, float(v)) for k, v in enumerate(trace)])


def _edge_values(model):
    if isinstance(model, GaussianParams):
        return model.edge_corr
    from .models import edge_taus

    return edge_taus(model)


def _scored_artifacts(run, scored, title):
    from . import plotting

    run.json("model.json", scored_to_json(scored))
    run.text("tree.nwk", newick_write(load_tree_of(scored)) + "\n")
    run.text("trace.csv", _trace_csv(scored.trace))
    run.figure("tree.png", plotting.plot_tree, scored.tree, edge_values=_edge_values(scored.model), title=title)
    run.figure("trace.png", plotting.plot_trace, scored.trace)


def load_tree_of(scored):
    from .modelio import _canonical

    return _canonical(scored.model).tree


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args, run):
    from . import plotting

    if args.model is None or args.n is None:
        raise DataError("simulate needs --model and --n")
    model = load_model(args.model)
    data = simulate(model, args.n, generator(run.seed, "simulate"), hidden=args.hidden)
    buf = Path(run.out) / "data.csv"
    write_csv(buf, data, include_weights=False)
    run.outputs["data.csv"] = buf
    if args.hidden and data.hidden:
        hid = sorted(data.hidden)
        rows = zip(*(data.hidden[h] for h in hid))
        text = _csv_text([f"H{h}" for h in hid], rows)
        run.text("hidden.csv", text)
    run.figure("tree.png", plotting.plot_tree, model.tree, edge_values=_edge_values(model), title="generating tree")


def cmd_learn_nj(args, run):
    from . import plotting

    kind = _kind(args)
    data = _load_data(args, kind)
    s = empirical_second_order(data, kind)
    nj = neighbor_joining(distances_from_second_order(s))
    tree, lengths = nj.tree, nj.lengths
    rows = []
    if kind == "gaussian":
        var = {i: float(data.second_moment[i - 1, i - 1]) for i in tree.leaves}
        model = edge_correlations_from_lengths(tree, lengths, var)
        mags = model.edge_corr
        run.json("model.json", model_to_json(model))
        run.json("score.json", _score_obj(bic_score(model, data)))
    else:
        mags = edge_taus_from_lengths(lengths)
        if args.symmetric:
            model = symmetric_discrete_recover(tree, mags, data.states)
            run.json("model.json", model_to_json(model))
    for e in tree.sorted_edges:
        rows.append((e[0], e[1], float(lengths[e]), float(mags[e]), int(e in nj.clamped)))
    run.text("tree.nwk", newick_write(tree, lengths) + "\n")
    header = ["u", "v", "length", "abs_rho" if kind == "gaussian" else "abs_tau", "clamped"]
    run.text("edges.csv", _csv_text(header, rows))
    run.json("edges.json", {"kind": kind, "signs": "unresolved", "edges": [list(r[:2]) + [r[3]] for r in rows]})
    if nj.clamped:
        log.warning("negative edge length estimates clamped to 0 on %s", list(nj.clamped))
    run.figure("tree.png", plotting.plot_tree, tree, edge_values=mags, title="neighbor-joining tree")


def _score_obj(scored):
    return {"loglik": scored.loglik, "dim": scored.dim, "bic": scored.bic, "n": scored.n, "status": scored.status}


def cmd_learn_cl(args, run):
    kind = _kind(args)
    data = _load_data(args, kind)
    mt, scored = learn_chow_liu(data, kind, args.trivalent)
    from .structure import mutual_information_weights

    w = mutual_information_weights(data, kind)
    rows = [(u, v, w.weight(u, v)) for u, v in sorted(mt.edges)]
    run.text("chow_liu_edges.csv", _csv_text(["u", "v", "weight"], rows))
    _scored_artifacts(run, scored, "Chow-Liu latent tree")


def cmd_learn_sem(args, run):
    kind = _kind(args)
    data = _load_data(args, kind)
    scored = learn_structural_em(
        data,
        restarts=args.restarts,
        seed=run.seed,
        max_iter=args.max_iter,
        tol=args.tol,
        trivalent=args.trivalent,
    )
    run.extra["init_loglik"] = scored.trace[0]
    _scored_artifacts(run, scored, "structural EM tree")


def cmd_em(args, run):
    init = load_model(args.model) if args.model else None
    kind = _kind(args, init)
    data = _load_data(args, kind)
    if init is not None and args.tree is None:
        tree = init.tree
    else:
        tree, _ = _load_tree(args.tree)
        if init is not None and init.tree.edges != tree.edges:
            raise DataError("--model parameters do not live on --tree")
    scored = fit_em(tree, data, restarts=args.restarts, seed=run.seed, init=init, max_iter=args.max_iter, tol=args.tol)
    run.extra["init_loglik"] = scored.trace[0]
    _scored_artifacts(run, scored, "EM fit")


def cmd_score(args, run):
    model = load_model(args.model)
    data = _load_data(args, _kind(args, model))
    run.json("score.json", _score_obj(bic_score(model, data)))


def cmd_infer(args, run):
    model = load_model(args.model)
    data = _load_data(args, _kind(args, model))
    hid = model.tree.hidden
    if isinstance(model, GaussianParams):
        rows = []
        for r, x in enumerate(data.values):
            post = infer_hidden(model, x)
            rows += [(r, h, post[h][0], post[h][1]) for h in hid]
        run.text("posteriors.csv", _csv_text(["row", "vertex", "mean", "var"], rows))
        return
    d = model.d
    rows, maps = [], []
    for r, x in enumerate(data.values):
        post = infer_hidden(model, x)
        rows += [(r, h, *map(float, post[h])) for h in hid]
        states, logp = map_hidden(model, x)
        maps.append((r, *(states[h] for h in hid), float(logp)))
    run.text("posteriors.csv", _csv_text(["row", "vertex"] + [f"p{k}" for k in range(d)], rows))
    run.text("map.csv", _csv_text(["row"] + [f"H{h}" for h in hid] + ["logp"], maps))


def cmd_test_invariants(args, run):
    from . import plotting

    kind = _kind(args)
    data = _load_data(args, kind)
    tree, _ = _load_tree(args.tree)
    if tree.m != data.m:
        raise DataError("tree and data disagree on the number of leaves")
    report = bootstrap_tetrads(data, tree, kind, resamples=args.bootstrap, seed=run.seed)
    if kind == "markov":
        d = data.states if args.states is None else args.states
        if d**data.m <= FLATTEN_LIMIT**2:
            report.splits = tree_rank_report(data, tree, d).splits
    run.text("invariants.jsonl", report.to_jsonl())
    run.text("summary.txt", report.summary_table())
    run.figure("residuals.png", plotting.plot_residuals, report)


COMMANDS = {
    "simulate": cmd_simulate,
    "learn-nj": cmd_learn_nj,
    "learn-cl": cmd_learn_cl,
    "learn-sem": cmd_learn_sem,
    "em": cmd_em,
    "score": cmd_score,
    "infer": cmd_infer,
    "test-invariants": cmd_test_invariants,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arbor", description="Latent tree models")
    parser.add_argument("--version", action="version", version=f"arbor {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--data")
        p.add_argument("--model")
        p.add_argument("--tree")
        p.add_argument("--kind", choices=["gaussian", "markov"])
        p.add_argument("--states", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--tol", type=float, default=1e-8)
        p.add_argument("--max-iter", type=int, default=None)
        p.add_argument("--restarts", type=int, default=10)
        p.add_argument("--trivalent", action="store_true")
        p.add_argument("--out", required=True)
        p.add_argument("--no-figures", action="store_true")
        if name == "simulate":
            p.add_argument("--hidden", action="store_true", help="also write hidden-vertex draws")
        if name == "learn-nj":
            p.add_argument("--symmetric", action="store_true", help="complete a symmetric discrete model")
        if name == "test-invariants":
            p.add_argument("--bootstrap", type=int, default=200)
    return parser


def _fail(code, exc):
    diag = {"error": type(exc).__name__, "message": str(exc)}
    row = getattr(exc, "row", None)
    if row is not None:
        diag["row"] = row
    sys.stderr.write(json.dumps(diag, sort_keys=True) + "\n")
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.max_iter is None:
        args.max_iter = 100 if args.command == "learn-sem" else 500
    seed = args.seed if args.seed is not None else fresh_seed()
    if args.seed is None:
        log.info("no --seed given; using %d", seed)
    try:
        for key in ("data", "model"):
            val = getattr(args, key)
            if val is not None and not Path(val).is_file():
                raise DataError(f"--{key}: no such file {val}")
        out = Path(args.out)
        if out.exists() and not out.is_dir():
            raise DataError(f"--out {out} exists and is not a directory")
        out.mkdir(parents=True, exist_ok=True)
        r = Run(args, seed)
        COMMANDS[args.command](args, r)
        r.finish()
    except DataError as exc:
        return _fail(EXIT_DATA, exc)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except ArborError as exc:
        return _fail(EXIT_DATA, exc)
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="arbor: %(message)s")
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
