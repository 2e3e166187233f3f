import json

import numpy as np
import pytest

from arbor.cli import run
from arbor.distance import symmetric_discrete_recover
from arbor.modelio import dumps, model_to_json
from arbor.models import GaussianParams
from arbor.tree import newick_parse, quartet_tree, splits


@pytest.fixture
def markov_model(tmp_path):
    t = quartet_tree()
    p = symmetric_discrete_recover(t, {e: 0.8 for e in t.edges}, 2)
    path = tmp_path / "markov.json"
    path.write_text(dumps(model_to_json(p)))
    return path


@pytest.fixture
def gaussian_model(tmp_path):
    t = quartet_tree()
    p = GaussianParams(t, {e: 0.8 for e in t.edges}, {i: 1.0 + i for i in t.leaves})
    path = tmp_path / "gauss.json"
    path.write_text(dumps(model_to_json(p)))
    return path


def simulate_to(tmp_path, model, name, n=3000, seed=1):
    out = tmp_path / name
    assert run(["simulate", "--model", str(model), "--n", str(n), "--seed", str(seed), "--out", str(out)]) == 0
    return out


class TestSimulate:
    def test_deterministic(self, tmp_path, markov_model):
        a = simulate_to(tmp_path, markov_model, "a")
        b = simulate_to(tmp_path, markov_model, "b")
        assert (a / "data.csv").read_bytes() == (b / "data.csv").read_bytes()
        assert (a / "tree.png").read_bytes() == (b / "tree.png").read_bytes()

    def test_hidden_and_no_figures(self, tmp_path, markov_model):
        out = tmp_path / "h"
        argv = ["simulate", "--model", str(markov_model), "--n", "10", "--seed", "2", "--hidden", "--no-figures"]
        assert run(argv + ["--out", str(out)]) == 0
        assert (out / "hidden.csv").read_text().startswith("H5,H6")
        assert not (out / "tree.png").exists()

    def test_manifest(self, tmp_path, markov_model):
        out = simulate_to(tmp_path, markov_model, "m")
        man = json.loads((out / "manifest.json").read_text())
        assert man["seed"] == 1 and man["command"] == "simulate"
        assert set(man["outputs"]) == {"data.csv", "tree.png"}
        assert man["inputs"]["model"]["sha256"]


class TestLearn:
    def test_nj_recovers_split(self, tmp_path, markov_model):
        data = simulate_to(tmp_path, markov_model, "d", n=10_000) / "data.csv"
        out = tmp_path / "nj"
        assert run(["learn-nj", "--data", str(data), "--kind", "markov", "--seed", "0", "--out", str(out)]) == 0
        t, _ = newick_parse((out / "tree.nwk").read_text())
        assert splits(t) == {frozenset({3, 4})}
        assert (out / "edges.csv").read_text().splitlines()[0] == "u,v,length,abs_tau,clamped"

    def test_nj_gaussian_score_dim(self, tmp_path, gaussian_model):
        data = simulate_to(tmp_path, gaussian_model, "g") / "data.csv"
        out = tmp_path / "nj"
        assert run(["learn-nj", "--data", str(data), "--kind", "gaussian", "--seed", "0", "--out", str(out)]) == 0
        score = json.loads((out / "score.json").read_text())
        assert score["dim"] == 4 + 5

    def test_sem_then_score(self, tmp_path, markov_model):
        data = simulate_to(tmp_path, markov_model, "d", n=2000) / "data.csv"
        out = tmp_path / "sem"
        argv = ["learn-sem", "--data", str(data), "--kind", "markov", "--seed", "3", "--restarts", "2"]
        assert run(argv + ["--out", str(out)]) == 0
        man = json.loads((out / "manifest.json").read_text())
        sc = tmp_path / "sc"
        assert run(["score", "--data", str(data), "--model", str(out / "model.json"), "--seed", "0", "--out", str(sc)]) == 0
        score = json.loads((sc / "score.json").read_text())
        assert score["loglik"] >= man["init_loglik"]

    def test_cl_and_em(self, tmp_path, gaussian_model):
        data = simulate_to(tmp_path, gaussian_model, "g") / "data.csv"
        cl = tmp_path / "cl"
        assert run(["learn-cl", "--data", str(data), "--kind", "gaussian", "--seed", "0", "--out", str(cl)]) == 0
        assert (cl / "chow_liu_edges.csv").exists()
        em = tmp_path / "em"
        argv = ["em", "--data", str(data), "--kind", "gaussian", "--tree", "((1,2),3,4);", "--seed", "0", "--restarts", "2"]
        assert run(argv + ["--out", str(em)]) == 0
        trace = json.loads((em / "model.json").read_text())["trace"]
        assert np.all(np.diff(trace) >= -1e-9 * (1 + np.abs(trace[:-1])))

    def test_infer(self, tmp_path, markov_model):
        data = simulate_to(tmp_path, markov_model, "d", n=5) / "data.csv"
        out = tmp_path / "inf"
        assert run(["infer", "--data", str(data), "--model", str(markov_model), "--seed", "0", "--out", str(out)]) == 0
        rows = (out / "posteriors.csv").read_text().splitlines()
        assert rows[0] == "row,vertex,p0,p1" and len(rows) == 1 + 5 * 2
        assert len((out / "map.csv").read_text().splitlines()) == 6

    def test_invariants(self, tmp_path, markov_model):
        data = simulate_to(tmp_path, markov_model, "d", n=2000) / "data.csv"
        out = tmp_path / "inv"
        argv = ["test-invariants", "--data", str(data), "--tree", "((1,2),3,4);", "--kind", "markov"]
        assert run(argv + ["--bootstrap", "20", "--seed", "0", "--out", str(out)]) == 0
        recs = [json.loads(x) for x in (out / "invariants.jsonl").read_text().splitlines()]
        assert {r["type"] for r in recs} == {"quartet", "split"}
        assert (out / "residuals.png").exists()


class TestExitCodes:
    def test_usage(self, tmp_path):
        assert run(["learn-nj", "--bogus", "--out", str(tmp_path)]) == 2
        assert run(["simulate"]) == 2

    def test_missing_file(self, tmp_path, capsys):
        assert run(["learn-nj", "--data", str(tmp_path / "nope.csv"), "--seed", "0", "--out", str(tmp_path / "o")]) == 3
        diag = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert diag["error"] == "DataError"

    def test_bad_data(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("X1,X2\n0,x\n")
        assert run(["learn-nj", "--data", str(bad), "--kind", "markov", "--seed", "0", "--out", str(tmp_path / "o")]) == 3

    def test_numerical(self, tmp_path):
        # two perfectly uncorrelated blocks give infinite distances
        rows = ["X1,X2,X3,X4"] + [f"{a},{a},{b},{b}" for a in (-1, 1) for b in (-1, 1)]
        data = tmp_path / "blocks.csv"
        data.write_text("\n".join(rows) + "\n")
        assert run(["learn-nj", "--data", str(data), "--kind", "gaussian", "--seed", "0", "--out", str(tmp_path / "o")]) == 4
