import itertools
import math

import numpy as np
import pytest

from arbor.data import Dataset
from arbor.errors import DataError, DegenerateError
from arbor.models import (
    GaussianParams,
    MarkovParams,
    RateModel,
    VectorMoments,
    gaussian_leaf_correlations,
    gaussian_leaf_covariance,
    infer_hidden,
    jukes_cantor,
    leaf_joint,
    linear_tau,
    loglik,
    map_hidden,
    markov_pairwise,
    rate_transition,
    regularity_check,
    reroot,
    reverse_transition,
    saturation_bound,
    simulate,
    tau,
    tau_edge,
    tau_edge_via_transition,
    tau_matrix,
)
from arbor.tree import LeafLabeledTree, path_between, quartet_tree, star_tree
from oracles import (
    brute_loglik,
    brute_posteriors,
    det_tau,
    full_covariance,
    full_joint,
    gaussian_density_loglik,
    marginal,
    random_gaussian,
    random_markov,
    random_tree,
    taylor_expm,
)


def uniform_params(tree, d, M):
    return MarkovParams(tree, np.full(d, 1 / d), {e: M for e in tree.rooted().directed_edges()})


class TestParams:
    def test_gaussian_rejects_out_of_range(self):
        t = quartet_tree()
        with pytest.raises(DataError):
            GaussianParams(t, {e: 1.5 for e in t.edges})

    def test_gaussian_needs_every_edge(self):
        with pytest.raises(DataError):
            GaussianParams(quartet_tree(), {(1, 5): 0.5})

    def test_markov_rejects_zero_root(self):
        t = star_tree(3)
        with pytest.raises(DataError):
            MarkovParams(t, np.array([1.0, 0.0]), {e: np.eye(2) for e in t.rooted().directed_edges()})

    def test_markov_rejects_non_stochastic(self):
        t = star_tree(3)
        M = np.array([[0.5, 0.6], [0.5, 0.5]])
        with pytest.raises(DataError):
            MarkovParams(t, np.array([0.5, 0.5]), {e: M for e in t.rooted().directed_edges()})

    def test_parsimony(self):
        t = quartet_tree()
        assert GaussianParams(t, {e: 0.5 for e in t.edges}).is_parsimonious()
        assert not GaussianParams(t, {e: 1.0 for e in t.edges}).is_parsimonious()

    def test_rate_model_validation(self):
        with pytest.raises(DataError):
            RateModel(np.array([[-1.0, 2.0], [1.0, -1.0]]), {(1, 2): 1.0})
        with pytest.raises(DataError):
            RateModel(jukes_cantor(2), {(1, 2): 0.0})


class TestGaussianCorrelations:
    def test_quartet_half(self):
        t = quartet_tree()
        R = gaussian_leaf_correlations(GaussianParams(t, {e: 0.5 for e in t.edges}))
        assert R[0, 1] == pytest.approx(0.25)
        assert R[0, 2] == pytest.approx(0.125)
        np.testing.assert_array_equal(np.diag(R), 1.0)

    def test_zero_edge(self):
        t = quartet_tree()
        corr = {e: 0.5 for e in t.edges}
        corr[(5, 6)] = 0.0
        R = gaussian_leaf_correlations(GaussianParams(t, corr))
        assert R[0, 2] == 0.0

    def test_full_covariance_oracle(self, rng):
        for _ in range(10):
            p = random_gaussian(rng, random_tree(rng, 8, trivalent=False))
            S, verts = full_covariance(p)
            idx = [verts.index(i) for i in p.tree.leaves]
            C = S[np.ix_(idx, idx)]
            s = np.sqrt(np.diag(C))
            np.testing.assert_allclose(gaussian_leaf_correlations(p), C / np.outer(s, s), atol=1e-12)
            np.testing.assert_allclose(gaussian_leaf_covariance(p), C, atol=1e-12)

    def test_quartet_identities(self, rng):
        t = quartet_tree()
        for _ in range(20):
            p = random_gaussian(rng, t)
            R = gaussian_leaf_correlations(p)
            r = lambda i, j: R[i - 1, j - 1]  # noqa: E731
            ruv = p.edge_corr[(5, 6)]
            assert r(1, 3) * r(2, 4) == pytest.approx(r(1, 4) * r(2, 3), abs=1e-14)
            assert r(1, 3) * r(2, 4) == pytest.approx(r(1, 2) * r(3, 4) * ruv**2, abs=1e-14)


class TestPairwise:
    def test_identity_edge(self):
        t = LeafLabeledTree({(1, 2)}, 2)
        p = uniform_params(t, 3, np.eye(3))
        P, _, _ = markov_pairwise(p, 1, 2)
        np.testing.assert_allclose(P, np.eye(3) / 3)

    def test_constant_rows_independent(self):
        t = star_tree(3)
        w = np.array([0.2, 0.3, 0.5])
        pi = np.array([0.1, 0.6, 0.3])
        p = MarkovParams(t, pi, {e: np.tile(w, (3, 1)) for e in t.rooted().directed_edges()})
        P, _, _ = markov_pairwise(p, 4, 1)
        np.testing.assert_allclose(P, np.outer(pi, w), atol=1e-15)

    def test_against_enumeration(self, rng):
        p = random_markov(rng, random_tree(rng, 5), 3)
        J, verts = full_joint(p)
        for u, v in itertools.combinations(verts, 2):
            P, pu, pv = markov_pairwise(p, u, v)
            np.testing.assert_allclose(P, marginal(J, verts, [u, v]), atol=1e-13)

    def test_symmetry_and_bayes(self, rng):
        p = random_markov(rng, random_tree(rng, 5), 3)
        for (a, b), M in p.transitions.items():
            Pab, pa, pb = markov_pairwise(p, a, b)
            Pba, _, _ = markov_pairwise(p, b, a)
            np.testing.assert_allclose(Pab, Pba.T, atol=1e-15)
            # reverse conditional from the joint table
            np.testing.assert_allclose(reverse_transition(M, pa, pb), Pba / pb[:, None], atol=1e-12)

    def test_root_invariance(self, rng):
        p = random_markov(rng, random_tree(rng, 5), 2)
        L = leaf_joint(p)
        for r in p.tree.vertices:
            np.testing.assert_allclose(leaf_joint(reroot(p, r)), L, atol=1e-14)


class TestTau:
    def test_permutation_unit(self):
        t = LeafLabeledTree({(1, 2)}, 2)
        for perm in itertools.permutations(range(3)):
            p = uniform_params(t, 3, np.eye(3)[list(perm)])
            assert abs(tau_edge(p, 1, 2)) == pytest.approx(1.0, abs=1e-14)

    def test_equal_rows_zero(self):
        t = LeafLabeledTree({(1, 2)}, 2)
        M = np.array([[0.2, 0.3, 0.5], [0.2, 0.3, 0.5], [0.6, 0.2, 0.2]])
        p = MarkovParams(t, np.array([0.3, 0.3, 0.4]), {(1, 2): M})
        assert tau_edge(p, 1, 2) == pytest.approx(0.0, abs=1e-15)

    def test_binary_flip_correlation(self):
        eps = 0.15
        t = LeafLabeledTree({(1, 2)}, 2)
        M = np.array([[1 - eps, eps], [eps, 1 - eps]])
        p = MarkovParams(t, np.array([0.5, 0.5]), {(1, 2): M})
        P, pu, pv = markov_pairwise(p, 1, 2)
        # correlation of 0/1 indicators from the 2x2 table
        cov = P[1, 1] - pu[1] * pv[1]
        corr = cov / math.sqrt(pu[1] * pu[0] * pv[1] * pv[0])
        assert tau_edge(p, 1, 2) == pytest.approx(1 - 2 * eps, abs=1e-14)
        assert tau_edge(p, 1, 2) == pytest.approx(corr, abs=1e-14)

    def test_two_formulas_agree(self, rng):
        p = random_markov(rng, random_tree(rng, 5), 3)
        for a, b in p.transitions:
            assert tau_edge(p, a, b) == pytest.approx(tau_edge_via_transition(p, a, b), abs=1e-12)

    def test_identity_all_one(self):
        t = quartet_tree()
        np.testing.assert_allclose(tau_matrix(uniform_params(t, 2, np.eye(2))), 1.0)

    def test_path_product_half(self):
        t = quartet_tree()
        M = np.array([[0.75, 0.25], [0.25, 0.75]])
        T = tau_matrix(uniform_params(t, 2, M))
        assert T[0, 2] == pytest.approx(0.125, abs=1e-15)

    def test_path_product_vs_pairwise(self, rng):
        p = random_markov(rng, random_tree(rng, 5), 3)
        J, verts = full_joint(p)
        T = tau_matrix(p)
        for i, j in itertools.combinations(p.tree.leaves, 2):
            assert T[i - 1, j - 1] == pytest.approx(det_tau(marginal(J, verts, [i, j])), abs=1e-10)
        for u, v in itertools.combinations(verts, 2):
            prod = math.prod(tau_edge(p, a, b) for a, b in path_between(p.tree, u, v))
            assert tau(p, u, v) == pytest.approx(prod, abs=1e-12)

    def test_not_an_edge(self):
        p = uniform_params(quartet_tree(), 2, np.eye(2))
        with pytest.raises(DataError):
            tau_edge(p, 1, 2)


class TestLinearTau:
    def test_perfect(self):
        S = np.array([[2.0]])
        mo = VectorMoments({("u", "u"): S, ("v", "v"): S, ("u", "v"): S})
        assert linear_tau(mo, "u", "v") == pytest.approx(1.0)

    def test_zero(self):
        I = np.eye(2)
        mo = VectorMoments({("u", "u"): I, ("v", "v"): I, ("u", "v"): np.zeros((2, 2))})
        assert linear_tau(mo, "u", "v") == 0.0

    def test_not_pd(self):
        mo = VectorMoments({("u", "u"): -np.eye(1), ("v", "v"): np.eye(1), ("u", "v"): np.eye(1)})
        with pytest.raises(DegenerateError):
            linear_tau(mo, "u", "v")

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_discrete_embedding(self, rng, d):
        P = rng.dirichlet(np.ones(d * d)).reshape(d, d)
        # build moments from the embedded samples' exact expectation
        E = np.vstack([np.zeros(d - 1), np.eye(d - 1)])
        a, b = P.sum(1), P.sum(0)
        Suv = E.T @ P @ E - np.outer(a @ E, b @ E)
        Suu = E.T @ np.diag(a) @ E - np.outer(a @ E, a @ E)
        mo = VectorMoments.from_discrete_joint(P)
        np.testing.assert_allclose(mo.cov("u", "v"), Suv, atol=1e-15)
        assert np.linalg.det(Suv) == pytest.approx(np.linalg.det(P), abs=1e-12)
        assert np.linalg.det(Suu) == pytest.approx(np.prod(a), abs=1e-12)
        assert linear_tau(mo, "u", "v") == pytest.approx(det_tau(P), abs=1e-10)


class TestRates:
    def test_small_time_identity(self):
        r = RateModel(jukes_cantor(4), {(1, 2): 1e-12})
        np.testing.assert_allclose(rate_transition(r, (1, 2)), np.eye(4), atol=1e-11)

    def test_long_time_uniform(self):
        r = RateModel(jukes_cantor(4), {(1, 2): 50.0})
        np.testing.assert_allclose(rate_transition(r, (1, 2)), 0.25, atol=1e-12)

    def test_series_oracle(self):
        Q = jukes_cantor(4)
        r = RateModel(Q, {(1, 2): 1.0})
        np.testing.assert_allclose(rate_transition(r, (1, 2)), taylor_expm(Q), atol=1e-12)

    def test_jukes_cantor_closed_form(self):
        M = rate_transition(RateModel(jukes_cantor(4), {(1, 2): 1.0}), (1, 2))
        off = 0.25 * (1 - math.exp(-4.0))
        np.testing.assert_allclose(M[0, 1:], off, atol=1e-13)


class TestSimulate:
    def test_deterministic(self, rng):
        p = random_markov(rng, quartet_tree(), 3)
        np.testing.assert_array_equal(simulate(p, 50, 7).values, simulate(p, 50, 7).values)

    def test_perfect_correlation(self):
        t = quartet_tree()
        p = GaussianParams(t, {e: 1.0 for e in t.edges}, {1: 4.0, 2: 1.0, 3: 9.0, 4: 1.0})
        X = simulate(p, 20, 1).values
        np.testing.assert_allclose(X[:, 0] / 2, X[:, 1])
        np.testing.assert_allclose(X[:, 2] / 3, X[:, 1])

    def test_identity_transitions(self):
        X = simulate(uniform_params(quartet_tree(), 3, np.eye(3)), 30, 2).values
        assert np.all(X == X[:, :1])

    def test_monte_carlo_correlation(self):
        t = quartet_tree()
        data = simulate(GaussianParams(t, {e: 0.5 for e in t.edges}), 100_000, 3)
        r = np.corrcoef(data.values.T)[0, 2]
        assert abs(r - 0.125) < 0.02

    def test_hidden_columns(self, rng):
        p = random_markov(rng, quartet_tree(), 2)
        data = simulate(p, 10, 4, hidden=True)
        assert set(data.hidden) == {5, 6}

    def test_n_zero_rejected(self, rng):
        with pytest.raises(DataError):
            simulate(random_markov(rng, quartet_tree(), 2), 0, 1)


class TestInference:
    def test_identity_point_mass(self):
        p = uniform_params(quartet_tree(), 3, np.eye(3))
        post = infer_hidden(p, [2, 2, 2, 2])
        for h in (5, 6):
            np.testing.assert_allclose(post[h], [0, 0, 1])

    def test_independence_prior(self):
        t = quartet_tree()
        w = np.array([0.3, 0.7])
        p = MarkovParams(t, np.array([0.4, 0.6]), {e: np.tile(w, (2, 1)) for e in t.rooted().directed_edges()})
        post = infer_hidden(p, [0, 1, 1, 0])
        for h in (5, 6):
            np.testing.assert_allclose(post[h], p.marginals[h], atol=1e-15)

    def test_brute_force_bayes(self, rng):
        p = random_markov(rng, random_tree(rng, 5), 2)
        for row in itertools.product(range(2), repeat=5):
            post = infer_hidden(p, row)
            ref = brute_posteriors(p, row)
            for h in p.tree.hidden:
                np.testing.assert_allclose(post[h], ref[h], atol=1e-12)

    def test_map_matches_enumeration(self, rng):
        p = random_markov(rng, random_tree(rng, 4), 3)
        J, verts = full_joint(p)
        for row in [(0, 1, 2, 0), (2, 2, 1, 1)]:
            idx = tuple(row[v - 1] if v <= p.m else slice(None) for v in verts)
            Q = J[idx]
            best = np.unravel_index(np.argmax(Q), Q.shape)
            states, logp = map_hidden(p, row)
            hid = [v for v in verts if v > p.m]
            assert tuple(states[h] for h in hid) == tuple(int(x) for x in best)
            assert logp == pytest.approx(math.log(Q.max()), abs=1e-12)

    def test_out_of_range(self, rng):
        p = random_markov(rng, quartet_tree(), 2)
        with pytest.raises(DataError):
            infer_hidden(p, [0, 1, 2, 0])

    def test_gaussian_conditioning(self, rng):
        p = random_gaussian(rng, random_tree(rng, 6))
        S, verts = full_covariance(p)
        obs = [verts.index(i) for i in p.tree.leaves]
        x = rng.normal(size=6)
        post = infer_hidden(p, x)
        for h in p.tree.hidden:
            k = verts.index(h)
            B = np.linalg.solve(S[np.ix_(obs, obs)], S[obs, k])
            assert post[h][0] == pytest.approx(B @ x, abs=1e-10)
            assert post[h][1] == pytest.approx(S[k, k] - S[k, obs] @ B, abs=1e-10)

    def test_gaussian_perfect_edge_fallback(self):
        t = quartet_tree()
        corr = {e: 0.6 for e in t.edges}
        corr[(1, 5)] = 1.0
        post = infer_hidden(GaussianParams(t, corr), [0.7, 0.1, -0.2, 0.3])
        assert post[5] == pytest.approx((0.7, 0.0), abs=1e-12)

    def test_mode_beats_prior(self, rng):
        t = random_tree(rng, 5)
        p = random_markov(rng, t, 2, strength=(0.9, 0.95))
        data = simulate(p, 10_000, 11, hidden=True)
        X = data.values
        hits = base = 0
        mode_prior = {h: int(np.argmax(p.marginals[h])) for h in t.hidden}
        from arbor.inference import sum_product

        ev = {i: X[:, i - 1] for i in t.leaves}
        post = sum_product(p.view, p.root_dist, p.transitions, ev, 2, len(X), posteriors=True).node
        for h in t.hidden:
            hits += np.sum(post[h].argmax(1) == data.hidden[h])
            base += np.sum(mode_prior[h] == data.hidden[h])
        assert hits > base


class TestLoglik:
    def test_empty(self, rng):
        p = random_markov(rng, quartet_tree(), 2)
        assert loglik(p, Dataset(np.zeros((0, 4)), "discrete", 2)) == 0.0

    def test_single_leaf_like(self):
        t = LeafLabeledTree({(1, 2)}, 2)
        p = MarkovParams(t, np.array([0.5, 0.5]), {(1, 2): np.full((2, 2), 0.5)})
        # m >= 2 here; the second leaf is uninformative so the row costs log 0.5 twice
        assert loglik(p, Dataset(np.array([[0, 1]]), "discrete", 2)) == pytest.approx(2 * math.log(0.5))

    def test_brute_force(self, rng):
        p = random_markov(rng, quartet_tree(), 3)
        X = rng.integers(0, 3, size=(10, 4))
        assert loglik(p, Dataset(X, "discrete", 3)) == pytest.approx(brute_loglik(p, X), abs=1e-10)

    def test_zero_probability_row(self):
        p = uniform_params(quartet_tree(), 2, np.eye(2))
        assert loglik(p, Dataset(np.array([[0, 1, 0, 0]]), "discrete", 2)) == -math.inf

    def test_gaussian_density(self, rng):
        p = random_gaussian(rng, random_tree(rng, 6))
        X = simulate(p, 50, 5).values
        S, verts = full_covariance(p)
        idx = [verts.index(i) for i in p.tree.leaves]
        ref = gaussian_density_loglik(S[np.ix_(idx, idx)], X)
        assert loglik(p, Dataset(X, "continuous")) == pytest.approx(ref, abs=1e-9)


class TestStateSpaces:
    def test_latent_class_bound(self):
        assert saturation_bound([2, 2, 2]) == 4
        t = star_tree(3)
        sizes = {1: 2, 2: 2, 3: 2}
        assert regularity_check(t, {**sizes, 4: 3})
        assert not regularity_check(t, {**sizes, 4: 4})

    def test_two_binary_neighbors(self):
        t = LeafLabeledTree({(1, 3), (3, 2)}, 2)
        assert not regularity_check(t, {1: 2, 2: 2, 3: 2})

    def test_three_ternary_neighbors(self):
        assert regularity_check(star_tree(3), {1: 3, 2: 3, 3: 3, 4: 8})
