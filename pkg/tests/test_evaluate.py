import itertools

import numpy as np
import pytest

from cliip.evaluate import (CoverageError, average_curves, baseline_contact_tracing, baseline_order,
                            cliip_order, curve_from_hits, dominance_fraction, expected_baseline_curve,
                            rank_all, sample_cohort, screening_curve, screening_reduction, write_curves,
                            write_heatmap)
from cliip.graph import EpochGraph
from cliip.learner import TreeEnsemble
from cliip.tracer import CandidateGroup, FeatureVector


class FixedModel:
    def __init__(self, probs):
        self.probs = probs

    def predict_proba(self, X):
        return np.array([self.probs[int(x[0])] for x in X])


def _fv(pid):
    return FeatureVector(pid, 0, 0, 0)


def test_groups_never_interleave():
    groups = [CandidateGroup(1, frozenset({0})), CandidateGroup(2, frozenset({1})), CandidateGroup(3, frozenset({2}))]
    model = FixedModel({0: 0.1, 1: 0.9, 2: 0.9})
    assert rank_all(model, groups, {p: _fv(p) for p in range(3)}) == [0, 1, 2]


def test_probability_descending_inside_group():
    groups = [CandidateGroup(3, frozenset({4, 7}))]
    assert rank_all(FixedModel({4: 0.2, 7: 0.8}), groups, {4: _fv(4), 7: _fv(7)}) == [7, 4]


def test_ties_by_person_id():
    groups = [CandidateGroup(2, frozenset({9, 3, 5}))]
    assert rank_all(TreeEnsemble([]), groups, {p: _fv(p) for p in (3, 5, 9)}) == [3, 5, 9]


def test_pooled_order_matches_rank_all():
    rng = np.random.default_rng(0)
    person = rng.permutation(30)
    group = rng.integers(1, 4, 30)
    prob = rng.integers(0, 4, 30) / 4
    order = cliip_order(group, prob, person)
    groups = [CandidateGroup(g, frozenset(person[group == g].tolist())) for g in (1, 2, 3)]
    model = FixedModel(dict(zip(person.tolist(), prob.tolist())))
    assert person[order].tolist() == rank_all(model, groups, {p: _fv(p) for p in person.tolist()})


def test_curve_perfect_and_worst():
    c = screening_curve([1, 2, 3, 4, 5], {1, 2})
    assert c.found.tolist() == [1, 2, 2, 2, 2] and c.tests_to_reach(1.0) == 2
    w = screening_curve([3, 4, 5, 1, 2], {1, 2})
    assert w.found.tolist() == [0, 0, 0, 1, 2]


def test_curves_are_monotone():
    rng = np.random.default_rng(1)
    c = curve_from_hits(rng.random(300) < 0.1, 40)
    assert (np.diff(c.found) >= 0).all() and (np.diff(c.screened) > 0).all()
    assert c.found[-1] <= c.total_hidden


def test_random_ranking_tracks_diagonal():
    rng = np.random.default_rng(2)
    n, k, trials = 200, 20, 10_000
    truth = np.zeros(n, dtype=bool)
    truth[:k] = True
    acc = np.zeros(n)
    for _ in range(trials):
        acc += np.cumsum(truth[rng.permutation(n)])
    mean = acc / trials
    diag = np.arange(1, n + 1) * k / n
    assert np.max(np.abs(mean - diag)) <= 0.02 * k


def test_star_baseline():
    g = EpochGraph(0, 8, [0] * 5, [1, 2, 3, 4, 5], [1] * 5, [1] * 5)
    order = baseline_contact_tracing([g], {0}, np.zeros(8), np.random.default_rng(0), candidates=range(1, 8))
    assert set(order[:5]) == {1, 2, 3, 4, 5}
    assert set(order[5:]) == {6, 7}


def test_unreachable_after_reachable():
    g = EpochGraph(0, 5, [0, 1], [1, 2], [1, 1], [1, 1])
    order = baseline_contact_tracing([g], {0}, np.zeros(5), np.random.default_rng(3), candidates=[1, 2, 3, 4])
    assert order[:2] == [1, 2] and set(order[2:]) == {3, 4}


def test_expected_curve_equals_permutation_enumeration():
    layers = np.array([1, 1, 1, 2, 2, -1, -1])
    truth = np.array([1, 0, 1, 0, 1, 1, 0], dtype=bool)
    curves = []
    blocks = [np.flatnonzero(layers == v) for v in (1, 2, -1)]
    for perms in itertools.product(*(itertools.permutations(b) for b in blocks)):
        order = np.concatenate(perms)
        curves.append(np.cumsum(truth[order]))
    exact = np.mean(curves, axis=0)
    np.testing.assert_allclose(expected_baseline_curve(layers, truth).found, exact, atol=1e-12)


def test_shuffle_average_approaches_expectation():
    rng = np.random.default_rng(4)
    layers = rng.integers(-1, 4, 500)
    truth = rng.random(500) < 0.1
    avg = average_curves(curve_from_hits(truth[baseline_order(layers, rng)], truth.sum()) for _ in range(100))
    exp = expected_baseline_curve(layers, truth)
    assert np.max(np.abs(avg.found - exp.found)) < 0.1 * truth.sum()


def test_reduction_examples():
    c = curve_from_hits([1, 0, 1, 0], 2)
    assert screening_reduction(c, c, 1.0) == 0.0
    a = curve_from_hits(np.r_[np.ones(500), np.zeros(24500)], 500)
    hits = np.zeros(25000)
    hits[np.linspace(0, 24780, 500).astype(int)] = 1
    b = curve_from_hits(hits, 500)
    assert a.tests_to_reach(1.0) == 500 and b.tests_to_reach(1.0) == 24781
    assert screening_reduction(a, b, 1.0) == pytest.approx(1 - 500 / 24781)
    x = curve_from_hits(np.r_[np.zeros(1499), np.ones(1), np.zeros(23500)], 1)
    y = curve_from_hits(np.r_[np.zeros(24780), np.ones(1), np.zeros(219)], 1)
    assert screening_reduction(x, y, 1.0) == pytest.approx(0.94, abs=0.001)


def test_reduction_by_curve_walk():
    rng = np.random.default_rng(5)
    for _ in range(20):
        h1 = rng.random(2000) < 0.05
        h2 = rng.permutation(h1)
        a, b = curve_from_hits(h1, h1.sum()), curve_from_hits(h2, h1.sum())
        need = int(np.ceil(0.95 * h1.sum()))
        walk = lambda h: next(i + 1 for i, v in enumerate(np.cumsum(h)) if v >= need)
        assert screening_reduction(a, b, 0.95) == pytest.approx(1 - walk(h1) / walk(h2))


def test_unreachable_target_names_curve():
    a = curve_from_hits([1, 0], 3)
    b = curve_from_hits([1, 1], 3)
    with pytest.raises(CoverageError, match="ranked"):
        screening_reduction(a, b, 1.0)
    with pytest.raises(ValueError):
        screening_reduction(a, b, 0.0)


def test_informative_ranking_dominates_random():
    fractions = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        truth = rng.random(2000) < 0.05
        score = truth * 1.0 + rng.normal(0, 0.8, 2000)
        ranked = curve_from_hits(truth[np.argsort(-score)], truth.sum())
        diag = curve_from_hits(np.full(2000, truth.mean()), truth.sum())
        fractions.append(dominance_fraction(ranked, diag))
    assert np.mean(fractions) >= 0.9


def test_cohort_sizes():
    y = np.r_[np.ones(800), np.zeros(30000)]
    idx = sample_cohort(y, np.random.default_rng(0), 500, 1, 50)
    assert len(idx) == 25000 and y[idx].sum() == 500 and len(np.unique(idx)) == 25000


def test_exports(tmp_path):
    c = curve_from_hits([1, 0], 1)
    write_curves(tmp_path / "c.csv", [(c, "cliip", 3, "1:50")])
    assert (tmp_path / "c.csv").read_text().splitlines() == [
        "screened,found,method,seed,cohort", "1,1,cliip,3,1:50", "2,1,cliip,3,1:50"]
    write_heatmap(tmp_path / "h.csv", [10, 11], [1.0, 2.0], [3.0, 4.0], [0.25, 1.0], [0, 4])
    assert (tmp_path / "h.csv").read_text().splitlines() == [
        "person_id,x,y,probability,state", "10,1.00,3.00,0.250000,S", "11,2.00,4.00,1.000000,I"]
