import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cliip.graph import ContactGraph
from cliip.learner import (ContinuousLearner, GBDTParams, TrainingError, Tree, TreeEnsemble,
                           UndefinedMetricError, auc, continuous_update, fit_gbdt, predict,
                           superspreader_score, train)
from cliip.tracer import FeatureVector



def pairs_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def _separable(rng, n=400):
    y = rng.random(n) < 0.3
    X = rng.uniform(0, 100, (n, 4))
    X[:, 2] = np.where(y, rng.integers(1, 5, n), 0)
    return X, y.astype(int)


# auc


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auc_single_class():
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=80))
def test_auc_equals_all_pairs(rows):
    scores, labels = zip(*rows)
    if len(set(labels)) < 2:
        return
    assert auc(scores, labels) == pytest.approx(pairs_auc(scores, labels), abs=1e-12)


# training


def test_separable_data_reaches_auc_one(rng):
    X, y = _separable(rng)
    model, rep = train(X, y, 0.3, GBDTParams(n_rounds=20), rng)
    assert rep.auc == 1.0
    assert rep.n_test + rep.n_train == len(y)
    assert rep.n_test == pytest.approx(0.3 * len(y), abs=2)
    assert np.argmax(model.importance) == 2


def test_permuted_labels_give_chance_auc():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X, y = _separable(rng, 1500)
        _, rep = train(X, rng.permutation(y), 0.3, GBDTParams(n_rounds=30), rng)
        assert 0.4 <= rep.auc <= 0.6


def test_single_class_is_rejected():
    with pytest.raises(TrainingError, match="negative"):
        train(np.zeros((10, 4)), np.zeros(10))


def test_importances_sum_to_one(rng):
    X, y = _separable(rng)
    m = fit_gbdt(X, y, GBDTParams(n_rounds=10))
    assert m.importance.sum() == pytest.approx(1.0)
    assert (m.importance >= 0).all()


def test_constant_shift_keeps_auc(rng):
    X, y = _separable(rng)
    X[:, 0] += rng.normal(0, 5, len(y)) * y
    _, a = train(X, y, 0.3, GBDTParams(n_rounds=15), np.random.default_rng(1))
    X2 = X.copy()
    X2[:, 0] += 1234.5
    _, b = train(X2, y, 0.3, GBDTParams(n_rounds=15), np.random.default_rng(1))
    assert a.auc == b.auc


def test_training_is_deterministic(rng):
    X, y = _separable(rng)
    a, _ = train(X, y, 0.3, GBDTParams(n_rounds=10), np.random.default_rng(4))
    b, _ = train(X, y, 0.3, GBDTParams(n_rounds=10), np.random.default_rng(4))
    assert a.to_dict() == b.to_dict()


# prediction


def test_zero_trees_predict_half():
    assert predict(TreeEnsemble([]), FeatureVector(1, 2, 3, 4)) == 0.5


def test_leaf_clamp_keeps_probability_below_one():
    X = np.zeros((50, 4))
    y = np.ones(50)
    y[0] = 0
    X[0, 0] = 1
    m = fit_gbdt(X, y, GBDTParams(n_rounds=200, learning_rate=1.0, reg_lambda=0.0, leaf_clamp=4.0))
    for t in m.trees:
        assert max(abs(v) for v in t.value) <= 4.0
    p = m.predict_proba(X)
    assert (p > 0).all() and (p < 1).all()


def test_two_tree_walk():
    t1 = Tree()
    r = t1.add(0, 10.0)
    t1.left[r] = t1.add(value=1.0)
    t1.right[r] = t1.add(value=-2.0)
    t2 = Tree()
    r = t2.add(2, 0.5)
    t2.left[r] = t2.add(value=0.5)
    t2.right[r] = t2.add(3, 7.0)
    t2.left[t2.right[r]] = t2.add(value=3.0)
    t2.right[t2.right[r]] = t2.add(value=-1.0)
    m = TreeEnsemble([t1, t2], learning_rate=0.1)
    cases = {(5, 0, 0, 0): 1.0 + 0.5, (10, 0, 1, 7): 1.0 + 3.0, (11, 0, 1, 8): -2.0 - 1.0, (11, 0, 0.5, 9): -2.0 + 0.5}
    for x, total in cases.items():
        expect = 1.0 / (1.0 + np.exp(-0.1 * total))
        assert predict(m, FeatureVector(*x)) == pytest.approx(expect, abs=1e-15)


def test_model_round_trip(tmp_path, rng):
    X, y = _separable(rng)
    m = fit_gbdt(X, y, GBDTParams(n_rounds=5))
    m.save(tmp_path / "m.json")
    back = TreeEnsemble.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.predict_proba(X), m.predict_proba(X))


# continuous update


def test_update_with_same_data_is_identical(rng):
    X, y = _separable(rng)
    a = ContinuousLearner(GBDTParams(n_rounds=8), seed=3)
    b = ContinuousLearner(GBDTParams(n_rounds=8), seed=3)
    assert a.update(X, y).to_dict() == b.update(X, y).to_dict()


def test_cold_start_equals_train(rng):
    X, y = _separable(rng)
    params = GBDTParams(n_rounds=8)
    m = continuous_update(None, X, params=params, seed=5, labels=y)
    ref, _ = train(X, y, 0.3, params, np.random.default_rng(5))
    assert m.to_dict() == ref.to_dict()


@pytest.mark.parametrize("seed", range(5))
def test_more_positives_do_not_lower_canonical_positive(seed):
    # balanced class weights would rescale the duplicated positives back down,
    # so the paired comparison runs unweighted
    rng = np.random.default_rng(seed)
    n = 600
    X = rng.uniform(0, 1, (n, 4))
    # label noise only below the canonical point's region
    y = (X[:, 0] + 0.3 * rng.normal(size=n) * (X[:, 0] < 0.85) > 0.7).astype(int)
    lr = ContinuousLearner(GBDTParams(n_rounds=20, balance_classes=False), seed=0)
    lr.update(X, y)
    canon = np.array([[0.95, 0.5, 0.5, 0.5]])
    before = lr.model.predict_proba(canon)[0]
    pos = y == 1
    lr.update(X[pos], y[pos])
    assert lr.model.predict_proba(canon)[0] >= before


def test_warm_start_appends_rounds(rng):
    X, y = _separable(rng)
    lr = ContinuousLearner(GBDTParams(n_rounds=5), policy="warm_start", warm_rounds=3)
    lr.update(X, y)
    first = len(lr.model.trees)
    lr.update(X[:50], y[:50])
    assert len(lr.model.trees) == first + 3


# superspreader score


def test_superspreader_examples():
    g = ContactGraph(4, [0, 1, 2], [1, 2, 3], [1, 1, 1], [1, 1, 1])
    states = np.array([0, 4, 0, 4])
    assert superspreader_score(g, 0, states, [0, 0, 0]) == 0
    assert superspreader_score(g, 0, states, [1, 0, 0]) == 1
    assert superspreader_score(g, 0, states, [1, 0.5, 0.25]) == 1.25


def test_superspreader_needs_weights():
    with pytest.raises(ValueError):
        superspreader_score(ContactGraph(1, [], [], [], []), 0, [0], [])
