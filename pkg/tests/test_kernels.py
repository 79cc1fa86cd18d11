"""Compiled kernels against their numpy fallbacks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cliip import _pycore, kernels

core = pytest.importorskip("cliip._core")


def test_backend_reports_choice():
    assert kernels.BACKEND in ("cython", "python")


def _stays(rng, m, cells):
    cell = np.sort(rng.integers(0, cells, m)).astype(np.int64)
    enter = rng.uniform(0, 5000, m)
    order = np.lexsort((enter, cell))
    cell, enter = cell[order], enter[order]
    leave = enter + rng.uniform(0, 2000, m)
    person = rng.integers(0, 30, m).astype(np.int64)
    cx = rng.uniform(0, 20, m)
    cy = rng.uniform(0, 20, m)
    return cell, person, enter, leave, cx, cy


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 80), st.sampled_from([0.0, 60.0, 600.0]),
       st.sampled_from([0.0, 5.0, 10.0, 30.0]))
def test_colocate_matches_fallback(seed, m, linger, thr):
    rng = np.random.default_rng(seed)
    args = _stays(rng, m, 4)
    a = core.colocate_pairs(*args, thr, linger)
    b = _pycore.colocate_pairs(*args, thr, linger)
    assert sorted(zip(*map(np.ndarray.tolist, a))) == sorted(zip(*map(np.ndarray.tolist, b)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 60), st.integers(1, 4))
def test_layer_counts_matches_fallback(seed, n, max_layer):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < 0.08
    rows = np.concatenate((iu[keep], ju[keep]))
    cols = np.concatenate((ju[keep], iu[keep]))
    order = np.lexsort((cols, rows))
    indptr = np.concatenate(([0], np.cumsum(np.bincount(rows, minlength=n)))).astype(np.int64)
    indices = cols[order].astype(np.int64)
    sources = np.unique(rng.integers(0, n, max(1, n // 5))).astype(np.int64)
    np.testing.assert_array_equal(core.layer_counts(indptr, indices, sources, max_layer, n),
                                  _pycore.layer_counts(indptr, indices, sources, max_layer, n))


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 50), st.sampled_from([0.0, 1.0, 5.0]))
def test_best_split_matches_fallback(seed, n, mcw):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.integers(0, 6, n).astype(np.float64))
    g = rng.normal(size=n)
    h = rng.uniform(0.05, 1, n)
    ga, pa = core.best_split(x, g, h, 1.0, mcw)
    gb, pb = _pycore.best_split(x, g, h, 1.0, mcw)
    assert pa == pb
    assert ga == pytest.approx(gb, rel=1e-9, abs=1e-12)


def test_best_split_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(2, 30))
        x = np.sort(rng.integers(0, 5, n).astype(float))
        g = rng.normal(size=n)
        h = rng.uniform(0.1, 1, n)
        lam = 1.0
        score = lambda G, H: 0.5 * G * G / (H + lam)
        best, pos = 0.0, -1
        for k in range(1, n):
            if x[k] == x[k - 1]:
                continue
            gain = score(g[:k].sum(), h[:k].sum()) + score(g[k:].sum(), h[k:].sum()) - score(g.sum(), h.sum())
            if gain > best + 1e-12:
                best, pos = gain, k
        got_gain, got_pos = kernels.best_split(x, g, h, lam, 0.0)
        if pos < 0:
            assert got_pos == -1
        else:
            assert got_gain == pytest.approx(best)
            assert got_pos == pos - 1  # left child holds rows [0, got_pos]
