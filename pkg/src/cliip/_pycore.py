"""Pure numpy fallbacks for the compiled kernels in ``_core.pyx``."""

import numpy as np
import scipy.sparse as sp


def colocate_pairs(cell, person, enter, leave, cx, cy,
                   distance_threshold, lingering_window):
    n = len(cell)
    thr2 = distance_threshold * distance_threshold
    out_i, out_j = [], []
    # cell boundaries so the inner scan never leaves a cell group
    bounds = np.flatnonzero(np.diff(cell)) + 1
    starts = np.concatenate(([0], bounds))
    stops = np.concatenate((bounds, [n]))
    for lo, hi in zip(starts.tolist(), stops.tolist()):
        if hi - lo < 2:
            continue
        e = enter[lo:hi]
        last = np.searchsorted(e, leave[lo:hi] + lingering_window, side="right")
        for a in range(hi - lo - 1):
            b = np.arange(a + 1, last[a])
            if len(b) == 0:
                continue
            i = lo + a
            j = lo + b
            end = np.minimum(leave[i], leave[j])
            keep = enter[j] < end
            if lingering_window > 0:
                keep |= enter[j] >= leave[i]
            keep &= person[j] != person[i]
            keep &= (cx[i] - cx[j]) ** 2 + (cy[i] - cy[j]) ** 2 <= thr2
            j = j[keep]
            out_i.append(np.full(len(j), i, dtype=np.int64))
            out_j.append(j.astype(np.int64))
    if not out_i:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(out_i), np.concatenate(out_j)


def layer_counts(indptr, indices, sources, max_layer, n):
    counts = np.zeros((max_layer, n), dtype=np.int64)
    sources = np.unique(np.asarray(sources, dtype=np.int64))
    if len(sources) == 0 or n == 0:
        return counts
    adj = sp.csr_matrix(
        (np.ones(len(indices), dtype=np.float32), indices, indptr), shape=(n, n)
    )
    # one row per source; frontier propagation is a sparse matrix product
    frontier = sp.csr_matrix(
        (np.ones(len(sources), dtype=np.float32), (np.arange(len(sources)), sources)),
        shape=(len(sources), n),
    )
    visited = frontier.copy()
    for k in range(max_layer):
        nxt = (frontier @ adj).astype(bool).astype(np.float32)
        nxt = nxt - nxt.multiply(visited)
        nxt.eliminate_zeros()
        if nxt.nnz == 0:
            break
        counts[k] = np.asarray(nxt.sum(axis=0)).ravel().astype(np.int64)
        visited = visited + nxt
        frontier = nxt
    return counts


def best_split(x, g, h, reg_lambda, min_child_weight):
    n = len(x)
    if n < 2:
        return 0.0, -1
    gl = np.cumsum(g)[:-1]
    hl = np.cumsum(h)[:-1]
    G = gl[-1] + g[-1]
    H = hl[-1] + h[-1]
    gr = G - gl
    hr = H - hl
    ok = (x[:-1] != x[1:]) & (hl >= min_child_weight) & (hr >= min_child_weight)
    if not ok.any():
        return 0.0, -1
    gain = 0.5 * (gl**2 / (hl + reg_lambda) + gr**2 / (hr + reg_lambda) - G**2 / (H + reg_lambda))
    gain = np.where(ok, gain, -np.inf)
    pos = int(np.argmax(gain))
    if gain[pos] <= 0.0:
        return 0.0, -1
    return float(gain[pos]), pos
