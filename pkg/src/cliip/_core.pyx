# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Signatures mirror :mod:`cliip._pycore` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def colocate_pairs(const long long[:] cell, const long long[:] person,
                   const double[:] enter, const double[:] leave,
                   const double[:] cx, const double[:] cy,
                   double distance_threshold, double lingering_window):
    """Pairs (i, j), i < j, of stays by different people in one cell that
    overlap in time or follow each other within ``lingering_window``.

    Inputs must be sorted by (cell, enter). Centroid distance above
    ``distance_threshold`` excludes a pair.
    """
    cdef Py_ssize_t n = cell.shape[0]
    cdef Py_ssize_t i, j, k = 0, cap = max(16, 4 * n)
    cdef double reach, dx, dy, end, thr2 = distance_threshold * distance_threshold
    cdef bint keep
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_i = np.empty(cap, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_j = np.empty(cap, dtype=np.int64)
    for i in range(n):
        reach = leave[i] + lingering_window
        j = i + 1
        while j < n and cell[j] == cell[i] and enter[j] <= reach:
            if person[j] != person[i]:
                end = leave[i] if leave[i] < leave[j] else leave[j]
                keep = enter[j] < end
                if not keep and lingering_window > 0:
                    keep = enter[j] >= leave[i]
                if keep:
                    dx = cx[i] - cx[j]
                    dy = cy[i] - cy[j]
                    if dx * dx + dy * dy <= thr2:
                        if k == cap:
                            cap *= 2
                            out_i = np.resize(out_i, cap)
                            out_j = np.resize(out_j, cap)
                        out_i[k] = i
                        out_j[k] = j
                        k += 1
            j += 1
    return out_i[:k].copy(), out_j[:k].copy()


def layer_counts(const long long[:] indptr, const long long[:] indices,
                 const long long[:] sources, int max_layer, Py_ssize_t n):
    """counts[k-1, v] = number of sources at undirected distance exactly k of v."""
    cdef cnp.ndarray[cnp.int64_t, ndim=2] counts = np.zeros((max_layer, n), dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] stamp = np.full(n, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] queue = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] depth = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t s, src, head, tail, u, v, e
    cdef long long d
    for s in range(sources.shape[0]):
        src = sources[s]
        if stamp[src] == s:
            continue
        stamp[src] = s
        head = 0
        tail = 1
        queue[0] = src
        depth[src] = 0
        while head < tail:
            u = queue[head]
            head += 1
            d = depth[u]
            if d >= max_layer:
                continue
            for e in range(indptr[u], indptr[u + 1]):
                v = indices[e]
                if stamp[v] != s:
                    stamp[v] = s
                    depth[v] = d + 1
                    counts[d, v] += 1
                    queue[tail] = v
                    tail += 1
    return counts


def best_split(const double[:] x, const double[:] g, const double[:] h,
               double reg_lambda, double min_child_weight):
    """Best threshold split of one sorted feature column.

    Returns (gain, position) where the left child takes rows [0, position].
    Position -1 means no admissible split.
    """
    cdef Py_ssize_t n = x.shape[0], i
    cdef double G = 0.0, H = 0.0, gl = 0.0, hl = 0.0, gr, hr, gain
    cdef double best = 0.0, parent
    cdef Py_ssize_t pos = -1
    for i in range(n):
        G += g[i]
        H += h[i]
    parent = G * G / (H + reg_lambda)
    for i in range(n - 1):
        gl += g[i]
        hl += h[i]
        if x[i] == x[i + 1]:
            continue
        hr = H - hl
        if hl < min_child_weight or hr < min_child_weight:
            continue
        gr = G - gl
        gain = 0.5 * (gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent)
        if gain > best:
            best = gain
            pos = i
    return best, pos
