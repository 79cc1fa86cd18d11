"""Per-epoch individual directed graphs (IDGs) and layer queries.

Nodes are dense person indices ``0..n-1``. An edge ``src -> dst`` means src
left the shared place first; dst, who stayed on, is the one at risk.
Layer distances ignore direction.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kernels
from .ingest import CoLocationList

log = logging.getLogger(__name__)

I_STATE = 4
E_STATE = 2


def _labels(states) -> np.ndarray:
    return np.asarray(getattr(states, "labels", states))


def _csr(rows, cols, n):
    order = np.argsort(rows, kind="stable")
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return indptr, cols[order].astype(np.int64), order


class ContactGraph:
    """Undirected view over a set of weighted contact edges."""

    def __init__(self, n, src, dst, delta_time, delta_distance, extra_nodes=()):
        self.n = int(n)
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.delta_time = np.asarray(delta_time, dtype=np.float64)
        self.delta_distance = np.asarray(delta_distance, dtype=np.float64)
        self._extra = frozenset(int(v) for v in extra_nodes)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @cached_property
    def nodes(self) -> frozenset:
        return frozenset(np.unique(np.concatenate((self.src, self.dst))).tolist()) | self._extra

    @cached_property
    def undirected(self):
        """(indptr, indices, edge_id) with each edge listed from both ends."""
        rows = np.concatenate((self.src, self.dst))
        cols = np.concatenate((self.dst, self.src))
        indptr, indices, order = _csr(rows, cols, self.n)
        eid = np.concatenate((np.arange(self.n_edges), np.arange(self.n_edges)))[order]
        return indptr, indices, eid

    def neighbors(self, u: int) -> np.ndarray:
        indptr, indices, _ = self.undirected
        if not 0 <= u < self.n:
            return indices[:0]
        return indices[indptr[u]:indptr[u + 1]]

    def has_node(self, u: int) -> bool:
        return u in self.nodes


class EpochGraph(ContactGraph):
    def __init__(self, epoch_index, n, src, dst, delta_time, delta_distance,
                 extra_nodes=(), reversed_edges=0):
        super().__init__(n, src, dst, delta_time, delta_distance, extra_nodes)
        self.epoch_index = int(epoch_index)
        self.reversed_edges = int(reversed_edges)

    @cached_property
    def out_csr(self):
        indptr, indices, order = _csr(self.src, self.dst, self.n)
        return indptr, indices, order

    @cached_property
    def in_csr(self):
        indptr, indices, order = _csr(self.dst, self.src, self.n)
        return indptr, indices, order

    def successors(self, u: int) -> np.ndarray:
        indptr, indices, _ = self.out_csr
        return indices[indptr[u]:indptr[u + 1]]

    def predecessors(self, u: int) -> np.ndarray:
        indptr, indices, _ = self.in_csr
        return indices[indptr[u]:indptr[u + 1]]

    def edge(self, u: int, v: int):
        m = np.flatnonzero((self.src == u) & (self.dst == v))
        return None if len(m) == 0 else (float(self.delta_time[m[0]]), float(self.delta_distance[m[0]]))

    def topological_order(self) -> list[int] | None:
        """Kahn's algorithm over the edge endpoints; None when a cycle exists."""
        return _kahn(self.n, self.src, self.dst)


def _kahn(n, src, dst):
    indeg = np.bincount(dst, minlength=n)
    indptr, indices, _ = _csr(src, dst, n)
    used = np.zeros(n, dtype=bool)
    used[src] = True
    used[dst] = True
    queue = deque(np.flatnonzero(used & (indeg == 0)).tolist())
    indeg = indeg.copy()
    order = []
    while queue:
        u = queue.popleft()
        order.append(u)
        for v in indices[indptr[u]:indptr[u + 1]].tolist():
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    return order if len(order) == int(used.sum()) else None


def _merge_pairs(events: CoLocationList):
    """Group events by unordered pair: summed contact time, min distance, latest departures."""
    key = events.a * (1 << 32) + events.b
    uniq, inv = np.unique(key, return_inverse=True)
    m = len(uniq)
    dt = np.zeros(m)
    np.add.at(dt, inv, events.delta_time)
    dd = np.full(m, np.inf)
    np.minimum.at(dd, inv, events.distance)
    la = np.full(m, -np.inf)
    np.maximum.at(la, inv, events.leave_a)
    lb = np.full(m, -np.inf)
    np.maximum.at(lb, inv, events.leave_b)
    a = uniq >> 32
    b = uniq & 0xFFFFFFFF
    return a, b, dt, dd, la, lb


def build_idg(events: CoLocationList, epoch_index: int, n_nodes: int | None = None) -> EpochGraph:
    """One directed edge per contacting pair.

    The pair's latest departures decide direction: whoever left earlier is the
    source; equal times make the smaller index the source. Contacts of one pair
    merge into summed ``delta_time`` and minimum ``delta_distance``. Should the
    orientation close a directed cycle (possible across several places within
    one epoch), edges are inserted by departure time and any edge that would
    close a cycle is reversed; ``reversed_edges`` counts them.
    """
    if n_nodes is None:
        n_nodes = int(max(events.a.max(initial=-1), events.b.max(initial=-1))) + 1
    if len(events) == 0:
        return EpochGraph(epoch_index, n_nodes, [], [], [], [])
    a, b, dt, dd, la, lb = _merge_pairs(events)
    a_first = la <= lb  # a < b, so equal departures keep a as source
    src = np.where(a_first, a, b)
    dst = np.where(a_first, b, a)
    reversed_edges = 0
    if _kahn(n_nodes, src, dst) is None:
        src, dst, reversed_edges = _repair_cycles(src, dst, np.maximum(la, lb))
        log.debug("epoch %d: reversed %d edges to keep the graph acyclic", epoch_index, reversed_edges)
    order = np.lexsort((dst, src))
    return EpochGraph(epoch_index, n_nodes, src[order], dst[order], dt[order], dd[order],
                      reversed_edges=reversed_edges)


def _repair_cycles(src, dst, when):
    src = src.copy()
    dst = dst.copy()
    adj: dict[int, set] = {}

    def reaches(u, target):
        seen = {u}
        stack = [u]
        while stack:
            x = stack.pop()
            if x == target:
                return True
            for y in adj.get(x, ()):
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return False

    flipped = 0
    for e in np.lexsort((dst, src, when)).tolist():
        u, v = int(src[e]), int(dst[e])
        if reaches(v, u):
            src[e], dst[e] = v, u
            u, v = v, u
            flipped += 1
        adj.setdefault(u, set()).add(v)
    return src, dst, flipped


def union_graph(graphs, n_nodes: int | None = None) -> ContactGraph:
    """Undirected union of several graphs: summed contact time, minimum distance per pair."""
    graphs = list(graphs)
    if n_nodes is None:
        n_nodes = max((g.n for g in graphs), default=0)
    if not graphs:
        return ContactGraph(n_nodes, [], [], [], [])
    src = np.concatenate([g.src for g in graphs])
    dst = np.concatenate([g.dst for g in graphs])
    dt = np.concatenate([g.delta_time for g in graphs])
    dd = np.concatenate([g.delta_distance for g in graphs])
    extra = set().union(*(g.nodes for g in graphs))
    if len(src) == 0:
        return ContactGraph(n_nodes, [], [], [], [], extra)
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    key = lo * (1 << 32) + hi
    uniq, inv = np.unique(key, return_inverse=True)
    sdt = np.zeros(len(uniq))
    np.add.at(sdt, inv, dt)
    sdd = np.full(len(uniq), np.inf)
    np.minimum.at(sdd, inv, dd)
    return ContactGraph(n_nodes, uniq >> 32, uniq & 0xFFFFFFFF, sdt, sdd, extra)


def bfs_layers(graph: ContactGraph, start: int, max_layer: int | None = None) -> dict[int, int]:
    """Undirected hop distance from ``start`` to every node within ``max_layer``."""
    indptr, indices, _ = graph.undirected
    dist = {start: 0}
    if not 0 <= start < graph.n:
        return dist
    queue = deque([start])
    while queue:
        u = queue.popleft()
        d = dist[u]
        if max_layer is not None and d >= max_layer:
            continue
        for v in indices[indptr[u]:indptr[u + 1]].tolist():
            if v not in dist:
                dist[v] = d + 1
                queue.append(v)
    return dist


def layer_of(graph: ContactGraph, a: int, b: int) -> int | None:
    """Fewest edges between a and b ignoring direction; None when no path exists."""
    if a == b:
        return 0
    return bfs_layers(graph, a).get(b)


def neighborhood_counts(graph: ContactGraph, node: int, states, max_layer: int = 3):
    """Exact (infected, exposed) counts per layer 1..max_layer around ``node``."""
    if max_layer < 1:
        raise ValueError("max_layer must be >= 1")
    labels = _labels(states)
    inf = np.zeros(max_layer, dtype=np.int64)
    exp = np.zeros(max_layer, dtype=np.int64)
    if node not in graph.nodes:
        return inf, exp
    for v, d in bfs_layers(graph, node, max_layer).items():
        if d == 0:
            continue
        if labels[v] == I_STATE:
            inf[d - 1] += 1
        elif labels[v] == E_STATE:
            exp[d - 1] += 1
    return inf, exp


def layered_source_counts(graph: ContactGraph, sources, max_layer: int = 3) -> np.ndarray:
    """counts[k-1, v]: how many ``sources`` sit exactly k hops from v.

    Summing over sources instead of expanding every node keeps the cost
    proportional to the (small) infected and exposed populations.
    """
    indptr, indices, _ = graph.undirected
    src = np.asarray(sorted(set(int(s) for s in sources)), dtype=np.int64)
    return kernels.layer_counts(indptr, indices, src, int(max_layer), graph.n)


@dataclass
class NeighborhoodEstimate:
    infected: np.ndarray
    exposed: np.ndarray
    visited: np.ndarray
    discovered: np.ndarray
    visited_nodes: list = field(default_factory=list)

    @property
    def coverage(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.discovered > 0, self.visited / np.maximum(self.discovered, 1), 1.0)

    @property
    def n_visited(self) -> int:
        return int(self.visited.sum())


def sample_neighborhood(graph: ContactGraph, node: int, states, max_layer: int,
                        budget: int, rng: np.random.Generator) -> NeighborhoodEstimate:
    """Budgeted no-repeat expansion of the layers around ``node``.

    Layer k is discovered from the visited nodes of layer k-1; a uniformly
    random subset of it is visited while budget remains, and the state counts
    of that subset are scaled up by discovered/visited. No person is
    discovered or visited twice. With enough budget every layer is visited in
    full and the result equals :func:`neighborhood_counts`.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    labels = _labels(states)
    inf = np.zeros(max_layer)
    exp = np.zeros(max_layer)
    vis = np.zeros(max_layer, dtype=np.int64)
    disc = np.zeros(max_layer, dtype=np.int64)
    est = NeighborhoodEstimate(inf, exp, vis, disc)
    if node not in graph.nodes:
        return est
    indptr, indices, _ = graph.undirected
    seen = {node}
    layer = [node]
    left = budget
    for k in range(max_layer):
        found = []
        for u in layer:
            for v in indices[indptr[u]:indptr[u + 1]].tolist():
                if v not in seen:
                    seen.add(v)
                    found.append(v)
        disc[k] = len(found)
        if not found or left == 0:
            break
        take = min(len(found), left)
        picked = [found[i] for i in rng.permutation(len(found))[:take]]
        left -= take
        vis[k] = take
        est.visited_nodes.extend(picked)
        lab = labels[picked]
        scale = len(found) / take
        inf[k] = np.count_nonzero(lab == I_STATE) * scale
        exp[k] = np.count_nonzero(lab == E_STATE) * scale
        layer = picked
    return est


def write_edges(path, graphs, ids=None) -> None:
    """Edge-list CSV ``epoch,src,dst,delta_time,delta_distance``; ``ids`` maps index to person id."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("epoch,src,dst,delta_time,delta_distance\n")
        for g in graphs:
            s = g.src if ids is None else ids[g.src]
            d = g.dst if ids is None else ids[g.dst]
            for row in zip(s.tolist(), d.tolist(), g.delta_time.tolist(), g.delta_distance.tolist()):
                fh.write(f"{g.epoch_index},{row[0]},{row[1]},{row[2]:.3f},{row[3]:.3f}\n")


def read_edges(path, n_nodes: int, n_epochs: int | None = None, ids=None) -> list[EpochGraph]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if n_epochs is None:
        n_epochs = int(data[:, 0].max()) + 1 if len(data) else 0
    if len(data) == 0:
        return [EpochGraph(e, n_nodes, [], [], [], []) for e in range(n_epochs)]
    ep = data[:, 0].astype(np.int64)
    src = data[:, 1].astype(np.int64)
    dst = data[:, 2].astype(np.int64)
    if ids is not None:
        src = np.searchsorted(ids, src)
        dst = np.searchsorted(ids, dst)
    bounds = np.searchsorted(ep, np.arange(n_epochs + 1))
    return [
        EpochGraph(e, n_nodes, src[lo:hi], dst[lo:hi], data[lo:hi, 3], data[lo:hi, 4])
        for e, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:]))
    ]
