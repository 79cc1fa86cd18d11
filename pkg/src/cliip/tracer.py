"""Backward/forward tracking over a window of epoch graphs and candidate features."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .epidemic import NEVER, IncubationModel, State
from .graph import (ContactGraph, EpochGraph, layered_source_counts, neighborhood_counts,
                    sample_neighborhood, union_graph)

FEATURES = ("delta_time", "delta_distance", "infected_around", "exposed_around")
EXCLUDED = (State.I, State.H, State.R, State.Sq, State.Eq)


def _labels(states) -> np.ndarray:
    return np.asarray(getattr(states, "labels", states))


@dataclass(frozen=True)
class SearchWindow:
    """Days ``[start, end]`` before a confirmation on day ``confirm``."""

    confirm: int
    start: int
    end: int
    partial: bool = False

    def __post_init__(self):
        if not self.start <= self.end < self.confirm:
            raise ValueError(f"invalid window [{self.start}, {self.end}] for day {self.confirm}")

    @property
    def days(self) -> range:
        return range(self.start, self.end + 1)

    def epochs(self, epochs_per_day: int) -> range:
        return range(self.start * epochs_per_day, (self.end + 1) * epochs_per_day)


def backward_window(confirm_day: int, incubation: IncubationModel) -> SearchWindow:
    """``[t - n_max, t - 1]`` in days, clamped at day 0 and flagged partial when clamped."""
    if confirm_day < 1:
        raise ValueError("no day precedes a confirmation on day 0")
    span = incubation.window_days()
    start = confirm_day - span
    return SearchWindow(confirm_day, max(start, 0), confirm_day - 1, partial=start < 0)


def _expand(indptr, indices, frontier):
    starts = indptr[frontier]
    lens = indptr[frontier + 1] - starts
    total = int(lens.sum())
    if total == 0:
        return indices[:0]
    offs = np.repeat(starts - np.cumsum(lens) + lens, lens) + np.arange(total)
    return indices[offs]


def multi_source_distance(indptr, indices, sources, n, max_layer) -> np.ndarray:
    """Hop distance from the nearest source, -1 beyond ``max_layer`` or unreachable."""
    dist = np.full(n, -1, dtype=np.int64)
    frontier = np.unique(np.asarray(list(sources), dtype=np.int64))
    if len(frontier) == 0:
        return dist
    dist[frontier] = 0
    for k in range(1, max_layer + 1):
        nb = _expand(indptr, indices, frontier)
        nb = np.unique(nb[dist[nb] < 0])
        if len(nb) == 0:
            break
        dist[nb] = k
        frontier = nb
    return dist


def forward_track(graphs, sources, max_layer: int = 3, states=None) -> dict[int, int]:
    """People reachable from ``sources`` along edge direction in any window graph,
    mapped to their smallest layer across graphs.

    With ``states`` given, a source whose direct contacts include another
    I-state person is not expanded past that first layer.
    """
    sources = sorted(set(int(s) for s in sources))
    if not sources:
        raise ValueError("forward_track needs at least one source")
    best: dict[int, int] = {s: 0 for s in sources}
    labels = None if states is None else _labels(states)
    for g in graphs:
        indptr, indices, _ = g.out_csr
        if labels is None:
            starts = [s for s in sources if s < g.n]
            runs = [(starts, max_layer)]
        else:
            runs = []
            for s in sources:
                if s >= g.n:
                    continue
                first = g.neighbors(s)
                stop = bool(np.any((labels[first] == State.I) & (first != s)))
                runs.append(([s], 1 if stop else max_layer))
        for starts, cap in runs:
            if not starts:
                continue
            dist = multi_source_distance(indptr, indices, starts, g.n, cap)
            for v in np.flatnonzero(dist >= 0).tolist():
                d = int(dist[v])
                if d < best.get(v, max_layer + 1):
                    best[v] = d
    return best


def path_candidates(graphs, infected, max_layer: int = 3) -> set[int]:
    """Non-infected people on a directed path ``A -> ... -> x -> ... -> B`` between
    two distinct infected people in one window graph, path length <= ``max_layer``."""
    infected = sorted(set(int(v) for v in infected))
    out: set[int] = set()
    if len(infected) < 2:
        return out
    for g in graphs:
        if g.n_edges == 0:
            continue
        srcs = [v for v in infected if v < g.n]
        fwd = multi_source_distance(*g.out_csr[:2], srcs, g.n, max_layer)
        bwd = multi_source_distance(*g.in_csr[:2], srcs, g.n, max_layer)
        ok = (fwd >= 1) & (bwd >= 1) & (fwd + bwd <= max_layer)
        ok[srcs] = False
        out.update(np.flatnonzero(ok).tolist())
    return out


@dataclass(frozen=True)
class CandidateGroup:
    rank: int
    members: frozenset


def candidate_groups(graphs, states, infected_new, max_layer: int = 3) -> list[CandidateGroup]:
    """Disjoint ranked groups: 1 on-path people, 2 other E, 3 other S.

    ``infected_new`` are the confirmed cases whose connecting paths are
    searched. People in I, H, R, Sq or Eq never appear. Empty groups are omitted.
    """
    labels = _labels(states)
    eligible = (labels == State.S) | (labels == State.E)
    on_path = {v for v in path_candidates(graphs, infected_new, max_layer) if eligible[v]}
    g2 = set(np.flatnonzero(labels == State.E).tolist()) - on_path
    g3 = set(np.flatnonzero(labels == State.S).tolist()) - on_path
    groups = [CandidateGroup(1, frozenset(on_path)), CandidateGroup(2, frozenset(g2)),
              CandidateGroup(3, frozenset(g3))]
    return [g for g in groups if g.members]


@dataclass
class FeatureVector:
    delta_time: float
    delta_distance: float
    infected_around: float
    exposed_around: float
    label: int | None = None
    flagged: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.delta_time, self.delta_distance, self.infected_around,
                         self.exposed_around], dtype=np.float64)


def infected_contact(graphs, states, sentinel: float, n: int | None = None, contact_states=None):
    """Per person: summed contact time with I-state people over ``graphs`` and the closest such distance.

    ``contact_states`` optionally gives one label row per graph, so a neighbour
    counts when it was I during that epoch; otherwise ``states`` applies to all.
    """
    labels = _labels(states)
    n = len(labels) if n is None else n
    dt = np.zeros(n)
    dd = np.full(n, np.inf)
    for k, g in enumerate(graphs):
        if g.n_edges == 0:
            continue
        is_i = (labels if contact_states is None else np.asarray(contact_states[k])) == State.I
        a = is_i[g.src]
        b = is_i[g.dst]
        np.add.at(dt, g.dst[a], g.delta_time[a])
        np.minimum.at(dd, g.dst[a], g.delta_distance[a])
        np.add.at(dt, g.src[b], g.delta_time[b])
        np.minimum.at(dd, g.src[b], g.delta_distance[b])
    dd[~np.isfinite(dd)] = sentinel
    return dt, dd


def extract_features(person: int, graphs, states, counts_mode: str = "exact", budget: int = 0,
                     rng: np.random.Generator | None = None, max_layer: int = 3,
                     sentinel: float = 100.0, window: ContactGraph | None = None,
                     contact_states=None) -> FeatureVector:
    """Interaction features of one person over the window graphs.

    Layer counts are taken on the undirected union of the window (``window``
    may pass a precomputed one).
    """
    graphs = list(graphs)
    labels = _labels(states)
    if not any(person in g.nodes for g in graphs):
        return FeatureVector(0.0, sentinel, 0.0, 0.0, flagged=True)
    dt = 0.0
    dd = np.inf
    for k, g in enumerate(graphs):
        lab_k = labels if contact_states is None else np.asarray(contact_states[k])
        for ends, other in ((g.src, g.dst), (g.dst, g.src)):
            m = (ends == person) & (lab_k[other] == State.I)
            if m.any():
                dt += float(g.delta_time[m].sum())
                dd = min(dd, float(g.delta_distance[m].min()))
    if not np.isfinite(dd):
        dd = sentinel
    u = window if window is not None else union_graph(graphs, len(labels))
    if counts_mode == "exact":
        inf, exp = neighborhood_counts(u, person, labels, max_layer)
    elif counts_mode == "sampled":
        if rng is None:
            raise ValueError("sampled mode needs an rng")
        est = sample_neighborhood(u, person, labels, max_layer, budget, rng)
        inf, exp = est.infected, est.exposed
    else:
        raise ValueError(f"unknown counts_mode {counts_mode!r}")
    return FeatureVector(dt, dd, float(np.sum(inf)), float(np.sum(exp)))


def extract_features_batch(persons, graphs, states, max_layer: int = 3, sentinel: float = 100.0,
                           window: ContactGraph | None = None, counts_mode: str = "exact",
                           budget: int = 0, rng: np.random.Generator | None = None, contact_states=None):
    """Feature matrix (len(persons), 4) and the absent-from-window flags.

    Exact layer counts run one bounded BFS per I/E person and scatter the
    hits, rather than one BFS per candidate.
    """
    graphs = list(graphs)
    labels = _labels(states)
    persons = np.asarray(list(persons), dtype=np.int64)
    n = len(labels)
    u = window if window is not None else union_graph(graphs, n)
    dt, dd = infected_contact(graphs, labels, sentinel, n, contact_states)
    present = np.zeros(n, dtype=bool)
    for g in graphs:
        present[g.src] = True
        present[g.dst] = True
    if counts_mode == "exact":
        inf = layered_source_counts(u, np.flatnonzero(labels == State.I), max_layer).sum(axis=0)
        exp = layered_source_counts(u, np.flatnonzero(labels == State.E), max_layer).sum(axis=0)
        ia, ea = inf[persons].astype(float), exp[persons].astype(float)
    else:
        ia = np.zeros(len(persons))
        ea = np.zeros(len(persons))
        for k, p in enumerate(persons.tolist()):
            if present[p]:
                est = sample_neighborhood(u, p, labels, max_layer, budget, rng)
                ia[k], ea[k] = est.infected.sum(), est.exposed.sum()
    X = np.column_stack((dt[persons], dd[persons], ia, ea))
    flagged = ~present[persons]
    X[flagged] = (0.0, sentinel, 0.0, 0.0)
    return X, flagged


def label_candidates(persons, final, epoch: int, horizon_epochs: int, positive: str = "I") -> np.ndarray:
    """1 when the person turns I (or, with ``positive='IE'``, E or I) within ``(epoch, epoch + horizon]``."""
    persons = np.asarray(list(persons), dtype=np.int64)
    conf = final.confirmed_epoch[persons]
    y = (conf > epoch) & (conf <= epoch + horizon_epochs) & (conf != NEVER)
    if positive == "IE":
        inf = final.infected_epoch[persons]
        y |= (inf > epoch) & (inf <= epoch + horizon_epochs) & (inf != NEVER)
    return y.astype(np.int8)


@dataclass
class FeatureTable:
    """Stacked candidate rows from many ranking events."""

    person: np.ndarray
    epoch: np.ndarray
    X: np.ndarray
    y: np.ndarray
    group: np.ndarray
    layer: np.ndarray  # contact-tracing layer from the event's confirmed cases, -1 unreachable
    flagged: np.ndarray
    hidden: np.ndarray  # E at ranking time: infected but not yet confirmed

    def __len__(self) -> int:
        return len(self.person)

    @classmethod
    def concat(cls, tables) -> "FeatureTable":
        tables = list(tables)
        if not tables:
            return cls.empty()
        return cls(*(np.concatenate([getattr(t, f) for t in tables]) for f in _TABLE_FIELDS))

    @classmethod
    def empty(cls) -> "FeatureTable":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, 4)), np.zeros(0, np.int8),
                   np.zeros(0, np.int8), np.zeros(0, np.int64), np.zeros(0, bool), np.zeros(0, bool))

    def take(self, idx) -> "FeatureTable":
        return FeatureTable(*(getattr(self, f)[idx] for f in _TABLE_FIELDS))

    def write(self, path, ids=None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pid = self.person if ids is None else np.asarray(ids)[self.person]
        with path.open("w", encoding="utf-8") as fh:
            fh.write("person_id,epoch,delta_time,delta_distance,infected_around,exposed_around,label\n")
            for p, e, x, y in zip(pid.tolist(), self.epoch.tolist(), self.X.tolist(), self.y.tolist()):
                fh.write(f"{p},{e},{x[0]:.3f},{x[1]:.3f},{x[2]:g},{x[3]:g},{y}\n")

    @classmethod
    def read(cls, path, ids=None) -> "FeatureTable":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        person = data[:, 0].astype(np.int64)
        if ids is not None:
            person = np.searchsorted(ids, person)
        n = len(data)
        return cls(person, data[:, 1].astype(np.int64), data[:, 2:6], data[:, 6].astype(np.int8),
                   np.zeros(n, np.int8), np.full(n, -1, np.int64), np.zeros(n, bool), np.zeros(n, bool))


_TABLE_FIELDS = ("person", "epoch", "X", "y", "group", "layer", "flagged", "hidden")


def window_graphs(graphs: list[EpochGraph], window: SearchWindow, epochs_per_day: int) -> list[EpochGraph]:
    return [graphs[e] for e in window.epochs(epochs_per_day) if 0 <= e < len(graphs)]
