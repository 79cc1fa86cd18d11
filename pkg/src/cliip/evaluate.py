"""Ranked screening against layer-by-layer contact tracing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .epidemic import STATE_NAMES, State
from .graph import union_graph
from .tracer import CandidateGroup, FeatureVector, multi_source_distance


class CoverageError(ValueError):
    pass


def rank_all(model, groups: list[CandidateGroup], features: dict) -> list[int]:
    """Group-major order (1, 2, 3); probability descending inside a group, ties by person id."""
    out = []
    for grp in sorted(groups, key=lambda g: g.rank):
        members = sorted(grp.members)
        if not members:
            continue
        missing = [p for p in members if p not in features]
        if missing:
            raise KeyError(f"no feature vector for {missing[:5]}")
        X = np.array([features[p].as_array() if isinstance(features[p], FeatureVector)
                      else np.asarray(features[p], dtype=float) for p in members])
        prob = model.predict_proba(X) if model is not None else np.full(len(members), 0.5)
        order = np.lexsort((np.asarray(members), -prob))
        out.extend(members[i] for i in order.tolist())
    return out


def cliip_order(group, prob, person, epoch=None) -> np.ndarray:
    """Row order for pooled candidate tables: group, then probability desc, then person, epoch."""
    keys = [np.asarray(person), -np.asarray(prob), np.asarray(group)]
    if epoch is not None:
        keys.insert(0, np.asarray(epoch))
    return np.lexsort(keys)


@dataclass
class ScreeningCurve:
    screened: np.ndarray  # 1..n
    found: np.ndarray  # cumulative hidden infected found (float for averaged curves)
    total_hidden: int
    cohort: dict = field(default_factory=dict)

    def __post_init__(self):
        self.screened = np.asarray(self.screened)
        self.found = np.asarray(self.found, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.screened)

    def tests_to_reach(self, coverage: float) -> int:
        """Fewest people screened to find ``coverage`` of the hidden infected."""
        need = math.ceil(coverage * self.total_hidden - 1e-9)
        hit = np.flatnonzero(self.found >= need - 1e-9)
        if need > 0 and len(hit) == 0:
            raise CoverageError(f"curve never reaches {coverage:.0%} coverage")
        return int(self.screened[hit[0]]) if need > 0 else 0


def screening_curve(ranked, ground_truth, cohort: dict | None = None) -> ScreeningCurve:
    truth = set(ground_truth)
    hits = np.fromiter((p in truth for p in ranked), dtype=np.int64, count=len(ranked))
    return curve_from_hits(hits, len(truth), cohort)


def curve_from_hits(hits, total_hidden: int, cohort: dict | None = None) -> ScreeningCurve:
    hits = np.asarray(hits, dtype=np.float64)
    return ScreeningCurve(np.arange(1, len(hits) + 1), np.cumsum(hits), int(total_hidden), cohort or {})


def contact_layers(graphs, confirmed, candidates, max_layer: int | None = None) -> dict:
    """Undirected hop distance of every candidate from the confirmed set over the
    union of ``graphs``; -1 when unreachable."""
    graphs = list(graphs)
    n = max([g.n for g in graphs] + [max(candidates, default=-1) + 1])
    u = union_graph(graphs, n)
    indptr, indices, _ = u.undirected
    dist = multi_source_distance(indptr, indices, confirmed, n, max_layer or n)
    return {int(c): int(dist[c]) for c in candidates}


def baseline_order(layers, rng: np.random.Generator) -> np.ndarray:
    """Indices ordered by layer (unreachable last), uniformly shuffled within a layer."""
    layers = np.asarray(layers)
    key = np.where(layers < 0, np.iinfo(np.int64).max, layers)
    return np.lexsort((rng.random(len(layers)), key))


def baseline_contact_tracing(graphs, confirmed, states, rng: np.random.Generator,
                             candidates=None) -> list[int]:
    """Layer-1 contacts of the confirmed cases in random order, then layer 2 and
    onwards, then everyone unreachable, until every candidate is listed.

    Candidates default to S and E people outside ``confirmed``.
    """
    confirmed = set(int(c) for c in confirmed)
    if not confirmed:
        raise ValueError("contact tracing needs at least one confirmed case")
    if candidates is None:
        lab = np.asarray(getattr(states, "labels", states))
        candidates = np.flatnonzero((lab == State.S) | (lab == State.E)).tolist()
    candidates = sorted(set(int(c) for c in candidates) - confirmed)
    layers = contact_layers(graphs, confirmed, candidates)
    lay = np.array([layers[c] for c in candidates], dtype=np.int64)
    return [candidates[i] for i in baseline_order(lay, rng).tolist()]


def expected_baseline_curve(layers, truth_mask, cohort: dict | None = None) -> ScreeningCurve:
    """Exact mean curve of :func:`baseline_order` over within-layer shuffles.

    Inside a block of m people holding k positives, the j-th screened person
    is positive with probability k/m.
    """
    layers = np.asarray(layers)
    truth = np.asarray(truth_mask, dtype=bool)
    key = np.where(layers < 0, np.iinfo(np.int64).max, layers)
    rate = np.zeros(len(layers))
    order = np.argsort(key, kind="stable")
    sk = key[order]
    st = truth[order]
    edges = np.flatnonzero(np.diff(sk)) + 1
    starts = np.concatenate(([0], edges))
    stops = np.concatenate((edges, [len(sk)]))
    for a, b in zip(starts.tolist(), stops.tolist()):
        rate_v = st[a:b].mean() if b > a else 0.0
        rate[a:b] = rate_v
    return curve_from_hits(rate, int(truth.sum()), cohort)


def average_curves(curves) -> ScreeningCurve:
    curves = list(curves)
    found = np.mean([c.found for c in curves], axis=0)
    return ScreeningCurve(curves[0].screened, found, curves[0].total_hidden, dict(curves[0].cohort))


def mean_tests_to_reach(curves, coverage: float) -> float:
    return float(np.mean([c.tests_to_reach(coverage) for c in curves]))


def screening_reduction(cliip_curve: ScreeningCurve, baseline_curve: ScreeningCurve,
                        coverage_target: float = 1.0) -> float:
    """1 - (tests ranked screening needs) / (tests contact tracing needs) at ``coverage_target``."""
    if not 0.0 < coverage_target <= 1.0:
        raise ValueError("coverage_target must lie in (0, 1]")
    if cliip_curve.total_hidden != baseline_curve.total_hidden or len(cliip_curve) != len(baseline_curve):
        raise ValueError("curves come from different cohorts")
    try:
        a = cliip_curve.tests_to_reach(coverage_target)
    except CoverageError as exc:
        raise CoverageError(f"ranked curve: {exc}") from None
    try:
        b = baseline_curve.tests_to_reach(coverage_target)
    except CoverageError as exc:
        raise CoverageError(f"baseline curve: {exc}") from None
    if b == 0:
        return 0.0
    return 1.0 - a / b


def dominance_fraction(a: ScreeningCurve, b: ScreeningCurve, tol: float = 1e-9) -> float:
    """Share of screened counts at which ``a`` has found at least as many as ``b``."""
    return float(np.mean(a.found >= b.found - tol))


def sample_cohort(y, rng: np.random.Generator, base_unit: int = 500, infected_units: int = 1,
                  total_units: int = 50) -> np.ndarray:
    """Row indices of a cohort with ``infected_units`` base units of positives and
    ``total_units`` base units overall, drawn without replacement.

    When the pool is short the unit count is kept and the shortfall is
    reported through a smaller cohort.
    """
    y = np.asarray(y).astype(bool)
    pos = np.flatnonzero(y)
    neg = np.flatnonzero(~y)
    k_pos = min(base_unit * infected_units, len(pos))
    k_neg = min(base_unit * (total_units - infected_units), len(neg))
    idx = np.concatenate((rng.choice(pos, k_pos, replace=False), rng.choice(neg, k_neg, replace=False)))
    return np.sort(idx)


def write_curves(path, rows) -> None:
    """``rows`` of (curve, method, seed, cohort-name) into ``screened,found,method,seed,cohort``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("screened,found,method,seed,cohort\n")
        for curve, method, seed, cohort in rows:
            for s, f in zip(curve.screened.tolist(), curve.found.tolist()):
                fh.write(f"{s},{f:g},{method},{seed},{cohort}\n")


def write_heatmap(path, ids, last_x, last_y, probability, labels) -> None:
    """``person_id,x,y,probability,state`` at each person's last recorded location."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = np.array(STATE_NAMES)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("person_id,x,y,probability,state\n")
        for p, x, y, pr, s in zip(np.asarray(ids).tolist(), np.asarray(last_x).tolist(),
                                  np.asarray(last_y).tolist(), np.asarray(probability).tolist(),
                                  names[np.asarray(labels)].tolist()):
            fh.write(f"{p},{x:.2f},{y:.2f},{pr:.6f},{s}\n")
