"""End-to-end stages shared by the CLI and the acceptance harness.

Each stage is a pure function of the config, its inputs and the named random
sub-stream it draws from, so stages can be rerun separately from artifacts.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import city as city_mod
from .config import RunConfig, substream
from .epidemic import (NEVER, AggregateSeries, CompartmentRates, ConfigurationError, IncubationModel, State,
                       StateAssignment, StateHistory, StepLog, counts_vector, generate_aggregates, read_assignments,
                       reference_counts, run_epidemic)
from .evaluate import (average_curves, baseline_order, cliip_order, curve_from_hits, dominance_fraction,
                       expected_baseline_curve, sample_cohort, screening_reduction, write_curves,
                       write_heatmap)
from .graph import EpochGraph, build_idg, layered_source_counts, read_edges, union_graph, write_edges
from .ingest import TrajectorySet, co_locations, detect_stays, load_trajectories, split_by_epoch, write_trajectories
from .learner import (FEATURES, ContinuousLearner, GBDTParams, TrainingError, TreeEnsemble, fit_gbdt, train)
from .tracer import (FeatureTable, backward_window, candidate_groups, extract_features_batch,
                     label_candidates, multi_source_distance, window_graphs)

log = logging.getLogger(__name__)

EDGES = "edges.csv"
ASSIGNMENTS = "assignments.csv"
AGGREGATES = "aggregates.csv"
CONFIRMS = "confirm_events.csv"
POSITIONS = "positions.csv"
IDS = "people.csv"
CONFIG_ECHO = "config.txt"
CANDIDATES = "candidates.csv"
TRAINING_SET = "training_set.csv"
ONLINE_MODEL = "online_model.json"
MODEL = "model.json"
REPORT = "report.json"
CURVES = "curves.csv"
HEATMAP = "heatmap.csv"
SUPERSPREADERS = "superspreader.csv"



def _loadcsv(path, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # header-only files are legal
        return np.loadtxt(path, delimiter=",", skiprows=1, **kw)

class MissingArtifact(FileNotFoundError):
    pass


def incubation_of(cfg: RunConfig) -> IncubationModel:
    return IncubationModel.uniform(cfg.incubation_min_days, cfg.incubation_max_days)


def rates_of(cfg: RunConfig) -> CompartmentRates:
    return CompartmentRates(cfg.rate_infection, cfg.rate_quarantine_fraction, cfg.rate_susceptible_quarantine,
                            cfg.rate_release, cfg.rate_onset, cfg.rate_quarantined_onset,
                            cfg.rate_hospitalize, cfg.rate_recover, cfg.rate_discharge)


def initial_counts(cfg: RunConfig, population: int) -> np.ndarray:
    given = counts_vector({s.name: getattr(cfg, f"init_{s.name}") for s in State})
    if not given.any():
        return reference_counts(population)
    if given.sum() != population:
        raise ConfigurationError(f"init_* counts sum to {int(given.sum())}, population is {population}")
    return given


# --------------------------------------------------------------------------
# simulate


@dataclass
class Simulation:
    ids: np.ndarray
    graphs: list[EpochGraph]
    series: AggregateSeries
    history: StateHistory
    last_x: np.ndarray
    last_y: np.ndarray
    step_log: StepLog = field(default_factory=StepLog)
    trajectories: TrajectorySet | None = None

    @property
    def population(self) -> int:
        return len(self.ids)


def build_graphs(traj: TrajectorySet, cfg: RunConfig) -> list[EpochGraph]:
    stays = detect_stays(traj, cfg.cell_size, cfg.min_dwell)
    events = co_locations(stays, None, cfg.distance_threshold, cfg.lingering_window)
    per_epoch = split_by_epoch(events, cfg.epoch_seconds, cfg.n_epochs)
    return [build_idg(ev, k, traj.n_people) for k, ev in enumerate(per_epoch)]


def simulate(cfg: RunConfig, traj: TrajectorySet | None = None) -> Simulation:
    if traj is None:
        if cfg.trajectories:
            traj = load_trajectories(cfg.trajectories)
        else:
            traj = city_mod.generate_city(city_mod.CityParams.from_config(cfg), substream(cfg.seed, "ingest"))
    n = traj.n_people
    graphs = build_graphs(traj, cfg)
    rng = substream(cfg.seed, "epidemic")
    if cfg.aggregates:
        series = AggregateSeries.read(cfg.aggregates)
        if series.population != n:
            raise ConfigurationError(f"aggregate population {series.population} != {n} people")
        if len(series) < cfg.n_epochs:
            raise ConfigurationError(f"aggregate series has {len(series)} epochs, run needs {cfg.n_epochs}")
        series = AggregateSeries(series.counts[: cfg.n_epochs])
    else:
        series = generate_aggregates(rates_of(cfg), initial_counts(cfg, n), cfg.n_epochs, rng, cfg.epoch_seconds)
    log.info("%d people, %d epochs, %d edges", n, len(graphs), sum(g.n_edges for g in graphs))
    init_graph = union_graph(graphs[: max(cfg.init_graph_epochs, 1)], n)
    step_log = StepLog()
    history = run_epidemic(series, graphs, incubation_of(cfg), rng, init_graph, cfg.exposure_min_overlap,
                           cfg.exposure_max_distance, cfg.exposure_lookback_epochs, cfg.epochs_per_day,
                           step_log)
    lx, ly = city_mod.last_positions(traj)
    return Simulation(traj.ids, graphs, series, history, lx, ly, step_log, traj)


def confirm_events(history: StateHistory) -> np.ndarray:
    """(person, epoch) rows for every entry into I, initial cases at epoch 0."""
    lab = history.labels
    is_i = lab == State.I
    new = np.zeros_like(is_i)
    new[0] = is_i[0]
    new[1:] = is_i[1:] & ~is_i[:-1]
    epoch, person = np.nonzero(new)
    return np.column_stack((person, epoch)).astype(np.int64)


def _write_table(path: Path, header: str, rows) -> None:
    with path.open("w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        fh.write("".join(",".join(map(str, r)) + "\n" for r in rows))


def write_simulation(sim: Simulation, cfg: RunConfig, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_ECHO).write_text(cfg.echo(), encoding="utf-8")
    _write_table(out / IDS, "person_id", ([int(p)] for p in sim.ids))
    write_edges(out / EDGES, sim.graphs, sim.ids)
    sim.history.write(out / ASSIGNMENTS, sim.ids)
    sim.series.write(out / AGGREGATES)
    ev = confirm_events(sim.history)
    _write_table(out / CONFIRMS, "person_id,epoch", ((int(sim.ids[p]), int(e)) for p, e in ev))
    _write_table(out / POSITIONS, "person_id,x,y",
                 ((int(p), f"{x:.2f}", f"{y:.2f}") for p, x, y in zip(sim.ids, sim.last_x, sim.last_y)))
    return out


def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing artifact {path}")
    return path


def load_simulation(cfg: RunConfig, out) -> Simulation:
    """Rebuild a :class:`Simulation` from the files :func:`write_simulation` produced."""
    out = Path(out)
    ids = _loadcsv(_need(out / IDS), dtype=np.int64, ndmin=1)
    n = len(ids)
    series = AggregateSeries.read(_need(out / AGGREGATES))
    graphs = read_edges(_need(out / EDGES), n, len(series), ids)
    labels = read_assignments(_need(out / ASSIGNMENTS), ids)
    pos = _loadcsv(_need(out / POSITIONS), ndmin=2)
    history = _history_from_labels(labels)
    return Simulation(ids, graphs, series, history, pos[:, 1], pos[:, 2])


def _history_from_labels(labels: np.ndarray) -> StateHistory:
    """Recover entry epochs from the label matrix (incubation lengths are not needed downstream)."""
    n = labels.shape[1]
    conf = np.full(n, NEVER, dtype=np.int64)
    inf = np.full(n, NEVER, dtype=np.int64)
    for e in range(labels.shape[0] - 1, -1, -1):
        row = labels[e]
        conf[row == State.I] = e
        inf[(row == State.E) | (row == State.Eq)] = e
    # people already past I at the start keep their first I epoch; those never I stay NEVER
    final = StateAssignment(labels.shape[0] - 1, labels[-1].copy(), inf, np.zeros(n, np.int64), conf)
    return StateHistory(labels, final)


# --------------------------------------------------------------------------
# rank


@dataclass
class RankResult:
    table: FeatureTable
    probability: np.ndarray  # online model output at each row's ranking event
    rank: np.ndarray  # position within the event's ranking, 1-based
    events: list[int]
    learner: ContinuousLearner
    windows: dict = field(default_factory=dict)


def ranking_epochs(cfg: RunConfig, confirms: np.ndarray, n_epochs: int) -> list[int]:
    """Ranking times: every ``rank_every_epochs`` epoch that follows at least one confirmation."""
    step = max(cfg.rank_every_epochs, 1)
    if len(confirms) == 0:
        return []
    ep = confirms[:, 1]
    out = []
    for t in range(step, n_epochs, step):
        if t // cfg.epochs_per_day < 1:
            continue
        if ((ep >= t - step) & (ep < t)).any():
            out.append(t)
    return out


def rank_event(sim: Simulation, cfg: RunConfig, t: int, confirms: np.ndarray, rng: np.random.Generator):
    """Candidate rows for one ranking time ``t``."""
    epd = cfg.epochs_per_day
    window = backward_window(t // epd, incubation_of(cfg))
    wg = window_graphs(sim.graphs, window, epd)
    n = sim.population
    states = sim.history.at(t)
    labels = states.labels
    infected = np.flatnonzero(labels == State.I)
    batch = confirms[(confirms[:, 1] >= t - cfg.rank_every_epochs) & (confirms[:, 1] < t), 0]
    groups = candidate_groups(wg, labels, np.unique(batch), cfg.max_layer)
    persons = np.array(sorted(p for g in groups for p in g.members), dtype=np.int64)
    group = np.zeros(n, dtype=np.int8)
    for g in groups:
        group[list(g.members)] = g.rank
    u = union_graph(wg, n)
    mode = "sampled" if cfg.sampling_budget > 0 else "exact"
    contact_states = [sim.history.labels[g.epoch_index] for g in wg]
    X, flagged = extract_features_batch(persons, wg, labels, cfg.max_layer, cfg.sentinel, u, mode,
                                        cfg.sampling_budget, rng, contact_states)
    indptr, indices, _ = u.undirected
    layer = multi_source_distance(indptr, indices, infected, n, n)[persons] if len(infected) else \
        np.full(len(persons), -1, dtype=np.int64)
    horizon = cfg.label_horizon_days * epd
    if t + horizon <= sim.history.n_epochs - 1:
        y = label_candidates(persons, sim.history.final, t, horizon, cfg.label_positive)
    else:
        y = np.full(len(persons), -1, dtype=np.int8)  # outcome not observed within the run
    table = FeatureTable(persons, np.full(len(persons), t, dtype=np.int64), X, y, group[persons],
                         np.asarray(layer, dtype=np.int64), flagged, labels[persons] == State.E)
    return table, window


def rank(sim: Simulation, cfg: RunConfig, confirms: np.ndarray | None = None) -> RankResult:
    """Replay confirmation batches in time order with a continuously updated model."""
    confirms = confirm_events(sim.history) if confirms is None else confirms
    epochs = ranking_epochs(cfg, confirms, sim.history.n_epochs)
    rng = substream(cfg.seed, "tracer")
    learner = ContinuousLearner(GBDTParams.from_config(cfg), cfg.update_policy, cfg.split_ratio,
                                seed=int(substream(cfg.seed, "learner").integers(2**63)))
    horizon = cfg.label_horizon_days * cfg.epochs_per_day
    tables, probs, ranks, windows = [], [], [], {}
    pending: list[FeatureTable] = []
    for t in epochs:
        matured = [tb for tb in pending if tb.epoch[0] + horizon <= t]
        pending = [tb for tb in pending if tb.epoch[0] + horizon > t]
        if matured:
            new = FeatureTable.concat(matured)
            learner.update(new.X, new.y)
        tb, window = rank_event(sim, cfg, t, confirms, rng)
        windows[t] = window
        log.info("rank epoch %d: %d candidates, window days %d..%d", t, len(tb), window.start, window.end)
        p = learner.model.predict_proba(tb.X) if learner.model is not None else np.full(len(tb), 0.5)
        order = cliip_order(tb.group, p, tb.person)
        r = np.empty(len(tb), dtype=np.int64)
        r[order] = np.arange(1, len(tb) + 1)
        tables.append(tb)
        probs.append(p)
        ranks.append(r)
        if (tb.y >= 0).all() and len(tb):
            pending.append(tb)
    table = FeatureTable.concat(tables)
    return RankResult(table, np.concatenate(probs) if probs else np.zeros(0),
                      np.concatenate(ranks) if ranks else np.zeros(0, np.int64), epochs, learner, windows)


CANDIDATE_HEADER = ("person_id,epoch,group,layer,hidden,flagged,delta_time,delta_distance,"
                    "infected_around,exposed_around,label,probability,rank")


def write_rank(res: RankResult, sim: Simulation, out) -> None:
    out = Path(out)
    tb = res.table
    pid = sim.ids[tb.person] if len(tb) else tb.person
    rows = zip(pid.tolist(), tb.epoch.tolist(), tb.group.tolist(), tb.layer.tolist(),
               tb.hidden.astype(int).tolist(), tb.flagged.astype(int).tolist(), tb.X.tolist(),
               tb.y.tolist(), res.probability.tolist(), res.rank.tolist())
    with (out / CANDIDATES).open("w", encoding="utf-8") as fh:
        fh.write(CANDIDATE_HEADER + "\n")
        for p, e, g, la, h, f, x, y, pr, r in rows:
            fh.write(f"{p},{e},{g},{la},{h},{f},{x[0]:.3f},{x[1]:.3f},{x[2]:g},{x[3]:g},{y},{pr:.6f},{r}\n")
    tb.take(tb.y >= 0).write(out / TRAINING_SET, sim.ids)
    if res.learner.model is not None:
        res.learner.model.save(out / ONLINE_MODEL)
    elif (out / ONLINE_MODEL).exists():
        (out / ONLINE_MODEL).unlink()


def read_candidates(out, ids) -> tuple[FeatureTable, np.ndarray]:
    path = _need(Path(out) / CANDIDATES)
    data = _loadcsv(path, ndmin=2)
    if data.size == 0:
        return FeatureTable.empty(), np.zeros(0)
    person = np.searchsorted(ids, data[:, 0].astype(np.int64))
    tb = FeatureTable(person, data[:, 1].astype(np.int64), data[:, 6:10], data[:, 10].astype(np.int8),
                      data[:, 2].astype(np.int8), data[:, 3].astype(np.int64), data[:, 5] > 0, data[:, 4] > 0)
    return tb, data[:, 11]


def read_confirms(path, ids) -> np.ndarray:
    data = _loadcsv(_need(Path(path)), dtype=np.int64, ndmin=2)
    if data.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pos = np.searchsorted(ids, data[:, 0])
    if (pos >= len(ids)).any() or (ids[np.minimum(pos, len(ids) - 1)] != data[:, 0]).any():
        raise ValueError(f"{path}: confirmation for an unknown person id")
    return np.column_stack((pos, data[:, 1])).astype(np.int64)


# --------------------------------------------------------------------------
# eval


@dataclass
class EvalResult:
    model: TreeEnsemble
    report: dict
    cliip_curve: object
    baseline_curve: object
    oof: np.ndarray  # out-of-fold probability per labeled row, model probability otherwise
    cohort: np.ndarray


def cross_fitted(X, y, params: GBDTParams, rng: np.random.Generator, folds: int = 3) -> np.ndarray:
    """Out-of-fold probabilities from ``folds`` stratified parts."""
    y = np.asarray(y)
    part = np.zeros(len(y), dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        part[idx] = np.arange(len(idx)) % folds
    out = np.zeros(len(y))
    for k in range(folds):
        te = part == k
        m = fit_gbdt(X[~te], y[~te], params)
        out[te] = m.predict_proba(X[te])
    return out


def evaluate(table: FeatureTable, cfg: RunConfig) -> EvalResult:
    lab = table.y >= 0
    if not lab.any():
        raise TrainingError("no labeled ranking events: the run is shorter than the label horizon")
    X, y = table.X[lab], table.y[lab].astype(np.int64)
    if y.sum() in (0, len(y)):
        e = table.epoch[lab]
        only = "positive" if y.sum() else "negative"
        raise TrainingError(f"labels in epochs {int(e.min())}..{int(e.max())} are all {only}")
    params = GBDTParams.from_config(cfg)
    model, rep = train(X, y, cfg.split_ratio, params, substream(cfg.seed, "learner"))
    prob = model.predict_proba(table.X)
    prob[lab] = cross_fitted(X, y, params, substream(cfg.seed, "learner").spawn(1)[0])

    rng = substream(cfg.seed, "eval")
    idx = sample_cohort(table.hidden, rng, cfg.cohort_base_unit, cfg.cohort_infected_units,
                        cfg.cohort_total_units)
    c = table.take(idx)
    hidden = c.hidden.astype(np.int64)
    cohort = {"candidates": int(len(idx)), "hidden": int(hidden.sum()), "base_unit": cfg.cohort_base_unit,
              "ratio": f"{cfg.cohort_infected_units}:{cfg.cohort_total_units}"}
    order = cliip_order(c.group, prob[idx], c.person, c.epoch)
    ccurve = curve_from_hits(hidden[order], int(hidden.sum()), cohort)
    if cfg.baseline_shuffles > 0:
        bcurve = average_curves(curve_from_hits(hidden[baseline_order(c.layer, rng)], int(hidden.sum()), cohort)
                                for _ in range(cfg.baseline_shuffles))
    else:
        bcurve = expected_baseline_curve(c.layer, c.hidden, cohort)
    reduction = {}
    for target in (1.0, 0.95, 0.9):
        reduction[f"{target:g}"] = screening_reduction(ccurve, bcurve, target)
    report = {
        "auc": rep.auc,
        "feature_importance": dict(zip(FEATURES, rep.feature_importance)),
        "n_train": rep.n_train,
        "n_test": rep.n_test,
        "n_rounds": rep.n_rounds,
        "accuracy": rep.accuracy,
        "test_positives": rep.test_positives,
        "labeled_rows": int(lab.sum()),
        "positive_rows": int(y.sum()),
        "epochs": sorted(set(int(e) for e in table.epoch[lab].tolist())),
        "cohort": cohort,
        "tests_to_full_coverage": {"cliip": ccurve.tests_to_reach(1.0), "baseline": bcurve.tests_to_reach(1.0)},
        "screening_reduction": reduction,
        "dominance": dominance_fraction(ccurve, bcurve),
    }
    return EvalResult(model, report, ccurve, bcurve, prob, idx)


def write_eval(res: EvalResult, cfg: RunConfig, out) -> None:
    out = Path(out)
    res.model.save(out / MODEL)
    (out / REPORT).write_text(json.dumps(res.report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_curves(out / CURVES, [(res.cliip_curve, "cliip", cfg.seed, "cohort"),
                                (res.baseline_curve, "contact_tracing", cfg.seed, "cohort")])


def heatmap_probability(model: TreeEnsemble, table: FeatureTable, labels: np.ndarray) -> np.ndarray:
    """Per person: model probability at their latest ranking row; 1 for I and H, 0 otherwise."""
    n = len(labels)
    prob = np.zeros(n)
    if len(table):
        last = table.epoch == table.epoch.max()
        prob[table.person[last]] = model.predict_proba(table.X[last])
    prob[(labels == State.I) | (labels == State.H)] = 1.0
    return prob


def superspreader_scores(sim: Simulation, cfg: RunConfig) -> np.ndarray:
    """Weighted per-layer infected counts around everyone over the last day's contacts."""
    w = np.asarray(cfg.weights(), dtype=np.float64)
    if len(w) == 0:
        raise ConfigurationError("superspreader_weights is empty")
    labels = sim.history.labels[-1]
    u = union_graph(sim.graphs[-cfg.epochs_per_day:], sim.population)
    counts = layered_source_counts(u, np.flatnonzero(labels == State.I), len(w))
    return w @ counts


def export_heatmap(sim: Simulation, model: TreeEnsemble, table: FeatureTable, out, cfg: RunConfig) -> None:
    labels = sim.history.labels[-1]
    write_heatmap(Path(out) / HEATMAP, sim.ids, sim.last_x, sim.last_y,
                  heatmap_probability(model, table, labels), labels)
    score = superspreader_scores(sim, cfg)
    with (Path(out) / SUPERSPREADERS).open("w", encoding="utf-8") as fh:
        fh.write("person_id,score\n")
        fh.writelines(f"{p},{v:g}\n" for p, v in zip(sim.ids.tolist(), score.tolist()))


def gen_city(cfg: RunConfig, out) -> Path:
    traj = city_mod.generate_city(city_mod.CityParams.from_config(cfg), substream(cfg.seed, "ingest"))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "trajectories.csv"
    write_trajectories(path, traj)
    return path
