"""Individualized seven-state SEIR process.

Aggregate counts per epoch (S, Sq, E, Eq, I, H, R) come from a file or from
:func:`generate_aggregates`; :func:`step_individualize` decides *who* moves
so that every epoch's buckets match those counts exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .graph import bfs_layers

log = logging.getLogger(__name__)


class State(IntEnum):
    S = 0
    Sq = 1
    E = 2
    Eq = 3
    I = 4  # noqa: E741
    H = 5
    R = 6


STATE_NAMES = [s.name for s in State]
N_STATES = len(State)
NEVER = np.iinfo(np.int64).min // 4

# Reference initial mix (population 14910).
REFERENCE_COUNTS = {"S": 13331, "E": 889, "I": 100, "Sq": 358, "Eq": 64, "H": 164, "R": 4}


class ConfigurationError(ValueError):
    pass


class SimulationInfeasible(RuntimeError):
    def __init__(self, step: str, epoch: int, detail: str):
        super().__init__(f"epoch {epoch}, step {step}: {detail}")
        self.step = step
        self.epoch = epoch
        self.detail = detail


def counts_vector(counts) -> np.ndarray:
    """Accept a mapping by state name or a length-7 sequence in State order."""
    if isinstance(counts, dict):
        return np.array([int(counts.get(name, 0)) for name in STATE_NAMES], dtype=np.int64)
    v = np.asarray(counts, dtype=np.int64)
    if v.shape != (N_STATES,):
        raise ConfigurationError(f"expected {N_STATES} state counts, got shape {v.shape}")
    return v


def reference_counts(population: int) -> np.ndarray:
    """The reference initial mix rescaled to ``population``; S absorbs rounding."""
    total = sum(REFERENCE_COUNTS.values())
    v = np.array([round(REFERENCE_COUNTS[name] * population / total) for name in STATE_NAMES])
    v[State.S] = 0
    v[State.S] = population - v.sum()
    return v.astype(np.int64)


@dataclass
class StateAssignment:
    epoch: int
    labels: np.ndarray  # int8 State per person
    infected_epoch: np.ndarray  # epoch of S -> E/Eq, NEVER if not infected
    incubation: np.ndarray  # sampled incubation length in epochs
    confirmed_epoch: np.ndarray  # epoch of E -> I, NEVER if not confirmed

    @classmethod
    def all_susceptible(cls, n: int, epoch: int = 0) -> "StateAssignment":
        return cls(epoch, np.zeros(n, dtype=np.int8), np.full(n, NEVER), np.zeros(n, dtype=np.int64),
                   np.full(n, NEVER))

    @property
    def population(self) -> int:
        return len(self.labels)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=N_STATES).astype(np.int64)

    def members(self, state: State) -> np.ndarray:
        return np.flatnonzero(self.labels == state)

    def copy(self, epoch: int | None = None) -> "StateAssignment":
        return StateAssignment(self.epoch if epoch is None else epoch, self.labels.copy(),
                               self.infected_epoch.copy(), self.incubation.copy(),
                               self.confirmed_epoch.copy())

    def __getitem__(self, person: int) -> State:
        return State(int(self.labels[person]))


@dataclass
class AggregateSeries:
    counts: np.ndarray  # (epochs, 7)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(-1, N_STATES)
        tot = self.counts.sum(axis=1)
        if len(tot) and (tot != tot[0]).any():
            bad = int(np.flatnonzero(tot != tot[0])[0])
            raise ConfigurationError(f"epoch {bad} sums to {tot[bad]}, expected {tot[0]}")

    @property
    def population(self) -> int:
        return int(self.counts[0].sum()) if len(self.counts) else 0

    def __len__(self) -> int:
        return len(self.counts)

    def __getitem__(self, epoch: int) -> np.ndarray:
        return self.counts[epoch]

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            fh.write("epoch," + ",".join(STATE_NAMES) + "\n")
            for e, row in enumerate(self.counts.tolist()):
                fh.write(f"{e}," + ",".join(map(str, row)) + "\n")

    @classmethod
    def read(cls, path) -> "AggregateSeries":
        with Path(path).open(encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        if header[0] != "epoch" or sorted(header[1:]) != sorted(STATE_NAMES):
            raise ConfigurationError(f"{path}: expected header epoch,{','.join(STATE_NAMES)}")
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        cols = [header.index(name) for name in STATE_NAMES]
        return cls(data[np.argsort(data[:, 0])][:, cols])


@dataclass
class IncubationModel:
    """Discrete distribution over whole incubation days.

    The search-window length function is the identity on days, so the window
    for a confirmation spans ``n_max`` days.
    """

    days: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.days = np.asarray(self.days, dtype=np.int64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if len(self.days) == 0 or len(self.days) != len(self.probs):
            raise ValueError("days and probs must be non-empty and equally long")
        if self.days.min() < 1:
            raise ValueError("incubation days must be >= 1")
        if (self.probs < 0).any() or not np.isclose(self.probs.sum(), 1.0):
            raise ValueError("probabilities must be non-negative and sum to 1")

    @classmethod
    def uniform(cls, lo: int = 5, hi: int = 7) -> "IncubationModel":
        days = np.arange(lo, hi + 1)
        return cls(days, np.full(len(days), 1.0 / len(days)))

    @classmethod
    def point(cls, n: int) -> "IncubationModel":
        return cls([n], [1.0])

    @property
    def n_min(self) -> int:
        return int(self.days[self.probs > 0].min())

    @property
    def n_max(self) -> int:
        return int(self.days[self.probs > 0].max())

    def window_days(self, n: int | None = None) -> int:
        return self.n_max if n is None else int(n)


def sample_incubation(model: IncubationModel, rng: np.random.Generator, size=None):
    """Incubation length in days, drawn from ``model``."""
    out = rng.choice(model.days, size=size, p=model.probs)
    return int(out) if size is None else out.astype(np.int64)


# --------------------------------------------------------------------------
# aggregate driver


@dataclass
class CompartmentRates:
    """Per-day hazards of the stochastic compartmental driver."""

    infection: float = 0.6
    quarantine_fraction: float = 0.1
    susceptible_quarantine: float = 0.3
    release: float = 1.0 / 14.0
    onset: float = 1.0 / 6.0
    quarantined_onset: float = 1.0 / 6.0
    hospitalize: float = 0.1
    recover: float = 0.1
    discharge: float = 1.0 / 14.0

    def __post_init__(self):
        for name, v in vars(self).items():
            if v < 0:
                raise ValueError(f"rate {name} must be non-negative")
        if self.quarantine_fraction > 1:
            raise ValueError("quarantine_fraction must be <= 1")

    @classmethod
    def frozen(cls) -> "CompartmentRates":
        return cls(**{k: 0.0 for k in vars(cls())})


def _p(hazard, dt):
    return -np.expm1(-hazard * dt)


def generate_aggregates(rates: CompartmentRates, initial, epochs: int, rng: np.random.Generator,
                        epoch_seconds: int = 7200) -> AggregateSeries:
    """Chain-binomial simulation of the seven compartments; conserves population by construction."""
    c = counts_vector(initial).copy()
    n = int(c.sum())
    dt = epoch_seconds / 86400.0
    out = np.zeros((epochs, N_STATES), dtype=np.int64)
    S, Sq, E, Eq, I, H, R = (int(s) for s in State)
    for t in range(epochs):
        out[t] = c
        force = rates.infection * c[I] / n if n else 0.0
        quar = rates.susceptible_quarantine * c[I] / n if n else 0.0
        total = force + quar
        leave_s = rng.binomial(c[S], _p(total, dt)) if total > 0 else 0
        if leave_s:
            infected = rng.binomial(leave_s, force / total)
            to_sq = leave_s - infected
            to_eq = rng.binomial(infected, rates.quarantine_fraction)
            to_e = infected - to_eq
        else:
            to_sq = to_eq = to_e = 0
        release = rng.binomial(c[Sq], _p(rates.release, dt))
        onset = rng.binomial(c[E], _p(rates.onset, dt))
        q_onset = rng.binomial(c[Eq], _p(rates.quarantined_onset, dt))
        i_out_h = rates.hospitalize + rates.recover
        leave_i = rng.binomial(c[I], _p(i_out_h, dt)) if i_out_h > 0 else 0
        i_to_h = rng.binomial(leave_i, rates.hospitalize / i_out_h) if leave_i else 0
        i_to_r = leave_i - i_to_h
        discharge = rng.binomial(c[H], _p(rates.discharge, dt))
        c[S] += release - leave_s
        c[Sq] += to_sq - release
        c[E] += to_e - onset
        c[Eq] += to_eq - q_onset
        c[I] += onset - leave_i
        c[H] += q_onset + i_to_h - discharge
        c[R] += i_to_r + discharge
    return AggregateSeries(out)


# --------------------------------------------------------------------------
# individual assignment


def init_population(population: int, initial_counts, graph, rng: np.random.Generator,
                    incubation: IncubationModel | None = None, epochs_per_day: int = 12,
                    epoch: int = 0) -> StateAssignment:
    """Seed individual states matching ``initial_counts`` exactly.

    Sq, Eq, H and R are drawn uniformly. Half of I is drawn uniformly; the
    other half from layers 1-2 of the first half in ``graph`` (uniform when
    those layers run out). E is drawn from direct contacts of I (uniform when
    they run out). Everyone else is S. Seeded E get an incubation already
    partly elapsed.
    """
    c = counts_vector(initial_counts)
    if c.sum() != population or (c < 0).any():
        raise ConfigurationError(f"initial counts sum to {int(c.sum())}, population is {population}")
    incubation = incubation or IncubationModel.uniform()
    st = StateAssignment.all_susceptible(population, epoch)
    free = np.ones(population, dtype=bool)

    def take_uniform(k):
        pool = np.flatnonzero(free)
        pick = rng.choice(pool, size=k, replace=False) if k else pool[:0]
        free[pick] = False
        return pick

    def take_from(cands, k):
        cands = np.array([v for v in cands if free[v]], dtype=np.int64)
        pick = rng.choice(cands, size=min(k, len(cands)), replace=False) if len(cands) else cands
        free[pick] = False
        rest = k - len(pick)
        if rest:
            log.info("seeding: %d of %d drawn uniformly (neighbourhood exhausted)", rest, k)
            pick = np.concatenate((pick, take_uniform(rest)))
        return pick

    for s in (State.Sq, State.Eq, State.H, State.R):
        st.labels[take_uniform(int(c[s]))] = s
    n_i = int(c[State.I])
    first = take_uniform(n_i - n_i // 2)
    near = set()
    for u in first.tolist():
        for v, d in bfs_layers(graph, u, 2).items():
            if d >= 1:
                near.add(v)
    second = take_from(sorted(near), n_i // 2)
    inf = np.concatenate((first, second)).astype(np.int64)
    st.labels[inf] = State.I
    st.confirmed_epoch[inf] = epoch
    contacts = set()
    for u in inf.tolist():
        contacts.update(graph.neighbors(u).tolist())
    exposed = take_from(sorted(contacts), int(c[State.E]))
    st.labels[exposed] = State.E
    inc = sample_incubation(incubation, rng, size=len(exposed)) * epochs_per_day
    st.incubation[exposed] = inc
    st.infected_epoch[exposed] = epoch - rng.integers(0, np.maximum(inc, 1))
    eq = st.members(State.Eq)
    st.infected_epoch[eq] = epoch
    st.incubation[eq] = sample_incubation(incubation, rng, size=len(eq)) * epochs_per_day
    return st


def _exposure_contacts(graphs, infected, min_overlap, max_distance, labels=None):
    """(persons, contact seconds) over qualifying edges touching an infected person."""
    n = max((g.n for g in graphs), default=0)
    if labels is not None:
        n = max(n, len(labels))
    is_inf = np.zeros(n, dtype=bool)
    inf = np.asarray(list(infected), dtype=np.int64)
    if len(inf) == 0 or n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    is_inf[inf] = True
    secs = np.zeros(n)
    touched = np.zeros(n, dtype=bool)
    for g in graphs:
        if g.n_edges == 0:
            continue
        ok = (g.delta_time >= min_overlap) & (g.delta_distance <= max_distance)
        a = ok & is_inf[g.src]
        b = ok & is_inf[g.dst]
        np.add.at(secs, g.dst[a], g.delta_time[a])
        np.add.at(secs, g.src[b], g.delta_time[b])
        touched[g.dst[a]] = True
        touched[g.src[b]] = True
    touched &= ~is_inf
    if labels is not None:
        touched &= np.asarray(labels)[:n] == State.S
    persons = np.flatnonzero(touched)
    return persons, secs[persons]


def possible_list_of_E(graphs, infected, min_overlap: float = 300.0, max_distance: float = 10.0,
                       states=None) -> set:
    """People sharing a qualifying edge with an infected person, S-state only when ``states`` is given."""
    if min_overlap < 0 or max_distance < 0:
        raise ValueError("thresholds must be non-negative")
    labels = None if states is None else np.asarray(getattr(states, "labels", states))
    persons, _ = _exposure_contacts(list(graphs), infected, min_overlap, max_distance, labels)
    return set(persons.tolist())


@dataclass
class StepLog:
    fallbacks: list = field(default_factory=list)


def _solve_flows(prev, target, epoch):
    """Counts (r_I, r_H, h_I, h_Eq, i_in, e_in, eq_in, sq_net) reproducing ``target``.

    Returns a function mapping the uniform proposals (r_I, h_I) to the nearest
    feasible split, or raises when none exists.
    """
    S, Sq, E, Eq, I, H, R = (int(s) for s in State)
    d = target - prev
    nI, nH, nE, nEq, nS, nSq = prev[I], prev[H], prev[E], prev[Eq], prev[S], prev[Sq]
    r = int(d[R])
    if r < 0:
        raise SimulationInfeasible("recovery", epoch, f"R decreases by {-r}; R is absorbing")
    if r > nI + nH:
        raise SimulationInfeasible("recovery", epoch, f"needs {r} recoveries from {nI + nH} I+H")

    def flows(r_i, h_i):
        r_h = r - r_i
        h_in = int(d[H]) + r_h
        h_eq = h_in - h_i
        i_in = int(d[I]) + r_i + h_i
        eq_in = int(d[Eq]) + h_eq
        e_in = int(d[E]) + i_in
        sq_net = int(d[Sq])
        return r_h, h_in, h_eq, i_in, eq_in, e_in, sq_net

    def feasible(r_i, h_i):
        r_h, h_in, h_eq, i_in, eq_in, e_in, sq_net = flows(r_i, h_i)
        return (0 <= r_i <= nI and 0 <= r_h <= nH and h_in >= 0 and 0 <= h_i <= nI - r_i
                and 0 <= h_eq <= nEq and 0 <= i_in <= nE and eq_in >= 0 and e_in >= 0
                and -sq_net <= nSq and e_in + eq_in + max(sq_net, 0) <= nS)

    def choose(prop_r, prop_h):
        if feasible(prop_r, prop_h):
            return prop_r, prop_h
        best = None
        for r_i in range(max(0, r - nH), min(r, nI) + 1):
            h_in = int(d[H]) + r - r_i
            if h_in < 0:
                continue
            for h_i in range(max(0, h_in - nEq), min(h_in, nI - r_i) + 1):
                if feasible(r_i, h_i):
                    cost = (abs(r_i - prop_r) + abs(h_i - prop_h), r_i, h_i)
                    if best is None or cost < best:
                        best = cost
        if best is None:
            raise SimulationInfeasible(
                "exposure/onset/hospitalization", epoch,
                f"no flow split reaches {dict(zip(STATE_NAMES, target.tolist()))} "
                f"from {dict(zip(STATE_NAMES, prev.tolist()))}")
        return best[1], best[2]

    return r, flows, choose


def step_individualize(prev: StateAssignment, target, graphs, incubation: IncubationModel,
                       rng: np.random.Generator, min_overlap: float = 300.0,
                       max_distance: float = 10.0, epochs_per_day: int = 12,
                       step_log: StepLog | None = None) -> StateAssignment:
    """Advance one epoch so that bucket sizes equal ``target`` exactly.

    Flow counts are solved first (recoveries and hospitalizations split
    between their source buckets uniformly, repaired to the nearest feasible
    split), then people are picked from the previous epoch's buckets:
    Sq <-> S uniformly; new E from contacts of I weighted by contact time;
    new Eq from the remaining contacts; new I from E by incubation maturity;
    new H from Eq and I, new R from I and H, uniformly.
    """
    target = counts_vector(target)
    pc = prev.counts()
    if target.sum() != prev.population:
        raise ConfigurationError(f"target sums to {int(target.sum())}, population is {prev.population}")
    epoch = prev.epoch + 1
    nxt = prev.copy(epoch)
    if (target == pc).all():
        return nxt
    lab = prev.labels
    pools = {s: np.flatnonzero(lab == s) for s in State}

    r, flows, choose = _solve_flows(pc, target, epoch)
    nI, nH, nEq = len(pools[State.I]), len(pools[State.H]), len(pools[State.Eq])
    prop_r = int(rng.hypergeometric(nI, nH, r)) if r and nI + nH else 0
    h_guess = max(0, int(target[State.H] - pc[State.H]) + r - prop_r)
    prop_h = (int(rng.hypergeometric(nI - prop_r, nEq, h_guess))
              if h_guess and h_guess <= nI - prop_r + nEq else 0)
    r_i, h_i = choose(prop_r, prop_h)
    r_h, h_in, h_eq, i_in, eq_in, e_in, sq_net = flows(r_i, h_i)

    def pick(pool, k):
        return rng.choice(pool, size=k, replace=False) if k else pool[:0]

    # S <-> Sq by net change
    s_pool = pools[State.S]
    if sq_net < 0:
        nxt.labels[pick(pools[State.Sq], -sq_net)] = State.S

    # new E from contacts of I, weighted by contact time
    persons, secs = _exposure_contacts(graphs, pools[State.I], min_overlap, max_distance, lab)
    taken = np.zeros(prev.population, dtype=bool)
    k = min(e_in, len(persons))
    if k:
        w = secs + 1e-9
        new_e = rng.choice(persons, size=k, replace=False, p=w / w.sum())
    else:
        new_e = persons[:0]
    if k < e_in:
        msg = f"epoch {epoch}: possible_list_of_E has {len(persons)} for {e_in} new E; rest uniform"
        log.info(msg)
        if step_log is not None:
            step_log.fallbacks.append(msg)
        taken[new_e] = True
        rest = s_pool[~taken[s_pool]]
        new_e = np.concatenate((new_e, pick(rest, e_in - k)))
    taken[new_e] = True
    nxt.labels[new_e] = State.E
    nxt.infected_epoch[new_e] = epoch
    nxt.incubation[new_e] = sample_incubation(incubation, rng, size=len(new_e)) * epochs_per_day

    # new Eq from the remaining contacts
    left = persons[~taken[persons]]
    new_eq = pick(left, min(eq_in, len(left)))
    if len(new_eq) < eq_in:
        taken[new_eq] = True
        rest = s_pool[~taken[s_pool]]
        new_eq = np.concatenate((new_eq, pick(rest, eq_in - len(new_eq))))
    taken[new_eq] = True
    nxt.labels[new_eq] = State.Eq
    nxt.infected_epoch[new_eq] = epoch
    nxt.incubation[new_eq] = sample_incubation(incubation, rng, size=len(new_eq)) * epochs_per_day

    if sq_net > 0:
        rest = s_pool[~taken[s_pool]]
        nxt.labels[pick(rest, sq_net)] = State.Sq

    # E -> I, most mature first
    e_pool = pools[State.E]
    if i_in:
        elapsed = epoch - prev.infected_epoch[e_pool]
        ratio = elapsed / np.maximum(prev.incubation[e_pool], 1)
        order = np.lexsort((rng.random(len(e_pool)), -ratio))
        new_i = e_pool[order[:i_in]]
        nxt.labels[new_i] = State.I
        nxt.confirmed_epoch[new_i] = epoch

    # H from Eq and I, R from I and H
    i_pool = pools[State.I]
    to_r_from_i = pick(i_pool, r_i)
    to_r_from_h = pick(pools[State.H], r_h)
    nxt.labels[to_r_from_i] = State.R
    nxt.labels[to_r_from_h] = State.R
    remaining_i = np.setdiff1d(i_pool, to_r_from_i, assume_unique=True)
    nxt.labels[pick(remaining_i, h_i)] = State.H
    nxt.labels[pick(pools[State.Eq], h_eq)] = State.H

    got = nxt.counts()
    if not (got == target).all():  # defensive: the flow solve guarantees this
        raise SimulationInfeasible("check", epoch, f"reached {got.tolist()}, wanted {target.tolist()}")
    return nxt


@dataclass
class StateHistory:
    """Labels per epoch plus the final infection metadata."""

    labels: np.ndarray  # (epochs, population) int8
    final: StateAssignment

    @property
    def n_epochs(self) -> int:
        return self.labels.shape[0]

    def at(self, epoch: int) -> StateAssignment:
        f = self.final
        lab = self.labels[epoch]
        conf = np.where(f.confirmed_epoch <= epoch, f.confirmed_epoch, NEVER)
        inf = np.where(f.infected_epoch <= epoch, f.infected_epoch, NEVER)
        return StateAssignment(epoch, lab.copy(), inf, np.where(inf != NEVER, f.incubation, 0), conf)

    def counts(self) -> np.ndarray:
        return np.stack([np.bincount(row, minlength=N_STATES) for row in self.labels])

    def write(self, path, ids=None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        n = self.labels.shape[1]
        pid = np.arange(n) if ids is None else np.asarray(ids)
        names = np.array(STATE_NAMES)
        with path.open("w", encoding="utf-8") as fh:
            fh.write("epoch,person_id,state\n")
            pid_s = pid.astype(str)
            for e in range(self.n_epochs):
                col = names[self.labels[e]]
                fh.write("".join(f"{e},{p},{s}\n" for p, s in zip(pid_s.tolist(), col.tolist())))


def read_assignments(path, ids=None) -> np.ndarray:
    """Labels array (epochs, population) from an ``epoch,person_id,state`` dump."""
    lookup = {name: i for i, name in enumerate(STATE_NAMES)}
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            e, p, s = line.rstrip("\n").split(",")
            rows.append((int(e), int(p), lookup[s]))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
    pid = arr[:, 1] if ids is None else np.searchsorted(ids, arr[:, 1])
    n_ep = int(arr[:, 0].max()) + 1 if len(arr) else 0
    n = int(pid.max()) + 1 if ids is None and len(arr) else (len(ids) if ids is not None else 0)
    out = np.zeros((n_ep, n), dtype=np.int8)
    out[arr[:, 0], pid] = arr[:, 2]
    return out


def run_epidemic(series: AggregateSeries, graphs, incubation: IncubationModel, rng: np.random.Generator,
                 init_graph, min_overlap: float = 300.0, max_distance: float = 10.0,
                 lookback: int = 12, epochs_per_day: int = 12,
                 step_log: StepLog | None = None) -> StateHistory:
    """Seed from ``series[0]`` and step through every epoch."""
    n = series.population
    st = init_population(n, series[0], init_graph, rng, incubation, epochs_per_day)
    labels = np.zeros((len(series), n), dtype=np.int8)
    labels[0] = st.labels
    for t in range(1, len(series)):
        recent = graphs[max(0, t - lookback):t]
        st = step_individualize(st, series[t], recent, incubation, rng, min_overlap, max_distance,
                                epochs_per_day, step_log)
        labels[t] = st.labels
    return StateHistory(labels, st)
