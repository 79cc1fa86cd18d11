"""Synthetic city: people moving between home, work and venues on a grid.

Each person has a household, optionally a workplace, and a few favourite
venues. A day is home -> (work | daytime venue) -> (evening venue) -> home
with jittered times. Places sit at grid-cell centres and pings jitter by a
couple of metres, so everyone at one place shares a cell. One travel ping at
a random spot separates consecutive places.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import TrajectorySet

HOUR = 3600.0
MINUTE = 60.0


@dataclass
class CityParams:
    people: int = 3000
    days: int = 30
    size: float = 2000.0
    cell_size: float = 10.0
    household_mean: float = 2.5
    workplace_size: int = 8
    venues: int = 120
    worker_fraction: float = 0.7
    venue_prob: float = 0.35
    favourite_venues: int = 3
    ping_interval: int = 1800
    jitter: float = 2.0

    @classmethod
    def from_config(cls, cfg) -> "CityParams":
        return cls(cfg.city_people, cfg.days, cfg.city_size, cfg.cell_size, cfg.city_household_mean,
                   cfg.city_workplace_size, cfg.city_venues, cfg.city_worker_fraction,
                   cfg.city_venue_prob, ping_interval=cfg.city_ping_interval)


def _cells(rng, k, p: CityParams):
    side = int(p.size // p.cell_size)
    ix = rng.integers(0, side, size=k)
    iy = rng.integers(0, side, size=k)
    return np.column_stack(((ix + 0.5) * p.cell_size, (iy + 0.5) * p.cell_size))


def generate_city(p: CityParams, rng: np.random.Generator) -> TrajectorySet:
    n = p.people
    # households
    sizes = []
    while sum(sizes) < n:
        sizes.append(1 + int(rng.poisson(max(p.household_mean - 1.0, 0.0))))
    household = np.repeat(np.arange(len(sizes)), sizes)[:n]
    household = household[rng.permutation(n)]
    home_xy = _cells(rng, len(sizes), p)
    worker = rng.random(n) < p.worker_fraction
    n_work = max(1, int(np.ceil(worker.sum() / max(p.workplace_size, 1))))
    workplace = rng.integers(0, n_work, size=n)
    work_xy = _cells(rng, n_work, p)
    venue_xy = _cells(rng, max(p.venues, 1), p)
    favourites = rng.integers(0, len(venue_xy), size=(n, p.favourite_venues))

    def venue_pick(mask):
        k = rng.integers(0, p.favourite_venues, size=n)
        v = favourites[np.arange(n), k]
        wander = rng.random(n) < 0.2
        v = np.where(wander, rng.integers(0, len(venue_xy), size=n), v)
        return venue_xy[v], mask

    # outings: (person, arrive, leave, x, y)
    rows = []
    ids = np.arange(n)
    for d in range(p.days):
        base = d * 86400.0
        depart = base + rng.uniform(7 * HOUR, 9 * HOUR, n)
        # workers go to work, non-workers may visit a venue in the day
        w_arr = depart + rng.uniform(15 * MINUTE, 40 * MINUTE, n)
        w_leave = base + rng.uniform(16.5 * HOUR, 18.5 * HOUR, n)
        rows.append((ids[worker], w_arr[worker], w_leave[worker], work_xy[workplace[worker]]))
        day_trip = ~worker & (rng.random(n) < 0.5)
        d_arr = base + rng.uniform(10 * HOUR, 13 * HOUR, n)
        d_leave = d_arr + rng.uniform(45 * MINUTE, 2 * HOUR, n)
        xy, _ = venue_pick(day_trip)
        rows.append((ids[day_trip], d_arr[day_trip], d_leave[day_trip], xy[day_trip]))
        # evening venue, straight from work or from home
        evening = rng.random(n) < p.venue_prob
        e_arr = np.where(worker, w_leave + rng.uniform(10 * MINUTE, 30 * MINUTE, n),
                         base + rng.uniform(17 * HOUR, 19 * HOUR, n))
        e_leave = e_arr + rng.uniform(30 * MINUTE, 2 * HOUR, n)
        xy, _ = venue_pick(evening)
        rows.append((ids[evening], e_arr[evening], e_leave[evening], xy[evening]))
    person = np.concatenate([r[0] for r in rows])
    arrive = np.concatenate([r[1] for r in rows])
    leave = np.concatenate([r[2] for r in rows])
    oxy = np.concatenate([r[3] for r in rows])
    order = np.lexsort((arrive, person))
    person, arrive, leave, oxy = person[order], arrive[order], leave[order], oxy[order]

    # home segments fill the gaps between outings (skipped when the gap is short)
    horizon = p.days * 86400.0 - 1
    first = np.concatenate(([True], person[1:] != person[:-1]))
    last = np.concatenate((person[1:] != person[:-1], [True]))
    travel_in = rng.uniform(10 * MINUTE, 30 * MINUTE, len(person))
    travel_out = rng.uniform(10 * MINUTE, 30 * MINUTE, len(person))
    prev_leave = np.concatenate(([0.0], leave[:-1]))
    h_start = np.where(first, 0.0, prev_leave + travel_in)
    h_end = arrive - travel_out
    home_ok = h_end - h_start >= 20 * MINUTE
    hp = person[home_ok]
    hs, he = h_start[home_ok], h_end[home_ok]
    # tail home stay after the last outing
    tail_p = person[last]
    tail_s = leave[last] + rng.uniform(10 * MINUTE, 30 * MINUTE, int(last.sum()))
    # people with no outings at all stay home throughout
    idle = np.setdiff1d(ids, person)
    seg_p = np.concatenate((person, hp, tail_p, idle))
    seg_s = np.concatenate((arrive, hs, tail_s, np.zeros(len(idle))))
    seg_e = np.concatenate((leave, he, np.full(len(tail_p) + len(idle), horizon)))
    hxy = home_xy[household]
    seg_xy = np.concatenate((oxy, hxy[hp], hxy[tail_p], hxy[idle]))
    keep = seg_e > seg_s
    seg_p, seg_s, seg_e, seg_xy = seg_p[keep], seg_s[keep], np.minimum(seg_e[keep], horizon), seg_xy[keep]
    o = np.lexsort((seg_s, seg_p))
    seg_p, seg_s, seg_e, seg_xy = seg_p[o], seg_s[o], seg_e[o], seg_xy[o]

    # pings every ping_interval inside a segment, plus one at its end
    dur = seg_e - seg_s
    k = (dur // p.ping_interval).astype(np.int64) + 2
    rep = np.repeat(np.arange(len(seg_p)), k)
    step = np.arange(len(rep)) - np.repeat(np.cumsum(k) - k, k)
    t = np.minimum(seg_s[rep] + step * p.ping_interval, seg_e[rep])
    t = np.floor(t).astype(np.int64)
    px = seg_xy[rep, 0] + rng.uniform(-p.jitter, p.jitter, len(rep))
    py = seg_xy[rep, 1] + rng.uniform(-p.jitter, p.jitter, len(rep))
    # travel pings between consecutive segments of one person
    nxt_same = np.concatenate((seg_p[1:] == seg_p[:-1], [False]))
    tr = np.flatnonzero(nxt_same)
    tt = np.floor(0.5 * (seg_e[tr] + seg_s[tr + 1])).astype(np.int64)
    txy = _cells(rng, len(tr), p) + rng.uniform(-p.cell_size / 2, p.cell_size / 2, (len(tr), 2)) * 0.5
    all_p = np.concatenate((seg_p[rep], seg_p[tr]))
    all_t = np.concatenate((t, tt))
    all_x = np.concatenate((px, txy[:, 0]))
    all_y = np.concatenate((py, txy[:, 1]))
    return TrajectorySet.from_arrays(all_p, all_t, all_x, all_y)


def last_positions(traj: TrajectorySet):
    """(x, y) of each person's final ping."""
    last = np.concatenate((traj.person[1:] != traj.person[:-1], [True])) if len(traj) else np.zeros(0, bool)
    x = np.zeros(traj.n_people)
    y = np.zeros(traj.n_people)
    x[traj.person[last]] = traj.x[last]
    y[traj.person[last]] = traj.y[last]
    return x, y
