"""Trajectory loading, stay detection and co-location events.

Bulk data is held column-wise in numpy arrays. ``person`` columns hold dense
indices into :attr:`TrajectorySet.ids`; ids are sorted, so index order is id
order and ``a < b`` holds for both.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0


class ParseError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


class Ping(NamedTuple):
    person_id: int
    timestamp: int
    x: float
    y: float


class Stay(NamedTuple):
    person: int
    cell: int
    enter_time: float
    leave_time: float
    centroid_x: float
    centroid_y: float


class CoLocationEvent(NamedTuple):
    person_a: int
    person_b: int
    cell: int
    overlap_start: float
    overlap_end: float
    closest_distance: float
    leave_a: float
    leave_b: float
    successive: bool

    @property
    def delta_time(self) -> float:
        return 0.0 if self.successive else self.overlap_end - self.overlap_start


@dataclass
class TrajectorySet:
    ids: np.ndarray  # sorted unique person ids
    person: np.ndarray  # index into ids, per ping
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray

    @property
    def n_people(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.t)

    def pings_of(self, person_id: int) -> list[Ping]:
        k = int(np.searchsorted(self.ids, person_id))
        if k == len(self.ids) or self.ids[k] != person_id:
            return []
        m = self.person == k
        return [Ping(int(person_id), int(t), float(x), float(y))
                for t, x, y in zip(self.t[m], self.x[m], self.y[m])]

    @classmethod
    def from_arrays(cls, person_id, t, x, y) -> "TrajectorySet":
        """Group by person, sort by time, drop duplicate (person, time) keeping the first row."""
        person_id = np.asarray(person_id, dtype=np.int64)
        t = np.asarray(t, dtype=np.int64)
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ValueError("coordinates must be finite")
        ids, person = np.unique(person_id, return_inverse=True)
        order = np.lexsort((t, person))  # stable: file order among equal keys
        person, t, x, y = person[order], t[order], x[order], y[order]
        if len(t) > 1:
            dup = np.concatenate(([False], (person[1:] == person[:-1]) & (t[1:] == t[:-1])))
            if dup.any():
                log.info("dropping %d duplicate pings", int(dup.sum()))
                keep = ~dup
                person, t, x, y = person[keep], t[keep], x[keep], y[keep]
        return cls(ids, person.astype(np.int64), t, x, y)


def project_equirectangular(lat, lon, lat0=None, lon0=None):
    """Planar metres east/north of (lat0, lon0); defaults to the mean position."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    lat0 = float(np.mean(lat)) if lat0 is None else lat0
    lon0 = float(np.mean(lon)) if lon0 is None else lon0
    x = np.radians(lon - lon0) * EARTH_RADIUS_M * math.cos(math.radians(lat0))
    y = np.radians(lat - lat0) * EARTH_RADIUS_M
    return x, y


_PLANAR = ["person_id", "timestamp", "x", "y"]
_GEO = ["person_id", "timestamp", "lat", "lon"]


def load_trajectories(path) -> TrajectorySet:
    """Read a ``person_id,timestamp,x,y`` CSV (or ``lat,lon`` instead of ``x,y``)."""
    path = Path(path)
    pid, ts, xs, ys = [], [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return TrajectorySet.from_arrays([], [], [], [])
        header = [h.strip().lower() for h in header]
        if header not in (_PLANAR, _GEO):
            raise ParseError(path, 1, f"expected header {','.join(_PLANAR)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(path, lineno, f"expected 4 fields, got {len(row)}")
            try:
                p, t, a, b = int(row[0]), int(float(row[1])), float(row[2]), float(row[3])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if not (math.isfinite(a) and math.isfinite(b)):
                raise ParseError(path, lineno, "non-finite coordinate")
            pid.append(p)
            ts.append(t)
            xs.append(a)
            ys.append(b)
    if header == _GEO and pid:
        xs, ys = project_equirectangular(xs, ys)
    return TrajectorySet.from_arrays(pid, ts, xs, ys)


def write_trajectories(path, traj: TrajectorySet) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("person_id,timestamp,x,y\n")
        ids = traj.ids[traj.person]
        for p, t, x, y in zip(ids.tolist(), traj.t.tolist(), traj.x.tolist(), traj.y.tolist()):
            fh.write(f"{p},{t},{x:.2f},{y:.2f}\n")


def cell_key(x, y, cell_size: float) -> np.ndarray:
    ix = np.floor(np.asarray(x) / cell_size).astype(np.int64)
    iy = np.floor(np.asarray(y) / cell_size).astype(np.int64)
    return (ix << 32) + (iy & 0xFFFFFFFF)


@dataclass
class StayList:
    person: np.ndarray
    cell: np.ndarray
    enter: np.ndarray
    leave: np.ndarray
    cx: np.ndarray
    cy: np.ndarray

    def __len__(self) -> int:
        return len(self.person)

    def __iter__(self) -> Iterator[Stay]:
        for row in zip(self.person.tolist(), self.cell.tolist(), self.enter.tolist(),
                       self.leave.tolist(), self.cx.tolist(), self.cy.tolist()):
            yield Stay(*row)

    @classmethod
    def from_records(cls, stays) -> "StayList":
        stays = list(stays)
        cols = list(zip(*stays)) if stays else [[]] * 6
        return cls(
            np.asarray(cols[0], dtype=np.int64), np.asarray(cols[1], dtype=np.int64),
            np.asarray(cols[2], dtype=np.float64), np.asarray(cols[3], dtype=np.float64),
            np.asarray(cols[4], dtype=np.float64), np.asarray(cols[5], dtype=np.float64),
        )

    def take(self, idx) -> "StayList":
        return StayList(self.person[idx], self.cell[idx], self.enter[idx],
                        self.leave[idx], self.cx[idx], self.cy[idx])


def detect_stays(traj: TrajectorySet, cell_size: float = 10.0, min_dwell: float = 300.0) -> StayList:
    """Maximal runs of one person's consecutive pings in one grid cell, kept when
    ``leave - enter >= min_dwell``. Centroid is the mean of the run's coordinates."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    if min_dwell < 0:
        raise ValueError("min_dwell must be non-negative")
    n = len(traj)
    if n == 0:
        return StayList.from_records([])
    cell = cell_key(traj.x, traj.y, cell_size)
    brk = np.concatenate(([True], (traj.person[1:] != traj.person[:-1]) | (cell[1:] != cell[:-1])))
    start = np.flatnonzero(brk)
    stop = np.concatenate((start[1:], [n])) - 1
    cnt = stop - start + 1
    enter = traj.t[start].astype(np.float64)
    leave = traj.t[stop].astype(np.float64)
    cx = np.add.reduceat(traj.x, start) / cnt
    cy = np.add.reduceat(traj.y, start) / cnt
    keep = (leave - enter) >= min_dwell
    return StayList(traj.person[start][keep], cell[start][keep], enter[keep], leave[keep],
                    cx[keep], cy[keep])


@dataclass
class CoLocationList:
    a: np.ndarray
    b: np.ndarray
    cell: np.ndarray
    start: np.ndarray
    end: np.ndarray
    distance: np.ndarray
    leave_a: np.ndarray
    leave_b: np.ndarray
    successive: np.ndarray

    def __len__(self) -> int:
        return len(self.a)

    def __iter__(self) -> Iterator[CoLocationEvent]:
        cols = (self.a, self.b, self.cell, self.start, self.end, self.distance,
                self.leave_a, self.leave_b, self.successive)
        for row in zip(*(c.tolist() for c in cols)):
            yield CoLocationEvent(*row)

    @property
    def delta_time(self) -> np.ndarray:
        return np.where(self.successive, 0.0, self.end - self.start)

    def take(self, idx) -> "CoLocationList":
        return CoLocationList(*(getattr(self, f)[idx] for f in _EVENT_FIELDS))

    @classmethod
    def empty(cls) -> "CoLocationList":
        return cls.from_records([])

    @classmethod
    def from_records(cls, events) -> "CoLocationList":
        events = list(events)
        cols = list(zip(*events)) if events else [[]] * 9
        dt = [np.int64, np.int64, np.int64] + [np.float64] * 5 + [bool]
        return cls(*(np.asarray(c, dtype=d) for c, d in zip(cols, dt)))


_EVENT_FIELDS = ("a", "b", "cell", "start", "end", "distance", "leave_a", "leave_b", "successive")


def co_locations(stays: StayList, epoch: tuple[float, float] | None = None,
                 distance_threshold: float = 10.0, lingering_window: float = 0.0) -> CoLocationList:
    """Pairwise contacts between stays sharing a cell.

    Overlapping stays give an event whose interval is the intersection of both
    stays and ``epoch``. With ``lingering_window > 0`` a stay starting within
    that many seconds after another one ended in the same cell gives a
    successive event; its interval is the gap and it contributes no contact time.
    """
    if distance_threshold < 0:
        raise ValueError("distance_threshold must be non-negative")
    if len(stays) == 0:
        return CoLocationList.empty()
    s = stays
    if epoch is not None:
        lo, hi = epoch
        # a successive contact may start from a stay that ended before the epoch
        m = (s.leave + lingering_window >= lo) & (s.enter < hi)
        s = s.take(np.flatnonzero(m))
    order = np.lexsort((s.enter, s.cell))
    s = s.take(order)
    i, j = kernels.colocate_pairs(s.cell, s.person, s.enter, s.leave, s.cx, s.cy,
                                  float(distance_threshold), float(lingering_window))
    start = s.enter[j]  # enter[i] <= enter[j] after sorting
    end = np.minimum(s.leave[i], s.leave[j])
    successive = ~(start < end)
    gap_start = s.leave[i]
    start = np.where(successive, gap_start, start)
    end = np.where(successive, s.enter[j], end)
    if epoch is not None:
        lo, hi = epoch
        ov_start = np.maximum(start, lo)
        ov_end = np.minimum(end, hi)
        keep = np.where(successive, (s.enter[j] >= lo) & (s.enter[j] < hi), ov_end > ov_start)
        start = np.where(successive, start, ov_start)
        end = np.where(successive, end, ov_end)
        i, j, start, end, successive = i[keep], j[keep], start[keep], end[keep], successive[keep]
    dist = np.hypot(s.cx[i] - s.cx[j], s.cy[i] - s.cy[j])
    pa, pb = s.person[i], s.person[j]
    swap = pa > pb
    a = np.where(swap, pb, pa)
    b = np.where(swap, pa, pb)
    la = np.where(swap, s.leave[j], s.leave[i])
    lb = np.where(swap, s.leave[i], s.leave[j])
    ev = CoLocationList(a, b, s.cell[i], start, end, dist, la, lb, successive)
    # canonical order so the result is independent of input stay order
    order = np.lexsort((ev.leave_b, ev.leave_a, ev.end, ev.start, ev.b, ev.a))
    return ev.take(order)


def split_by_epoch(events: CoLocationList, epoch_seconds: float, n_epochs: int) -> list[CoLocationList]:
    """Per-epoch event lists, each overlap clipped to its epoch.

    Equivalent to calling :func:`co_locations` once per epoch.
    """
    if len(events) == 0:
        return [CoLocationList.empty() for _ in range(n_epochs)]
    first = np.floor(events.start / epoch_seconds).astype(np.int64)
    last = np.ceil(events.end / epoch_seconds).astype(np.int64) - 1
    succ = events.successive
    # successive events belong to the epoch where the later stay starts
    first = np.where(succ, np.floor(events.end / epoch_seconds).astype(np.int64), first)
    last = np.where(succ, first, np.maximum(last, first))
    span = last - first + 1
    rep = np.repeat(np.arange(len(events)), span)
    k = np.repeat(first, span) + (np.arange(len(rep)) - np.repeat(np.cumsum(span) - span, span))
    ev = events.take(rep)
    lo = k * epoch_seconds
    hi = lo + epoch_seconds
    start = np.where(ev.successive, ev.start, np.maximum(ev.start, lo))
    end = np.where(ev.successive, ev.end, np.minimum(ev.end, hi))
    keep = (ev.successive | (end > start)) & (k >= 0) & (k < n_epochs)
    ev = CoLocationList(ev.a, ev.b, ev.cell, start, end, ev.distance, ev.leave_a, ev.leave_b,
                        ev.successive).take(np.flatnonzero(keep))
    k = k[keep]
    order = np.argsort(k, kind="stable")
    ev, k = ev.take(order), k[order]
    bounds = np.searchsorted(k, np.arange(n_epochs + 1))
    return [ev.take(slice(bounds[e], bounds[e + 1])) for e in range(n_epochs)]
