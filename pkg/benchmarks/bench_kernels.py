"""Compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--people 3000] [--days 3] [--repeat 3]

Each kernel runs on inputs taken from a synthetic city, and both backends must
return identical results before their timings are printed. The last block
times whole stages with the kernel module patched to each backend.
"""

import argparse
import time
from contextlib import contextmanager

import numpy as np

from cliip import _pycore, kernels
from cliip import pipeline as pl
from cliip.city import CityParams, generate_city
from cliip.config import RunConfig
from cliip.graph import union_graph
from cliip.ingest import detect_stays
from cliip.learner import GBDTParams, fit_gbdt

try:
    from cliip import _core
except ImportError:
    _core = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b) if np.asarray(a).dtype.kind == "f" else np.array_equal(a, b)


@contextmanager
def backend(mod):
    saved = {k: getattr(kernels, k) for k in ("colocate_pairs", "layer_counts", "best_split")}
    for k in saved:
        setattr(kernels, k, getattr(mod, k))
    try:
        yield
    finally:
        for k, v in saved.items():
            setattr(kernels, k, v)


def row(name, t_py, t_cy):
    speed = f"{t_py / t_cy:8.1f}x" if t_cy else "       -"
    cy = f"{t_cy * 1e3:10.1f}" if t_cy else "         -"
    print(f"{name:<28}{t_py * 1e3:10.1f}{cy}{speed}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--people", type=int, default=3000)
    ap.add_argument("--days", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    cfg = RunConfig(seed=a.seed, city_people=a.people, days=a.days)
    rng = np.random.default_rng(a.seed)
    traj = generate_city(CityParams.from_config(cfg), rng)
    stays = detect_stays(traj, cfg.cell_size, cfg.min_dwell)
    s = stays.take(np.lexsort((stays.enter, stays.cell)))
    colo = (s.cell, s.person, s.enter, s.leave, s.cx, s.cy, cfg.distance_threshold, cfg.lingering_window)

    graphs = pl.build_graphs(traj, cfg)
    u = union_graph(graphs, traj.n_people)
    indptr, indices, _ = u.undirected
    sources = np.sort(rng.choice(traj.n_people, size=max(1, traj.n_people // 20), replace=False))
    layer = (indptr, indices, sources.astype(np.int64), 3, traj.n_people)

    n = 50_000
    x = np.sort(rng.exponential(600.0, n))
    g = rng.normal(size=n)
    h = rng.uniform(0.05, 0.25, n)
    split = (x, g, h, 1.0, 1.0)

    X = rng.normal(size=(20_000, 4))
    y = (X[:, 0] + 0.5 * rng.normal(size=len(X)) > 1.0).astype(int)
    gb = GBDTParams(n_rounds=30)

    print(f"city: {traj.n_people} people, {a.days} days, {len(traj)} pings, {len(stays)} stays, "
          f"{u.n_edges} union edges; compiled backend {'present' if _core else 'missing'}")
    print(f"{'':<28}{'numpy ms':>10}{'cython ms':>10}{'speedup':>9}")
    for name, fn, args in (("colocate_pairs", "colocate_pairs", colo),
                           ("layer_counts", "layer_counts", layer),
                           (f"best_split ({n} rows)", "best_split", split)):
        t_py, out_py = best_of(lambda: getattr(_pycore, fn)(*args), a.repeat)
        t_cy = None
        if _core is not None:
            t_cy, out_cy = best_of(lambda: getattr(_core, fn)(*args), a.repeat)
            if not same(out_py, out_cy):
                raise SystemExit(f"{name}: backends disagree")
        row(name, t_py, t_cy)

    stages = (("build_graphs", lambda: pl.build_graphs(traj, cfg)),
              ("fit_gbdt (20k x 4, 30 rounds)", lambda: fit_gbdt(X, y, gb)))
    for name, fn in stages:
        with backend(_pycore):
            t_py, _ = best_of(fn, 1)
        t_cy = None
        if _core is not None:
            with backend(_core):
                t_cy, _ = best_of(fn, 1)
        row(name, t_py, t_cy)


if __name__ == "__main__":
    main()
