"""Command line: ``cliip [--config F] [--seed N] [--out DIR] <command>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import ConfigError, load_config
from .epidemic import ConfigurationError, SimulationInfeasible
from .ingest import ParseError
from .learner import TrainingError, TreeEnsemble

log = logging.getLogger("cliip")


def _globals(parser, default) -> None:
    parser.add_argument("--config", default=default, help="key = value config file")
    parser.add_argument("--seed", type=int, default=default, help="overrides the seed key")
    parser.add_argument("--out", default=default, help="artifact directory, overrides the out key")
    parser.add_argument("-v", "--verbose", action="store_true", default=default or False)


def _parser() -> argparse.ArgumentParser:
    # global flags work before or after the command; the subcommand copy only
    # sets a value when given, so it never masks the top-level one
    late = argparse.ArgumentParser(add_help=False)
    _globals(late, argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="cliip")
    _globals(p, None)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[late], help="graphs, aggregates and individual states")
    s.add_argument("--trajectories", help="ping CSV; the synthetic city is used when absent")
    s.add_argument("--aggregates", help="compartment series CSV; generated when absent")
    r = sub.add_parser("rank", parents=[late], help="replay confirmations and rank candidates")
    r.add_argument("--confirm-events", dest="confirm_events", help="person_id,epoch CSV")
    sub.add_parser("eval", parents=[late], help="AUC, importances and screening curves")
    sub.add_parser("export-heatmap", parents=[late], help="per-person probability at last location")
    sub.add_parser("gen-city", parents=[late], help="write synthetic trajectories")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ns = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {"seed": ns.seed, "out": ns.out}
    for key in ("trajectories", "aggregates", "confirm_events"):
        overrides[key] = getattr(ns, key, None)
    try:
        cfg = load_config(ns.config, **overrides)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    try:
        return _COMMANDS[ns.command](cfg, out)
    except SimulationInfeasible as exc:
        print(f"simulation infeasible at epoch {exc.epoch}, step {exc.step}: {exc.detail}", file=sys.stderr)
        return 3
    except pl.MissingArtifact as exc:
        print(f"{exc}; run the earlier stage into {out} first", file=sys.stderr)
        return 4
    except (ConfigurationError, ParseError, TrainingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


def cmd_simulate(cfg, out: Path) -> int:
    sim = pl.simulate(cfg)
    pl.write_simulation(sim, cfg, out)
    sys.stdout.write(cfg.echo())
    for note in sim.step_log.fallbacks:
        log.info("fallback: %s", note)
    print(f"wrote {out}: {sim.population} people, {len(sim.graphs)} epochs")
    return 0


def cmd_rank(cfg, out: Path) -> int:
    sim = pl.load_simulation(cfg, out)
    src = Path(cfg.confirm_events) if cfg.confirm_events else out / pl.CONFIRMS
    confirms = pl.read_confirms(src, sim.ids)
    res = pl.rank(sim, cfg, confirms)
    pl.write_rank(res, sim, out)
    (out / pl.CONFIG_ECHO).write_text(cfg.echo(), encoding="utf-8")
    print(f"ranked {len(res.table)} candidate rows over {len(res.events)} events")
    return 0


def cmd_eval(cfg, out: Path) -> int:
    ids = _ids(out)
    table, _ = pl.read_candidates(out, ids)
    res = pl.evaluate(table, cfg)
    pl.write_eval(res, cfg, out)
    r = res.report
    print(f"auc {r['auc']:.4f}")
    print("importance " + " ".join(f"{k}={v:.3f}" for k, v in r["feature_importance"].items()))
    print("reduction " + " ".join(f"@{k}={v:.3f}" for k, v in r["screening_reduction"].items()))
    return 0


def cmd_export_heatmap(cfg, out: Path) -> int:
    sim = pl.load_simulation(cfg, out)
    table, _ = pl.read_candidates(out, sim.ids)
    model = TreeEnsemble.load(pl._need(out / pl.MODEL))
    pl.export_heatmap(sim, model, table, out, cfg)
    print(f"wrote {out / pl.HEATMAP} and {out / pl.SUPERSPREADERS}")
    return 0


def cmd_gen_city(cfg, out: Path) -> int:
    path = pl.gen_city(cfg, out)
    print(f"wrote {path}")
    return 0


def _ids(out: Path):
    return np.loadtxt(pl._need(out / pl.IDS), delimiter=",", skiprows=1, dtype=np.int64, ndmin=1)


_COMMANDS = {"simulate": cmd_simulate, "rank": cmd_rank, "eval": cmd_eval,
             "export-heatmap": cmd_export_heatmap, "gen-city": cmd_gen_city}

if __name__ == "__main__":
    raise SystemExit(main())
