"""Run configuration: a flat ``key = value`` text file mapped onto :class:`RunConfig`.

Lines starting with ``#`` are comments. Unknown keys are an error so typos do
not silently fall back to defaults. Every key is documented in ``CONFIG.md``.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0

    # ingest
    cell_size: float = 10.0
    min_dwell: float = 300.0
    distance_threshold: float = 10.0
    lingering_window: float = 0.0

    # epochs and incubation
    epoch_seconds: int = 7200
    days: int = 30
    incubation_min_days: int = 5
    incubation_max_days: int = 7

    # SEIR candidate thresholds (default to the ingest thresholds)
    exposure_min_overlap: float = 300.0
    exposure_max_distance: float = 10.0
    exposure_lookback_epochs: int = 12
    init_graph_epochs: int = 12

    # initial counts; population-sized to the 14910-person reference mix when 0
    init_S: int = 0
    init_Sq: int = 0
    init_E: int = 0
    init_Eq: int = 0
    init_I: int = 0
    init_H: int = 0
    init_R: int = 0

    # aggregate driver rates, per day
    rate_infection: float = 0.6
    rate_quarantine_fraction: float = 0.1
    rate_susceptible_quarantine: float = 0.3
    rate_release: float = 1.0 / 14.0
    rate_onset: float = 1.0 / 6.0
    rate_quarantined_onset: float = 1.0 / 6.0
    rate_hospitalize: float = 0.1
    rate_recover: float = 0.1
    rate_discharge: float = 1.0 / 14.0

    # tracer
    max_layer: int = 3
    sampling_budget: int = 0
    distance_sentinel: float = 0.0
    label_positive: str = "I"
    label_horizon_days: int = 7
    rank_every_epochs: int = 12

    # learner
    n_rounds: int = 100
    max_depth: int = 4
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    leaf_clamp: float = 4.0
    split_ratio: float = 0.3
    update_policy: str = "retrain"

    # evaluation
    baseline_shuffles: int = 100
    cohort_base_unit: int = 500
    cohort_infected_units: int = 1
    cohort_total_units: int = 50
    superspreader_weights: str = "1,0.5,0.25"

    # synthetic city
    city_people: int = 3000
    city_size: float = 2000.0
    city_household_mean: float = 2.5
    city_workplace_size: int = 8
    city_venues: int = 120
    city_worker_fraction: float = 0.7
    city_venue_prob: float = 0.35
    city_ping_interval: int = 1800

    # files
    trajectories: str = ""
    aggregates: str = ""
    confirm_events: str = ""
    out: str = "runs/default"

    def __post_init__(self):
        self.validate()

    @property
    def epochs_per_day(self) -> int:
        return 86400 // self.epoch_seconds

    @property
    def n_epochs(self) -> int:
        return self.days * self.epochs_per_day

    @property
    def sentinel(self) -> float:
        return self.distance_sentinel if self.distance_sentinel > 0 else 10.0 * self.distance_threshold

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ConfigError(f"{f.name} must be non-negative, got {v}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if self.cell_size <= 0:
            raise ConfigError("cell_size must be positive")
        if self.epoch_seconds <= 0 or 86400 % self.epoch_seconds:
            raise ConfigError("epoch_seconds must divide one day")
        if not 1 <= self.incubation_min_days <= self.incubation_max_days:
            raise ConfigError("need 1 <= incubation_min_days <= incubation_max_days")
        if self.max_layer < 1:
            raise ConfigError("max_layer must be >= 1")
        if self.label_positive not in ("I", "IE"):
            raise ConfigError("label_positive must be 'I' or 'IE'")
        if self.update_policy not in ("retrain", "warm_start"):
            raise ConfigError("update_policy must be 'retrain' or 'warm_start'")

    def weights(self) -> list[float]:
        return [float(w) for w in self.superspreader_weights.split(",") if w.strip()]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def echo(self) -> str:
        """Every effective key, defaults included, in file syntax."""
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def _coerce(name: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ}") from None
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, types[key])
    return values


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    values = {}
    if path:
        p = Path(path)
        values.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


STREAMS = ("ingest", "epidemic", "tracer", "learner", "eval")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named pipeline stage.

    Stage keys are hashed so adding a stage never shifts another's stream.
    """
    key = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed), key]))
