"""Race configuration: parameters, JSON loading and validation.

Units: energies in MJ, allocations in MJ/lap, times in s, mass in kg, tire
wear in dimensionless wear units. Positive battery allocation charges the
battery, negative deploys it.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

COMPOUNDS = ("S", "M", "H")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class CompoundParams:
    name: str
    offset: float          # s, base pace relative to the reference lap time
    wear_rate: float       # wear units per lap at zero fuel mass
    mass_coupling: float   # relative wear increase at full fuel load
    wear_linear: float     # s per wear unit
    wear_quadratic: float  # s per wear unit^2


@dataclass(frozen=True)
class TrafficParams:
    handicap: float = 0.5         # s/lap the opponent is slower than the nominal ego lap
    initial_gap: float = 2.0      # s, set on the lap of the first stop
    peak_penalty: float = 0.495   # s, just under the handicap so a car at the peak still gains
    peak_gap: float = 0.6         # s
    cutoff_gap: float = 2.5       # s
    opponent_lap_times: Optional[tuple] = None  # s per lap; None = derive from a nominal run


def default_compounds() -> tuple:
    return (
        CompoundParams("S", -0.8, 1.00, 0.3, 0.06, 0.006),
        CompoundParams("M", 0.0, 0.60, 0.3, 0.05, 0.004),
        CompoundParams("H", 0.5, 0.40, 0.3, 0.045, 0.003),
    )


@dataclass(frozen=True)
class RaceConfig:
    n_laps: int = 20
    battery_bounds: tuple = (-1.0, 1.0)
    fuel_bounds: tuple = (4.0, 6.0)
    battery_capacity: float = 4.0
    fuel_budget: float = 100.0
    initial_battery: float = 2.0
    start_compound: str = "M"
    base_lap_time: float = 90.0
    dry_mass: float = 700.0
    mass_sensitivity: float = 0.03      # s/kg
    fuel_mass_factor: float = 1.0       # kg/MJ
    fuel_reference: float = 5.0         # MJ/lap at which the fuel term is zero
    fuel_gain: float = 0.5              # s/MJ, slope at the reference allocation
    fuel_curvature: float = 0.1         # s/MJ^2, diminishing returns
    battery_gain: float = 0.4           # s/MJ saved per MJ deployed
    battery_curvature: float = 0.05     # s/MJ^2
    pit_loss: float = 20.0
    compounds: tuple = field(default_factory=default_compounds)
    two_compound_rule: bool = True
    rule_penalty: float = 60.0          # s added on the final lap when the rule is broken
    violation_weight: float = 100.0     # s/MJ^2 on squared constraint violations
    traffic: TrafficParams = field(default_factory=TrafficParams)

    @property
    def compound_index(self) -> dict:
        return {c.name: i for i, c in enumerate(self.compounds)}

    @property
    def full_mass(self) -> float:
        return self.dry_mass + self.fuel_mass_factor * self.fuel_budget


def _check(cond, path, msg):
    if not cond:
        raise ConfigError(path, msg)


def validate(cfg: RaceConfig, prefix: str = "race") -> RaceConfig:
    p = prefix + "."
    _check(isinstance(cfg.n_laps, int) and cfg.n_laps > 0, p + "n_laps", "must be a positive integer")
    for name in ("battery_bounds", "fuel_bounds"):
        b = getattr(cfg, name)
        _check(len(b) == 2 and b[0] <= b[1], p + name, "must be an ordered [min, max] pair")
    _check(cfg.battery_bounds[0] <= 0.0 <= cfg.battery_bounds[1], p + "battery_bounds",
           "must contain 0 (the terminal law allocates no battery energy)")
    _check(cfg.fuel_bounds[0] >= 0.0, p + "fuel_bounds", "minimum allocation must be >= 0")
    _check(cfg.battery_capacity > 0, p + "battery_capacity", "must be positive")
    _check(0.0 <= cfg.initial_battery <= cfg.battery_capacity, p + "initial_battery",
           "must lie in [0, battery_capacity]")
    _check(cfg.n_laps * cfg.fuel_bounds[0] <= cfg.fuel_budget, p + "fuel_budget",
           "n_laps * minimum fuel allocation exceeds the fuel budget")
    _check(cfg.start_compound in cfg.compound_index, p + "start_compound",
           f"must be one of {[c.name for c in cfg.compounds]}")
    for name in ("base_lap_time", "dry_mass", "mass_sensitivity", "fuel_mass_factor", "fuel_reference",
                 "fuel_gain", "fuel_curvature", "battery_gain", "battery_curvature", "pit_loss",
                 "rule_penalty", "violation_weight"):
        v = getattr(cfg, name)
        _check(isinstance(v, (int, float)) and v == v and abs(v) != float("inf"), p + name, "must be finite")
        _check(v >= 0, p + name, "must be non-negative")
    slope_hi = cfg.fuel_gain - 2 * cfg.fuel_curvature * (cfg.fuel_bounds[1] - cfg.fuel_reference)
    _check(slope_hi > 0, p + "fuel_curvature", "fuel benefit must stay increasing on the allocation bounds")
    _check(len(cfg.compounds) == 3, p + "compounds", "exactly three compounds (S, M, H) are required")
    for i, c in enumerate(cfg.compounds):
        cp = f"{p}compounds[{i}]"
        _check(c.wear_rate > 0, cp + ".wear_rate", "must be positive")
        _check(c.wear_linear >= 0 and c.wear_quadratic >= 0, cp + ".wear_linear", "wear coefficients must be >= 0")
        _check(c.mass_coupling >= 0, cp + ".mass_coupling", "must be >= 0")
    offs = [c.offset for c in cfg.compounds]
    rates = [c.wear_rate for c in cfg.compounds]
    _check(offs[0] < offs[1] < offs[2], p + "compounds", "offsets must increase S < M < H")
    _check(rates[0] > rates[1] > rates[2], p + "compounds", "wear rates must decrease S > M > H")
    t = cfg.traffic
    tp = p + "traffic."
    _check(0 < t.peak_gap < t.cutoff_gap, tp + "peak_gap", "must satisfy 0 < peak_gap < cutoff_gap")
    _check(t.peak_penalty >= 0, tp + "peak_penalty", "must be >= 0")
    _check(t.handicap >= 0, tp + "handicap", "must be >= 0")
    if t.opponent_lap_times is not None:
        _check(len(t.opponent_lap_times) == cfg.n_laps, tp + "opponent_lap_times", "needs one entry per lap")
    return cfg


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, "expected an object")
    known = {f.name: f for f in fields(cls)}
    for k in data:
        if k not in known:
            raise ConfigError(f"{path}.{k}", "unknown field")
    kwargs = {}
    for k, v in data.items():
        if k == "compounds":
            if not isinstance(v, list):
                raise ConfigError(f"{path}.compounds", "expected a list")
            kwargs[k] = tuple(_build(CompoundParams, c, f"{path}.compounds[{i}]") for i, c in enumerate(v))
        elif k == "traffic":
            kwargs[k] = _build(TrafficParams, v, f"{path}.traffic")
        elif isinstance(v, list):
            kwargs[k] = tuple(v)
        else:
            kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(path, str(exc)) from exc


def race_from_dict(data: dict, path: str = "race") -> RaceConfig:
    return validate(_build(RaceConfig, data, path), path)


def to_dict(obj) -> dict:
    if is_dataclass(obj):
        return json.loads(json.dumps(asdict(obj)))
    return obj


def load_race_config(path) -> RaceConfig:
    data = json.loads(Path(path).read_text())
    return race_from_dict(data.get("race", data))
