"""Experiment configuration and the workflows behind the command line.

An experiment file is JSON with optional sections::

    {"race": {...}, "sac": {...}, "controller": {...},
     "enumeration": {...}, "checkpoint": "checkpoints/desk", "train_seed": 0}

Missing sections fall back to the dataclass defaults. Paths inside the file
are resolved relative to the file.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nlp, oracle, sac
from .controller import ClosedLoopLog, ControllerConfig, closed_loop_run, policy_run
from .f1 import env as f1
from .f1.config import ConfigError, RaceConfig, race_from_dict, to_dict
from .mdp import cost_to_go
from .oracle import EnumerationConfig

DEFAULT_HORIZONS = (5, 10)


@dataclass
class ExperimentConfig:
    race: RaceConfig = field(default_factory=RaceConfig)
    sac: sac.SacConfig = field(default_factory=sac.SacConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    horizons: tuple = DEFAULT_HORIZONS       # plus the full race, always benchmarked
    enumeration: EnumerationConfig = field(default_factory=EnumerationConfig)
    checkpoint: Optional[str] = None
    train_seed: int = 0
    source: dict = field(default_factory=dict, repr=False)

    def hash_data(self) -> dict:
        """Everything that determines results, as plain JSON data."""
        return {"race": to_dict(self.race), "sac": asdict(self.sac),
                "controller": {**asdict(self.controller), "horizons": list(self.horizons)},
                "enumeration": asdict(self.enumeration), "train_seed": self.train_seed}


def _section(cls, data, path, **extra):
    if data is None:
        return cls(**extra)
    if not isinstance(data, dict):
        raise ConfigError(path, "expected an object")
    known = {f.name for f in fields(cls)}
    for k in data:
        if k not in known:
            raise ConfigError(f"{path}.{k}", "unknown field")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    kw.update(extra)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def experiment_from_dict(data: dict, base_dir: Optional[Path] = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected an object")
    allowed = {"race", "sac", "controller", "enumeration", "checkpoint", "train_seed", "description"}
    for k in data:
        if k not in allowed:
            raise ConfigError(k, "unknown section")
    race = race_from_dict(data.get("race", {}), "race")
    ctl = dict(data.get("controller") or {})
    horizons = tuple(ctl.pop("horizons", DEFAULT_HORIZONS))
    solver = _section(nlp.SolverOptions, ctl.pop("solver", None), "controller.solver")
    controller = _section(ControllerConfig, ctl, "controller", solver=solver)
    if not horizons or any((not isinstance(h, int)) or h < 1 for h in horizons):
        raise ConfigError("controller.horizons", "must be a list of positive integers")
    sac_cfg = _section(sac.SacConfig, data.get("sac"), "sac")
    enum = data.get("enumeration")
    enum_cfg = _section(EnumerationConfig, enum, "enumeration",
                        **({} if enum and "two_compound_rule" in enum else
                           {"two_compound_rule": race.two_compound_rule}))
    ckpt = data.get("checkpoint")
    if ckpt is not None and base_dir is not None and not Path(ckpt).is_absolute():
        ckpt = str((base_dir / ckpt).resolve())
    seed = data.get("train_seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("train_seed", "must be an integer")
    return ExperimentConfig(race, sac_cfg, controller, horizons, enum_cfg, ckpt, seed, data)


def load_experiment(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(p), f"invalid JSON ({exc})") from exc
    return experiment_from_dict(data, p.parent)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def race_spec(exp: ExperimentConfig, opponent=None, training: bool = False):
    discount = exp.sac.discount if exp.sac.discount is not None else 0.9999
    return f1.make_spec(exp.race, opponent, discount=discount, training_starts=training)


def start_state(exp: ExperimentConfig, seed: Optional[int] = None):
    """Documented race start, or a perturbed start for a positive seed."""
    if not seed:
        return f1.initial_state(exp.race)
    return f1.RaceModel(exp.race).sample_start_state(np.random.default_rng(seed))


def train_agent(exp: ExperimentConfig, seed: int, log_path=None) -> sac.TrainingResult:
    spec = race_spec(exp, training=True)
    res = sac.train(spec, exp.sac, seed, log_path=log_path)
    res.agent.meta.update({"seed": seed, "n_laps": exp.race.n_laps})
    return res


def load_agent(exp: ExperimentConfig, checkpoint: Optional[str] = None) -> sac.Agent:
    path = checkpoint or exp.checkpoint
    if path is None:
        raise ConfigError("checkpoint", "no checkpoint given")
    if not Path(path, "actor.json").is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return sac.load_agent(path)


def run_rl(exp: ExperimentConfig, agent: sac.Agent, x0=None) -> ClosedLoopLog:
    spec = race_spec(exp)
    x0 = start_state(exp) if x0 is None else x0
    return policy_run(spec, sac.ActorPolicy(agent, spec), x0, label="rl")


def run_hybrid(exp: ExperimentConfig, agent: sac.Agent, horizon: int, x0=None,
               use_warm_start: bool = True, env_spec=None, plan_spec=None,
               smooth: bool = True, trace_path=None) -> ClosedLoopLog:
    nominal = race_spec(exp)
    env_spec = env_spec or nominal
    plan_spec = plan_spec or env_spec
    solver = exp.controller.solver if trace_path is None else replace(exp.controller.solver, trace_path=trace_path)
    cfg = replace(exp.controller, horizon=horizon, use_warm_start=use_warm_start, solver=solver)
    critic = sac.CriticCost(agent, plan_spec, smooth=smooth)
    policy = sac.ActorPolicy(agent, nominal)
    x0 = start_state(exp) if x0 is None else x0
    return closed_loop_run(env_spec, policy, critic, x0, cfg, plan_spec=plan_spec, rollout_spec=nominal,
                           label=f"hybrid-N{horizon}")


def run_oracle(exp: ExperimentConfig, jobs: int = 1, x0=None, strategies=None) -> oracle.OracleResult:
    enum = replace(exp.enumeration, jobs=jobs)
    return oracle.best_strategy(exp.race, enum, exp.controller.solver, x0, strategies)


def pit_labels(log: ClosedLoopLog) -> list:
    return [a.discrete for a in log.actions]


def log_rows(log: ClosedLoopLog) -> list:
    rows = []
    for r in log.records:
        x, a = r.transition.state, r.transition.action
        p = r.plan
        rows.append({
            "lap": int(round(x[f1.LAP])) + 1, "E_b": float(x[f1.E_B]), "E_f": float(x[f1.E_F]),
            "m_car": float(x[f1.MASS]), "TW": float(x[f1.WEAR]), "TC": "SMH"[int(round(x[f1.COMPOUND]))],
            "T_race": float(r.transition.next_state[f1.T_RACE]), "T_gap": float(x[f1.GAP]),
            "u_battery": float(a.continuous[0]), "u_fuel": float(a.continuous[1]), "pit": int(a.discrete),
            "stage_cost": float(r.transition.cost), "horizon": p.horizon if p else 0,
            "terminal": bool(p.terminal) if p else False,
            "solver_iterations": p.solve.inner_iterations if p and p.solve else 0,
            "fallback": bool(p.fallback) if p else False})
    return rows


def log_summary(log: ClosedLoopLog, spec) -> dict:
    viol = max((float(np.max(spec.constraint_residual(x), initial=0.0)) for x in log.states), default=0.0)
    it = log.solver_iterations
    return {"label": log.label, "total_cost": log.total_cost,
            "race_time": float(log.states[-1][f1.T_RACE] - log.states[0][f1.T_RACE]),
            "pits": strategy_label(pit_labels(log)), "max_violation": max(viol, 0.0),
            "fallbacks": log.fallback_count,
            "solver_iterations": {"mean": float(np.mean(it)) if it.size else 0.0,
                                  "min": int(it.min()) if it.size else 0, "max": int(it.max()) if it.size else 0},
            "solve_time": float(sum(r.plan.solve_time for r in log.records if r.plan))}


def strategy_label(labels) -> str:
    return oracle.PitStrategy.from_sequence(labels).label()


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def benchmark(exp: ExperimentConfig, agent: sac.Agent, horizons: Sequence[int],
              oracle_time: float, seed: int = 0) -> tuple:
    """Rows of the method comparison plus the closed-loop logs, keyed by method label.

    Run failures are recorded in the row status and do not stop the sweep.
    """
    rows = [{"method": "oracle", "horizon": exp.race.n_laps, "race_time": oracle_time, "gap": 0.0,
             "iter_mean": 0.0, "iter_min": 0, "iter_max": 0, "fallbacks": 0, "seed": seed, "status": "ok"}]
    logs = {}
    x0 = start_state(exp, seed)

    def add(method, horizon, fn):
        try:
            log = fn()
        except Exception as exc:  # noqa: BLE001 - recorded per row
            rows.append({"method": method, "horizon": horizon, "race_time": float("nan"), "gap": float("nan"),
                         "iter_mean": 0.0, "iter_min": 0, "iter_max": 0, "fallbacks": 0, "seed": seed,
                         "status": f"error: {exc}"})
            return
        it = log.solver_iterations
        rows.append({"method": method, "horizon": horizon, "race_time": log.total_cost,
                     "gap": log.total_cost - oracle_time,
                     "iter_mean": float(np.mean(it)) if it.size else 0.0,
                     "iter_min": int(it.min()) if it.size else 0, "iter_max": int(it.max()) if it.size else 0,
                     "fallbacks": log.fallback_count, "seed": seed, "status": "ok"})
        logs[f"{method}-N{horizon}" if method == "hybrid" else method] = log

    add("rl", 0, lambda: run_rl(exp, agent, x0))
    for n in sorted(set(horizons)):
        add("hybrid", n, lambda n=n: run_hybrid(exp, agent, n, x0))
    return rows, logs


def opponent_schedule(exp: ExperimentConfig, agent: sac.Agent, horizon: int) -> np.ndarray:
    """Opponent lap times: the nominal hybrid run's lap times plus the handicap."""
    if exp.race.traffic.opponent_lap_times is not None:
        return np.asarray(exp.race.traffic.opponent_lap_times, float)
    log = run_hybrid(exp, agent, horizon)
    laps = np.diff(log.states[:, f1.T_RACE])
    return laps + exp.race.traffic.handicap


def traffic_compare(exp: ExperimentConfig, agent: sac.Agent, horizon: int,
                    traffic_enabled: bool = True) -> dict:
    opp = opponent_schedule(exp, agent, horizon) if traffic_enabled else None
    env = race_spec(exp, opp)
    nominal = race_spec(exp)
    aware = run_hybrid(exp, agent, horizon, env_spec=env, plan_spec=env)
    blind = run_hybrid(exp, agent, horizon, env_spec=env, plan_spec=nominal)
    trace = [{"lap": k + 1, "gap_aware": float(a[f1.GAP]), "gap_blind": float(b[f1.GAP]),
              "T_race_aware": float(a[f1.T_RACE]), "T_race_blind": float(b[f1.T_RACE]),
              "pit_aware": pa, "pit_blind": pb}
             for k, (a, b, pa, pb) in enumerate(zip(aware.states[1:], blind.states[1:],
                                                    pit_labels(aware), pit_labels(blind)))]
    t_aware = float(aware.states[-1][f1.T_RACE])
    t_blind = float(blind.states[-1][f1.T_RACE])
    return {"aware": aware, "blind": blind, "trace": trace, "opponent": opp,
            "summary": {"race_time_aware": t_aware, "race_time_blind": t_blind, "margin": t_blind - t_aware,
                        "pits_aware": strategy_label(pit_labels(aware)),
                        "pits_blind": strategy_label(pit_labels(blind)),
                        "same_pit_strategy": pit_labels(aware) == pit_labels(blind),
                        "horizon": horizon}}


def critic_trace(exp: ExperimentConfig, agent: sac.Agent, log: ClosedLoopLog) -> list:
    """Critic cost-to-go along a closed-loop trajectory next to the realized discounted cost-to-go."""
    spec = race_spec(exp)
    relu = sac.CriticCost(agent, spec, smooth=False)
    smooth = sac.CriticCost(agent, spec, smooth=True)
    realized = cost_to_go(log.costs, agent.discount)
    rows = []
    for k, tr in enumerate(log.transitions):
        x, a = tr.state, tr.action
        rows.append({"lap": k + 1, "realized": float(realized[k]),
                     "critic_relu": relu.value(x, a.continuous, a.discrete),
                     "critic_smooth": smooth.value(x, a.continuous, a.discrete)})
    return rows


def timed(fn, *args, **kwargs):
    t = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t
