"""Exhaustive mixed-integer baseline: enumerate pit strategies, solve each NLP.

For every admissible strategy the discrete sequence is fixed and the
full-race continuous problem is solved by single shooting (no terminal
cost). The best strategy over the enumerated set is the discrete global
optimum; within each candidate the NLP solution is a local optimum.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nlp
from .controller import ReducedOcp
from .f1 import env as f1
from .f1.config import COMPOUNDS, RaceConfig

Array = np.ndarray


class EnumerationBudgetError(RuntimeError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"enumeration would produce {count} strategies (cap {cap})")
        self.count = count


@dataclass(frozen=True)
class PitStrategy:
    """Stops as (lap, compound) pairs.

    ``lap`` is 1-based: a stop at lap L ends the L-th lap, so the first
    stint covers L laps.
    """

    stops: tuple = ()

    def label(self) -> str:
        return "-".join(f"{lap}{c}" for lap, c in self.stops) or "none"

    def discrete_sequence(self, n_laps: int) -> Array:
        d = np.zeros(n_laps, dtype=int)
        for lap, c in self.stops:
            d[lap - 1] = COMPOUNDS.index(c) + 1
        return d

    @classmethod
    def from_sequence(cls, seq) -> "PitStrategy":
        return cls(tuple((j + 1, COMPOUNDS[int(v) - 1]) for j, v in enumerate(seq) if int(v) != 0))


@dataclass(frozen=True)
class EnumerationConfig:
    min_stops: int = 1
    max_stops: int = 2
    min_stint: int = 1
    min_stop_lap: int = 1
    min_tail: int = 1
    two_compound_rule: bool = True
    max_candidates: int = 20_000
    jobs: int = 1

    def __post_init__(self):
        if not self.max_stops >= self.min_stops >= 1:
            raise ValueError("need max_stops >= min_stops >= 1")
        if self.min_stint < 1:
            raise ValueError("min_stint must be >= 1")


def _admissible(laps, n_laps, cfg: EnumerationConfig) -> bool:
    bounds = (0,) + tuple(laps) + (n_laps,)
    return all(b - a >= cfg.min_stint for a, b in zip(bounds, bounds[1:]))


def enumerate_strategies(cfg: EnumerationConfig, n_laps: int,
                         start_compound: Optional[str] = None) -> list:
    """All admissible strategies, ordered by stop count, then laps, then compounds."""
    lap_range = range(cfg.min_stop_lap, n_laps - cfg.min_tail + 1)
    lap_sets = []
    count = 0
    for k in range(cfg.min_stops, cfg.max_stops + 1):
        for laps in itertools.combinations(lap_range, k):
            if _admissible(laps, n_laps, cfg):
                lap_sets.append(laps)
                count += len(COMPOUNDS) ** k
    if count > cfg.max_candidates:
        raise EnumerationBudgetError(count, cfg.max_candidates)
    out = []
    for laps in lap_sets:
        for comps in itertools.product(COMPOUNDS, repeat=len(laps)):
            if cfg.two_compound_rule and start_compound is not None:
                if len({start_compound, *comps}) < 2:
                    continue
            out.append(PitStrategy(tuple(zip(laps, comps))))
    return out


@dataclass
class FixedStrategyResult:
    strategy: PitStrategy
    race_time: float
    plan: Array
    solve: nlp.SolveResult

    @property
    def success(self) -> bool:
        return self.solve.status == nlp.OPTIMAL


@dataclass
class OracleResult:
    best: PitStrategy
    best_time: float
    best_plan: Array
    ranking: list = field(default_factory=list)   # (strategy, race time, status), best first
    nlp_count: int = 0
    failures: list = field(default_factory=list)


def _problem(cfg: RaceConfig, x0: Array, strategy: PitStrategy) -> ReducedOcp:
    spec = f1.make_spec(cfg, training_starts=False)
    return ReducedOcp(spec, x0, strategy.discrete_sequence(cfg.n_laps))


def solve_fixed_strategy(cfg: RaceConfig, strategy: PitStrategy,
                         opts: Optional[nlp.SolverOptions] = None,
                         x0: Optional[Array] = None) -> FixedStrategyResult:
    x0 = f1.initial_state(cfg) if x0 is None else np.asarray(x0, dtype=float)
    ocp = _problem(cfg, x0, strategy)
    prob = ocp.problem()
    z0 = np.tile([0.0, f1.nominal_fuel_allocation(cfg)], cfg.n_laps)
    res = nlp.solve(prob, z0, opts or nlp.SolverOptions())
    race_time = ocp.objective(res.z)[0]
    return FixedStrategyResult(strategy, float(race_time), ocp.unpack(res.z), res)


def _solve_task(args):
    cfg, strategy, opts, x0 = args
    return solve_fixed_strategy(cfg, strategy, opts, x0)


def best_strategy(cfg: RaceConfig, enum_cfg: Optional[EnumerationConfig] = None,
                  opts: Optional[nlp.SolverOptions] = None, x0: Optional[Array] = None,
                  strategies: Optional[Sequence[PitStrategy]] = None) -> OracleResult:
    enum_cfg = enum_cfg or EnumerationConfig(two_compound_rule=cfg.two_compound_rule)
    x0 = f1.initial_state(cfg) if x0 is None else np.asarray(x0, dtype=float)
    start = cfg.compounds[int(round(x0[f1.COMPOUND]))].name
    if strategies is None:
        strategies = enumerate_strategies(enum_cfg, cfg.n_laps, start)
    tasks = [(cfg, s, opts, x0) for s in strategies]
    if enum_cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=enum_cfg.jobs) as pool:
            results = list(pool.map(_solve_task, tasks, chunksize=8))
    else:
        results = [_solve_task(t) for t in tasks]
    ok = [r for r in results if r.success]
    failures = [(r.strategy, r.solve.status) for r in results if not r.success]
    if not ok:
        raise RuntimeError("every candidate NLP failed")
    ranked = sorted(results, key=lambda r: (not r.success, r.race_time, r.strategy.stops))
    best = ranked[0]
    return OracleResult(best.strategy, best.race_time, best.plan,
                        [(r.strategy, r.race_time, r.solve.status) for r in ranked],
                        len(results), failures)
