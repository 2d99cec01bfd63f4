"""Lap-by-lap race model: energy, mass, tires, pit stops and traffic.

The state is a flat vector, see `RaceState` for the layout. A pit stop is
executed at the end of the lap on which it is commanded: that lap is driven
on the old tires and carries the pit loss; the new compound is fitted for
the following lap.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..mdp import BoundsViolationError, HybridAction, MdpSpec
from .config import RaceConfig

Array = np.ndarray

E_B, E_F, MASS, WEAR, COMPOUND, LAP, T_RACE, GAP, PHASE, USED = range(10)
STATE_DIM = 10
N_FEATURES = 9

# traffic phases
NO_TRAFFIC, BEHIND, CLEARED = 0, 1, 2


@dataclass(frozen=True)
class RaceState:
    E_b: float
    E_f: float
    m_car: float
    TW: float
    TC: int
    lap: int = 0
    T_race: float = 0.0
    T_gap: float = 0.0
    traffic_phase: int = NO_TRAFFIC
    compounds_used: int = 0

    def to_vector(self) -> Array:
        used = self.compounds_used or (1 << self.TC)
        return np.array([self.E_b, self.E_f, self.m_car, self.TW, self.TC, self.lap,
                         self.T_race, self.T_gap, self.traffic_phase, used], dtype=float)

    @classmethod
    def from_vector(cls, x) -> "RaceState":
        x = np.asarray(x, dtype=float)
        return cls(float(x[E_B]), float(x[E_F]), float(x[MASS]), float(x[WEAR]), int(round(x[COMPOUND])),
                   int(round(x[LAP])), float(x[T_RACE]), float(x[GAP]), int(round(x[PHASE])),
                   int(round(x[USED])))


def initial_state(cfg: RaceConfig, **overrides) -> Array:
    tc = cfg.compound_index[overrides.pop("compound", cfg.start_compound)]
    s = dict(E_b=cfg.initial_battery, E_f=cfg.fuel_budget, m_car=cfg.full_mass, TW=0.0, TC=tc)
    s.update(overrides)
    return RaceState(**s).to_vector()


def _label(v) -> int:
    return int(v + 0.5)


def _compound(cfg: RaceConfig, x):
    return cfg.compounds[_label(x[COMPOUND])]


def rule_satisfied(x) -> bool:
    return bin(_label(x[USED])).count("1") >= 2


def nominal_fuel_allocation(cfg: RaceConfig) -> float:
    if cfg.n_laps <= 0:
        raise ValueError("n_laps must be positive")
    return cfg.fuel_budget / cfg.n_laps


def fuel_percent(cfg: RaceConfig, allocation):
    return 100.0 * np.asarray(allocation, dtype=float) / nominal_fuel_allocation(cfg)


def fuel_from_percent(cfg: RaceConfig, pct):
    return np.asarray(pct, dtype=float) / 100.0 * nominal_fuel_allocation(cfg)


def check_allocation(cfg: RaceConfig, dEb: float, dEf: float, ps: int) -> None:
    lo_b, hi_b = cfg.battery_bounds
    lo_f, hi_f = cfg.fuel_bounds
    if not lo_b <= dEb <= hi_b:
        raise BoundsViolationError(f"battery allocation {dEb!r} outside [{lo_b}, {hi_b}]", 0)
    if not lo_f <= dEf <= hi_f:
        raise BoundsViolationError(f"fuel allocation {dEf!r} outside [{lo_f}, {hi_f}]", 1)
    if ps not in (0, 1, 2, 3):
        raise BoundsViolationError(f"pit decision {ps!r} not in {{0, 1, 2, 3}}")


def tire_delta(cfg: RaceConfig, x) -> float:
    c = _compound(cfg, x)
    tw = x[WEAR]
    return c.offset + c.wear_linear * tw + c.wear_quadratic * tw * tw


def lap_time(cfg: RaceConfig, x, dEb: float, dEf: float, ps: int) -> float:
    """Traffic-free lap time in seconds."""
    check_allocation(cfg, dEb, dEf, ps)
    return _lap_time(cfg, x, dEb, dEf, ps)


def _lap_time(cfg, x, dEb, dEf, ps):
    d = dEf - cfg.fuel_reference
    t = (cfg.base_lap_time
         + cfg.mass_sensitivity * (x[MASS] - cfg.dry_mass)
         - (cfg.fuel_gain * d - cfg.fuel_curvature * d * d)
         + cfg.battery_gain * dEb + cfg.battery_curvature * dEb * dEb
         + tire_delta(cfg, x))
    if ps != 0:
        t += cfg.pit_loss
    return float(t)


def _lap_time_grad(cfg, x, dEb, dEf):
    """(d/dx, d/du) of the traffic-free lap time."""
    c = _compound(cfg, x)
    gx = np.zeros(STATE_DIM)
    gx[MASS] = cfg.mass_sensitivity
    gx[WEAR] = c.wear_linear + 2.0 * c.wear_quadratic * x[WEAR]
    d = dEf - cfg.fuel_reference
    gu = np.array([cfg.battery_gain + 2.0 * cfg.battery_curvature * dEb,
                   -(cfg.fuel_gain - 2.0 * cfg.fuel_curvature * d)])
    return gx, gu


def wear_rate(cfg: RaceConfig, x) -> float:
    c = _compound(cfg, x)
    load = (x[MASS] - cfg.dry_mass) / (cfg.fuel_mass_factor * cfg.fuel_budget)
    return c.wear_rate * (1.0 + c.mass_coupling * load)


# ---------------------------------------------------------------------------
# traffic
# ---------------------------------------------------------------------------

def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _smoothstep_d(t):
    inside = (t > 0.0) & (t < 1.0)
    return np.where(inside, 6.0 * t * (1.0 - t), 0.0)


def traffic_penalty(gap, params=None):
    """Dirty-air lap-time penalty: C1 bump, zero at gap <= 0 and gap >= cutoff."""
    from .config import TrafficParams
    p = params or TrafficParams()
    g = np.asarray(gap, dtype=float)
    rise = p.peak_penalty * _smoothstep(g / p.peak_gap)
    fall = p.peak_penalty * (1.0 - _smoothstep((g - p.peak_gap) / (p.cutoff_gap - p.peak_gap)))
    out = np.where(g <= 0.0, 0.0, np.where(g <= p.peak_gap, rise, np.where(g < p.cutoff_gap, fall, 0.0)))
    return float(out) if out.ndim == 0 else out


def traffic_penalty_derivative(gap, params=None):
    from .config import TrafficParams
    p = params or TrafficParams()
    g = np.asarray(gap, dtype=float)
    w = p.cutoff_gap - p.peak_gap
    rise = p.peak_penalty * _smoothstep_d(g / p.peak_gap) / p.peak_gap
    fall = -p.peak_penalty * _smoothstep_d((g - p.peak_gap) / w) / w
    out = np.where(g <= p.peak_gap, rise, fall)
    return float(out) if out.ndim == 0 else out


def gap_update(gap: float, t_lap: float, t_lap_opponent: float) -> float:
    return gap + (t_lap - t_lap_opponent)


def traffic_lap_time(cfg: RaceConfig, x, dEb: float, dEf: float, ps: int) -> float:
    """Ego lap time including the dirty-air penalty at the current gap."""
    base = lap_time(cfg, x, dEb, dEf, ps)
    if _label(x[PHASE]) != BEHIND:
        return base
    return base + traffic_penalty(x[GAP], cfg.traffic)


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

class RaceModel:
    """Dynamics, costs and derivatives for one configuration.

    ``opponent_lap_times`` switches the traffic extension on.
    """

    def __init__(self, cfg: RaceConfig, opponent_lap_times: Optional[Array] = None):
        self.cfg = cfg
        self.opponent = None if opponent_lap_times is None else np.asarray(opponent_lap_times, float)
        lo_f, hi_f = cfg.fuel_bounds
        self._fmid = 0.5 * (lo_f + hi_f)
        self._fhw = max(0.5 * (hi_f - lo_f), 1e-9)
        self._tw_scale = cfg.n_laps * max(c.wear_rate * (1 + c.mass_coupling) for c in cfg.compounds)

    @property
    def traffic(self) -> bool:
        return self.opponent is not None

    def _penalty_active(self, x) -> bool:
        return self.traffic and _label(x[PHASE]) == BEHIND

    def ego_lap_time(self, x, a: HybridAction) -> float:
        t = _lap_time(self.cfg, x, a.continuous[0], a.continuous[1], a.discrete)
        if self._penalty_active(x):
            t += traffic_penalty(x[GAP], self.cfg.traffic)
        return t

    def step(self, x, a: HybridAction) -> Array:
        return self.transition(x, a)[0]

    def transition(self, x, a: HybridAction):
        """(next state, ego lap time)."""
        cfg = self.cfg
        dEb, dEf = a.continuous
        ps = a.discrete
        check_allocation(cfg, dEb, dEf, ps)
        t = self.ego_lap_time(x, a)
        y = np.array(x, dtype=float, copy=True)
        y[E_B] = x[E_B] + dEb
        y[E_F] = x[E_F] - dEf
        y[MASS] = x[MASS] - cfg.fuel_mass_factor * dEf
        if ps == 0:
            y[WEAR] = x[WEAR] + wear_rate(cfg, x)
        else:
            y[WEAR] = 0.0
            y[COMPOUND] = ps - 1
            y[USED] = float(_label(x[USED]) | (1 << (ps - 1)))
        y[T_RACE] = x[T_RACE] + t
        y[LAP] = x[LAP] + 1
        if self.traffic:
            phase = _label(x[PHASE])
            lap = _label(x[LAP])
            if phase == NO_TRAFFIC:
                if ps != 0:
                    y[PHASE] = BEHIND
                    y[GAP] = cfg.traffic.initial_gap
            else:
                y[GAP] = gap_update(x[GAP], t, self.opponent[min(lap, len(self.opponent) - 1)])
                if phase == BEHIND and y[GAP] < 0.0:
                    y[PHASE] = CLEARED
        return y, t

    def jacobians(self, x, a: HybridAction):
        """(df/dx, df/du) with the discrete action held fixed."""
        cfg = self.cfg
        dEb, dEf = a.continuous
        ps = a.discrete
        A = np.eye(STATE_DIM)
        B = np.zeros((STATE_DIM, 2))
        B[E_B, 0] = 1.0
        B[E_F, 1] = -1.0
        B[MASS, 1] = -cfg.fuel_mass_factor
        if ps == 0:
            c = _compound(cfg, x)
            A[WEAR, MASS] = c.wear_rate * c.mass_coupling / (cfg.fuel_mass_factor * cfg.fuel_budget)
        else:
            A[WEAR, WEAR] = 0.0
            A[COMPOUND, COMPOUND] = 0.0
            A[USED, USED] = 0.0
        gx, gu = self.lap_time_gradients(x, a)
        A[T_RACE] += gx
        B[T_RACE] = gu
        if self.traffic:
            phase = _label(x[PHASE])
            if phase == NO_TRAFFIC:
                if ps != 0:
                    A[GAP, GAP] = 0.0
                    A[PHASE, PHASE] = 0.0
            else:
                A[GAP] += gx
                B[GAP] = gu
        return A, B

    def lap_time_gradients(self, x, a: HybridAction):
        gx, gu = _lap_time_grad(self.cfg, x, a.continuous[0], a.continuous[1])
        if self._penalty_active(x):
            gx[GAP] += traffic_penalty_derivative(x[GAP], self.cfg.traffic)
        return gx, gu

    # -- constraints ---------------------------------------------------------

    def constraints(self, x) -> Array:
        """Residuals (<= 0 feasible): battery window and fuel needed to finish at minimum allocation."""
        cfg = self.cfg
        remaining = cfg.n_laps - x[LAP]
        return np.array([-x[E_B], x[E_B] - cfg.battery_capacity,
                         cfg.fuel_bounds[0] * remaining - x[E_F]])

    def constraint_jacobian(self, x) -> Array:
        J = np.zeros((3, STATE_DIM))
        J[0, E_B] = -1.0
        J[1, E_B] = 1.0
        J[2, E_F] = -1.0
        return J

    # -- stage cost ----------------------------------------------------------

    def stage_cost(self, x, a: HybridAction) -> float:
        return self.step_and_cost(x, a)[1]

    def step_and_cost(self, x, a: HybridAction):
        cfg = self.cfg
        y, c = self.transition(x, a)
        viol = np.maximum(self.constraints(y), 0.0)
        c += cfg.violation_weight * float(viol @ viol)
        if cfg.two_compound_rule and _label(y[LAP]) >= cfg.n_laps and not rule_satisfied(y):
            c += cfg.rule_penalty
        return y, float(c)

    def cost_gradients(self, x, a: HybridAction):
        gx, gu = self.lap_time_gradients(x, a)
        # the constrained components of the successor are affine in the inputs
        y = np.array(x, dtype=float, copy=True)
        y[E_B] += a.continuous[0]
        y[E_F] -= a.continuous[1]
        y[LAP] += 1.0
        viol = np.maximum(self.constraints(y), 0.0)
        if np.any(viol > 0):
            A, B = self.jacobians(x, a)
            w = 2.0 * self.cfg.violation_weight * viol @ self.constraint_jacobian(y)
            gx = gx + w @ A
            gu = gu + w @ B
        return gx, gu

    # -- learning interface ---------------------------------------------------

    def features(self, x) -> Array:
        cfg = self.cfg
        remaining = max(cfg.n_laps - x[LAP], 1.0)
        tc = _label(x[COMPOUND])
        f = np.zeros(N_FEATURES)
        f[0] = 2.0 * x[E_B] / cfg.battery_capacity - 1.0
        f[1] = 2.0 * x[E_F] / cfg.fuel_budget - 1.0
        f[2] = (x[E_F] / remaining - self._fmid) / self._fhw
        f[3] = 2.0 * x[WEAR] / self._tw_scale - 1.0
        f[4 + tc] = 1.0
        f[7] = 2.0 * x[LAP] / cfg.n_laps - 1.0
        f[8] = 1.0 if rule_satisfied(x) else -1.0
        return f

    def features_jacobian(self, x) -> Array:
        cfg = self.cfg
        remaining = max(cfg.n_laps - x[LAP], 1.0)
        J = np.zeros((N_FEATURES, STATE_DIM))
        J[0, E_B] = 2.0 / cfg.battery_capacity
        J[1, E_F] = 2.0 / cfg.fuel_budget
        J[2, E_F] = 1.0 / (remaining * self._fhw)
        J[3, WEAR] = 2.0 / self._tw_scale
        return J

    def terminal_law(self, x) -> Array:
        return np.array([0.0, self.cfg.fuel_bounds[0]])

    def sample_training_state(self, rng: np.random.Generator) -> Array:
        """Random feasible mid-race state, used to widen training coverage."""
        cfg = self.cfg
        n = cfg.n_laps
        lap = 0 if rng.random() < 0.5 else int(rng.integers(1, n - 1))
        remaining = n - lap
        tc = int(rng.integers(0, 3))
        used = 1 << tc
        if lap > 0 and rng.random() < 0.5:
            used |= 1 << int(rng.integers(0, 3))
        lo_f, hi_f = cfg.fuel_bounds
        nominal = cfg.fuel_budget / n
        e_f = nominal * remaining * rng.uniform(0.92, 1.06)
        e_f = float(np.clip(e_f, lo_f * remaining, min(hi_f * remaining, cfg.fuel_budget)))
        e_b = rng.uniform(0.1, 0.9) * cfg.battery_capacity
        tw = 0.0 if lap == 0 else rng.uniform(0.0, min(lap, 0.6 * n) * cfg.compounds[tc].wear_rate)
        return RaceState(e_b, e_f, cfg.dry_mass + cfg.fuel_mass_factor * e_f, tw, tc, lap,
                         compounds_used=used).to_vector()

    def sample_start_state(self, rng: np.random.Generator) -> Array:
        """Race start with a perturbed battery level and a random starting compound."""
        cfg = self.cfg
        tc = cfg.compounds[int(rng.integers(0, 3))].name
        e_b = float(np.clip(cfg.initial_battery + rng.uniform(-0.5, 0.5), 0.0, cfg.battery_capacity))
        return initial_state(cfg, compound=tc, E_b=e_b)


def make_spec(cfg: RaceConfig, opponent_lap_times: Optional[Array] = None,
              discount: float = 0.9999, training_starts: bool = True) -> MdpSpec:
    model = RaceModel(cfg, opponent_lap_times)
    return MdpSpec(
        state_dim=STATE_DIM,
        continuous_bounds=np.array([cfg.battery_bounds, cfg.fuel_bounds], dtype=float),
        discrete_count=4,
        dynamics=model.step,
        stage_cost=model.stage_cost,
        step_and_cost=model.step_and_cost,
        discount=discount,
        state_constraints=model.constraints,
        horizon_laps=cfg.n_laps,
        time_index=LAP,
        features=model.features,
        features_jacobian=model.features_jacobian,
        dynamics_jacobians=model.jacobians,
        cost_gradients=model.cost_gradients,
        constraint_jacobian=model.constraint_jacobian,
        constraints_affine=True,
        terminal_law=model.terminal_law,
        initial_state_sampler=model.sample_training_state if training_starts else None,
        name="f1-traffic" if model.traffic else "f1",
    )


def dynamics_step(cfg: RaceConfig, x, action: HybridAction) -> Array:
    return RaceModel(cfg).step(x, action)


def dynamics_jacobians(cfg: RaceConfig, x, action: HybridAction):
    return RaceModel(cfg).jacobians(x, action)
