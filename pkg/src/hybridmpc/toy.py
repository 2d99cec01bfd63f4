"""Small hybrid MDPs with known solutions, used to check the learning code.

`steering_task` is the reference problem: a scalar position x driven to
zero in six steps. Each step picks a mode and a continuous push u in
[-1, 1]:

    coast (d = 0):  x' = x + 0.5 u
    boost (d = 1):  x' = x + 1.5 u,  with a fixed fee of 0.3

    stage cost      x^2 + 0.1 u^2 + 0.3 [d = 1]

State layout: [x, k] with k the step counter. Boosting pays off only when
x is far from zero, so the optimal policy genuinely mixes both modes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mdp import HybridAction, MdpSpec, OracleTables, rollout, value_iteration_oracle

Array = np.ndarray


@dataclass(frozen=True)
class SteeringParams:
    horizon: int = 6
    gains: tuple = (0.5, 1.5)
    boost_fee: float = 0.3
    effort_weight: float = 0.1
    start_range: float = 2.0
    x_scale: float = 2.0


def steering_task(params: SteeringParams = SteeringParams(), discount: float = 1.0) -> MdpSpec:
    p = params

    def dynamics(x, a: HybridAction):
        return np.array([x[0] + p.gains[a.discrete] * a.continuous[0], x[1] + 1.0])

    def cost(x, a: HybridAction):
        u = a.continuous[0]
        return float(x[0] ** 2 + p.effort_weight * u * u + (p.boost_fee if a.discrete else 0.0))

    def features(x):
        return np.array([x[0] / p.x_scale, 2.0 * x[1] / p.horizon - 1.0])

    def features_jacobian(x):
        return np.array([[1.0 / p.x_scale, 0.0], [0.0, 0.0]])

    def sampler(rng):
        return np.array([rng.uniform(-p.start_range, p.start_range), 0.0])

    return MdpSpec(
        state_dim=2, continuous_bounds=[[-1.0, 1.0]], discrete_count=2,
        dynamics=dynamics, stage_cost=cost, discount=discount,
        horizon_laps=p.horizon, time_index=1,
        features=features, features_jacobian=features_jacobian,
        initial_state_sampler=sampler, name="steering")


EVAL_STARTS = (-1.8, -1.0, -0.4, 0.5, 1.2, 2.0)


def steering_oracle(spec: MdpSpec, n_x: int = 241, n_u: int = 81, x_max: float = 4.0) -> OracleTables:
    return value_iteration_oracle(spec, [np.linspace(-x_max, x_max, n_x)],
                                  [np.linspace(-1.0, 1.0, n_u)], finite_horizon=True)


def closed_loop_cost(spec: MdpSpec, policy, starts: Sequence[float] = EVAL_STARTS) -> float:
    """Total cost of the policy summed over a fixed set of start positions."""
    total = 0.0
    for x0 in starts:
        traj = rollout(spec, policy, np.array([x0, 0.0]), spec.horizon_laps)
        total += float(np.sum(traj.costs))
    return total


def two_state_chain(discount: float = 0.5) -> MdpSpec:
    """Two states {0, 1}, two labels; label 1 toggles the state, label 0 stays.

    Costs: 1 in state 0, 0 in state 1, plus 0.25 for toggling. The optimal
    policy toggles from 0 and stays in 1, so J*(1) = 0 and J*(0) = 1.25.
    """

    def dynamics(x, a):
        return np.array([1.0 - x[0]]) if a.discrete == 1 else np.array([x[0]])

    def cost(x, a):
        return float((1.0 if x[0] < 0.5 else 0.0) + (0.25 if a.discrete == 1 else 0.0))

    return MdpSpec(state_dim=1, continuous_bounds=[[0.0, 0.0]], discrete_count=2,
                   dynamics=dynamics, stage_cost=cost, discount=discount, name="chain")
