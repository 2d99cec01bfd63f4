"""Receding-horizon deployment of a trained hybrid actor-critic.

Each step the actor is rolled out on the model to fix the discrete inputs
and to provide a continuous warm start. The remaining continuous problem is
solved by single shooting, with the critic as terminal cost, and only the
first input pair is applied. Near the end of a finite episode the horizon
shrinks to the remaining steps and the terminal cost is dropped.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import nlp
from .mdp import HybridAction, MdpSpec, Transition, step

Array = np.ndarray
Policy = Callable[[Array], HybridAction]
# terminal(x, u_c, d) -> (value, d/dx, d/du)
TerminalCost = Callable[[Array, Array, int], tuple]

FEASIBILITY_TOL = 1e-6


class InfeasibleStateError(RuntimeError):
    pass


class PlanningError(RuntimeError):
    pass


@dataclass
class ControllerConfig:
    horizon: int = 15
    use_warm_start: bool = True
    terminal_cost: str = "critic"   # "critic" | "none"
    model_traffic: bool = False
    fallback: str = "shift"
    solver: nlp.SolverOptions = field(default_factory=nlp.SolverOptions)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.terminal_cost not in ("critic", "none"):
            raise ValueError(f"terminal_cost must be 'critic' or 'none', got {self.terminal_cost!r}")


@dataclass
class PlanResult:
    discrete: Array          # (K,) labels, K = horizon (+1 with terminal input)
    warm_start: Array        # (K, n_c)
    continuous: Array        # (K, n_c)
    states: Array            # (horizon + 1, n_x) predicted by single shooting
    objective: float
    warm_objective: float
    horizon: int
    terminal: bool
    solve: Optional[nlp.SolveResult] = None
    fallback: bool = False
    kept_warm_start: bool = False
    violation: float = 0.0
    solve_time: float = 0.0

    @property
    def first_action(self) -> HybridAction:
        return HybridAction(self.continuous[0], int(self.discrete[0]))


@dataclass
class StepRecord:
    transition: Transition
    plan: Optional[PlanResult]

    @property
    def horizon(self) -> int:
        return self.plan.horizon if self.plan else 0


@dataclass
class ClosedLoopLog:
    initial_state: Array
    records: list = field(default_factory=list)
    label: str = ""

    @property
    def transitions(self) -> list:
        return [r.transition for r in self.records]

    @property
    def costs(self) -> Array:
        return np.array([r.transition.cost for r in self.records])

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.costs))

    @property
    def states(self) -> Array:
        return np.vstack([self.initial_state] + [r.transition.next_state for r in self.records])

    @property
    def actions(self) -> list:
        return [r.transition.action for r in self.records]

    @property
    def fallback_count(self) -> int:
        return sum(1 for r in self.records if r.plan and r.plan.fallback)

    @property
    def solver_iterations(self) -> Array:
        return np.array([r.plan.solve.inner_iterations for r in self.records
                         if r.plan and r.plan.solve is not None], dtype=int)


# ---------------------------------------------------------------------------

def actor_rollout(policy: Policy, spec: MdpSpec, x: Array, n_actions: int):
    """Roll the deterministic actor through the model.

    Returns (discrete labels (n,), continuous inputs (n, n_c), states (n+1, n_x)).
    """
    if n_actions < 1:
        raise ValueError("need at least one action")
    xs = [np.asarray(x, dtype=float)]
    ds, us = [], []
    for _ in range(n_actions):
        a = policy(xs[-1])
        xs.append(np.asarray(spec.dynamics(xs[-1], a), dtype=float))
        ds.append(a.discrete)
        us.append(np.asarray(a.continuous, dtype=float))
    return np.array(ds, dtype=int), np.vstack(us), np.vstack(xs)


class ReducedOcp:
    """Single-shooting OCP over continuous inputs for a fixed discrete sequence.

    Decision vector z = [u_0, ..., u_{N-1}] (+ u_N when a terminal cost is
    used). The objective is the undiscounted stage-cost sum plus the terminal
    cost at (x_N, u_N, d_N); states are eliminated by forward simulation and
    the gradient comes from a backward adjoint sweep.
    """

    def __init__(self, spec: MdpSpec, x0: Array, discrete: Array,
                 terminal: Optional[TerminalCost] = None):
        self.spec = spec
        self.x0 = np.asarray(x0, dtype=float)
        self.discrete = np.asarray(discrete, dtype=int)
        self.terminal = terminal
        self.nc = spec.n_continuous
        self.N = len(self.discrete) - (1 if terminal is not None else 0)
        if self.N < 1:
            raise ValueError("reduced OCP needs at least one stage")
        self.n = len(self.discrete) * self.nc
        self._cache_key = None
        self._jac = None

    def unpack(self, z):
        return np.asarray(z, dtype=float).reshape(len(self.discrete), self.nc)

    def actions(self, z):
        U = self.unpack(z)
        return [HybridAction(U[k], self.discrete[k]) for k in range(len(self.discrete))]

    def simulate(self, z) -> Array:
        acts = self.actions(z)
        xs = [self.x0]
        for k in range(self.N):
            xs.append(np.asarray(self.spec.dynamics(xs[-1], acts[k]), dtype=float))
        return np.vstack(xs)

    def _forward(self, z):
        key = np.asarray(z, dtype=float).tobytes()
        if key == self._cache_key:
            return self._cache
        acts = self.actions(z)
        xs = [self.x0]
        total = 0.0
        for k in range(self.N):
            y, c = self.spec.advance(xs[-1], acts[k])
            total += c
            xs.append(y)
        term = None
        if self.terminal is not None:
            aN = acts[self.N]
            term = self.terminal(xs[-1], aN.continuous, aN.discrete)
            total += float(term[0])
        self._cache_key = key
        self._cache = (acts, xs, total, term)
        return self._cache

    def objective(self, z):
        acts, xs, total, term = self._forward(z)
        grad = np.zeros((len(self.discrete), self.nc))
        lam = np.zeros(self.spec.state_dim)
        if term is not None:
            lam = np.asarray(term[1], dtype=float).copy()
            grad[self.N] = term[2]
        for k in range(self.N - 1, -1, -1):
            A, B = self.spec.dynamics_jacobians(xs[k], acts[k])
            lx, lu = self.spec.cost_gradients(xs[k], acts[k])
            grad[k] = lu + B.T @ lam
            lam = lx + A.T @ lam
        return total, grad.ravel()

    def constraint_values(self, z) -> Array:
        _, xs, _, _ = self._forward(z)
        return np.concatenate([self.spec.constraint_residual(x) for x in xs[1:]])

    def constraints(self, z):
        acts, xs, _, _ = self._forward(z)
        g = np.concatenate([self.spec.constraint_residual(x) for x in xs[1:]])
        if self.spec.constraints_affine and self._jac is not None:
            return g, self._jac
        S = np.zeros((self.spec.state_dim, self.n))
        rows = []
        for k in range(self.N):
            A, B = self.spec.dynamics_jacobians(xs[k], acts[k])
            S = A @ S
            S[:, k * self.nc:(k + 1) * self.nc] += B
            rows.append(self.spec.constraint_jacobian(xs[k + 1]) @ S)
        J = np.vstack(rows)
        if self.spec.constraints_affine:
            self._jac = J
        return g, J

    @property
    def n_constraints(self) -> int:
        if self.spec.state_constraints is None:
            return 0
        return self.N * len(self.spec.constraint_residual(self.x0))

    def problem(self) -> nlp.NlpProblem:
        lo = np.tile(self.spec.lo, len(self.discrete))
        hi = np.tile(self.spec.hi, len(self.discrete))
        m = self.n_constraints
        return nlp.NlpProblem(
            n=self.n, objective=self.objective, lo=lo, hi=hi,
            constraints=self.constraints if m else None, n_constraints=m,
            affine=self.spec.constraints_affine,
            constraint_values=self.constraint_values if m else None)

    def violation(self, z) -> float:
        if not self.n_constraints:
            return 0.0
        return float(np.max(np.maximum(self.constraint_values(z), 0.0), initial=0.0))


def build_reduced_ocp(spec: MdpSpec, critic: Optional[TerminalCost], x: Array, discrete: Array,
                      config: Optional[ControllerConfig] = None, terminal: bool = True) -> nlp.NlpProblem:
    use_terminal = terminal and critic is not None and (config is None or config.terminal_cost == "critic")
    if use_terminal and len(discrete) < 2:
        raise ValueError("a terminal cost needs a terminal input: discrete sequence length must be N+1")
    ocp = ReducedOcp(spec, x, discrete, critic if use_terminal else None)
    prob = ocp.problem()
    prob.context = ocp
    return prob


def shift_fallback(previous: Optional[PlanResult], terminal_law: Callable[[Array], Array],
                   spec: MdpSpec, length: Optional[int] = None) -> Array:
    """Shifted previous continuous plan, extended with the terminal control law.

    The previous stage inputs u_1..u_{N-1} are kept and the terminal law is
    applied at the predicted states x_N and beyond, which keeps the plan in
    the (positively invariant) terminal set.
    """
    if previous is None:
        raise PlanningError("no previous plan to shift; a cold solve is mandatory on the first step")
    K = len(previous.continuous) if length is None else length
    kept = list(previous.continuous[1:previous.horizon])
    x = previous.states[-1]
    while len(kept) < K:
        u = np.asarray(terminal_law(x), dtype=float)
        kept.append(u)
        x = spec.dynamics(x, HybridAction(u, 0))
    return np.vstack(kept[:K])


def _midpoint(spec: MdpSpec, K: int) -> Array:
    return np.tile(0.5 * (spec.lo + spec.hi), K)


def plan_step(spec: MdpSpec, policy: Policy, critic: Optional[TerminalCost], x: Array,
              config: ControllerConfig, previous: Optional[PlanResult] = None,
              rollout_spec: Optional[MdpSpec] = None) -> PlanResult:
    x = np.asarray(x, dtype=float)
    c = spec.constraint_residual(x)
    if c.size and np.max(c) > FEASIBILITY_TOL:
        raise InfeasibleStateError(f"initial state violates its constraints by {np.max(c):.3g}")
    remaining = spec.steps_to_go(x)
    horizon = config.horizon if remaining is None else min(config.horizon, remaining)
    if horizon < 1:
        raise PlanningError("episode already finished")
    shrinking = remaining is not None and horizon == remaining
    use_terminal = (config.terminal_cost == "critic" and critic is not None and not shrinking)
    K = horizon + (1 if use_terminal else 0)

    disc, u_rl, _ = actor_rollout(policy, rollout_spec or spec, x, K)
    ocp = ReducedOcp(spec, x, disc, critic if use_terminal else None)
    prob = ocp.problem()
    z_warm = u_rl.ravel()
    z_warm = np.minimum(np.maximum(z_warm, prob.lo), prob.hi)
    f_warm = ocp.objective(z_warm)[0]
    warm_viol = ocp.violation(z_warm)
    z0 = z_warm if config.use_warm_start else _midpoint(spec, K)

    t0 = time.perf_counter()
    res = nlp.solve(prob, z0, config.solver)
    fallback = False
    z = res.z
    if res.status != nlp.OPTIMAL or res.violation > config.solver.violation_tol:
        alt_start = _midpoint(spec, K) if config.use_warm_start else z_warm
        if previous is not None and spec.terminal_law is not None:
            alt_start = shift_fallback(previous, spec.terminal_law, spec, K).ravel()
        alt = nlp.solve(prob, alt_start, config.solver)
        alt.inner_iterations += res.inner_iterations
        if alt.status == nlp.OPTIMAL and alt.violation <= config.solver.violation_tol:
            res, z = alt, alt.z
        elif previous is not None and spec.terminal_law is not None:
            z = alt_start
            fallback = True
        elif res.violation > config.solver.violation_tol and alt.violation > config.solver.violation_tol:
            raise PlanningError(f"reduced OCP unsolved at step 0 ({res.status}, violation {res.violation:.3g})")
        fallback = fallback or previous is not None
    solve_time = time.perf_counter() - t0
    f = ocp.objective(z)[0]
    viol = ocp.violation(z)
    kept = False
    if warm_viol <= config.solver.violation_tol and f > f_warm + 1e-9:
        z, f, viol, kept = z_warm, f_warm, warm_viol, True
    U = ocp.unpack(z)
    return PlanResult(disc, u_rl, U, ocp.simulate(z), float(f), float(f_warm), horizon, use_terminal,
                      res, fallback, kept, viol, solve_time)


def closed_loop_run(spec: MdpSpec, policy: Policy, critic: Optional[TerminalCost], x0: Array,
                    config: ControllerConfig, plan_spec: Optional[MdpSpec] = None,
                    rollout_spec: Optional[MdpSpec] = None, label: str = "hybrid",
                    max_steps: Optional[int] = None) -> ClosedLoopLog:
    """Run the controller on ``spec`` (the true system) until the episode ends.

    ``plan_spec`` is the prediction model (defaults to ``spec``);
    ``rollout_spec`` the model the actor is rolled out on (defaults to the
    prediction model).
    """
    plan_spec = plan_spec or spec
    x = np.asarray(x0, dtype=float)
    log = ClosedLoopLog(x.copy(), label=label)
    prev = None
    n = max_steps if max_steps is not None else (spec.steps_to_go(x) or config.horizon)
    for _ in range(n):
        if spec.is_terminal(x):
            break
        plan = plan_step(plan_spec, policy, critic, x, config, prev, rollout_spec)
        tr = step(spec, x, plan.first_action)
        log.records.append(StepRecord(tr, plan))
        prev = plan
        x = tr.next_state
    return log


def policy_run(spec: MdpSpec, policy: Policy, x0: Array, label: str = "rl",
               max_steps: Optional[int] = None) -> ClosedLoopLog:
    """Closed loop of a policy applied directly, without any optimisation layer."""
    x = np.asarray(x0, dtype=float)
    log = ClosedLoopLog(x.copy(), label=label)
    n = max_steps if max_steps is not None else (spec.steps_to_go(x) or 1)
    for _ in range(n):
        if spec.is_terminal(x):
            break
        tr = step(spec, x, policy(x))
        log.records.append(StepRecord(tr, None))
        x = tr.next_state
    return log


def replay(spec: MdpSpec, x0: Array, actions) -> list:
    x = np.asarray(x0, dtype=float)
    out = []
    for a in actions:
        tr = step(spec, x, a)
        out.append(tr)
        x = tr.next_state
    return out
