"""Hybrid Markov decision processes: joint continuous/discrete actions.

States are flat float vectors. The discrete part of an action is a single
integer label; the continuous part lives in a per-dimension box.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse

Array = np.ndarray


class BoundsViolationError(ValueError):
    """An action lies outside the admissible action set."""

    def __init__(self, message: str, dimension: Optional[int] = None):
        super().__init__(message)
        self.dimension = dimension


class RolloutError(RuntimeError):
    def __init__(self, step_index: int, cause: Exception):
        super().__init__(f"rollout failed at step {step_index}: {cause}")
        self.step_index = step_index
        self.cause = cause


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def _frozen(x) -> Array:
    a = np.array(x, dtype=float, copy=True).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HybridAction:
    continuous: Array
    discrete: int

    def __post_init__(self):
        object.__setattr__(self, "continuous", _frozen(self.continuous))
        object.__setattr__(self, "discrete", int(self.discrete))


@dataclass(frozen=True)
class MdpSpec:
    """Deterministic hybrid MDP.

    Only the first block of fields is required. The optional callbacks make
    the MDP usable by the gradient-based planner (`dynamics_jacobians`,
    `cost_gradients`, `constraint_jacobian`) and by the learning code
    (`features`, `initial_state_sampler`).

    ``time_index`` names the state component that counts steps; together
    with ``horizon_laps`` it defines a finite episode.
    """

    state_dim: int
    continuous_bounds: Array
    discrete_count: int
    dynamics: Callable[[Array, HybridAction], Array]
    stage_cost: Callable[[Array, HybridAction], float]
    discount: float = 1.0
    state_constraints: Optional[Callable[[Array], Array]] = None
    horizon_laps: Optional[int] = None
    time_index: Optional[int] = None
    features: Optional[Callable[[Array], Array]] = None
    features_jacobian: Optional[Callable[[Array], Array]] = None
    dynamics_jacobians: Optional[Callable[[Array, HybridAction], tuple]] = None
    cost_gradients: Optional[Callable[[Array, HybridAction], tuple]] = None
    constraint_jacobian: Optional[Callable[[Array], Array]] = None
    constraints_affine: bool = False
    terminal_law: Optional[Callable[[Array], Array]] = None
    initial_state_sampler: Optional[Callable[[np.random.Generator], Array]] = None
    step_and_cost: Optional[Callable[[Array, HybridAction], tuple]] = None  # fused (next, cost)
    name: str = "mdp"

    def __post_init__(self):
        b = np.array(self.continuous_bounds, dtype=float).reshape(-1, 2)
        b.setflags(write=False)
        object.__setattr__(self, "continuous_bounds", b)
        if not 0.0 < self.discount <= 1.0:
            raise ValueError(f"discount must lie in (0, 1], got {self.discount}")
        if np.any(b[:, 0] > b[:, 1]):
            raise ValueError("continuous bounds must satisfy min <= max")
        if self.discrete_count < 1:
            raise ValueError("discrete_count must be >= 1")

    @property
    def n_continuous(self) -> int:
        return self.continuous_bounds.shape[0]

    @property
    def lo(self) -> Array:
        return self.continuous_bounds[:, 0]

    @property
    def hi(self) -> Array:
        return self.continuous_bounds[:, 1]

    def steps_to_go(self, state: Array) -> Optional[int]:
        if self.horizon_laps is None or self.time_index is None:
            return None
        return max(int(round(self.horizon_laps - state[self.time_index])), 0)

    def is_terminal(self, state: Array) -> bool:
        r = self.steps_to_go(state)
        return r is not None and r <= 0

    def constraint_residual(self, state: Array) -> Array:
        if self.state_constraints is None:
            return np.zeros(0)
        return np.asarray(self.state_constraints(state), dtype=float)

    def advance(self, state: Array, action: HybridAction) -> tuple:
        """(next state, stage cost), through the fused callback when one is given."""
        if self.step_and_cost is not None:
            y, c = self.step_and_cost(state, action)
            return np.asarray(y, dtype=float), float(c)
        return np.asarray(self.dynamics(state, action), dtype=float), float(self.stage_cost(state, action))

    def observe(self, state: Array) -> Array:
        if self.features is None:
            return np.asarray(state, dtype=float)
        return np.asarray(self.features(state), dtype=float)

    def observe_jacobian(self, state: Array) -> Array:
        if self.features is None:
            return np.eye(self.state_dim)
        if self.features_jacobian is None:
            raise NotImplementedError(f"{self.name}: no features_jacobian")
        return np.asarray(self.features_jacobian(state), dtype=float)


@dataclass(frozen=True)
class Transition:
    state: Array
    action: HybridAction
    next_state: Array
    cost: float
    terminal: bool = False


@dataclass(frozen=True)
class Trajectory:
    initial_state: Array
    transitions: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.transitions)

    @property
    def costs(self) -> Array:
        return np.array([t.cost for t in self.transitions])

    @property
    def states(self) -> Array:
        """All visited states, initial state first."""
        rows = [self.initial_state] + [t.next_state for t in self.transitions]
        return np.vstack(rows)

    def is_chained(self) -> bool:
        prev = self.initial_state
        for t in self.transitions:
            if not np.array_equal(t.state, prev):
                return False
            prev = t.next_state
        return True


def check_action(spec: MdpSpec, action: HybridAction) -> None:
    u = action.continuous
    if u.shape != (spec.n_continuous,):
        raise BoundsViolationError(
            f"continuous action has shape {u.shape}, expected ({spec.n_continuous},)")
    if not np.all(np.isfinite(u)):
        bad = int(np.flatnonzero(~np.isfinite(u))[0])
        raise BoundsViolationError(f"continuous[{bad}] is not finite", bad)
    below = u < spec.lo
    above = u > spec.hi
    if below.any() or above.any():
        dim = int(np.flatnonzero(below | above)[0])
        raise BoundsViolationError(
            f"continuous[{dim}] = {u[dim]!r} outside [{spec.lo[dim]!r}, {spec.hi[dim]!r}]", dim)
    if not 0 <= action.discrete < spec.discrete_count:
        raise BoundsViolationError(
            f"discrete label {action.discrete} outside [0, {spec.discrete_count})")


def step(spec: MdpSpec, state: Array, action: HybridAction) -> Transition:
    check_action(spec, action)
    x = _frozen(state)
    nxt, cost = spec.advance(x, action)
    nxt = _frozen(nxt)
    return Transition(x, action, nxt, cost, spec.is_terminal(nxt))


def rollout(spec: MdpSpec, policy: Callable[[Array], HybridAction], x0: Array,
            n_steps: int, stop_at_terminal: bool = False) -> Trajectory:
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = _frozen(x0)
    out = []
    for k in range(n_steps):
        try:
            tr = step(spec, x, policy(x))
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise RolloutError(k, exc) from exc
        out.append(tr)
        x = tr.next_state
        if stop_at_terminal and tr.terminal:
            break
    return Trajectory(_frozen(x0), tuple(out))


def discounted_return(traj: Trajectory, discount: float) -> float:
    if not 0.0 < discount <= 1.0:
        raise ValueError("discount must lie in (0, 1]")
    c = traj.costs
    return float(np.sum(c * discount ** np.arange(len(c))))


def cost_to_go(costs: Sequence[float], discount: float) -> Array:
    """Per-step discounted tail sums of a cost sequence."""
    c = np.asarray(costs, dtype=float)
    out = np.zeros_like(c)
    acc = 0.0
    for k in range(len(c) - 1, -1, -1):
        acc = c[k] + discount * acc
        out[k] = acc
    return out


# ---------------------------------------------------------------------------
# exact dynamic programming on a tensor grid
# ---------------------------------------------------------------------------

def _interp_weights(axes: Sequence[Array], points: Array):
    """Multilinear interpolation weights of `points` on the tensor grid.

    Points outside the grid are clamped to its boundary. Returns flat grid
    indices and weights, each of shape (n_points, 2**dim).
    """
    n, d = points.shape
    idx_parts, w_parts = [], []
    for j, ax in enumerate(axes):
        p = np.clip(points[:, j], ax[0], ax[-1])
        if len(ax) == 1:
            i0 = np.zeros(n, dtype=int)
            t = np.zeros(n)
            i1 = i0
        else:
            i0 = np.clip(np.searchsorted(ax, p, side="right") - 1, 0, len(ax) - 2)
            i1 = i0 + 1
            t = (p - ax[i0]) / (ax[i1] - ax[i0])
        idx_parts.append((i0, i1))
        w_parts.append((1.0 - t, t))
    shape = tuple(len(ax) for ax in axes)
    corners = list(itertools.product((0, 1), repeat=d))
    flat = np.empty((n, len(corners)), dtype=int)
    wts = np.empty((n, len(corners)))
    for c, bits in enumerate(corners):
        multi = tuple(idx_parts[j][b] for j, b in enumerate(bits))
        flat[:, c] = np.ravel_multi_index(multi, shape)
        w = np.ones(n)
        for j, b in enumerate(bits):
            w = w * w_parts[j][b]
        wts[:, c] = w
    return flat, wts


@dataclass
class OracleTables:
    """Value and greedy-policy tables from `value_iteration_oracle`.

    For finite-horizon problems the tables carry a leading time axis of
    length ``horizon + 1`` (the last slice is the zero terminal value).
    """

    axes: tuple
    grid_dims: tuple
    values: Array
    policy_continuous: Array
    policy_discrete: Array
    residual: float
    iterations: int
    finite_horizon: bool
    spec: MdpSpec = field(repr=False)
    action_grid: Array = field(repr=False)

    def _slice(self, k):
        return self.values[k] if self.finite_horizon else self.values

    def value(self, state: Array, k: Optional[int] = None) -> float:
        state = np.asarray(state, dtype=float)
        if self.finite_horizon and k is None:
            k = int(round(state[self.spec.time_index]))
        table = self._slice(k).reshape(-1)
        pts = state[list(self.grid_dims)][None, :]
        flat, w = _interp_weights(self.axes, pts)
        return float(np.sum(table[flat] * w))

    def greedy_action(self, state: Array) -> HybridAction:
        """One-step lookahead on the gridded action set using the value table."""
        state = np.asarray(state, dtype=float)
        spec = self.spec
        best, best_a = np.inf, None
        for u in self.action_grid:
            for d in range(spec.discrete_count):
                a = HybridAction(u, d)
                nxt = spec.dynamics(state, a)
                q = spec.stage_cost(state, a)
                if not spec.is_terminal(nxt):
                    q += spec.discount * self.value(nxt)
                if q < best - 1e-15:
                    best, best_a = q, a
        return best_a


def value_iteration_oracle(spec: MdpSpec, state_grid: Sequence[Sequence[float]],
                           continuous_action_grid: Sequence[Sequence[float]],
                           tol: float = 1e-9, max_iter: int = 100_000,
                           finite_horizon: bool = False,
                           base_state: Optional[Array] = None) -> OracleTables:
    """Exact DP on a tensor grid of states.

    ``state_grid`` holds one 1-D axis per gridded state dimension. In
    finite-horizon mode the step counter (``spec.time_index``) is not gridded;
    the recursion runs backward from the horizon instead. Off-grid successor
    states are evaluated by multilinear interpolation (clamped at the grid
    boundary).

    ``continuous_action_grid`` holds one axis per continuous action
    dimension; the action set is their product times all discrete labels.
    """
    axes = tuple(np.asarray(a, dtype=float) for a in state_grid)
    if not axes or any(len(a) == 0 for a in axes):
        raise ValueError("state grid must be non-empty")
    if finite_horizon:
        if spec.time_index is None or spec.horizon_laps is None:
            raise ValueError("finite-horizon mode needs time_index and horizon_laps")
        grid_dims = tuple(i for i in range(spec.state_dim) if i != spec.time_index)
    else:
        if spec.discount >= 1.0:
            raise ValueError("infinite-horizon value iteration requires discount < 1")
        grid_dims = tuple(range(spec.state_dim))
    if len(axes) != len(grid_dims):
        raise ValueError(f"expected {len(grid_dims)} grid axes, got {len(axes)}")
    ugrid = np.array(list(itertools.product(*[np.asarray(a, float) for a in continuous_action_grid])))
    if ugrid.size == 0:
        raise ValueError("action grid must be non-empty")
    ugrid = ugrid.reshape(-1, spec.n_continuous)

    shape = tuple(len(a) for a in axes)
    pts = np.array(list(itertools.product(*axes)))
    n_s, n_u, n_d = len(pts), len(ugrid), spec.discrete_count
    n_a = n_u * n_d
    base = np.zeros(spec.state_dim) if base_state is None else np.asarray(base_state, float)

    def full_state(p, k=None):
        x = base.copy()
        x[list(grid_dims)] = p
        if k is not None:
            x[spec.time_index] = k
        return x

    def tables_at(k):
        cost = np.empty((n_s, n_a))
        nxt = np.empty((n_s * n_a, len(grid_dims)))
        term = np.zeros(n_s * n_a, dtype=bool)
        for s, p in enumerate(pts):
            x = full_state(p, k)
            for d in range(n_d):
                for ui, u in enumerate(ugrid):
                    a = HybridAction(u, d)
                    col = d * n_u + ui
                    y = np.asarray(spec.dynamics(x, a), dtype=float)
                    cost[s, col] = spec.stage_cost(x, a)
                    nxt[s * n_a + col] = y[list(grid_dims)]
                    term[s * n_a + col] = spec.is_terminal(y)
        flat, w = _interp_weights(axes, nxt)
        w[term] = 0.0
        rows = np.repeat(np.arange(n_s * n_a), flat.shape[1])
        P = sparse.csr_matrix((w.ravel(), (rows, flat.ravel())), shape=(n_s * n_a, n_s))
        return cost, P

    def split(best):
        return ugrid[best % n_u], best // n_u

    if finite_horizon:
        H = int(spec.horizon_laps)
        V = np.zeros((H + 1, n_s))
        pol_c = np.zeros((H, n_s, spec.n_continuous))
        pol_d = np.zeros((H, n_s), dtype=int)
        for k in range(H - 1, -1, -1):
            cost, P = tables_at(k)
            Q = cost + spec.discount * (P @ V[k + 1]).reshape(n_s, n_a)
            best = np.argmin(Q, axis=1)
            V[k] = Q[np.arange(n_s), best]
            pol_c[k], pol_d[k] = split(best)
        return OracleTables(axes, grid_dims, V.reshape((H + 1,) + shape),
                            pol_c.reshape((H,) + shape + (spec.n_continuous,)),
                            pol_d.reshape((H,) + shape), 0.0, H, True, spec, ugrid)

    cost, P = tables_at(None)
    J = np.zeros(n_s)
    residual = np.inf
    for it in range(1, max_iter + 1):
        Q = cost + spec.discount * (P @ J).reshape(n_s, n_a)
        Jn = Q.min(axis=1)
        residual = float(np.max(np.abs(Jn - J)))
        J = Jn
        if residual <= tol * (1.0 - spec.discount):
            break
    else:
        raise ConvergenceError(f"value iteration did not converge in {max_iter} iterations", residual)
    Q = cost + spec.discount * (P @ J).reshape(n_s, n_a)
    best = np.argmin(Q, axis=1)
    bellman = float(np.max(np.abs(Q[np.arange(n_s), best] - J)))
    pc, pd = split(best)
    return OracleTables(axes, grid_dims, J.reshape(shape),
                        pc.reshape(shape + (spec.n_continuous,)), pd.reshape(shape),
                        bellman, it, False, spec, ugrid)
