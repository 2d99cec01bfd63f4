"""Soft actor-critic on a hybrid (continuous box x finite label) action space.

Training runs in the usual reward convention, reward = -scale * (cost - offset),
so the standard soft-target algebra applies unchanged. The critic exposed to
the rest of the package is in cost convention:

    C(x, u, d) = -Q(x, u, d) / scale + offset * G(R(x)),

where R(x) is the number of steps left and G(R) = sum_{i<R} gamma^i. The
offset removes the large, policy-independent part of each stage cost (the
base lap time in the race instance) from what the networks have to learn.

Policy factorisation: a state-conditioned categorical over the label and a
state-conditioned tanh-squashed Gaussian over the continuous part (not
conditioned on the label). The critics have one output per label, so the
expectation over the label in the soft targets is exact.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nets
from .mdp import HybridAction, MdpSpec, step
from .nets import Activation, NetParams

Array = np.ndarray

LOG_2PI = float(np.log(2.0 * np.pi))
SQUASH_LIMIT = 1.0 - 1e-7   # keeps squashed samples strictly inside the box
TRAIN_LOG_COLUMNS = ("episode", "closed_loop_cost", "critic_loss", "actor_loss", "alpha_c", "alpha_d")


class TrainingDivergenceError(FloatingPointError):
    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


@dataclass
class SacConfig:
    episodes: int = 300
    buffer_capacity: int = 100_000
    batch_size: int = 128
    discount: Optional[float] = None        # None: use the MDP discount
    tau: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    alpha_lr: float = 3e-4
    actor_hidden: tuple = (64, 64)
    critic_hidden: tuple = (32, 32, 32, 32)
    log_std_bounds: tuple = (-5.0, 1.0)
    init_alpha_c: float = 0.1
    init_alpha_d: float = 0.1
    target_entropy_c: Optional[float] = None  # None: -n_c (normalised action space)
    target_entropy_d: Optional[float] = None  # None: 0.3 * log |U_d|
    # optional linear anneal of the label entropy target, reached after anneal_fraction of the episodes
    target_entropy_d_final: Optional[float] = None
    anneal_fraction: float = 0.7
    reward_scale: float = 0.1
    cost_offset: float = 0.0
    warmup_steps: int = 500
    updates_per_step: int = 1
    max_episode_steps: int = 10_000
    grad_clip: float = 10.0

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("need 1 <= batch_size <= buffer_capacity")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        lo, hi = self.log_std_bounds
        if not lo < hi:
            raise ValueError("log_std_bounds must be increasing")
        if self.discount is not None and not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if min(self.actor_lr, self.critic_lr, self.alpha_lr) < 0:
            raise ValueError("learning rates must be >= 0")
        if not 0.0 < self.anneal_fraction <= 1.0:
            raise ValueError("anneal_fraction must lie in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "SacConfig":
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActorNet:
    """Shared trunk; output row = [mean (n_c), raw log-std (n_c), logits (n_d)]."""

    net: NetParams
    lo: Array
    hi: Array
    n_discrete: int
    log_std_bounds: tuple = (-5.0, 1.0)

    @property
    def n_continuous(self) -> int:
        return len(self.lo)

    def to_action(self, a_norm: Array) -> Array:
        return 0.5 * (self.lo + self.hi) + 0.5 * (self.hi - self.lo) * a_norm


@dataclass(frozen=True)
class CriticNet:
    online: tuple   # two NetParams
    target: tuple

    @property
    def n_discrete(self) -> int:
        return self.online[0].output_dim


@dataclass
class Temperatures:
    log_alpha_c: float
    log_alpha_d: float
    target_c: float
    target_d: float

    @property
    def alpha_c(self) -> float:
        return float(np.exp(self.log_alpha_c))

    @property
    def alpha_d(self) -> float:
        return float(np.exp(self.log_alpha_d))


def _heads(actor: ActorNet, O: Array):
    out = nets.forward(actor.net, O)
    nc = actor.n_continuous
    mean = out[..., :nc]
    raw = out[..., nc:2 * nc]
    logits = out[..., 2 * nc:]
    lo, hi = actor.log_std_bounds
    log_std = lo + 0.5 * (hi - lo) * (np.tanh(raw) + 1.0)
    return mean, raw, log_std, logits


def _log_softmax(z: Array) -> Array:
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def _log1m_tanh2(pre: Array) -> Array:
    """log(1 - tanh(pre)^2), stable for large |pre|."""
    return 2.0 * (np.log(2.0) - pre - np.logaddexp(0.0, -2.0 * pre))


def squashed_log_density(mean, log_std, a_norm) -> Array:
    """Log-density of a = tanh(N(mean, std)) on the normalised box (-1, 1)^n."""
    a = np.clip(np.asarray(a_norm, dtype=float), -SQUASH_LIMIT, SQUASH_LIMIT)
    pre = np.arctanh(a)
    eps = (pre - mean) / np.exp(log_std)
    return np.sum(-0.5 * eps * eps - log_std - 0.5 * LOG_2PI - _log1m_tanh2(pre), axis=-1)


def action_log_density(actor: ActorNet, features: Array, u: Array) -> float:
    """Log-density of the continuous action in physical units (includes the box Jacobian)."""
    mean, _, log_std, _ = _heads(actor, features)
    a = (np.asarray(u, float) - 0.5 * (actor.lo + actor.hi)) / (0.5 * (actor.hi - actor.lo))
    return float(squashed_log_density(mean, log_std, a) - np.sum(np.log(0.5 * (actor.hi - actor.lo))))


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise TrainingDivergenceError("actor produced non-finite output")


def sample_action(actor: ActorNet, features: Array, mode: str = "deterministic",
                  rng: Optional[np.random.Generator] = None):
    """Hybrid action for one feature vector.

    Deterministic mode returns (squashed mean, argmax logit). Stochastic mode
    returns (action, continuous log-density on the normalised box, label
    log-mass).
    """
    mean, _, log_std, logits = _heads(actor, np.asarray(features, dtype=float))
    _check_finite(mean, log_std, logits)
    if mode == "deterministic":
        a = np.clip(np.tanh(mean), -SQUASH_LIMIT, SQUASH_LIMIT)
        return HybridAction(actor.to_action(a), int(np.argmax(logits)))
    if mode != "stochastic":
        raise ValueError(f"unknown sampling mode {mode!r}")
    if rng is None:
        raise ValueError("stochastic sampling needs a random generator")
    eps = rng.standard_normal(actor.n_continuous)
    pre = mean + np.exp(log_std) * eps
    a = np.clip(np.tanh(pre), -SQUASH_LIMIT, SQUASH_LIMIT)
    logp_c = float(np.sum(-0.5 * eps * eps - log_std - 0.5 * LOG_2PI - _log1m_tanh2(pre)))
    logp = _log_softmax(logits)
    d = int(rng.choice(actor.n_discrete, p=np.exp(logp)))
    return HybridAction(actor.to_action(a), d), logp_c, float(logp[d])


# ---------------------------------------------------------------------------
# replay buffer
# ---------------------------------------------------------------------------

class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions in feature space.

    ``steps_left`` is the number of steps remaining from the transition's
    start state (-1 for an unbounded episode); it is only used to convert
    between the shaped reward and the raw cost.
    """

    def __init__(self, capacity: int, obs_dim: int, n_continuous: int, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros((capacity, n_continuous))
        self.label = np.zeros(capacity, dtype=int)
        self.cost = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.steps_left = np.zeros(capacity, dtype=int)
        self.size = 0
        self._next = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return self.size

    def add(self, obs, a_norm, label, cost, next_obs, done, steps_left=-1):
        i = self._next
        self.obs[i] = obs
        self.action[i] = a_norm
        self.label[i] = label
        self.cost[i] = cost
        self.next_obs[i] = next_obs
        self.done[i] = done
        self.steps_left[i] = steps_left
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> dict:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} < {batch_size} transitions")
        idx = self.rng.integers(0, self.size, size=batch_size)
        return self.take(idx)

    def take(self, idx) -> dict:
        return {k: getattr(self, k)[idx] for k in
                ("obs", "action", "label", "cost", "next_obs", "done", "steps_left")}


# ---------------------------------------------------------------------------
# agent
# ---------------------------------------------------------------------------

@dataclass
class Agent:
    actor: ActorNet
    critic: CriticNet
    temps: Temperatures
    discount: float
    reward_scale: float
    cost_offset: float
    meta: dict = field(default_factory=dict)

    def horizon_weight(self, steps_left) -> Array:
        """G(R) = sum_{i<R} gamma^i; R < 0 means an unbounded episode."""
        R = np.asarray(steps_left, dtype=float)
        g = self.discount
        if g == 1.0:
            finite = R
        else:
            finite = (1.0 - g ** np.maximum(R, 0.0)) / (1.0 - g)
        unbounded = np.inf if g == 1.0 else 1.0 / (1.0 - g)
        out = np.where(R < 0, unbounded, finite)
        return out if self.cost_offset else np.zeros_like(out)

    def to_reward(self, cost):
        return -self.reward_scale * (np.asarray(cost, dtype=float) - self.cost_offset)

    def q_to_cost(self, q, steps_left):
        return -np.asarray(q, float) / self.reward_scale + self.cost_offset * self.horizon_weight(steps_left)

    def cost_to_q(self, c, steps_left):
        return -self.reward_scale * (np.asarray(c, float) - self.cost_offset * self.horizon_weight(steps_left))


def make_agent(spec: MdpSpec, config: SacConfig, rng: np.random.Generator) -> Agent:
    obs_dim = len(spec.observe(_probe_state(spec)))
    nc, nd = spec.n_continuous, spec.discrete_count
    relu = Activation("relu")
    actor_net = nets.init_net((obs_dim, *config.actor_hidden, 2 * nc + nd), relu, rng)
    # small output layer so the initial policy is close to uniform
    last = actor_net.layers[-1]
    actor_net = actor_net.with_params(actor_net.flat_params()[:-2] + [last.weight * 0.01, last.bias * 0.0])
    actor = ActorNet(actor_net, spec.lo.copy(), spec.hi.copy(), nd, tuple(config.log_std_bounds))
    sizes = (obs_dim + nc, *config.critic_hidden, nd)
    online = (nets.init_net(sizes, relu, rng), nets.init_net(sizes, relu, rng))
    critic = CriticNet(online, tuple(n.copy() for n in online))
    tc = -float(nc) if config.target_entropy_c is None else config.target_entropy_c
    td = 0.3 * float(np.log(nd)) if config.target_entropy_d is None else config.target_entropy_d
    temps = Temperatures(float(np.log(config.init_alpha_c)), float(np.log(config.init_alpha_d)), tc, td)
    discount = spec.discount if config.discount is None else config.discount
    return Agent(actor, critic, temps, float(discount), config.reward_scale, config.cost_offset)


def _probe_state(spec: MdpSpec) -> Array:
    if spec.initial_state_sampler is not None:
        return spec.initial_state_sampler(np.random.default_rng(0))
    return np.zeros(spec.state_dim)


def _critic_input(O: Array, A: Array) -> Array:
    return np.concatenate([O, A], axis=-1)


def _soft_next_value(agent: Agent, next_obs: Array, rng: np.random.Generator) -> Array:
    """Soft state value (reward convention) from the target critics, one action sample."""
    actor = agent.actor
    mean, _, log_std, logits = _heads(actor, next_obs)
    eps = rng.standard_normal(mean.shape)
    pre = mean + np.exp(log_std) * eps
    a = np.clip(np.tanh(pre), -SQUASH_LIMIT, SQUASH_LIMIT)
    logp_c = np.sum(-0.5 * eps * eps - log_std - 0.5 * LOG_2PI - _log1m_tanh2(pre), axis=-1)
    logp = _log_softmax(logits)
    p = np.exp(logp)
    X = _critic_input(next_obs, a)
    q = np.minimum(nets.forward(agent.critic.target[0], X), nets.forward(agent.critic.target[1], X))
    t = agent.temps
    return np.sum(p * (q - t.alpha_d * logp), axis=-1) - t.alpha_c * logp_c


def critic_target(batch: dict, agent: Agent, rng: np.random.Generator,
                  discount: Optional[float] = None) -> Array:
    """Regression targets in cost convention: y = cost + gamma * soft next cost-to-go.

    Terminal transitions get y = cost.
    """
    g = agent.discount if discount is None else discount
    cost = np.asarray(batch["cost"], dtype=float)
    live = ~np.asarray(batch["done"], dtype=bool)
    y = cost.copy()
    if g == 0.0 or not live.any():
        return y
    v = _soft_next_value(agent, batch["next_obs"][live], rng)
    left = np.asarray(batch["steps_left"])[live]
    next_left = np.where(left < 0, left, left - 1)
    y[live] += g * agent.q_to_cost(v, next_left)
    return y


# ---------------------------------------------------------------------------
# one update
# ---------------------------------------------------------------------------

@dataclass
class Optimizers:
    critic: tuple
    actor: nets.Adam
    alpha: nets.Adam


def make_optimizers(agent: Agent, config: SacConfig) -> Optimizers:
    return Optimizers(
        tuple(nets.Adam(n.flat_params(), config.critic_lr) for n in agent.critic.online),
        nets.Adam(agent.actor.net.flat_params(), config.actor_lr),
        nets.Adam([np.zeros(2)], config.alpha_lr))


def _clip(grads, limit):
    if not limit:
        return grads
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > limit:
        return [g * (limit / norm) for g in grads]
    return grads


def soft_update(target: NetParams, online: NetParams, tau: float) -> NetParams:
    # (1 - tau) * t + tau * o is exact for tau = 1
    return target.with_params([(1.0 - tau) * t + tau * o
                               for t, o in zip(target.flat_params(), online.flat_params())])


def update_step(buffer: ReplayBuffer, agent: Agent, opt: Optimizers, config: SacConfig,
                rng: np.random.Generator) -> dict:
    """One critic, actor, temperature and target update; mutates ``agent`` in place."""
    batch = buffer.sample(config.batch_size)
    B = config.batch_size
    O, A, D = batch["obs"], batch["action"], batch["label"]
    left = batch["steps_left"]

    # critics: regress the online heads of the taken labels on the shared target
    y = agent.cost_to_q(critic_target(batch, agent, rng), left)
    X = _critic_input(O, A)
    rows = np.arange(B)
    new_online, critic_loss = [], 0.0
    for i, net in enumerate(agent.critic.online):
        cache = nets.forward_cache(net, X)
        q = cache[1][-1][rows, D]
        err = q - y
        critic_loss += float(np.mean(err * err))
        cot = np.zeros((B, net.output_dim))
        cot[rows, D] = 2.0 * err / B
        grads, _ = nets.backward(net, cache, cot)
        new_online.append(net.with_params(opt.critic[i].step(net.flat_params(), _clip(grads, config.grad_clip))))
    critic_loss *= 0.5

    # actor: reparameterised continuous sample, exact expectation over labels
    actor = agent.actor
    t = agent.temps
    a_c, a_d = t.alpha_c, t.alpha_d
    nc = actor.n_continuous
    cache = nets.forward_cache(actor.net, O)
    out = cache[1][-1]
    mean, raw, logits = out[:, :nc], out[:, nc:2 * nc], out[:, 2 * nc:]
    ls_lo, ls_hi = actor.log_std_bounds
    tr = np.tanh(raw)
    log_std = ls_lo + 0.5 * (ls_hi - ls_lo) * (tr + 1.0)
    std = np.exp(log_std)
    eps = rng.standard_normal(mean.shape)
    pre = mean + std * eps
    a = np.tanh(pre)
    a_in = np.clip(a, -SQUASH_LIMIT, SQUASH_LIMIT)
    logp_c = np.sum(-0.5 * eps * eps - log_std - 0.5 * LOG_2PI - _log1m_tanh2(pre), axis=-1)
    logp = _log_softmax(logits)
    p = np.exp(logp)

    Xa = _critic_input(O, a_in)
    c0 = nets.forward_cache(new_online[0], Xa)
    c1 = nets.forward_cache(new_online[1], Xa)
    q0, q1 = c0[1][-1], c1[1][-1]
    first = q0 <= q1
    qmin = np.where(first, q0, q1)
    v = a_d * logp - qmin
    actor_loss = float(np.mean(a_c * logp_c + np.sum(p * v, axis=-1)))

    # d loss / d action through the critics (only the smaller critic per label is active)
    dq0 = np.where(first, -p, 0.0) / B
    dq1 = np.where(first, 0.0, -p) / B
    _, g0 = nets.backward(new_online[0], c0, dq0, want_params=False)
    _, g1 = nets.backward(new_online[1], c1, dq1, want_params=False)
    dL_da = (g0 + g1)[:, -nc:]
    dL_dpre = a_c * 2.0 * a / B + dL_da * (1.0 - a * a)
    d_mean = dL_dpre
    d_logstd = dL_dpre * std * eps - a_c / B
    d_raw = d_logstd * 0.5 * (ls_hi - ls_lo) * (1.0 - tr * tr)
    d_logits = p * (v - np.sum(p * v, axis=-1, keepdims=True)) / B
    cot = np.concatenate([d_mean, d_raw, d_logits], axis=1)
    grads, _ = nets.backward(actor.net, cache, cot)
    new_actor = actor.net.with_params(opt.actor.step(actor.net.flat_params(), _clip(grads, config.grad_clip)))

    # temperatures: J(log alpha) = -log alpha * (log pi + target entropy)
    ent_c = -float(np.mean(logp_c))
    ent_d = -float(np.mean(np.sum(p * logp, axis=-1)))
    g_alpha = np.array([ent_c - t.target_c, ent_d - t.target_d])
    new_log_alpha = opt.alpha.step([np.array([t.log_alpha_c, t.log_alpha_d])], [g_alpha])[0]

    diag = {"critic_loss": critic_loss, "actor_loss": actor_loss, "alpha_c": a_c, "alpha_d": a_d,
            "entropy_c": ent_c, "entropy_d": ent_d}
    if not all(np.isfinite(v) for v in diag.values()) or not np.all(np.isfinite(new_log_alpha)):
        raise TrainingDivergenceError("non-finite loss during update", diag)

    targets = tuple(soft_update(tn, on, config.tau) for tn, on in zip(agent.critic.target, new_online))
    agent.critic = CriticNet(tuple(new_online), targets)
    agent.actor = replace(actor, net=new_actor)
    agent.temps = replace(t, log_alpha_c=float(new_log_alpha[0]), log_alpha_d=float(new_log_alpha[1]))
    return diag


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainingResult:
    agent: Agent
    log: list                     # one dict per episode, keys TRAIN_LOG_COLUMNS
    updates: int = 0


def _steps_left(spec: MdpSpec, x) -> int:
    r = spec.steps_to_go(x)
    return -1 if r is None else r


def train(spec: MdpSpec, config: SacConfig, seed: int, x0: Optional[Array] = None,
          log_path: Optional[str] = None, agent: Optional[Agent] = None) -> TrainingResult:
    """Episodic off-policy training; fully determined by ``seed``.

    Episode start states come from ``spec.initial_state_sampler`` when it is
    set, otherwise ``x0`` is used for every episode.
    """
    rng = np.random.default_rng(seed)
    if agent is None:
        agent = make_agent(spec, config, rng)
    if x0 is None and spec.initial_state_sampler is None:
        raise ValueError("need x0 or an initial-state sampler on the MDP")
    opt = make_optimizers(agent, config)
    obs_dim = agent.actor.net.input_dim
    buffer = ReplayBuffer(config.buffer_capacity, obs_dim, spec.n_continuous, seed=seed + 1)
    log = []
    total_steps = 0
    updates = 0
    start_td = agent.temps.target_d
    for ep in range(config.episodes):
        if config.target_entropy_d_final is not None:
            frac = min(1.0, ep / max(1.0, config.anneal_fraction * config.episodes))
            td = start_td + frac * (config.target_entropy_d_final - start_td)
            agent.temps = replace(agent.temps, target_d=float(td))
        x = np.asarray(spec.initial_state_sampler(rng) if spec.initial_state_sampler else x0, dtype=float)
        ep_cost = 0.0
        losses = []
        for _ in range(config.max_episode_steps):
            if spec.is_terminal(x):
                break
            o = spec.observe(x)
            if total_steps < config.warmup_steps:
                a_norm = rng.uniform(-1.0, 1.0, spec.n_continuous)
                act = HybridAction(agent.actor.to_action(a_norm), int(rng.integers(spec.discrete_count)))
            else:
                act, _, _ = sample_action(agent.actor, o, "stochastic", rng)
            tr = step(spec, x, act)
            a_norm = (act.continuous - 0.5 * (spec.lo + spec.hi)) / (0.5 * (spec.hi - spec.lo))
            buffer.add(o, a_norm, act.discrete, tr.cost, spec.observe(tr.next_state), tr.terminal,
                       _steps_left(spec, x))
            ep_cost += tr.cost
            x = tr.next_state
            total_steps += 1
            if len(buffer) >= config.batch_size and total_steps >= config.warmup_steps:
                for _ in range(config.updates_per_step):
                    losses.append(update_step(buffer, agent, opt, config, rng))
                    updates += 1
        row = {"episode": ep, "closed_loop_cost": ep_cost,
               "critic_loss": float(np.mean([d["critic_loss"] for d in losses])) if losses else float("nan"),
               "actor_loss": float(np.mean([d["actor_loss"] for d in losses])) if losses else float("nan"),
               "alpha_c": agent.temps.alpha_c, "alpha_d": agent.temps.alpha_d}
        log.append(row)
    if log_path:
        write_training_log(log, log_path)
    return TrainingResult(agent, log, updates)


def write_training_log(log: Sequence[dict], path, header: Optional[str] = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        w = csv.DictWriter(fh, fieldnames=TRAIN_LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in log:
            w.writerow({k: (repr(float(row[k])) if k != "episode" else int(row[k])) for k in TRAIN_LOG_COLUMNS})


# ---------------------------------------------------------------------------
# deployment views
# ---------------------------------------------------------------------------

class ActorPolicy:
    """Deterministic policy state -> HybridAction."""

    def __init__(self, agent: Agent, spec: MdpSpec):
        self.actor = agent.actor
        self.spec = spec

    def __call__(self, x) -> HybridAction:
        return sample_action(self.actor, self.spec.observe(x), "deterministic")


class CriticCost:
    """Cost-convention critic usable as a terminal cost: (x, u, d) -> (value, d/dx, d/du).

    The value is the mean of the twin online critics; with ``smooth`` the
    ReLU units are replaced by smooth ReLUs so that the planner sees a C1
    function.
    """

    def __init__(self, agent: Agent, spec: MdpSpec, smooth: bool = True,
                 eps: float = nets.DEFAULT_EPS):
        self.agent = agent
        self.spec = spec
        self.nets = tuple(nets.swap_activation(n, "relu", Activation("smooth_relu", eps)) if smooth else n
                          for n in agent.critic.online)
        self.mid = 0.5 * (spec.lo + spec.hi)
        self.half = 0.5 * (spec.hi - spec.lo)

    def _input(self, x, u):
        a = (np.asarray(u, float) - self.mid) / self.half
        return _critic_input(self.spec.observe(x), a)

    def value(self, x, u, d: int) -> float:
        X = self._input(x, u)
        q = np.mean([nets.forward(n, X)[d] for n in self.nets])
        return float(self.agent.q_to_cost(q, _steps_left(self.spec, x)))

    def all_labels(self, x, u) -> Array:
        X = self._input(x, u)
        q = np.mean([nets.forward(n, X) for n in self.nets], axis=0)
        return self.agent.q_to_cost(q, _steps_left(self.spec, x))

    def __call__(self, x, u, d: int):
        X = self._input(x, u)
        q, gin = 0.0, 0.0
        for n in self.nets:
            q += nets.forward(n, X)[d]
            gin = gin + nets.input_gradient(n, X, d)
        k = len(self.nets)
        q, gin = q / k, gin / k
        scale = -1.0 / self.agent.reward_scale
        no = len(X) - self.spec.n_continuous
        gx = scale * gin[:no] @ self.spec.observe_jacobian(x)
        gu = scale * gin[no:] / self.half
        return float(self.agent.q_to_cost(q, _steps_left(self.spec, x))), gx, gu


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FILES = ("actor.json", "critic_0.json", "critic_1.json", "agent.json")


def save_agent(agent: Agent, directory) -> list:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    a = agent.actor
    actor_net = replace(a.net, meta={"lo": a.lo.tolist(), "hi": a.hi.tolist(),
                                     "n_discrete": a.n_discrete, "log_std_bounds": list(a.log_std_bounds)})
    paths = [d / "actor.json", d / "critic_0.json", d / "critic_1.json", d / "agent.json"]
    paths[0].write_text(nets.dumps(actor_net))
    for i in range(2):
        paths[1 + i].write_text(nets.dumps(agent.critic.online[i]))
    info = {"discount": agent.discount, "reward_scale": agent.reward_scale, "cost_offset": agent.cost_offset,
            "temperatures": asdict(agent.temps), "meta": agent.meta}
    paths[3].write_text(json.dumps(info, sort_keys=True, indent=1))
    return [str(p) for p in paths]


def load_agent(directory) -> Agent:
    d = Path(directory)
    actor_net = nets.loads((d / "actor.json").read_text())
    m = actor_net.meta
    actor = ActorNet(actor_net, np.array(m["lo"], float), np.array(m["hi"], float), int(m["n_discrete"]),
                     tuple(m["log_std_bounds"]))
    online = tuple(nets.loads((d / f"critic_{i}.json").read_text()) for i in range(2))
    info = json.loads((d / "agent.json").read_text())
    return Agent(actor, CriticNet(online, tuple(n.copy() for n in online)), Temperatures(**info["temperatures"]),
                 info["discount"], info["reward_scale"], info["cost_offset"], info.get("meta", {}))
