"""Vector-reward deterministic policy gradient: one actor, one critic per objective.

The actor ascends sum_i w_i * Q_i(s, A(s)); each critic regresses on its own
TD target r_i + gamma * Q'_i(s', A'(s')). With a single critic and a
scalarised reward the same machinery is plain DDPG, which is how the scalar
baselines are run.
"""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import neural
from .env import Action, CellularEnv, scale_state
from .errors import ConfigError, SchemaError


def substream(seed, name):
    """Independent generator for a named purpose under one master seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass(frozen=True)
class PdpgConfig:
    gamma: float = 0.3
    tau: float = 0.005
    weights: tuple = (0.5, 0.5)
    # exploration noise is specified by its variance
    exploration_sigma_initial: float = 0.1
    exploration_decay_step: int = 300
    exploration_sigma_final: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 50_000
    hidden_sizes: tuple = (50, 100)
    optimizer: str = "adam"
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    loss: str = "squared_error"
    # set for scalar-reward DDPG: the env's reward vector is dotted with these
    reward_weights: tuple | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) < 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError(f"weights must be non-negative and sum to 1, got {self.weights}")
        if self.reward_weights is not None and np.any(np.asarray(self.reward_weights) < 0):
            raise ConfigError("scalarisation weights must be non-negative")
        if self.loss != "squared_error":
            raise ConfigError("only the squared_error loss is supported")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ConfigError("batch_size and buffer_capacity must be positive")
        object.__setattr__(self, "weights", tuple(float(x) for x in self.weights))
        object.__setattr__(self, "hidden_sizes", tuple(int(x) for x in self.hidden_sizes))
        if self.reward_weights is not None:
            object.__setattr__(self, "reward_weights", tuple(float(x) for x in self.reward_weights))

    @property
    def num_critics(self):
        return len(self.weights)

    def reward_dims_required(self):
        """Dimension the environment reward must have for this config."""
        return len(self.reward_weights) if self.reward_weights is not None else self.num_critics

    def noise_variance(self, iteration):
        if iteration < self.exploration_decay_step:
            return self.exploration_sigma_initial
        return self.exploration_sigma_final

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("weights", "hidden_sizes", "reward_weights"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def weights_from_lambda(lam, dims=2):
    """w_1 = 1/(1+lambda), w_2 = lambda/(1+lambda) for the two-objective case."""
    if dims != 2:
        raise ValueError("lambda parametrisation only covers two objectives")
    return (1.0 / (1.0 + lam), lam / (1.0 + lam))


def scalarize_mode(weights, base: PdpgConfig | None = None) -> PdpgConfig:
    """Single-critic DDPG on the reward dot(weights, r)."""
    base = base or PdpgConfig()
    return replace(base, weights=(1.0,), reward_weights=tuple(float(w) for w in weights))


# --- replay ------------------------------------------------------------------

@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray  # (B, D)
    next_states: np.ndarray

    def __len__(self):
        return len(self.states)


class ReplayBuffer:
    """Bounded FIFO of transitions; the oldest record is evicted first."""

    def __init__(self, capacity, state_dim, action_dim, reward_dim):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros((capacity, reward_dim))
        self.s2 = np.zeros((capacity, state_dim))
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, state, action, reward, next_state):
        reward = np.asarray(reward, dtype=float).reshape(-1)
        if reward.shape != (self.r.shape[1],):
            raise SchemaError(f"reward has {reward.size} entries, buffer holds {self.r.shape[1]}")
        i = self._next
        self.s[i], self.a[i], self.r[i], self.s2[i] = state, action, reward, next_state
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self):
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self.capacity) + self._next) % self.capacity

    def records(self) -> Batch:
        """All stored transitions, oldest first."""
        o = self._order()
        return Batch(self.s[o], self.a[o], self.r[o], self.s2[o])

    def sample(self, batch_size, rng) -> Batch:
        """Uniform with replacement."""
        idx = self._order()[rng.integers(0, self._size, size=batch_size)]
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx])


# --- critics -------------------------------------------------------------------

class MlpCritic:
    """Q(s, a) as an MLP over the concatenation [s || a]."""

    def __init__(self, params: neural.MlpParams, state_dim):
        self.params = params
        self.state_dim = state_dim

    def value(self, states, actions):
        return neural.forward(self.params, np.hstack([states, actions]))[:, 0]

    def value_and_action_grad(self, states, actions):
        x = np.hstack([states, actions])
        q, cache = neural.forward(self.params, x, return_cache=True)
        _, gx = neural.backward(self.params, x, np.ones_like(q), cache)
        return q[:, 0], gx[:, self.state_dim:]


class AnalyticCritic:
    """Critic given by closed-form callables; used for frozen-critic checks."""

    def __init__(self, q, dq_da):
        self.q, self.dq_da = q, dq_da

    def value(self, states, actions):
        return np.asarray(self.q(states, actions), dtype=float)

    def value_and_action_grad(self, states, actions):
        return self.value(states, actions), np.asarray(self.dq_da(states, actions), dtype=float)


def td_targets(batch: Batch, critic_targets, actor_target, gamma):
    """y_i = r_i + gamma * Q'_i(s', A'(s')) for every row and objective: (B, D)."""
    a2 = neural.forward(actor_target, batch.next_states)
    cols = [batch.rewards[:, i] + gamma * c.value(batch.next_states, a2) for i, c in enumerate(critic_targets)]
    return np.column_stack(cols)


def td_residuals(batch: Batch, critics, critic_targets, actor_target, gamma):
    """Signed Q_i(s, a) - y_i, shape (B, D)."""
    y = td_targets(batch, critic_targets, actor_target, gamma)
    q = np.column_stack([c.value(batch.states, batch.actions) for c in critics])
    return q - y


def combined_td_objective(residuals, weights):
    """sum_i w_i * mean(residual_i^2)."""
    return float(np.dot(weights, np.mean(np.asarray(residuals) ** 2, axis=0)))


def critic_step(critic: MlpCritic, opt: neural.Optimizer, batch: Batch, y):
    """One optimiser step on mean squared TD error; returns the pre-step loss."""
    x = np.hstack([batch.states, batch.actions])
    q, cache = neural.forward(critic.params, x, return_cache=True)
    err = q[:, 0] - y
    loss = float(np.mean(err ** 2))
    grad, _ = neural.backward(critic.params, x, (2.0 / len(err)) * err[:, None], cache)
    opt.step(grad)
    return loss


def actor_step(actor: neural.MlpParams, opt: neural.Optimizer, states, critics, weights):
    """Ascend sum_i w_i Q_i(s, A(s)) through the chain rule; returns the pre-step surrogate."""
    a, cache = neural.forward(actor, states, return_cache=True)
    total = np.zeros_like(a)
    surrogate = 0.0
    for w, c in zip(weights, critics):
        q, dq = c.value_and_action_grad(states, a)
        total += w * dq
        surrogate += w * float(np.mean(q))
    grad, _ = neural.backward(actor, states, -total / len(states), cache)
    opt.step(grad)
    return surrogate


class Agent:
    def __init__(self, state_dim, action_dim, cfg: PdpgConfig, seed=0):
        self.cfg = cfg
        self.state_dim, self.action_dim = state_dim, action_dim
        self.seed = seed
        h = cfg.hidden_sizes
        self.actor_spec = neural.MlpSpec((state_dim, *h, action_dim), "relu", "tanh")
        self.critic_spec = neural.MlpSpec((state_dim + action_dim, *h, 1), "relu", "linear")
        self.actor = neural.init(self.actor_spec, substream(seed, "agent-init/actor"))
        self.critics = [MlpCritic(neural.init(self.critic_spec, substream(seed, f"agent-init/critic{i}")), state_dim)
                        for i in range(cfg.num_critics)]
        self.actor_target = self.actor.copy()
        self.critic_targets = [MlpCritic(c.params.copy(), state_dim) for c in self.critics]
        self.actor_opt = neural.Optimizer(self.actor, cfg.optimizer, cfg.actor_lr)
        self.critic_opts = [neural.Optimizer(c.params, cfg.optimizer, cfg.critic_lr) for c in self.critics]
        self.explore_rng = substream(seed, "exploration")
        self.batch_rng = substream(seed, "minibatch")
        self.buffer = ReplayBuffer(cfg.buffer_capacity, state_dim, action_dim, cfg.num_critics)
        self.iteration = 0

    def transform_reward(self, reward):
        r = np.asarray(reward, dtype=float)
        if self.cfg.reward_weights is None:
            return r
        return np.array([float(np.dot(self.cfg.reward_weights, r))])

    def act(self, state, noise_variance=0.0):
        return select_action(state, self.actor, noise_variance, self.explore_rng)

    def update(self, batch: Batch):
        y = td_targets(batch, self.critic_targets, self.actor_target, self.cfg.gamma)
        losses = [critic_step(c, o, batch, y[:, i]) for i, (c, o) in enumerate(zip(self.critics, self.critic_opts))]
        surrogate = actor_step(self.actor, self.actor_opt, batch.states, self.critics, self.cfg.weights)
        soft_update_all(self, self.cfg.tau)
        return losses, surrogate

    def observe(self, state, action, reward, next_state):
        """Queue a transition and run one learning step once the buffer holds a batch."""
        self.buffer.add(state, action, self.transform_reward(reward), next_state)
        self.iteration += 1
        if len(self.buffer) < self.cfg.batch_size:
            return None
        return self.update(self.buffer.sample(self.cfg.batch_size, self.batch_rng))

    def save(self, path, **meta):
        nets = {"actor": self.actor, "actor_target": self.actor_target}
        for i, (c, t) in enumerate(zip(self.critics, self.critic_targets)):
            nets[f"critic{i}"] = c.params
            nets[f"critic{i}_target"] = t.params
        neural.save_checkpoint(path, nets, {"state_dim": self.state_dim, "action_dim": self.action_dim,
                                            "config": self.cfg.to_dict(), **meta})

    @classmethod
    def load(cls, path, seed=0):
        nets, meta = neural.load_checkpoint(path)
        cfg = PdpgConfig.from_dict(meta["config"])
        agent = cls(meta["state_dim"], meta["action_dim"], cfg, seed)
        agent.actor.theta[:] = nets["actor"].theta
        agent.actor_target.theta[:] = nets["actor_target"].theta
        for i in range(cfg.num_critics):
            agent.critics[i].params.theta[:] = nets[f"critic{i}"].theta
            agent.critic_targets[i].params.theta[:] = nets[f"critic{i}_target"].theta
        return agent, meta


def select_action(state, actor: neural.MlpParams, noise_variance, rng):
    """Actor output plus i.i.d. N(0, variance) noise, clamped to [-1, 1]."""
    a = neural.forward(actor, state)
    if noise_variance > 0:
        a = a + rng.normal(0.0, np.sqrt(noise_variance), size=a.shape)
    return np.clip(a, -1.0, 1.0)


def soft_update_all(agent: Agent, tau):
    neural.soft_update(agent.actor, agent.actor_target, tau)
    for c, t in zip(agent.critics, agent.critic_targets):
        neural.soft_update(c.params, t.params, tau)


# --- training loop --------------------------------------------------------------

@dataclass
class RunLog:
    rows: list = field(default_factory=list)
    tick_rows: list = field(default_factory=list)  # (tick, normalised throughput, loads...)

    def column(self, key):
        return np.array([r[key] for r in self.rows])


def train_loop(env: CellularEnv, agent: Agent, total_periods, env_seed=None, learn=True, noise=True,
               on_period=None) -> RunLog:
    """Act, step the environment, queue the transition, learn; once per period.

    ``learn=False, noise=False`` turns this into a frozen-policy evaluation.
    """
    cfg = agent.cfg
    if env.snapshot is None:
        env.reset(agent.seed if env_seed is None else env_seed)
    log = RunLog()
    state = scale_state(env.current_state())
    budget = env.radio.cell_prb_budget
    for period in range(total_periods):
        var = cfg.noise_variance(agent.iteration) if noise else 0.0
        action = agent.act(state, var)
        next_raw, reward, info = env.step(Action.from_vector(action, env.num_cells))
        next_state = scale_state(next_raw)
        stats = None
        if learn:
            stats = agent.observe(state, action, reward, next_state)
        row = {"period": period, "noise_variance": var}
        for i, r in enumerate(reward):
            row[f"reward{i + 1}"] = float(r)
        row["scalar_reward"] = float(np.dot(cfg.reward_weights or cfg.weights, reward))
        losses, surrogate = stats if stats is not None else ([np.nan] * cfg.num_critics, np.nan)
        for i, l in enumerate(losses):
            row[f"critic_loss{i + 1}"] = l
        row["actor_surrogate"] = surrogate
        log.rows.append(row)
        for tk in info["ticks"]:
            log.tick_rows.append((tk["tick"], float(tk["throughput_mbps"].sum()) / env.cfg.throughput_scale_mbps,
                                  tk["load_prb"] / budget))
        if on_period is not None:
            on_period(period, action, reward, info)
        state = next_state
    return log
