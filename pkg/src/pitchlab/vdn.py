"""Value-decomposition learner built on hand-rolled numpy MLPs.

Each agent owns a small float64 network mapping its observation to
per-action values; the joint action value is the exact sum of the agents'
chosen-action values, so the joint greedy action decomposes into per-agent
argmaxes.  Training is one-step TD with a target network, mean-squared
error, and plain SGD under a global gradient-norm clip.

The smooth-at-zero rectifying nonlinearity keeps the loss twice
differentiable everywhere, which finite-difference gradient checks rely on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .sim import ConfigError


class ShapeMismatchError(ValueError):
    """Input width or agent count disagrees with the network."""


class CheckpointFormatError(ValueError):
    """A checkpoint file is malformed."""


@dataclass(frozen=True)
class LearnerConfig:
    n_agents: int
    obs_dim: int
    n_actions: int
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 5e-4
    gamma: float = 0.99
    grad_clip: float = 10.0

    def __post_init__(self) -> None:
        if self.n_agents < 1 or self.obs_dim < 1 or self.n_actions < 2:
            raise ConfigError("n_agents/obs_dim/n_actions out of range")
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("hidden sizes must be positive")
        if self.lr <= 0 or self.grad_clip <= 0:
            raise ConfigError("lr and grad_clip must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")


@dataclass(frozen=True)
class TrainConfig:
    """Training-loop knobs shared by the matrix-game tests and the full
    experiment driver."""

    total_steps: int = 200_000
    learning_rate: float = 5e-4
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 0    # 0 means 20% of total_steps
    batch_size: int = 32
    target_sync_period: int = 500
    buffer_capacity: int = 50_000
    hidden: tuple[int, ...] = (64, 64)
    grad_clip: float = 10.0
    update_every: int = 4           # environment steps per gradient step
    learn_start: int = 500          # buffer warmup before updates begin

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.epsilon_decay_steps < 0:
            raise ConfigError("epsilon_decay_steps must be >= 0")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigError("need buffer_capacity >= batch_size >= 1")
        if self.target_sync_period < 1 or self.update_every < 1:
            raise ConfigError("target_sync_period and update_every must be >= 1")
        if self.learn_start < self.batch_size:
            raise ConfigError("learn_start must be >= batch_size")

    @property
    def decay_steps(self) -> int:
        if self.epsilon_decay_steps > 0:
            return self.epsilon_decay_steps
        return max(1, self.total_steps // 5)

    def epsilon_at(self, step: int) -> float:
        """Linear anneal from epsilon_start to epsilon_end over decay_steps."""
        if step >= self.decay_steps:
            return self.epsilon_end
        frac = step / self.decay_steps
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)

    def learner_config(self, n_agents: int, obs_dim: int,
                       n_actions: int) -> LearnerConfig:
        return LearnerConfig(
            n_agents=n_agents, obs_dim=obs_dim, n_actions=n_actions,
            hidden=self.hidden, lr=self.learning_rate, gamma=self.gamma,
            grad_clip=self.grad_clip,
        )


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


@dataclass
class QNetwork:
    """Weights and biases of one agent's network, all float64."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_shapes(self) -> list[list[int]]:
        return [list(w.shape) for w in self.weights]

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)


def init_mlp(sizes: list[int], rng: np.random.Generator) -> QNetwork:
    """Uniform(+-1/sqrt(fan_in)) init for both weights and biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return QNetwork(weights, biases)


def joint_q(per_agent_values) -> float:
    """Joint action value: the exact arithmetic sum of the agents' chosen
    per-agent values."""
    total = 0.0
    for v in per_agent_values:
        total += float(v)
    return total


def mlp_forward(params: QNetwork, x: np.ndarray) -> np.ndarray:
    """Q-values for a single observation (D,) or a batch (B, D)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise ShapeMismatchError(
            f"expected input width {params.weights[0].shape[0]}, got {x.shape}")
    h = x
    last = len(params.weights) - 1
    for li, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        h = z if li == last else softplus(z)
    return h[0] if single else h


def _forward_cached(params: QNetwork, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Forward pass keeping pre-activations and inputs for backprop."""
    cache = []
    h = x
    last = len(params.weights) - 1
    for li, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        cache.append((h, z))
        h = z if li == last else softplus(z)
    return h, cache


def _backward(params: QNetwork, cache: list, dout: np.ndarray) -> QNetwork:
    """Gradients of a scalar loss given d(loss)/d(output)."""
    gw = [np.zeros_like(w) for w in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]
    last = len(params.weights) - 1
    grad = dout
    for li in range(last, -1, -1):
        h_in, z = cache[li]
        if li != last:
            grad = grad * _sigmoid(z)
        gw[li] = h_in.T @ grad
        gb[li] = grad.sum(axis=0)
        if li > 0:
            grad = grad @ params.weights[li].T
    return QNetwork(gw, gb)


@dataclass
class Transition:
    obs: np.ndarray        # (n_agents, obs_dim)
    actions: np.ndarray    # (n_agents,) int
    reward: float
    next_obs: np.ndarray   # (n_agents, obs_dim)
    terminal: bool


@dataclass
class TransitionBatch:
    obs: np.ndarray        # (B, n_agents, obs_dim)
    actions: np.ndarray    # (B, n_agents)
    rewards: np.ndarray    # (B,)
    next_obs: np.ndarray   # (B, n_agents, obs_dim)
    terminals: np.ndarray  # (B,) float 0/1


def batch_from_transitions(transitions: list[Transition]) -> TransitionBatch:
    return TransitionBatch(
        obs=np.stack([t.obs for t in transitions]),
        actions=np.stack([t.actions for t in transitions]),
        rewards=np.array([t.reward for t in transitions], dtype=float),
        next_obs=np.stack([t.next_obs for t in transitions]),
        terminals=np.array([float(t.terminal) for t in transitions]),
    )


class ReplayBuffer:
    """Fixed-capacity ring buffer over preallocated arrays."""

    def __init__(self, capacity: int, n_agents: int, obs_dim: int):
        if capacity < 1:
            raise ConfigError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, n_agents, obs_dim))
        self.actions = np.zeros((capacity, n_agents), dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, n_agents, obs_dim))
        self.terminals = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, obs: np.ndarray, actions: np.ndarray, reward: float,
            next_obs: np.ndarray, terminal: bool) -> None:
        i = self._next
        self.obs[i] = obs
        self.actions[i] = actions
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.terminals[i] = float(terminal)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        if batch_size > self._size:
            raise ValueError(
                f"batch size {batch_size} exceeds buffer size {self._size}")
        idx = rng.integers(0, self._size, size=batch_size)
        return TransitionBatch(
            obs=self.obs[idx], actions=self.actions[idx],
            rewards=self.rewards[idx], next_obs=self.next_obs[idx],
            terminals=self.terminals[idx],
        )


class VDNLearner:
    """Per-agent networks (no parameter sharing) plus frozen target copies."""

    def __init__(self, config: LearnerConfig, seed: int):
        self.config = config
        sizes = [config.obs_dim, *config.hidden, config.n_actions]
        rng = np.random.default_rng(int(seed))
        self.agents = [init_mlp(sizes, rng) for _ in range(config.n_agents)]
        self.targets = [p.copy() for p in self.agents]
        self.train_step = 0

    # -- acting ---------------------------------------------------------------

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        """(n_agents, n_actions) values for per-agent observations (A, D)."""
        obs = np.asarray(obs, dtype=float)
        if obs.shape != (self.config.n_agents, self.config.obs_dim):
            raise ShapeMismatchError(
                f"expected obs shape {(self.config.n_agents, self.config.obs_dim)}, "
                f"got {obs.shape}")
        return np.stack([mlp_forward(p, obs[a])
                         for a, p in enumerate(self.agents)])

    def chosen_joint_q(self, obs: np.ndarray, actions: np.ndarray) -> float:
        """Sum over agents of each agent's value for its chosen action."""
        q = self.q_values(obs)
        actions = np.asarray(actions)
        if actions.shape != (self.config.n_agents,):
            raise ShapeMismatchError(f"expected {self.config.n_agents} actions")
        return joint_q(q[np.arange(self.config.n_agents), actions])

    def greedy_actions(self, obs: np.ndarray) -> np.ndarray:
        """Per-agent argmax; ties break to the lowest action index."""
        return np.argmax(self.q_values(obs), axis=1)

    def select_actions(self, obs: np.ndarray, epsilon: float,
                       rng: np.random.Generator | None = None) -> np.ndarray:
        """Epsilon-greedy per agent.  With epsilon 0 no random numbers are
        drawn at all, so greedy evaluation never touches the generator."""
        if epsilon > 0 and rng is None:
            raise ConfigError("epsilon > 0 requires an rng")
        greedy = self.greedy_actions(obs)
        if epsilon <= 0:
            return greedy
        out = greedy.copy()
        for a in range(self.config.n_agents):
            if rng.random() < epsilon:
                out[a] = int(rng.integers(self.config.n_actions))
        return out

    # -- learning ---------------------------------------------------------------

    def _td_errors(self, batch: TransitionBatch) -> tuple[np.ndarray, list]:
        cfg = self.config
        B = batch.obs.shape[0]
        if batch.obs.shape[1:] != (cfg.n_agents, cfg.obs_dim):
            raise ShapeMismatchError(
                f"batch obs shaped {batch.obs.shape}, expected "
                f"(B, {cfg.n_agents}, {cfg.obs_dim})")
        pred = np.zeros(B)
        caches = []
        for a, p in enumerate(self.agents):
            q, cache = _forward_cached(p, batch.obs[:, a, :])
            pred += q[np.arange(B), batch.actions[:, a]]
            caches.append(cache)
        next_max = np.zeros(B)
        for a, tp in enumerate(self.targets):
            next_max += mlp_forward(tp, batch.next_obs[:, a, :]).max(axis=1)
        y = batch.rewards + cfg.gamma * (1.0 - batch.terminals) * next_max
        return pred - y, caches

    def td_loss(self, batch: TransitionBatch | list[Transition]) -> float:
        """Mean squared TD error; pure, used by gradient checks."""
        if isinstance(batch, list):
            batch = batch_from_transitions(batch)
        err, _ = self._td_errors(batch)
        return float(np.mean(err ** 2))

    def td_grads(self, batch: TransitionBatch | list[Transition]
                 ) -> tuple[float, list[QNetwork]]:
        """Loss and per-agent parameter gradients, before clipping."""
        if isinstance(batch, list):
            batch = batch_from_transitions(batch)
        B = batch.obs.shape[0]
        err, caches = self._td_errors(batch)
        loss = float(np.mean(err ** 2))
        dpred = 2.0 * err / B
        grads = []
        for a, p in enumerate(self.agents):
            dq = np.zeros((B, self.config.n_actions))
            dq[np.arange(B), batch.actions[:, a]] = dpred
            grads.append(_backward(p, caches[a], dq))
        return loss, grads

    def td_update(self, batch: TransitionBatch | list[Transition]) -> float:
        """One SGD step under the global gradient-norm clip; returns the loss."""
        loss, grads = self.td_grads(batch)
        sq = 0.0
        for g in grads:
            for arr in (*g.weights, *g.biases):
                sq += float(np.sum(arr * arr))
        norm = np.sqrt(sq)
        scale = self.config.grad_clip / norm if norm > self.config.grad_clip else 1.0
        lr = self.config.lr
        for p, g in zip(self.agents, grads):
            for w, gw in zip(p.weights, g.weights):
                w -= lr * scale * gw
            for b, gb in zip(p.biases, g.biases):
                b -= lr * scale * gb
        self.train_step += 1
        return loss

    def sync_target(self) -> None:
        self.targets = [p.copy() for p in self.agents]

    # -- checkpoints --------------------------------------------------------------

    def save(self, path: str, extra: dict | None = None) -> None:
        """JSON checkpoint; floats round-trip exactly through repr."""
        def dump_params(params: QNetwork) -> dict:
            return {
                "layer_shapes": params.layer_shapes,
                "weights": [w.ravel().tolist() for w in params.weights],
                "biases": [b.tolist() for b in params.biases],
            }
        doc = {
            "version": 1,
            "train_step": self.train_step,
            "config": {
                "n_agents": self.config.n_agents,
                "obs_dim": self.config.obs_dim,
                "n_actions": self.config.n_actions,
                "hidden": list(self.config.hidden),
                "lr": self.config.lr,
                "gamma": self.config.gamma,
                "grad_clip": self.config.grad_clip,
            },
            "agents": [dump_params(p) for p in self.agents],
            "targets": [dump_params(p) for p in self.targets],
        }
        if extra:
            doc["extra"] = extra
        with open(path, "w") as f:
            json.dump(doc, f)

    @classmethod
    def load(cls, path: str) -> "VDNLearner":
        try:
            with open(path) as f:
                doc = json.load(f)
        except json.JSONDecodeError as e:
            raise CheckpointFormatError(f"{path}: not valid JSON ({e})") from e
        if not isinstance(doc, dict) or doc.get("version") != 1:
            raise CheckpointFormatError(f"{path}: unsupported checkpoint version")
        for key in ("train_step", "config", "agents", "targets"):
            if key not in doc:
                raise CheckpointFormatError(f"{path}: missing key '{key}'")
        c = doc["config"]
        config = LearnerConfig(
            n_agents=c["n_agents"], obs_dim=c["obs_dim"],
            n_actions=c["n_actions"], hidden=tuple(c["hidden"]),
            lr=c["lr"], gamma=c["gamma"], grad_clip=c["grad_clip"],
        )
        learner = cls(config, seed=0)

        def load_params(d: dict) -> QNetwork:
            weights, biases = [], []
            for shape, flat, b in zip(d["layer_shapes"], d["weights"], d["biases"]):
                arr = np.array(flat, dtype=float)
                if arr.size != shape[0] * shape[1]:
                    raise CheckpointFormatError(
                        f"{path}: weight block size {arr.size} does not match "
                        f"shape {shape}")
                weights.append(arr.reshape(shape))
                biases.append(np.array(b, dtype=float))
            return QNetwork(weights, biases)

        if len(doc["agents"]) != config.n_agents:
            raise CheckpointFormatError(f"{path}: agent count mismatch")
        learner.agents = [load_params(d) for d in doc["agents"]]
        learner.targets = [load_params(d) for d in doc["targets"]]
        learner.train_step = int(doc["train_step"])
        return learner
