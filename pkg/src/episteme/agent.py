"""Multi-headed DQN meta-agent.

A shared trunk feeds one Q-value head per sensing modality. Each head scores
the PoI slots of the policy state plus a trailing NOP action.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import diffnet
from .diffnet import DivergenceError, MlpParams, MlpSpec, build_mlp
from .perceived_env import PolicyState


@dataclass(frozen=True)
class AgentConfig:
    input_dim: int = 6
    n_actions: int = 3
    n_heads: int = 2
    hidden: tuple[int, ...] = (32, 32)
    activation: str = "tanh"
    gamma: float = 0.95
    lr: float = 5e-4
    buffer_capacity: int = 10_000
    batch_size: int = 64
    learning_starts: int = 500
    train_every: int = 1
    target_sync_every: int = 250
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 10_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def validate(self):
        if self.input_dim < 1 or self.n_actions < 2 or self.n_heads < 1:
            raise ValueError("input_dim, n_actions (>= 2) and n_heads must be positive")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError("the shared trunk needs at least one hidden layer, all widths positive")
        if self.activation not in diffnet.ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(diffnet.ACTIVATIONS)}")
        if not 0 < self.lr < np.inf:
            raise ValueError("lr must be finite and positive")
        if self.learning_starts < 0 or self.seed < 0:
            raise ValueError("learning_starts and seed must be non-negative")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.buffer_capacity < 1 or self.batch_size < 1:
            raise ValueError("buffer_capacity and batch_size must be positive")
        if self.train_every < 1 or self.target_sync_every < 1 or self.eps_decay_steps < 1:
            raise ValueError("train_every, target_sync_every and eps_decay_steps must be positive")
        if not (0 <= self.eps_end <= 1 and 0 <= self.eps_start <= 1):
            raise ValueError("epsilon bounds must lie in [0, 1]")


@dataclass
class MultiHeadQNet:
    trunk: MlpParams
    heads: list[MlpParams]

    def nets(self) -> list[MlpParams]:
        return [self.trunk, *self.heads]

    @classmethod
    def from_nets(cls, nets) -> "MultiHeadQNet":
        return cls(nets[0], list(nets[1:]))

    def copy(self) -> "MultiHeadQNet":
        return MultiHeadQNet.from_nets([n.copy() for n in self.nets()])

    @property
    def n_actions(self) -> int:
        return self.heads[0].n_out


def build_qnet(config: AgentConfig) -> MultiHeadQNet:
    seeds = np.random.SeedSequence(config.seed).generate_state(1 + config.n_heads)
    trunk = build_mlp(MlpSpec.make([config.input_dim, *config.hidden], hidden=config.activation,
                                   output=config.activation, seed=int(seeds[0])))
    heads = [build_mlp(MlpSpec.make([config.hidden[-1], config.n_actions], seed=int(s))) for s in seeds[1:]]
    return MultiHeadQNet(trunk, heads)


def _vector(state) -> np.ndarray:
    return state.vector if isinstance(state, PolicyState) else np.asarray(state, dtype=np.float64)


def q_values(net: MultiHeadQNet, state, head: int) -> np.ndarray:
    if not 0 <= head < len(net.heads):
        raise ValueError(f"head {head} out of range for {len(net.heads)} heads")
    h = diffnet.predict(net.trunk, _vector(state))
    return diffnet.predict(net.heads[head], h)


def masked_argmax(q: np.ndarray, mask: np.ndarray) -> int:
    """Greedy action over valid slots plus NOP; lowest index wins ties."""
    allowed = np.append(np.asarray(mask, dtype=bool), True)
    scores = np.where(allowed, q, -np.inf)
    return int(np.argmax(scores))


def select_action(net: MultiHeadQNet, state: PolicyState, head: int, epsilon: float,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy over valid slots and NOP."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    valid = np.flatnonzero(state.mask)
    if valid.size == 0:
        return state.nop
    if epsilon > 0 and rng.random() < epsilon:
        choices = np.append(valid, state.nop)
        return int(choices[rng.integers(len(choices))])
    return masked_argmax(q_values(net, state, head), state.mask)


@dataclass(frozen=True)
class Transition:
    state: PolicyState
    action: int
    reward: float
    next_state: PolicyState
    done: bool
    head: int


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self.inserted = 0

    def __len__(self):
        return len(self._items)

    def push(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self.inserted % self.capacity] = transition
        self.inserted += 1

    def contents(self) -> list[Transition]:
        """Oldest first."""
        if len(self._items) < self.capacity:
            return list(self._items)
        start = self.inserted % self.capacity
        return self._items[start:] + self._items[:start]

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


def store_transition(buffer: ReplayBuffer, transition: Transition) -> ReplayBuffer:
    buffer.push(transition)
    return buffer


@dataclass(frozen=True)
class EpsilonSchedule:
    eps_start: float = 1.0
    eps_end: float = 0.05
    decay_steps: int = 10_000

    def __call__(self, t: int) -> float:
        frac = min(max(t, 0) / self.decay_steps, 1.0)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


def td_targets(target_net: MultiHeadQNet, batch: list[Transition], gamma: float) -> np.ndarray:
    """``r`` for terminal transitions, else ``r + gamma * max_valid Q_target(s', a')``."""
    rewards = np.array([t.reward for t in batch])
    done = np.array([t.done for t in batch])
    targets = rewards.copy()
    live = np.flatnonzero(~done)
    if live.size == 0 or gamma == 0:
        return targets
    next_x = np.array([batch[i].next_state.vector for i in live])
    hidden = diffnet.predict(target_net.trunk, next_x)
    for head in sorted({batch[i].head for i in live}):
        rows = [j for j, i in enumerate(live) if batch[i].head == head]
        q = diffnet.predict(target_net.heads[head], hidden[rows])
        for r, j in enumerate(rows):
            i = live[j]
            allowed = np.append(batch[i].next_state.mask, True)
            targets[i] += gamma * np.max(q[r][allowed])
    return targets


def td_loss(net: MultiHeadQNet, target_net: MultiHeadQNet, batch: list[Transition], gamma: float) -> float:
    y = td_targets(target_net, batch, gamma)
    q = np.array([q_values(net, t.state, t.head)[t.action] for t in batch])
    return float(np.mean((y - q) ** 2))


def train_batch(net: MultiHeadQNet, target_net: MultiHeadQNet, batch: list[Transition], gamma: float,
                opt_state: diffnet.AdamState):
    """One Adam step on the mean squared TD error.

    Returns ``(net, opt_state, loss)``. Heads absent from the batch are left
    untouched; the trunk receives gradients from every head in the batch.
    """
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    n = len(batch)
    y = td_targets(target_net, batch, gamma)
    x = np.array([t.state.vector for t in batch])
    actions = np.array([t.action for t in batch])
    heads = np.array([t.head for t in batch])
    hidden, trunk_cache = diffnet.forward(net.trunk, x)
    d_hidden = np.zeros_like(hidden)
    head_grads: list[MlpParams | None] = [None] * len(net.heads)
    q_taken = np.zeros(n)
    for head in np.unique(heads):
        rows = np.flatnonzero(heads == head)
        q, cache = diffnet.forward(net.heads[head], hidden[rows])
        q_taken[rows] = q[np.arange(len(rows)), actions[rows]]
        g_out = np.zeros_like(q)
        g_out[np.arange(len(rows)), actions[rows]] = 2.0 * (q_taken[rows] - y[rows]) / n
        head_grads[head], d_hidden[rows] = diffnet.backward(net.heads[head], cache, g_out)
    loss = float(np.mean((y - q_taken) ** 2))
    if not np.isfinite(loss):
        raise DivergenceError("non-finite TD loss")
    trunk_grads, _ = diffnet.backward(net.trunk, trunk_cache, d_hidden)
    nets, opt_state = diffnet.adam_step(net.nets(), [trunk_grads, *head_grads], opt_state)
    return MultiHeadQNet.from_nets(nets), opt_state, loss


def sync_target(net: MultiHeadQNet) -> MultiHeadQNet:
    return net.copy()


def init_optimizer(net: MultiHeadQNet, lr: float) -> diffnet.AdamState:
    return diffnet.init_adam(net.nets(), lr=lr)


def checkpoint_dict(config: AgentConfig, net: MultiHeadQNet, train_step: int) -> dict:
    cfg = asdict(config)
    cfg["hidden"] = list(cfg["hidden"])
    return {"config": cfg, "trunk": net.trunk.to_dict(), "heads": [h.to_dict() for h in net.heads],
            "train_step": train_step}


def save_agent(path, config: AgentConfig, net: MultiHeadQNet, train_step: int) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(config, net, train_step), fh)


def load_agent(path) -> tuple[AgentConfig, MultiHeadQNet, int]:
    with open(path) as fh:
        doc = json.load(fh)
    config = AgentConfig(**doc["config"])
    net = MultiHeadQNet(MlpParams.from_dict(doc["trunk"]), [MlpParams.from_dict(h) for h in doc["heads"]])
    if net.trunk.n_in != config.input_dim or len(net.heads) != config.n_heads:
        raise ValueError("agent checkpoint does not match its own config")
    if any(h.n_out != config.n_actions or h.n_in != net.trunk.n_out for h in net.heads):
        raise ValueError("agent checkpoint head shapes are inconsistent")
    return config, net, int(doc["train_step"])
