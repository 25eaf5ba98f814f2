"""Replay memory, epsilon schedule, and the centralized / distributed DQN agents.

Per-frame draw order from an agent's generator: action selection (warm-up
integers, or one uniform per decision plus an integer when exploring), then
the minibatch index sample.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import qnet
from .env import (
    Association,
    centralized_reward,
    centralized_state,
    distributed_rewards,
    distributed_states,
    evaluate_frame,
    update_history,
)
from .errors import ContractError, UnsupportedOperationError
from .oracle import DEFAULT_ENUM_CAP, action_count, action_decode, all_users  # noqa: F401


class ReplayMemory:
    """Fixed-capacity FIFO of ``(state, action, reward, next_state)``."""

    def __init__(self, capacity, state_size):
        if capacity < 1:
            raise ContractError("replay capacity must be positive")
        self.capacity = int(capacity)
        self.state_size = int(state_size)
        self.states = np.zeros((capacity, state_size))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_size))
        self.size = 0
        self._pos = 0  # next slot to overwrite

    def __len__(self):
        return self.size

    def push(self, state, action, reward, next_state):
        state = np.asarray(state, dtype=float)
        next_state = np.asarray(next_state, dtype=float)
        if state.shape != (self.state_size,) or next_state.shape != (self.state_size,):
            raise ContractError(f"experience width {state.shape} != ({self.state_size},)")
        i = self._pos
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def push_many(self, states, actions, rewards, next_states):
        for row in zip(states, actions, rewards, next_states):
            self.push(*row)

    def ordered_indices(self):
        """Slot indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (self._pos + np.arange(self.capacity)) % self.capacity

    def sample(self, batch_size, rng):
        """Uniform minibatch without replacement, as stacked arrays."""
        if batch_size > self.size:
            raise ContractError(f"cannot sample {batch_size} from {self.size} experiences")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx]


@dataclass
class EpsilonSchedule:
    epsilon: float = 0.2
    epsilon_min: float = 0.005
    decay: float = 0.005
    initial: float = 0.2

    def step(self):
        self.epsilon = max(self.epsilon_min, (1.0 - self.decay) * self.epsilon)
        return self.epsilon


def decay_epsilon(sched: EpsilonSchedule) -> EpsilonSchedule:
    return EpsilonSchedule(max(sched.epsilon_min, (1.0 - sched.decay) * sched.epsilon),
                           sched.epsilon_min, sched.decay, sched.initial)


def epsilon_greedy(q_values, epsilon, rng) -> int:
    """Random action with probability ``epsilon``, else the first maximiser."""
    q_values = np.asarray(q_values)
    if q_values.size == 0:
        raise ContractError("no actions to choose from")
    if rng.random() < epsilon:
        return int(rng.integers(q_values.size))
    return int(np.argmax(q_values))


@dataclass
class AgentConfig:
    gamma: float = 0.3
    batch_size: int = 64
    replay_capacity: int = 800
    target_period: int = 100
    learning_rate: float = 0.01
    epsilon_initial: float = 0.2
    epsilon_min: float = 0.005
    epsilon_decay: float = 0.005
    centralized_hidden: list = field(default_factory=lambda: [256, 128, 64])
    distributed_hidden: list = field(default_factory=lambda: [128, 64, 32])
    clip_norm: Optional[float] = None

    def __post_init__(self):
        if min(self.batch_size, self.replay_capacity, self.target_period) < 1:
            raise ContractError("batch size, replay capacity and target period must be positive")
        if self.batch_size > self.replay_capacity:
            raise ContractError("batch size cannot exceed replay capacity")
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractError("discount must lie in [0, 1]")


@dataclass
class FrameRecord:
    frame: int
    sum_rate: float
    n_devices: int
    users: np.ndarray
    epsilon: Optional[float] = None
    loss: Optional[float] = None


class _DQNAgent:
    """Shared machinery: network pair, Adam, replay, schedule, history, counters."""

    name = "dqn"

    def __init__(self, layer_sizes, config: AgentConfig, history, rng):
        self.config = config
        self.rng = rng
        self.net = qnet.QNetwork(layer_sizes, rng)
        self.target = self.net.copy()
        self.adam = qnet.AdamState.for_network(self.net, learning_rate=config.learning_rate)
        self.replay = ReplayMemory(config.replay_capacity, layer_sizes[0])
        self.schedule = EpsilonSchedule(config.epsilon_initial, config.epsilon_min,
                                        config.epsilon_decay, config.epsilon_initial)
        self.history = history
        self.frame = 0
        self.train_steps = 0
        self.syncs = 0

    @property
    def warming_up(self):
        return len(self.replay) < self.config.batch_size

    def _learn(self):
        """One minibatch step once the replay holds a full batch; returns the loss or None."""
        if len(self.replay) < self.config.batch_size:
            return None
        batch = self.replay.sample(self.config.batch_size, self.rng)
        loss = qnet.train_minibatch(self.net, self.target, self.adam, batch,
                                    self.config.gamma, self.config.clip_norm)
        self.train_steps += 1
        return loss

    def _end_frame(self):
        if self.frame % self.config.target_period == 0:
            qnet.sync_target(self.net, self.target)
            self.syncs += 1
        eps = self.schedule.epsilon
        self.schedule.step()
        return eps

    def run_state(self):
        return {
            "agent": self.name,
            "frame": self.frame,
            "epsilon": self.schedule.epsilon,
            "train_steps": self.train_steps,
            "syncs": self.syncs,
            "replay_size": len(self.replay),
            "config": asdict(self.config),
        }

    def save_state(self, directory, include_replay=False):
        """Write ``<name>_qnet.npz``, ``<name>_state.json`` and optionally ``<name>_replay.npz``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        qnet.save_snapshot(directory / f"{self.name}_qnet.npz", self.net, self.adam, self.target)
        (directory / f"{self.name}_state.json").write_text(json.dumps(self.run_state(), indent=2) + "\n")
        if include_replay:
            r = self.replay
            order = r.ordered_indices()
            np.savez(directory / f"{self.name}_replay.npz", states=r.states[order], actions=r.actions[order],
                     rewards=r.rewards[order], next_states=r.next_states[order])

    def restore_state(self, directory):
        """Reload parameters, counters and (if saved) replay contents. Rng state is not restored."""
        directory = Path(directory)
        net, adam, target = qnet.load_snapshot(directory / f"{self.name}_qnet.npz")
        if net.layer_sizes != self.net.layer_sizes:
            raise ContractError(f"snapshot shape {net.layer_sizes} != {self.net.layer_sizes}")
        self.net, self.adam = net, adam
        self.target = target if target is not None else net.copy()
        state = json.loads((directory / f"{self.name}_state.json").read_text())
        self.frame = state["frame"]
        self.schedule.epsilon = state["epsilon"]
        self.train_steps = state["train_steps"]
        self.syncs = state["syncs"]
        replay_path = directory / f"{self.name}_replay.npz"
        if replay_path.exists():
            with np.load(replay_path) as data:
                self.replay = ReplayMemory(self.config.replay_capacity, self.replay.state_size)
                self.replay.push_many(data["states"], data["actions"], data["rewards"], data["next_states"])


class CentralizedAgent(_DQNAgent):
    """One network over the flattened gain history, one output per joint association."""

    name = "centralized"

    def __init__(self, env, config: AgentConfig, rng, cap=DEFAULT_ENUM_CAP):
        m, n = env.num_users, env.num_devices
        self.num_users, self.num_devices = m, n
        self.table = all_users(m, n, cap)
        sizes = [m * n, *config.centralized_hidden, action_count(m, n)]
        super().__init__(sizes, config, env.fresh_history(), rng)

    def select(self, state):
        if self.warming_up:
            return int(self.rng.integers(self.table.shape[0]))
        return epsilon_greedy(self.net.forward(state), self.schedule.epsilon, self.rng)

    def frame_step(self, env) -> FrameRecord:
        self.frame += 1
        state = centralized_state(self.history)
        action = self.select(state)
        assoc = Association(self.table[action], self.num_users)
        outcome = evaluate_frame(env.gains, assoc, env.params)
        reward = centralized_reward(outcome)
        self.history = update_history(self.history, assoc, env.gains, outcome)
        self.replay.push(state, action, reward, centralized_state(self.history))
        loss = self._learn()
        eps = self._end_frame()
        return FrameRecord(self.frame, outcome.sum_rate, self.num_devices, assoc.users, eps, loss)

    def resize_devices(self, new_n):
        if new_n != self.num_devices:
            raise UnsupportedOperationError(
                "centralized agent is not scalable: its state and action spaces are fixed by N"
            )


class DistributedAgent(_DQNAgent):
    """One shared network; each device's unit feeds its own local state and picks a user."""

    name = "distributed"

    def __init__(self, env, config: AgentConfig, rng, max_devices=None):
        m = env.num_users
        self.num_users = m
        self.max_devices = max_devices or env.num_devices
        sizes = [2 * m + 3, *config.distributed_hidden, m]
        super().__init__(sizes, config, env.fresh_history(), rng)

    @property
    def num_devices(self):
        return self.history.num_devices

    def select(self, states):
        n_dev = states.shape[0]
        if self.warming_up:
            return self.rng.integers(self.num_users, size=n_dev)
        # Every unit reads the same parameters, so one batched forward serves all.
        q = self.net.forward(states)
        eps = self.schedule.epsilon
        return np.array([epsilon_greedy(q[n], eps, self.rng) for n in range(n_dev)], dtype=np.int64)

    def frame_step(self, env) -> FrameRecord:
        self.frame += 1
        states = distributed_states(self.history, self.max_devices)
        assoc = Association(self.select(states), self.num_users)
        outcome = evaluate_frame(env.gains, assoc, env.params)
        rewards = distributed_rewards(outcome, env.gains, assoc, env.params)
        self.history = update_history(self.history, assoc, env.gains, outcome)
        next_states = distributed_states(self.history, self.max_devices)
        self.replay.push_many(states, assoc.users, rewards, next_states)
        loss = self._learn()
        eps = self._end_frame()
        return FrameRecord(self.frame, outcome.sum_rate, self.num_devices, assoc.users, eps, loss)

    def resize_devices(self, new_n):
        """Network and replay are kept; only the per-device history changes shape."""
        self.history = self.history.resized(new_n)


def centralized_frame_step(agent: CentralizedAgent, env) -> FrameRecord:
    return agent.frame_step(env)


def distributed_frame_step(agent: DistributedAgent, env) -> FrameRecord:
    return agent.frame_step(env)

