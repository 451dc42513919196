"""Per-prosumer DQN learners and a rule-based baseline policy.

Each prosumer trains an independent Q-network over the 7-block state
[load, generation, battery SoC, forecast load, forecast PV, load
uncertainty, PV uncertainty] with epsilon-greedy exploration, a uniform
replay buffer, and a periodically synced target network.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn

from .rewards import Action

N_ACTIONS = len(Action)
STATE_DIM = 7
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LearnerConfig:
    gamma: float = 0.95
    learning_rate: float = 1e-3
    buffer_capacity: int = 50_000
    batch_size: int = 64
    target_sync_period: int = 1_000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 100_000
    hidden_width: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma out of [0, 1): {self.gamma}")
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon_end must be <= epsilon_start")
        if min(self.buffer_capacity, self.batch_size, self.target_sync_period,
               self.epsilon_decay_steps, self.hidden_width) <= 0:
            raise ValueError("capacities, periods, and widths must be positive")


def build_state(load: float, generation: float, soc_fraction: float,
                mu_load, mu_pv, sigma_load, sigma_pv,
                load_scale: float = 1.0) -> np.ndarray:
    """Assemble the 7-component state vector.

    Forecast blocks are summarized as means over the horizon; load-like
    components are divided by load_scale to keep magnitudes comparable to
    the [0, 1] SoC entry.
    """
    if mu_load is None or mu_pv is None:
        raise ValueError("missing forecast: agents never act blind")
    s = np.array([
        load / load_scale,
        generation / load_scale,
        soc_fraction,
        float(np.mean(mu_load)) / load_scale,
        float(np.mean(mu_pv)) / load_scale,
        float(np.mean(sigma_load)) / load_scale,
        float(np.mean(sigma_pv)) / load_scale,
    ])
    if not np.all(np.isfinite(s)):
        raise ValueError(f"non-finite state vector: {s}")
    return s


class QNetwork(nn.Module):
    """State -> 8 action values, two ReLU hidden layers."""

    def __init__(self, state_dim: int = STATE_DIM, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(state_dim, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, N_ACTIONS))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class ReplayBuffer:
    """Fixed-capacity ring buffer with seeded uniform sampling."""

    def __init__(self, capacity: int, state_dim: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.states = np.zeros((capacity, state_dim), dtype=np.float32)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.next_states = np.zeros((capacity, state_dim), dtype=np.float32)
        self.terminals = np.zeros(capacity, dtype=np.float32)
        self.pos = 0
        self.size = 0

    def push(self, state, action, reward, next_state, terminal):
        i = self.pos
        self.states[i] = state
        self.actions[i] = int(action)
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.terminals[i] = float(terminal)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int):
        idx = self.rng.integers(0, self.size, size=batch_size)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.terminals[idx])

    def __len__(self):
        return self.size


def epsilon_at(step: int, cfg: LearnerConfig) -> float:
    """Linear decay from epsilon_start to epsilon_end, then constant."""
    frac = min(max(step, 0) / cfg.epsilon_decay_steps, 1.0)
    return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)


def select_action(q: QNetwork, state: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> Action:
    """Epsilon-greedy; argmax ties break to the lowest action index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon out of [0, 1]: {epsilon}")
    if rng.random() < epsilon:
        return Action(int(rng.integers(0, N_ACTIONS)))
    with torch.no_grad():
        values = q(torch.as_tensor(state, dtype=torch.float32)).numpy()
    return Action(int(np.argmax(values)))


def td_update(q: QNetwork, target: QNetwork, optimizer: torch.optim.Optimizer,
              batch, gamma: float) -> float:
    """One squared-TD-error gradient step; returns the batch loss."""
    states, actions, rewards, next_states, terminals = batch
    s = torch.as_tensor(states, dtype=torch.float32)
    a = torch.as_tensor(actions, dtype=torch.int64)
    r = torch.as_tensor(rewards, dtype=torch.float32)
    s2 = torch.as_tensor(next_states, dtype=torch.float32)
    done = torch.as_tensor(terminals, dtype=torch.float32)

    with torch.no_grad():
        next_max = target(s2).max(dim=1).values
        td_target = r + gamma * (1.0 - done) * next_max
    q_sa = q(s).gather(1, a.unsqueeze(1)).squeeze(1)
    loss = nn.functional.mse_loss(q_sa, td_target)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    value = loss.item()
    if not np.isfinite(value):
        raise RuntimeError("TD update produced non-finite loss")
    return value


def sync_target(q: QNetwork, target: QNetwork) -> None:
    """Exact parameter copy into the target network."""
    target.load_state_dict(q.state_dict())


class DQNLearner:
    """One independent learner: networks, buffer, exploration schedule."""

    def __init__(self, cfg: LearnerConfig, state_dim: int = STATE_DIM):
        self.cfg = cfg
        self.state_dim = state_dim
        torch.manual_seed(cfg.seed)
        self.q = QNetwork(state_dim, cfg.hidden_width)
        self.target = QNetwork(state_dim, cfg.hidden_width)
        sync_target(self.q, self.target)
        self.optimizer = torch.optim.Adam(self.q.parameters(), lr=cfg.learning_rate)
        self.rng = np.random.default_rng(cfg.seed)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, state_dim, self.rng)
        self.step_count = 0

    def act(self, state: np.ndarray, greedy: bool = False) -> Action:
        eps = 0.0 if greedy else epsilon_at(self.step_count, self.cfg)
        return select_action(self.q, state, eps, self.rng)

    def observe(self, state, action, reward, next_state, terminal) -> float | None:
        """Store a transition and learn; returns the TD loss if trained."""
        self.buffer.push(state, action, reward, next_state, terminal)
        self.step_count += 1
        loss = None
        if len(self.buffer) >= self.cfg.batch_size:
            loss = td_update(self.q, self.target, self.optimizer,
                             self.buffer.sample(self.cfg.batch_size), self.cfg.gamma)
        if self.step_count % self.cfg.target_sync_period == 0:
            sync_target(self.q, self.target)
        return loss

    def save(self, path) -> None:
        torch.save({"version": CHECKPOINT_VERSION, "config": asdict(self.cfg),
                    "state_dim": self.state_dim,
                    "q": self.q.state_dict()}, path)

    @classmethod
    def load(cls, path) -> "DQNLearner":
        blob = torch.load(path, weights_only=False)
        if blob.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {blob.get('version')}")
        learner = cls(LearnerConfig(**blob["config"]), blob["state_dim"])
        learner.q.load_state_dict(blob["q"])
        sync_target(learner.q, learner.target)
        return learner


def rule_based_policy(balance: float, soc_pct: float, tariff) -> Action:
    """Deterministic heuristic baseline.

    balance = generation - load (kWh); tariff is a TariffPeriod.
    """
    from .rewards import TariffPeriod

    if abs(balance) <= 0.1:
        return Action.SELF_CONSUMPTION
    if balance > 0:
        return Action.SELF_AND_CHARGE if soc_pct < 90 else Action.SELL
    if soc_pct >= 20:
        return Action.SELF_AND_DISCHARGE
    if tariff != TariffPeriod.P:
        return Action.CHARGE_AND_BUY if tariff == TariffPeriod.N else Action.BUY
    return Action.BUY
