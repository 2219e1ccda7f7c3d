"""The DQN learner: epsilon-greedy acting, Bellman targets against a target
network, Huber-loss Adam steps, and soft target updates after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError
from .preprocess import PreprocessConfig, Preprocessor
from .replay import InsufficientSamples, PrioritizedReplayBuffer, Transition

EVAL_EPSILON = 0.05


@dataclass(frozen=True)
class AgentConfig:
    batch_size: int = 128
    gamma: float = 0.99
    eps_start: float = 0.9
    eps_end: float = 0.05
    eps_decay: float = 1000.0
    tau: float = 0.005
    lr: float = 1e-4
    warmup_transitions: int = 1000
    train_every: int = 1

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0,1], got {self.gamma}")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ConfigError(
                f"need 0 <= eps_end <= eps_start <= 1, got "
                f"{self.eps_end}/{self.eps_start}"
            )
        # tau = 0 is allowed: it makes soft_update the identity, which the
        # no-op composition (tau=0, lr=0) relies on
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must be in [0,1], got {self.tau}")
        if self.lr < 0.0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1 or self.eps_decay <= 0 or self.train_every < 1:
            raise ConfigError("batch_size/eps_decay/train_every must be positive")
        if self.warmup_transitions < 0:
            raise ConfigError("warmup_transitions must be >= 0")


def epsilon(t: int, cfg: AgentConfig) -> float:
    """Exponential decay from eps_start to eps_end with time constant eps_decay."""
    return cfg.eps_end + (cfg.eps_start - cfg.eps_end) * math.exp(-t / cfg.eps_decay)


def epsilon_greedy_action(rng: np.random.Generator, eps: float, n_actions: int,
                          q_fn) -> int:
    """Random action with probability eps, else argmax of q_fn() with ties
    broken toward the lowest index. Consumes one rng.random() always and one
    rng.integers() only on the explore branch, so action streams are
    reproducible across implementations."""
    if rng.random() < eps:
        return int(rng.integers(n_actions))
    return int(np.argmax(q_fn()))


class DQNAgent:
    """Owns the policy/target network pair, optimizer state, and step count."""

    def __init__(self, policy: nn.QNetwork, cfg: AgentConfig = AgentConfig()):
        self.policy = policy
        self.target = policy.copy()
        self.cfg = cfg
        self.opt = nn.AdamState.for_params(policy.params, policy.frozen)
        self.t = 0

    def select_action(self, state, rng: np.random.Generator) -> int:
        eps = epsilon(self.t, self.cfg)
        self.t += 1
        return epsilon_greedy_action(
            rng, eps, self.policy.actions, lambda: self.policy.forward(state)
        )

    def compute_targets(self, batch: list[Transition]) -> np.ndarray:
        """y_i = r_i for terminal transitions, else r_i + gamma * max_a
        Q_target(s'_i, a). Plain arrays: nothing backpropagates through y."""
        rewards = np.array([t.reward for t in batch], dtype=np.float32)
        dones = np.array([t.done for t in batch], dtype=bool)
        next_states = np.stack([t.next_state for t in batch])
        q_next = self.target.forward(next_states)
        y = rewards + self.cfg.gamma * q_next.max(axis=1) * ~dones
        return y.astype(np.float32)

    def train_step(self, buffer, rng: np.random.Generator):
        """One sampled gradient step plus soft target update.

        Returns the scalar loss, or None while the buffer is below warmup
        (the documented skipped result).
        """
        needed = max(self.cfg.warmup_transitions, self.cfg.batch_size)
        if len(buffer) < needed:
            return None
        prioritized = isinstance(buffer, PrioritizedReplayBuffer)
        try:
            if prioritized:
                picks = buffer.sample_prioritized(self.cfg.batch_size, rng)
                indices = [i for i, _, _ in picks]
                batch = [t for _, t, _ in picks]
                weights = np.array([w for _, _, w in picks], dtype=np.float32)
            else:
                picks = buffer.sample_uniform(self.cfg.batch_size, rng)
                batch = [t for _, t in picks]
                weights = None
        except InsufficientSamples:
            return None

        states = np.stack([t.state for t in batch])
        actions = np.array([t.action for t in batch])
        y = self.compute_targets(batch)

        q, cache = self.policy.forward_cached(states)
        rows = np.arange(len(batch))
        pred = q[rows, actions]
        loss, dpred = nn.huber_loss(pred, y)
        if weights is not None:
            d = pred - y
            per_el = np.where(np.abs(d) <= 1.0, 0.5 * d * d, np.abs(d) - 0.5)
            loss = float(np.mean(weights * per_el))
            dpred = dpred * weights

        grad_q = np.zeros_like(q)
        grad_q[rows, actions] = dpred
        grads = self.policy.backward(cache, grad_q)
        if self.cfg.lr > 0.0:
            nn.adam_step(self.policy.params, grads, self.opt, self.cfg.lr)
        if prioritized:
            buffer.update_priorities(indices, np.abs(y - pred))
        self.soft_update()
        nn.assert_finite(np.array([loss]), "training loss")
        return loss

    def soft_update(self):
        """target <- tau * policy + (1 - tau) * target, every parameter
        (frozen ones included)."""
        tau = self.cfg.tau
        for name, p in self.policy.params.items():
            t = self.target.params[name]
            t *= 1.0 - tau
            t += tau * p

    def evaluate(self, env, episodes: int, seed: int,
                 pre_cfg: PreprocessConfig = PreprocessConfig()):
        """Greedy rollouts at the fixed evaluation epsilon; returns
        (mean_reward, mean_duration_steps). Touches no network or counter."""
        if episodes < 1:
            raise ConfigError(f"episodes must be >= 1, got {episodes}")
        if env.action_space() != self.policy.actions:
            raise ConfigError(
                f"env has {env.action_space()} actions but the network "
                f"outputs {self.policy.actions}"
            )
        total_reward = 0.0
        total_steps = 0
        for ep in range(episodes):
            rng = np.random.default_rng(seed + ep)
            pre = Preprocessor(env, pre_cfg)
            state = pre.reset(seed + ep)
            done = False
            while not done:
                action = epsilon_greedy_action(
                    rng, EVAL_EPSILON, self.policy.actions,
                    lambda: self.policy.forward(state),
                )
                state, reward, done = pre.step(action)
                total_reward += reward
            total_steps += env.episode_steps
        return total_reward / episodes, total_steps / episodes
