"""Parallel sample generation: N env instances feeding one replay buffer.

Actors act on an immutable snapshot of the policy (swapped atomically by
sync_policy), never on the live network, so learner updates cannot tear a
forward pass. Deterministic mode multiplexes all instances on the calling
thread in round-robin order with one batched forward per round, which makes
the produced transition stream a pure function of (seeds, snapshot
sequence). Non-deterministic mode runs one thread per instance; transition
interleaving then depends on scheduling, but each instance's trajectory
still only depends on its own seed and the snapshot sequence.

Exploration decays per selected action via a counter owned by the vector
env, shared across instances in selection order.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .agent import epsilon_greedy_action
from .errors import ConfigError
from .nn import QNetwork
from .preprocess import PreprocessConfig, Preprocessor
from .replay import Transition

EPISODE_SEED_RANGE = 2**31


@dataclass(frozen=True)
class VecConfig:
    workers: int = 1
    sync_every: int = 4
    deterministic: bool = True

    def __post_init__(self):
        if self.workers < 1 or self.sync_every < 1:
            raise ConfigError("workers and sync_every must be >= 1")


@dataclass(frozen=True)
class PolicySnapshot:
    net: QNetwork  # private copy, treated as immutable
    version: int


@dataclass
class EpisodeStats:
    env_name: str
    reward: float
    duration_steps: int


class _Instance:
    def __init__(self, index: int, env, pre_cfg: PreprocessConfig, seed: int):
        self.index = index
        self.env = env
        self.pre = Preprocessor(env, pre_cfg)
        self.rng = np.random.default_rng(seed)
        self.state = None
        self.episode_reward = 0.0

    def begin_episode(self):
        seed = int(self.rng.integers(EPISODE_SEED_RANGE))
        self.state = self.pre.reset(seed)
        self.episode_reward = 0.0


class VectorEnv:
    """N instances of one game with per-instance derived seeds (base + i)."""

    def __init__(self, env_factory, cfg: VecConfig, base_seed: int,
                 pre_cfg: PreprocessConfig, eps_fn):
        self.cfg = cfg
        self.eps_fn = eps_fn
        self.instances = [
            _Instance(i, env_factory(), pre_cfg, base_seed + i)
            for i in range(cfg.workers)
        ]
        for inst in self.instances:
            inst.begin_episode()
        self.snapshot: PolicySnapshot | None = None
        self.actions_selected = 0
        self._counter_lock = threading.Lock()

    def sync_policy(self, agent):
        """Publish a copy of the current policy; workers see old or new,
        never a blend, because the snapshot object is immutable."""
        version = 0 if self.snapshot is None else self.snapshot.version + 1
        self.snapshot = PolicySnapshot(agent.policy.copy(), version)

    def collect(self, buffer, n_transitions: int, decision_hook=None) -> list[EpisodeStats]:
        """Generate exactly n_transitions transitions into buffer; returns
        stats of episodes that completed during the call."""
        if n_transitions < 1:
            raise ConfigError(f"n_transitions must be >= 1, got {n_transitions}")
        if self.snapshot is None:
            raise ConfigError("collect() before sync_policy()")
        if self.cfg.deterministic or self.cfg.workers == 1:
            return self._collect_serial(buffer, n_transitions, decision_hook)
        return self._collect_threaded(buffer, n_transitions, decision_hook)

    def _decide(self, inst: _Instance, snap: PolicySnapshot, q_fn, decision_hook):
        with self._counter_lock:
            t = self.actions_selected
            self.actions_selected += 1
        eps = self.eps_fn(t)
        action = epsilon_greedy_action(inst.rng, eps, snap.net.actions, q_fn)
        if decision_hook is not None:
            decision_hook(inst.index, snap.version, q_fn())
        return action

    def _step_instance(self, inst: _Instance, action: int, buffer,
                       completed: list, completed_lock=None):
        prev_state = inst.state
        next_state, reward, done = inst.pre.step(action)
        buffer.push(Transition(prev_state, action, reward, next_state, done))
        inst.episode_reward += reward
        inst.state = next_state
        if done:
            stats = EpisodeStats(inst.env.spec.name, inst.episode_reward,
                                 inst.env.episode_steps)
            if completed_lock is None:
                completed.append(stats)
            else:
                with completed_lock:
                    completed.append(stats)
            inst.begin_episode()

    def _collect_serial(self, buffer, n_transitions, decision_hook):
        completed: list[EpisodeStats] = []
        pushed = 0
        while pushed < n_transitions:
            snap = self.snapshot
            if len(self.instances) == 1:
                inst = self.instances[0]
                q = snap.net.forward(inst.state)
                action = self._decide(inst, snap, lambda: q, decision_hook)
                self._step_instance(inst, action, buffer, completed)
                pushed += 1
                continue
            states = np.stack([inst.state for inst in self.instances])
            q_batch = snap.net.forward(states)
            for i, inst in enumerate(self.instances):
                action = self._decide(inst, snap, lambda i=i: q_batch[i],
                                      decision_hook)
                self._step_instance(inst, action, buffer, completed)
                pushed += 1
                if pushed >= n_transitions:
                    break
        return completed

    def _collect_threaded(self, buffer, n_transitions, decision_hook):
        completed: list[EpisodeStats] = []
        completed_lock = threading.Lock()
        budget_lock = threading.Lock()
        remaining = [n_transitions]
        failures: dict[int, BaseException] = {}

        def run(inst: _Instance):
            try:
                while True:
                    with budget_lock:
                        if remaining[0] <= 0:
                            return
                        remaining[0] -= 1
                    snap = self.snapshot
                    action = self._decide(
                        inst, snap, lambda: snap.net.forward(inst.state),
                        decision_hook,
                    )
                    self._step_instance(inst, action, buffer, completed,
                                        completed_lock)
            except BaseException as exc:  # propagate with the instance id
                failures[inst.index] = exc

        threads = [threading.Thread(target=run, args=(inst,), daemon=True)
                   for inst in self.instances]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        if failures:
            idx = min(failures)
            raise RuntimeError(f"collect worker {idx} failed") from failures[idx]
        return completed
