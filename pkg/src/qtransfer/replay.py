"""Experience storage: FIFO ring buffer and a proportional prioritized
variant backed by a sum tree.

States are stored as 8-bit quantized planes (1/255 of the configured value
range) and dequantized on sampling; the quantization is lossy but exact for
values that are multiples of the step, e.g. one-hot vectors. All public
operations are serialized behind one lock so vectorized producers and the
sampling learner observe a consistent buffer.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

PRIORITY_EPSILON = 1e-2
DEFAULT_ALPHA = 0.6
DEFAULT_BETA = 0.4
DEFAULT_CAPACITY = 50_000


class InsufficientSamples(Exception):
    """Fewer stored transitions than the requested batch."""


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


def _as_rng(rng_or_seed) -> np.random.Generator:
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return np.random.default_rng(rng_or_seed)


class ReplayBuffer:
    """FIFO ring of transitions with uniform with-replacement sampling."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY,
                 state_range: tuple[float, float] = (0.0, 1.0)):
        if capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {capacity}")
        lo, hi = state_range
        if not hi > lo:
            raise ConfigError(f"bad state range {state_range}")
        self.capacity = capacity
        self._lo = float(lo)
        self._scale = (float(hi) - float(lo)) / 255.0
        self._slots: list = [None] * capacity
        self._cursor = 0
        self._size = 0
        self._insert_count = 0
        self._slot_stamp = [0] * capacity
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return self._size

    def _quantize(self, state: np.ndarray) -> np.ndarray:
        q = np.rint((state - self._lo) / self._scale)
        return np.clip(q, 0, 255).astype(np.uint8)

    def _dequantize(self, q: np.ndarray) -> np.ndarray:
        return (q.astype(np.float32) * self._scale + self._lo).astype(np.float32)

    def push(self, t: Transition) -> int:
        """Store a transition, evicting the oldest at capacity; returns the slot."""
        packed = (self._quantize(t.state), int(t.action), float(t.reward),
                  self._quantize(t.next_state), bool(t.done))
        with self._lock:
            idx = self._cursor
            self._slots[idx] = packed
            self._insert_count += 1
            self._slot_stamp[idx] = self._insert_count
            self._cursor = (self._cursor + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)
            self._after_push(idx)
            return idx

    def _after_push(self, idx: int):
        pass

    def _get(self, idx: int) -> Transition:
        s, a, r, ns, d = self._slots[idx]
        return Transition(self._dequantize(s), a, r, self._dequantize(ns), d)

    def iter_transitions(self):
        """Snapshot of stored transitions in insertion order (oldest first)."""
        with self._lock:
            if self._size < self.capacity:
                order = range(self._size)
            else:
                order = [(self._cursor + i) % self.capacity for i in range(self.capacity)]
            return [self._get(i) for i in order]

    def sample_uniform(self, batch: int, rng_seed) -> list[tuple[int, Transition]]:
        """batch independent uniform draws with replacement, seed-reproducible."""
        rng = _as_rng(rng_seed)
        with self._lock:
            if self._size < batch:
                raise InsufficientSamples(f"{self._size} stored < batch {batch}")
            idx = rng.integers(0, self._size, size=batch)
            return [(int(i), self._get(int(i))) for i in idx]


class SumTree:
    """Fixed-capacity binary sum tree with prefix-sum descent."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        size = 1
        while size < capacity:
            size *= 2
        self._base = size
        self._tree = np.zeros(2 * size, dtype=np.float64)

    def update(self, idx: int, value: float):
        pos = self._base + idx
        delta = value - self._tree[pos]
        while pos >= 1:
            self._tree[pos] += delta
            pos //= 2

    def get(self, idx: int) -> float:
        return float(self._tree[self._base + idx])

    def total(self) -> float:
        return float(self._tree[1])

    def find(self, prefix: float) -> int:
        """Leaf index whose cumulative range contains prefix."""
        pos = 1
        while pos < self._base:
            left = 2 * pos
            if prefix <= self._tree[left]:
                pos = left
            else:
                prefix -= self._tree[left]
                pos = left + 1
        return pos - self._base

    def leaf_sum(self) -> float:
        return float(self._tree[self._base:].sum())


class PrioritizedReplayBuffer(ReplayBuffer):
    """Proportional prioritized replay: P(i) = p_i^alpha / sum p^alpha.

    New transitions enter at the running maximum priority (1.0 while empty);
    sampling is stratified over the cumulative priority mass and returns
    importance weights (N*P)^-beta normalized by the batch maximum.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY,
                 state_range: tuple[float, float] = (0.0, 1.0),
                 alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA):
        if not 0.0 <= alpha <= 1.0 or not 0.0 <= beta <= 1.0:
            raise ConfigError(f"alpha/beta must be in [0,1], got {alpha}/{beta}")
        super().__init__(capacity, state_range)
        self.alpha = alpha
        self.beta = beta
        self.max_priority = 1.0
        self._tree = SumTree(capacity)
        self._sampled_stamp: dict[int, int] = {}
        self.stale_updates = 0

    def _after_push(self, idx: int):
        self._tree.update(idx, self.max_priority ** self.alpha)

    def priority(self, idx: int) -> float:
        """Transformed priority p^alpha currently stored for a slot."""
        return self._tree.get(idx)

    def sample_prioritized(self, batch: int, rng_seed):
        """Stratified draws; returns a list of (index, Transition, is_weight)."""
        rng = _as_rng(rng_seed)
        with self._lock:
            if self._size < batch:
                raise InsufficientSamples(f"{self._size} stored < batch {batch}")
            total = self._tree.total()
            segment = total / batch
            picks = []
            for i in range(batch):
                u = segment * i + rng.random() * segment
                idx = min(self._tree.find(u), self._size - 1)
                picks.append(idx)
                self._sampled_stamp[idx] = self._slot_stamp[idx]
            n = self._size
            probs = np.array([self._tree.get(i) / total for i in picks])
            weights = (n * probs) ** -self.beta
            weights /= weights.max()
            return [
                (int(i), self._get(int(i)), float(w))
                for i, w in zip(picks, weights)
            ]

    def update_priorities(self, indices, td_errors):
        """p_i = |td_error| + epsilon; entries overwritten since they were
        sampled are silently skipped and counted in stale_updates."""
        with self._lock:
            for idx, td in zip(indices, td_errors):
                seen = self._sampled_stamp.get(idx)
                if seen is not None and seen != self._slot_stamp[idx]:
                    self.stale_updates += 1
                    continue
                p = abs(float(td)) + PRIORITY_EPSILON
                self.max_priority = max(self.max_priority, p)
                self._tree.update(idx, p ** self.alpha)

    def tree_consistent(self, rel_tol: float = 1e-4) -> bool:
        root = self._tree.total()
        leaves = self._tree.leaf_sum()
        return abs(root - leaves) <= rel_tol * max(abs(leaves), 1e-12)
