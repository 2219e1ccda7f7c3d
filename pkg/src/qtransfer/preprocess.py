"""Observation pipeline: grayscale, area resize, frame skip, 4-frame stack,
optional consecutive-frame differencing.

States handed to the network are float32 arrays of shape (4, 84, 84) with
values in [0, 1], or [-1, 1] on planes 1..3 when differencing is enabled.
Stack arrays are never mutated in place, so returned states stay valid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

TARGET_HW = 84
STACK_DEPTH = 4

# ITU-R 601 luma; pinned so identical frames give bit-identical states
GRAY_R = 0.299
GRAY_G = 0.587
GRAY_B = 0.114


@dataclass(frozen=True)
class PreprocessConfig:
    frame_skip: int = 4
    stack_depth: int = STACK_DEPTH
    difference_frames: bool = False

    def __post_init__(self):
        if self.frame_skip < 1:
            raise ConfigError(f"frame_skip must be >= 1, got {self.frame_skip}")
        if self.stack_depth != STACK_DEPTH:
            raise ConfigError("the network input is hard-wired to 4 stacked frames")

    @property
    def low(self) -> float:
        return -1.0 if self.difference_frames else 0.0


def grayscale(rgb: np.ndarray) -> np.ndarray:
    """RGB uint8 frame -> luma in [0,1], float32."""
    f = rgb.astype(np.float32)
    y = (GRAY_R * f[..., 0] + GRAY_G * f[..., 1] + GRAY_B * f[..., 2]) / 255.0
    return y.astype(np.float32)


def resize(gray: np.ndarray, target: int = TARGET_HW) -> np.ndarray:
    """Area-average downscale to target x target; identity when already there.

    Each output pixel is the mean of its source box; box edges come from
    integer division so uneven sizes are handled without interpolation.
    """
    h, w = gray.shape
    if h < 1 or w < 1:
        raise ConfigError(f"cannot resize empty image {gray.shape}")
    g = np.asarray(gray, dtype=np.float32)
    if (h, w) == (target, target):
        return g
    out = _box_mean(g, target, axis=0)
    out = _box_mean(out, target, axis=1)
    return out.astype(np.float32)


def _box_mean(arr: np.ndarray, target: int, axis: int) -> np.ndarray:
    n = arr.shape[axis]
    edges = (np.arange(target) * n) // target
    sums = np.add.reduceat(arr.astype(np.float64), edges, axis=axis)
    counts = np.maximum(np.diff(np.append(edges, n)), 1)
    shape = [1, 1]
    shape[axis] = target
    return sums / counts.reshape(shape)


def skip_step(env, action: int, k: int):
    """Repeat action for k env ticks (stopping at done); returns the last
    frame, the summed reward, and the done flag."""
    if k < 1:
        raise ConfigError(f"frame skip must be >= 1, got {k}")
    total = 0.0
    for _ in range(k):
        res = env.step(action)
        total += res.reward
        if res.done:
            break
    return res.frame, total, res.done


def initial_stack(frame: np.ndarray) -> np.ndarray:
    """Episode-start stack: four copies of the first preprocessed frame."""
    return np.repeat(frame[None], STACK_DEPTH, axis=0)


def push_frame(stack: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """Drop the oldest plane, append the new frame (index 0 = oldest)."""
    out = np.empty_like(stack)
    out[:-1] = stack[1:]
    out[-1] = frame
    return out


def difference(stack: np.ndarray) -> np.ndarray:
    """Plane i>0 becomes frame_i - frame_{i-1}; plane 0 stays raw.

    Widens the value range of planes 1..3 to [-1, 1].
    """
    out = stack.copy()
    out[1:] -= stack[:-1]
    return out


class Preprocessor:
    """Binds one env instance to the observation pipeline and frame stack."""

    def __init__(self, env, cfg: PreprocessConfig = PreprocessConfig()):
        self.env = env
        self.cfg = cfg
        self._stack = None

    def _observe(self, frame: np.ndarray) -> np.ndarray:
        return resize(grayscale(frame))

    def reset(self, seed: int) -> np.ndarray:
        frame = self.env.reset(seed)
        self._stack = initial_stack(self._observe(frame))
        return self.state()

    def step(self, action: int):
        """Frame-skipped env step; returns (state, summed_reward, done)."""
        frame, reward, done = skip_step(self.env, action, self.cfg.frame_skip)
        self._stack = push_frame(self._stack, self._observe(frame))
        return self.state(), reward, done

    def state(self) -> np.ndarray:
        if self._stack is None:
            raise RuntimeError("preprocessor used before reset()")
        s = difference(self._stack) if self.cfg.difference_frames else self._stack
        assert s.shape == (STACK_DEPTH, TARGET_HW, TARGET_HW)
        assert s.min() >= self.cfg.low - 1e-6 and s.max() <= 1.0 + 1e-6
        return s
