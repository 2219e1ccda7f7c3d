"""Checkpoint persistence ("DQNC" binary format) and the transfer regimes.

Checkpoint layout, all little-endian:

    magic   4 bytes  "DQNC"
    version u32      (currently 1)
    meta    env_name (u16 length + utf8), action_count u32, global_step u64,
            config_hash (u16 length + utf8)
    count   u32      number of entries
    entry   name (u16 length + utf8), ndim u32, dims u32 * ndim,
            raw float32 values

Float payloads survive save/load bit-exactly; loading never writes to the
file. Transfer modes decide, per parameter, whether weights come from the
checkpoint or from a fresh seeded init, and which ones are frozen:

    WITHIN_FROZEN_NEW_HEAD    conv: checkpoint, frozen   head: fresh
    CROSS_FROZEN_HEAD_INIT    conv: checkpoint, frozen   head1: checkpoint,
                              head2: checkpoint rows resized to the new
                              action count
    CROSS_FROZEN_HEAD_SCRATCH conv: checkpoint, frozen   head: fresh
    END_TO_END                everything from the checkpoint (head2 resized
                              if needed), nothing frozen
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .agent import AgentConfig, DQNAgent
from .errors import CheckpointError, ConfigError

MAGIC = b"DQNC"
VERSION = 1

CONV_PARAMS = ("conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b")
HEAD_PARAMS = ("head1.w", "head1.b", "head2.w", "head2.b")


class TransferMode(enum.Enum):
    WITHIN_FROZEN_NEW_HEAD = "within_frozen_new_head"
    CROSS_FROZEN_HEAD_INIT = "cross_frozen_head_init"
    CROSS_FROZEN_HEAD_SCRATCH = "cross_frozen_head_scratch"
    END_TO_END = "end_to_end"

    @classmethod
    def parse(cls, text: str) -> "TransferMode":
        key = text.strip().lower()
        for mode in cls:
            if mode.value == key or mode.name.lower() == key:
                return mode
        raise ConfigError(
            f"unknown transfer mode {text!r}; expected one of "
            f"{[m.value for m in cls]}"
        )


@dataclass(frozen=True)
class CheckpointMeta:
    env_name: str
    action_count: int
    global_step: int
    config_hash: str


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ConfigError(f"string too long for checkpoint: {len(raw)} bytes")
    return struct.pack("<H", len(raw)) + raw


def save_checkpoint(net: nn.QNetwork, path, meta: CheckpointMeta):
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    chunks.append(_pack_str(meta.env_name))
    chunks.append(struct.pack("<IQ", meta.action_count, meta.global_step))
    chunks.append(_pack_str(meta.config_hash))
    names = net.param_names()
    chunks.append(struct.pack("<I", len(names)))
    for name in names:
        p = net.params[name]
        chunks.append(_pack_str(name))
        chunks.append(struct.pack("<I", p.ndim))
        chunks.append(struct.pack(f"<{p.ndim}I", *p.shape))
        chunks.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointError(
                f"{self.path}: truncated at offset {self.off} while reading {what}"
            )
        chunk = self.data[self.off : self.off + n]
        self.off += n
        return chunk

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]

    def string(self, what) -> str:
        n = self.u16(f"{what} length")
        return self.take(n, what).decode("utf-8")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], CheckpointMeta]:
    """Read named float32 tensors + metadata; validates magic/version/sizes."""
    r = _Reader(Path(path).read_bytes(), path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r} at offset 0")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(
            f"{path}: unsupported version {version} at offset 4"
        )
    env_name = r.string("env name")
    action_count = r.u32("action count")
    global_step = r.u64("global step")
    config_hash = r.string("config hash")
    meta = CheckpointMeta(env_name, action_count, global_step, config_hash)

    count = r.u32("entry count")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.string("entry name")
        ndim = r.u32(f"{name} ndim")
        if ndim > 8:
            raise CheckpointError(
                f"{path}: implausible ndim {ndim} for {name} at offset {r.off - 4}"
            )
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"{name} shape"))
        n_values = int(np.prod(shape)) if shape else 1
        raw = r.take(4 * n_values, f"{name} data")
        params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if r.off != len(r.data):
        raise CheckpointError(
            f"{path}: {len(r.data) - r.off} trailing bytes at offset {r.off}"
        )
    return params, meta


def resize_output_layer(head2_w: np.ndarray, head2_b: np.ndarray, a_new: int,
                        seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Adapt the output layer to a_new actions.

    Shared rows are copied verbatim (action indices align across the game
    catalog); extra rows get a fresh +-1/sqrt(fan_in) init with zero bias;
    surplus rows are dropped.
    """
    a_old, fan_in = head2_w.shape
    if a_old < 2 or a_new < 2:
        raise ConfigError(f"action counts must be >= 2, got {a_old}->{a_new}")
    w = np.zeros((a_new, fan_in), dtype=np.float32)
    b = np.zeros(a_new, dtype=np.float32)
    shared = min(a_old, a_new)
    w[:shared] = head2_w[:shared]
    b[:shared] = head2_b[:shared]
    if a_new > a_old:
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(fan_in)
        w[a_old:] = rng.uniform(-bound, bound,
                                size=(a_new - a_old, fan_in)).astype(np.float32)
    return w, b


def _validate_encoder(params: dict[str, np.ndarray], what: str):
    want_names = set(CONV_PARAMS + HEAD_PARAMS)
    if set(params) != want_names:
        raise ConfigError(
            f"{what}: parameter names {sorted(params)} do not match the "
            f"expected encoder+head layout"
        )
    probe = nn.QNetworkSpec.standard(actions=int(params["head2.w"].shape[0]))
    for name, shape in probe.param_shapes().items():
        if tuple(params[name].shape) != shape:
            raise ConfigError(
                f"{what}: {name} has shape {params[name].shape}, expected {shape}"
            )


def network_from_params(params: dict[str, np.ndarray],
                        frozen=frozenset()) -> nn.QNetwork:
    """Standard-architecture network from loaded checkpoint tensors."""
    _validate_encoder(params, "checkpoint")
    spec = nn.QNetworkSpec.standard(actions=int(params["head2.w"].shape[0]))
    return nn.QNetwork(spec, {n: p.copy() for n, p in params.items()}, frozen)


def build_transfer_agent(checkpoint, target_env, mode: TransferMode, seed: int,
                         cfg: AgentConfig = AgentConfig()) -> DQNAgent:
    """Assemble a DQNAgent for target_env from a checkpoint path per mode.

    The target network starts as a copy of the assembled policy; the
    optimizer always starts fresh.
    """
    params, meta = load_checkpoint(checkpoint)
    _validate_encoder(params, f"checkpoint {checkpoint}")
    a_old = int(params["head2.w"].shape[0])
    a_new = target_env.action_space()

    resizing = mode in (TransferMode.CROSS_FROZEN_HEAD_INIT, TransferMode.END_TO_END)
    if not resizing and a_old != a_new:
        raise ConfigError(
            f"mode {mode.name} does not resize the output layer: checkpoint "
            f"has {a_old} actions, env {target_env.spec.name} has {a_new}"
        )

    spec = nn.QNetworkSpec.standard(a_new)
    fresh = nn.init_network(spec, seed)
    assembled: dict[str, np.ndarray] = {}
    for name in CONV_PARAMS:
        assembled[name] = params[name].copy()

    if mode in (TransferMode.WITHIN_FROZEN_NEW_HEAD,
                TransferMode.CROSS_FROZEN_HEAD_SCRATCH):
        for name in HEAD_PARAMS:
            assembled[name] = fresh.params[name].copy()
    elif mode is TransferMode.CROSS_FROZEN_HEAD_INIT:
        assembled["head1.w"] = params["head1.w"].copy()
        assembled["head1.b"] = params["head1.b"].copy()
        assembled["head2.w"], assembled["head2.b"] = resize_output_layer(
            params["head2.w"], params["head2.b"], a_new, seed
        )
    else:  # END_TO_END
        assembled["head1.w"] = params["head1.w"].copy()
        assembled["head1.b"] = params["head1.b"].copy()
        if a_old == a_new:
            assembled["head2.w"] = params["head2.w"].copy()
            assembled["head2.b"] = params["head2.b"].copy()
        else:
            assembled["head2.w"], assembled["head2.b"] = resize_output_layer(
                params["head2.w"], params["head2.b"], a_new, seed
            )

    frozen = frozenset() if mode is TransferMode.END_TO_END else frozenset(CONV_PARAMS)
    policy = nn.QNetwork(spec, assembled, frozen)
    return DQNAgent(policy, cfg)
