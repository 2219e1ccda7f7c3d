"""Command-line entry point: train, finetune, universal, eval, record, plot.

Configuration is a flat UTF-8 key=value file (# comments). Unknown keys are
a hard error; every key has a default except env and out_dir. --set key=value
overrides individual entries and --out overrides out_dir. QT_DETERMINISTIC=1
forces deterministic collection regardless of the config.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical
failure (NaN/Inf detected).
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, envs, nn
from .agent import AgentConfig, DQNAgent, epsilon
from .errors import ConfigError, NumericalError
from .metrics import EpisodeRecord, RunLog, emit_plot, export_csv, read_log, \
    record_frames
from .preprocess import PreprocessConfig
from .replay import PrioritizedReplayBuffer, ReplayBuffer
from .transfer import CheckpointMeta, TransferMode, build_transfer_agent, \
    load_checkpoint, network_from_params, save_checkpoint
from .vecenv import VecConfig, VectorEnv

CHECKPOINT_EVERY = 500

TRUE_WORDS = {"true", "1", "yes", "on"}
FALSE_WORDS = {"false", "0", "no", "off"}


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in TRUE_WORDS:
        return True
    if low in FALSE_WORDS:
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (caster, default); None default means "required, no default"
SCHEMA = {
    "env": (str, None),
    "out_dir": (str, None),
    "episodes": (int, 100),
    "seed": (int, 0),
    "batch_size": (int, 128),
    "gamma": (float, 0.99),
    "eps_start": (float, 0.9),
    "eps_end": (float, 0.05),
    "eps_decay": (float, 1000.0),
    "tau": (float, 0.005),
    "lr": (float, 1e-4),
    "warmup_transitions": (int, 1000),
    "train_every": (int, 1),
    "buffer": (str, "uniform"),
    "capacity": (int, 50_000),
    "workers": (int, 1),
    "sync_every": (int, 4),
    "deterministic": (_bool, True),
    "frame_skip": (int, 4),
    "difference_frames": (_bool, False),
    "max_episode_steps": (int, 3000),
    "transfer.mode": (str, ""),
    "transfer.checkpoint": (str, ""),
    "env_list": (str, ""),
    "episodes_per_env": (int, 100),
    "eval_env": (str, ""),
    "eval_episodes": (int, 100),
    "checkpoint": (str, ""),
    "n_frames": (int, 100),
    "metric": (str, "reward"),
    "log": (str, ""),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def snapshot(self) -> dict:
        return dict(sorted(self.values.items(), key=lambda kv: kv[0]))

    def config_hash(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in self.snapshot().items())
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def require(self, key: str):
        if self.values.get(key) in (None, ""):
            raise ConfigError(f"config key {key!r} is required")
        return self.values[key]


def parse_config_lines(lines, source: str) -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = text.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def load_run_config(config_path, overrides, out_override=None) -> RunConfig:
    raw: dict[str, str] = {}
    if config_path:
        path = Path(config_path)
        raw.update(parse_config_lines(path.read_text(encoding="utf-8").splitlines(),
                                      str(path)))
    for item in overrides or []:
        raw.update(parse_config_lines([item], "--set"))
    if out_override:
        raw["out_dir"] = str(out_override)

    values: dict = {}
    for key, text in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        caster, _ = SCHEMA[key]
        try:
            values[key] = caster(text)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"config key {key!r}: bad value {text!r} ({exc})")
    for key, (_, default) in SCHEMA.items():
        values.setdefault(key, default)

    if os.environ.get("QT_DETERMINISTIC") == "1":
        values["deterministic"] = True
    return RunConfig(values)


def agent_config(cfg: RunConfig) -> AgentConfig:
    return AgentConfig(
        batch_size=cfg["batch_size"], gamma=cfg["gamma"],
        eps_start=cfg["eps_start"], eps_end=cfg["eps_end"],
        eps_decay=cfg["eps_decay"], tau=cfg["tau"], lr=cfg["lr"],
        warmup_transitions=cfg["warmup_transitions"],
        train_every=cfg["train_every"],
    )


def preprocess_config(cfg: RunConfig) -> PreprocessConfig:
    return PreprocessConfig(frame_skip=cfg["frame_skip"],
                            difference_frames=cfg["difference_frames"])


def vec_config(cfg: RunConfig) -> VecConfig:
    return VecConfig(workers=cfg["workers"], sync_every=cfg["sync_every"],
                     deterministic=cfg["deterministic"])


def build_buffer(cfg: RunConfig):
    state_range = (-1.0, 1.0) if cfg["difference_frames"] else (0.0, 1.0)
    kind = cfg["buffer"]
    if kind == "uniform":
        return ReplayBuffer(cfg["capacity"], state_range)
    if kind == "prioritized":
        return PrioritizedReplayBuffer(cfg["capacity"], state_range)
    raise ConfigError(f"buffer must be uniform or prioritized, got {kind!r}")


def env_factory(cfg: RunConfig, name: str):
    if name not in envs.ENV_CATALOG:
        raise ConfigError(f"unknown env {name!r}; choose from {sorted(envs.ENV_CATALOG)}")
    steps = cfg["max_episode_steps"]
    return lambda: envs.make_env(name, max_episode_steps=steps)


def out_dir_of(cfg: RunConfig) -> Path:
    out = Path(cfg.require("out_dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def checkpoint_meta(cfg: RunConfig, env_name: str, agent: DQNAgent) -> CheckpointMeta:
    return CheckpointMeta(env_name, agent.policy.actions, agent.t,
                          cfg.config_hash())


def train_segment(agent: DQNAgent, cfg: RunConfig, env_name: str, buffer,
                  log: RunLog, episodes: int, out: Path,
                  episode_offset: int = 0, seed_offset: int = 0) -> int:
    """Train until `episodes` episodes complete; returns the next episode
    index. Writes periodic checkpoints every CHECKPOINT_EVERY episodes."""
    a_cfg = agent_config(cfg)
    v_cfg = vec_config(cfg)
    seed = cfg["seed"] + seed_offset
    vec = VectorEnv(env_factory(cfg, env_name), v_cfg, base_seed=seed,
                    pre_cfg=preprocess_config(cfg),
                    eps_fn=lambda t: epsilon(t, a_cfg))
    vec.sync_policy(agent)
    train_rng = np.random.default_rng(seed + 777_000_001)

    completed = 0
    episode_index = episode_offset
    pending_losses: list[float] = []
    transitions_owed = 0
    steps_since_sync = 0
    last_wall = time.monotonic()

    while completed < episodes:
        stats = vec.collect(buffer, v_cfg.workers)
        agent.t = vec.actions_selected
        transitions_owed += v_cfg.workers
        while transitions_owed >= a_cfg.train_every:
            transitions_owed -= a_cfg.train_every
            loss = agent.train_step(buffer, train_rng)
            if loss is not None:
                pending_losses.append(loss)
                steps_since_sync += 1
                if steps_since_sync >= v_cfg.sync_every:
                    vec.sync_policy(agent)
                    steps_since_sync = 0
        for s in stats:
            now = time.monotonic()
            mean_loss = float(np.mean(pending_losses)) if pending_losses else 0.0
            pending_losses.clear()
            log.append(EpisodeRecord(
                episode_index=episode_index,
                reward=s.reward,
                duration_steps=s.duration_steps,
                mean_loss=mean_loss,
                wall_ms=int((now - last_wall) * 1000),
                env_name=s.env_name,
                phase="train",
            ))
            last_wall = now
            episode_index += 1
            completed += 1
            if completed % CHECKPOINT_EVERY == 0 and completed < episodes:
                save_checkpoint(agent.policy, out / f"ckpt_ep{episode_index:06d}.dqnc",
                                checkpoint_meta(cfg, env_name, agent))
            if completed >= episodes:
                break
    return episode_index


def run_header(cfg: RunConfig, extra: dict | None = None) -> dict:
    header = {
        "config": cfg.snapshot(),
        "config_hash": cfg.config_hash(),
        "code_version": __version__,
        "seed": cfg["seed"],
    }
    if extra:
        header.update(extra)
    return header


def _write_outputs(log: RunLog, out: Path):
    export_csv(log.records, out / "episodes.csv")


def cmd_train(cfg: RunConfig) -> int:
    if cfg["transfer.mode"] or cfg["transfer.checkpoint"]:
        raise ConfigError("train does not accept transfer.* keys; use finetune")
    env_name = cfg.require("env")
    out = out_dir_of(cfg)
    factory = env_factory(cfg, env_name)
    actions = factory().action_space()
    agent = DQNAgent(nn.init_network(nn.QNetworkSpec.standard(actions), cfg["seed"]),
                     agent_config(cfg))
    buffer = build_buffer(cfg)
    with RunLog(out / "run.ndjson", run_header(cfg)) as log:
        train_segment(agent, cfg, env_name, buffer, log, cfg["episodes"], out)
        _write_outputs(log, out)
    save_checkpoint(agent.policy, out / "final.dqnc",
                    checkpoint_meta(cfg, env_name, agent))
    return 0


def cmd_finetune(cfg: RunConfig) -> int:
    env_name = cfg.require("env")
    mode = TransferMode.parse(cfg.require("transfer.mode"))
    ckpt_path = Path(cfg.require("transfer.checkpoint"))
    if not ckpt_path.exists():
        raise ConfigError(f"transfer.checkpoint {ckpt_path} does not exist")
    out = out_dir_of(cfg)
    factory = env_factory(cfg, env_name)
    agent = build_transfer_agent(ckpt_path, factory(), mode, cfg["seed"],
                                 agent_config(cfg))
    source_hash = hashlib.sha256(ckpt_path.read_bytes()).hexdigest()[:16]
    header = run_header(cfg, {"transfer_mode": mode.value,
                              "source_checkpoint": str(ckpt_path),
                              "source_checkpoint_hash": source_hash})
    buffer = build_buffer(cfg)
    with RunLog(out / "run.ndjson", header) as log:
        train_segment(agent, cfg, env_name, buffer, log, cfg["episodes"], out)
        _write_outputs(log, out)
    save_checkpoint(agent.policy, out / "final.dqnc",
                    checkpoint_meta(cfg, env_name, agent))
    return 0


def _eval_records(agent: DQNAgent, cfg: RunConfig, env_name: str, episodes: int,
                  log: RunLog, episode_offset: int):
    env = env_factory(cfg, env_name)()
    total_r = 0.0
    total_d = 0
    pre_cfg = preprocess_config(cfg)
    for i in range(episodes):
        start = time.monotonic()
        r, d = agent.evaluate(env, 1, cfg["seed"] + i, pre_cfg)
        log.append(EpisodeRecord(
            episode_index=episode_offset + i,
            reward=r,
            duration_steps=int(d),
            mean_loss=0.0,
            wall_ms=int((time.monotonic() - start) * 1000),
            env_name=env_name,
            phase="eval",
        ))
        total_r += r
        total_d += d
    mean_r = total_r / episodes
    mean_d = total_d / episodes
    print(f"mean_reward={mean_r:.6g} mean_duration={mean_d:.6g}")
    return mean_r, mean_d


def cmd_universal(cfg: RunConfig) -> int:
    names = [n.strip() for n in cfg.require("env_list").split(",") if n.strip()]
    if not names:
        raise ConfigError("env_list must name at least one env")
    holdout = cfg.require("eval_env")
    if holdout in names:
        raise ConfigError(f"holdout env {holdout!r} must not appear in env_list")
    counts = {name: env_factory(cfg, name)().action_space()
              for name in names + [holdout]}
    if len(set(counts.values())) != 1:
        raise ConfigError(f"action counts differ across envs: {counts}")
    actions = counts[names[0]]

    out = out_dir_of(cfg)
    agent = DQNAgent(nn.init_network(nn.QNetworkSpec.standard(actions), cfg["seed"]),
                     agent_config(cfg))
    buffer = build_buffer(cfg)
    with RunLog(out / "run.ndjson", run_header(cfg, {"env_list": names,
                                                     "eval_env": holdout})) as log:
        offset = 0
        for i, name in enumerate(names):
            log.mark_segment(name)
            offset = train_segment(agent, cfg, name, buffer, log,
                                   cfg["episodes_per_env"], out,
                                   episode_offset=offset, seed_offset=1000 * i)
        log.mark_segment(holdout)
        _eval_records(agent, cfg, holdout, cfg["eval_episodes"], log, offset)
        _write_outputs(log, out)
    save_checkpoint(agent.policy, out / "final.dqnc",
                    checkpoint_meta(cfg, ",".join(names), agent))
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    env_name = cfg.require("env")
    ckpt = cfg.require("checkpoint")
    out = out_dir_of(cfg)
    params, meta = load_checkpoint(ckpt)
    net = network_from_params(params)
    env = env_factory(cfg, env_name)()
    if net.actions != env.action_space():
        raise ConfigError(
            f"checkpoint has {net.actions} actions but env {env_name} has "
            f"{env.action_space()}"
        )
    agent = DQNAgent(net, agent_config(cfg))
    with RunLog(out / "eval.ndjson", run_header(cfg, {"checkpoint": str(ckpt)})) as log:
        _eval_records(agent, cfg, env_name, cfg["episodes"], log, 0)
        export_csv(log.records, out / "eval.csv")
    return 0


def cmd_record(cfg: RunConfig) -> int:
    env_name = cfg.require("env")
    ckpt = cfg.require("checkpoint")
    out = out_dir_of(cfg)
    env = env_factory(cfg, env_name)()
    files = record_frames(env, ckpt, cfg["n_frames"], out / "frames",
                          seed=cfg["seed"], pre_cfg=preprocess_config(cfg))
    print(f"wrote {len(files)} frames to {out / 'frames'}")
    return 0


def cmd_plot(cfg: RunConfig) -> int:
    out = out_dir_of(cfg)
    log_path = cfg["log"] or (out / "run.ndjson")
    if not Path(log_path).exists():
        raise ConfigError(f"run log {log_path} does not exist")
    _, records = read_log(log_path)
    metric = cfg["metric"]
    target = out / f"{metric}.svg"
    emit_plot(records, metric, target)
    print(f"wrote {target}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "finetune": cmd_finetune,
    "universal": cmd_universal,
    "eval": cmd_eval,
    "record": cmd_record,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qtransfer",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config entry (repeatable)")
        p.add_argument("--out", default=None, help="override out_dir")
    args = parser.parse_args(argv)

    try:
        cfg = load_run_config(args.config, args.set, args.out)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
