"""Run logging, plotting conventions, and frame recording.

RunLog files are NDJSON: one header line followed by one line per episode,
flushed at every record boundary so a crashed run still parses. The plotted
moving average is a 100-point trailing mean with the first 99 points pinned
to zero.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .agent import EVAL_EPSILON, epsilon_greedy_action
from .errors import ConfigError
from .preprocess import PreprocessConfig, initial_stack, grayscale, push_frame, resize

MOVING_AVERAGE_WINDOW = 100

CSV_HEADER = "episode,reward,duration_steps,mean_loss,wall_ms,phase"


@dataclass
class EpisodeRecord:
    episode_index: int
    reward: float
    duration_steps: int
    mean_loss: float
    wall_ms: int
    env_name: str
    phase: str  # train | eval

    def __post_init__(self):
        if self.duration_steps < 1:
            raise ConfigError(f"duration_steps must be >= 1, got {self.duration_steps}")
        if self.phase not in ("train", "eval"):
            raise ConfigError(f"phase must be train or eval, got {self.phase!r}")
        if not np.isfinite(self.mean_loss):
            raise ConfigError("mean_loss must be finite (0 when no train steps ran)")


class RunLog:
    """Append-only NDJSON episode log with a mandatory header line."""

    def __init__(self, path, header: dict):
        self.path = Path(path)
        self._fh = open(self.path, "w", encoding="utf-8")
        self._fh.write(json.dumps({"header": header}) + "\n")
        self._fh.flush()
        self.records: list[EpisodeRecord] = []

    def append(self, record: EpisodeRecord):
        self._fh.write(json.dumps(asdict(record)) + "\n")
        self._fh.flush()
        self.records.append(record)

    def mark_segment(self, env_name: str):
        """Write a segment marker (used between multi-env training phases)."""
        self._fh.write(json.dumps({"segment": env_name}) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path) -> tuple[dict, list[EpisodeRecord]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ConfigError(f"{path}: empty run log")
    head = json.loads(lines[0])
    if "header" not in head:
        raise ConfigError(f"{path}: first line is not a run-log header")
    records = []
    for line in lines[1:]:
        if not line:
            continue
        obj = json.loads(line)
        if "segment" in obj:
            continue
        records.append(EpisodeRecord(**obj))
    return head["header"], records


def read_segments(path) -> list[str]:
    """Segment-marker env names, in file order."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines()[1:]:
        if line:
            obj = json.loads(line)
            if "segment" in obj:
                out.append(obj["segment"])
    return out


def moving_average(values, window: int = MOVING_AVERAGE_WINDOW) -> list[float]:
    """Trailing mean over `window` points, zero until the window fills."""
    n = len(values)
    out = [0.0] * n
    if n < window:
        return out
    c = np.concatenate([[0.0], np.cumsum(np.asarray(values, dtype=np.float64))])
    for i in range(window - 1, n):
        out[i] = float((c[i + 1] - c[i + 1 - window]) / window)
    return out


def export_csv(records: list[EpisodeRecord], path):
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.episode_index},{r.reward!r},{r.duration_steps},"
            f"{r.mean_loss!r},{r.wall_ms},{r.phase}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


PLOT_METRICS = {
    "reward": ("reward", "Rewards vs Episode"),
    "duration": ("duration_steps", "Duration vs Episode"),
    "loss": ("mean_loss", "Loss vs Episode"),
}


def emit_plot(records: list[EpisodeRecord], metric: str, path):
    """Line chart (SVG) of the raw series plus its 100-window moving average."""
    if metric not in PLOT_METRICS:
        raise ConfigError(f"unknown plot metric {metric!r}; "
                          f"choose from {sorted(PLOT_METRICS)}")
    field, title = PLOT_METRICS[metric]
    values = [getattr(r, field) for r in records]
    ma = moving_average(values)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(values, color="tab:blue", linewidth=0.8, label=metric)
    ax.plot(ma, color="tab:orange", linewidth=1.5, label="moving average (100)")
    ax.set_xlabel("Episode")
    ax.set_ylabel(metric)
    ax.set_title(title)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def write_ppm(path, frame: np.ndarray):
    """Binary PPM (P6) for an RGB uint8 frame."""
    if frame.ndim != 3 or frame.shape[2] != 3 or frame.dtype != np.uint8:
        raise ConfigError(f"write_ppm expects HxWx3 uint8, got {frame.shape} {frame.dtype}")
    h, w = frame.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(frame.tobytes())


def write_pgm(path, gray: np.ndarray):
    """Binary PGM (P5) for a grayscale uint8 image."""
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ConfigError(f"write_pgm expects HxW uint8, got {gray.shape} {gray.dtype}")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def record_frames(env, checkpoint_path, n_frames: int, out_dir, seed: int = 0,
                  pre_cfg: PreprocessConfig = PreprocessConfig()) -> list[Path]:
    """Greedy rollout dumping every rendered frame as frame_%06d.ppm.

    The policy acts at the frame-skip cadence; all skipped frames are dumped
    too. Auto-resets if the episode ends early.
    """
    from .transfer import load_checkpoint, network_from_params

    params, meta = load_checkpoint(checkpoint_path)
    net = network_from_params(params)
    if net.actions != env.action_space():
        raise ConfigError(
            f"checkpoint has {net.actions} actions but env "
            f"{env.spec.name} has {env.action_space()}"
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths: list[Path] = []
    episode = 0

    frame = env.reset(seed + episode)
    stack = initial_stack(resize(grayscale(frame)))
    while len(paths) < n_frames:
        action = epsilon_greedy_action(rng, EVAL_EPSILON, net.actions,
                                       lambda: net.forward(stack))
        done = False
        for _ in range(pre_cfg.frame_skip):
            res = env.step(action)
            p = out / f"frame_{len(paths):06d}.ppm"
            write_ppm(p, res.frame)
            paths.append(p)
            done = res.done
            if done or len(paths) >= n_frames:
                break
        stack = push_frame(stack, resize(grayscale(res.frame)))
        if done:
            episode += 1
            frame = env.reset(seed + episode)
            stack = initial_stack(resize(grayscale(frame)))
    return paths
