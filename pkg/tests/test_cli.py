import json

import numpy as np
import pytest

from qtransfer import nn
from qtransfer.cli import load_run_config, main
from qtransfer.errors import ConfigError
from qtransfer.metrics import read_log, read_segments
from qtransfer.transfer import load_checkpoint


def write_config(path, **kv):
    lines = ["# test config"]
    for k, v in kv.items():
        lines.append(f"{k} = {v}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def fast_keys(out_dir, **extra):
    base = dict(
        env="brick",
        out_dir=out_dir,
        episodes=3,
        seed=1,
        max_episode_steps=24,
        warmup_transitions=1_000_000,  # skip learning: accounting tests only
        batch_size=8,
    )
    base.update(extra)
    return base


def run_cli(command, cfg_path, *sets):
    argv = [command, "--config", str(cfg_path)]
    for s in sets:
        argv += ["--set", s]
    return main(argv)


def test_config_defaults_and_overrides(tmp_path):
    cfg_file = write_config(tmp_path / "c.cfg", env="brick", out_dir=tmp_path)
    cfg = load_run_config(cfg_file, ["episodes=7"], None)
    assert cfg["episodes"] == 7
    assert cfg["gamma"] == 0.99
    assert cfg["buffer"] == "uniform"
    assert cfg["deterministic"] is True


def test_unknown_key_is_hard_error(tmp_path):
    cfg_file = write_config(tmp_path / "c.cfg", env="brick", out_dir=tmp_path,
                            learning_rate="0.1")
    with pytest.raises(ConfigError):
        load_run_config(cfg_file, [], None)


def test_qt_deterministic_env_var_forces(tmp_path, monkeypatch):
    cfg_file = write_config(tmp_path / "c.cfg", env="brick", out_dir=tmp_path,
                            deterministic="false")
    monkeypatch.setenv("QT_DETERMINISTIC", "1")
    assert load_run_config(cfg_file, [], None)["deterministic"] is True


def test_train_writes_records_and_checkpoint(tmp_path):
    out = tmp_path / "run"
    cfg = write_config(tmp_path / "c.cfg", **fast_keys(out, episodes=5))
    assert run_cli("train", cfg) == 0
    header, records = read_log(out / "run.ndjson")
    assert header["config"]["env"] == "brick"
    assert len(records) == 5
    assert all(r.phase == "train" for r in records)
    assert [r.episode_index for r in records] == list(range(5))
    assert (out / "final.dqnc").exists()
    assert (out / "episodes.csv").exists()


def test_train_determinism_identical_reward_columns(tmp_path):
    out = tmp_path / "run"
    cfg = write_config(tmp_path / "c.cfg", **fast_keys(out, episodes=5))

    def run_once():
        assert run_cli("train", cfg) == 0
        recs = [json.loads(l)
                for l in (out / "run.ndjson").read_text().splitlines()[1:]]
        for r in recs:
            r.pop("wall_ms")
        return recs, (out / "final.dqnc").read_bytes()

    first_recs, first_ckpt = run_once()
    second_recs, second_ckpt = run_once()
    assert first_recs == second_recs
    assert first_ckpt == second_ckpt


def test_missing_env_exits_2(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", out_dir=tmp_path)
    assert run_cli("train", cfg) == 2


def test_unknown_key_exits_2(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", env="brick", out_dir=tmp_path,
                       bogus="1")
    assert run_cli("train", cfg) == 2


def test_missing_config_file_exits_3(tmp_path):
    assert main(["train", "--config", str(tmp_path / "absent.cfg")]) == 3


def test_train_rejects_transfer_keys(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", **fast_keys(tmp_path / "o"))
    assert run_cli("train", cfg, "transfer.mode=end_to_end") == 2


@pytest.fixture(scope="module")
def brick_checkpoint(tmp_path_factory):
    """Seed-initialized brick checkpoint produced through the CLI."""
    root = tmp_path_factory.mktemp("brickrun")
    cfg = write_config(root / "c.cfg", **fast_keys(root / "out", episodes=0))
    assert run_cli("train", cfg) == 0
    return root / "out" / "final.dqnc"


@pytest.fixture(scope="module")
def shooter7_checkpoint(tmp_path_factory):
    root = tmp_path_factory.mktemp("s7run")
    cfg = write_config(root / "c.cfg",
                       **fast_keys(root / "out", env="shooter7", episodes=0))
    assert run_cli("train", cfg) == 0
    return root / "out" / "final.dqnc"


def test_finetune_within_frozen_keeps_conv(tmp_path, brick_checkpoint):
    out = tmp_path / "ft"
    cfg = write_config(
        tmp_path / "c.cfg",
        **fast_keys(out, episodes=2, warmup_transitions=8, batch_size=8),
    )
    code = run_cli("finetune", cfg,
                   f"transfer.checkpoint={brick_checkpoint}",
                   "transfer.mode=within_frozen_new_head")
    assert code == 0
    src, _ = load_checkpoint(brick_checkpoint)
    final, _ = load_checkpoint(out / "final.dqnc")
    for name in ("conv1.w", "conv2.w", "conv3.w"):
        assert np.array_equal(final[name], src[name])
    header, records = read_log(out / "run.ndjson")
    assert header["transfer_mode"] == "within_frozen_new_head"
    assert "source_checkpoint_hash" in header
    assert len(records) == 2


def test_finetune_cross_seven_to_six(tmp_path, shooter7_checkpoint):
    out = tmp_path / "cross"
    cfg = write_config(
        tmp_path / "c.cfg",
        **fast_keys(out, env="shooter6", episodes=1),
    )
    code = run_cli("finetune", cfg,
                   f"transfer.checkpoint={shooter7_checkpoint}",
                   "transfer.mode=cross_frozen_head_init")
    assert code == 0
    final, meta = load_checkpoint(out / "final.dqnc")
    assert final["head2.w"].shape == (6, 512)


def test_finetune_end_to_end_zero_episodes_identity(tmp_path, brick_checkpoint):
    out = tmp_path / "e2e"
    cfg = write_config(tmp_path / "c.cfg", **fast_keys(out, episodes=0))
    code = run_cli("finetune", cfg,
                   f"transfer.checkpoint={brick_checkpoint}",
                   "transfer.mode=end_to_end")
    assert code == 0
    src, _ = load_checkpoint(brick_checkpoint)
    final, _ = load_checkpoint(out / "final.dqnc")
    for name in src:
        assert np.array_equal(final[name], src[name]), name


def test_finetune_missing_checkpoint_exits_2(tmp_path):
    cfg = write_config(tmp_path / "c.cfg", **fast_keys(tmp_path / "o"))
    assert run_cli("finetune", cfg, "transfer.mode=end_to_end",
                   f"transfer.checkpoint={tmp_path / 'absent.dqnc'}") == 2


def test_universal_overlap_guard(tmp_path):
    cfg = write_config(
        tmp_path / "c.cfg",
        **fast_keys(tmp_path / "o", env_list="shooter6,shooter6_holdout",
                    eval_env="shooter6_holdout"),
    )
    assert run_cli("universal", cfg) == 2


def test_universal_action_count_mismatch(tmp_path):
    cfg = write_config(
        tmp_path / "c.cfg",
        **fast_keys(tmp_path / "o", env_list="shooter6,shooter7",
                    eval_env="shooter6_holdout"),
    )
    assert run_cli("universal", cfg) == 2


def test_universal_end_to_end(tmp_path, capsys):
    out = tmp_path / "uni"
    cfg = write_config(
        tmp_path / "c.cfg",
        **fast_keys(out, env_list="shooter6", eval_env="shooter6_holdout",
                    episodes_per_env=2, eval_episodes=2),
    )
    del_keys = run_cli("universal", cfg)
    assert del_keys == 0
    assert read_segments(out / "run.ndjson") == ["shooter6", "shooter6_holdout"]
    header, records = read_log(out / "run.ndjson")
    train = [r for r in records if r.phase == "train"]
    evals = [r for r in records if r.phase == "eval"]
    assert len(train) == 2 and len(evals) == 2
    assert all(r.env_name == "shooter6_holdout" for r in evals)
    summary = capsys.readouterr().out.strip().splitlines()[-1]
    assert summary.startswith("mean_reward=")


def test_eval_records_and_summary(tmp_path, brick_checkpoint, capsys):
    out = tmp_path / "ev"
    cfg = write_config(tmp_path / "c.cfg",
                       **fast_keys(out, episodes=3))
    assert run_cli("eval", cfg, f"checkpoint={brick_checkpoint}") == 0
    captured = capsys.readouterr().out
    line = [l for l in captured.splitlines() if l.startswith("mean_reward=")][-1]
    parts = dict(p.split("=") for p in line.split())
    float(parts["mean_reward"])
    float(parts["mean_duration"])
    _, records = read_log(out / "eval.ndjson")
    assert len(records) == 3
    assert all(r.phase == "eval" for r in records)


def test_eval_deterministic_summary(tmp_path, brick_checkpoint, capsys):
    lines = []
    for name in ("x", "y"):
        cfg = write_config(tmp_path / f"{name}.cfg",
                           **fast_keys(tmp_path / name, episodes=2))
        assert run_cli("eval", cfg, f"checkpoint={brick_checkpoint}") == 0
        lines.append([l for l in capsys.readouterr().out.splitlines()
                      if l.startswith("mean_reward=")][-1])
    assert lines[0] == lines[1]


def test_eval_action_mismatch_exits_2(tmp_path, brick_checkpoint):
    cfg = write_config(tmp_path / "c.cfg",
                       **fast_keys(tmp_path / "o", env="shooter6"))
    assert run_cli("eval", cfg, f"checkpoint={brick_checkpoint}") == 2


def test_record_command(tmp_path, brick_checkpoint):
    out = tmp_path / "rec"
    cfg = write_config(tmp_path / "c.cfg",
                       **fast_keys(out, n_frames=6))
    assert run_cli("record", cfg, f"checkpoint={brick_checkpoint}") == 0
    frames = sorted((out / "frames").glob("*.ppm"))
    assert len(frames) == 6


def test_plot_command(tmp_path):
    out = tmp_path / "plotrun"
    cfg = write_config(tmp_path / "c.cfg", **fast_keys(out, episodes=4))
    assert run_cli("train", cfg) == 0
    assert run_cli("plot", cfg) == 0
    assert (out / "reward.svg").exists()
    assert run_cli("plot", cfg, "metric=duration") == 0
    assert (out / "duration.svg").exists()
