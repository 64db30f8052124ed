"""End-to-end checks of the command line interface.

Everything goes through cli.main(argv) in-process so exit codes and stdout
are observable without spawning subprocesses.
"""

import dataclasses

import numpy as np
import pytest

from segreward import cli
from segreward import data as datamod
from segreward import model as modelmod
from segreward import train as trainmod
from segreward.errors import ConfigurationError


@pytest.fixture(scope="module")
def demo_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "chain2.jsonl"
    rc = cli.main(["demos", "--task", "chain2", "--episodes", "6",
                   "--out", str(path), "--seed", "11"])
    assert rc == 0
    return str(path)


def test_demos_writes_loadable_dataset(tmp_path, capsys):
    out = tmp_path / "d.jsonl"
    rc = cli.main(["demos", "--task", "chain2", "--episodes", "4",
                   "--out", str(out), "--seed", "3"])
    assert rc == 0
    assert "wrote 4 episodes" in capsys.readouterr().out
    ds = datamod.load_dataset(str(out))
    assert len(ds.trajectories) == 4
    assert ds.m == 2
    assert all(t.expert for t in ds.trajectories)


def test_unknown_task_exits_2(tmp_path, capsys):
    rc = cli.main(["demos", "--task", "leaning-tower", "--episodes", "1",
                   "--out", str(tmp_path / "x.jsonl")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_missing_dataset_exits_2(tmp_path, capsys):
    rc = cli.main(["train-reward", "--data", str(tmp_path / "absent.jsonl"),
                   "--out", str(tmp_path / "m.json")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_malformed_env_seed_exits_2(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SEGREWARD_SEED", "pi")
    rc = cli.main(["demos", "--task", "chain2", "--episodes", "1",
                   "--out", str(tmp_path / "x.jsonl")])
    assert rc == 2
    assert "SEGREWARD_SEED" in capsys.readouterr().err


def test_env_seed_equivalent_to_flag(tmp_path, monkeypatch):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    c = tmp_path / "c.jsonl"
    assert cli.main(["demos", "--task", "chain2", "--episodes", "3",
                     "--out", str(a), "--seed", "9"]) == 0
    monkeypatch.setenv("SEGREWARD_SEED", "9")
    assert cli.main(["demos", "--task", "chain2", "--episodes", "3",
                     "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    # an explicit flag beats the environment
    monkeypatch.setenv("SEGREWARD_SEED", "4")
    assert cli.main(["demos", "--task", "chain2", "--episodes", "3",
                     "--out", str(c), "--seed", "9"]) == 0
    assert a.read_bytes() == c.read_bytes()


def test_kv_file_parsing(tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("# comment\n\nlearning_rate = 0.5\nbatch_size=8\n")
    parsed = cli._read_kv_file(str(cfg))
    assert parsed == {"learning_rate": "0.5", "batch_size": "8"}

    bad = tmp_path / "bad.txt"
    bad.write_text("just words\n")
    with pytest.raises(ConfigurationError):
        cli._read_kv_file(str(bad))


def test_kv_config_coercion():
    cfg = cli._config_from_kv(trainmod.TrainConfig, {
        "learning_rate": "0.5", "use_cont": "false", "j_set": "2,4",
        "batch_size": "8", "temperature": "0.25",
    })
    assert cfg.learning_rate == 0.5
    assert cfg.use_cont is False
    assert cfg.j_set == (2, 4)
    assert cfg.batch_size == 8
    assert cfg.temperature == 0.25


@pytest.mark.parametrize("overrides", [
    {"no_such_option": "1"},
    {"use_cont": "maybe"},
    {"batch_size": "3.5"},
    {"learning_rate": "0"},  # rejected by config validation itself
])
def test_kv_config_rejections(overrides):
    with pytest.raises(ConfigurationError):
        cli._config_from_kv(trainmod.TrainConfig, overrides)


def _tiny_train_args(demo_file, tmp_path, tag):
    cfg = tmp_path / f"cfg_{tag}.txt"
    cfg.write_text("warmup_steps=5\nbatch_size=8\nnum_canonical=4\nj_set=1,3\n")
    out = tmp_path / f"model_{tag}.json"
    metrics = tmp_path / f"metrics_{tag}.csv"
    argv = ["train-reward", "--data", demo_file, "--out", str(out),
            "--steps", "25", "--metrics", str(metrics),
            "--config", str(cfg), "--seed", "2"]
    return argv, out, metrics


def test_train_reward_deterministic_outputs(demo_file, tmp_path, capsys):
    argv1, out1, met1 = _tiny_train_args(demo_file, tmp_path, "one")
    argv2, out2, met2 = _tiny_train_args(demo_file, tmp_path, "two")
    assert cli.main(argv1) == 0
    assert cli.main(argv2) == 0
    assert "saved checkpoint" in capsys.readouterr().out
    assert out1.read_bytes() == out2.read_bytes()
    assert met1.read_bytes() == met2.read_bytes()

    lines = met1.read_text().strip().split("\n")
    assert lines[0] == ",".join(trainmod.METRICS_COLUMNS)
    assert len(lines) == 1 + 25

    params = modelmod.load_checkpoint(str(out1))
    assert params.config.m == 2
    assert params.normalize_factor > 0
    assert params.thresholds is not None and params.thresholds.shape == (2,)


def test_train_reward_no_agg_ablation(demo_file, tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("warmup_steps=2\nbatch_size=8\nnum_canonical=4\nj_set=1,3\n")
    out = tmp_path / "noagg.json"
    rc = cli.main(["train-reward", "--data", demo_file, "--out", str(out),
                   "--steps", "5", "--config", str(cfg), "--seed", "2",
                   "--ablate", "no-agg"])
    assert rc == 0
    params = modelmod.load_checkpoint(str(out))
    assert not params.config.use_aggregator
    assert not any(n.startswith("agg") for n in params.arrays)


def test_eval_epic_prints_distances(demo_file, tmp_path, capsys):
    argv, out, _ = _tiny_train_args(demo_file, tmp_path, "epic")
    assert cli.main(argv) == 0
    capsys.readouterr()
    rc = cli.main(["eval-epic", "--model", str(out), "--data", demo_file,
                   "--samples", "2", "--coverage", "32", "--seed", "1"])
    assert rc == 0
    text = capsys.readouterr().out
    assert "subtask 0:" in text and "subtask 1:" in text
    assert "average:" in text and "random-init" in text


def test_train_rl_requires_model_for_learned(tmp_path, capsys):
    rc = cli.main(["train-rl", "--task", "chain2", "--reward", "learned",
                   "--out", str(tmp_path / "c.csv")])
    assert rc == 2
    assert "--model" in capsys.readouterr().err


def test_train_rl_sparse_writes_curve(tmp_path, capsys):
    cfg = tmp_path / "rl.txt"
    cfg.write_text("num_envs=4\nrollout_length=8\neval_every=512\neval_episodes=2\n")
    out = tmp_path / "curve.csv"
    rc = cli.main(["train-rl", "--task", "chain2", "--reward", "sparse",
                   "--steps", "1024", "--config", str(cfg),
                   "--out", str(out), "--seed", "5"])
    assert rc == 0
    assert "final success rate" in capsys.readouterr().out
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "step,success_rate,mean_completed_subtasks,seed"
    assert lines[-1].split(",")[0] == "1024"
    assert all(ln.split(",")[3] == "5" for ln in lines[1:])


def test_report_aggregates_and_warns(tmp_path, capsys):
    runs = tmp_path / "runs"
    runs.mkdir()
    (runs / "curve_a.csv").write_text(
        "step,success_rate,mean_completed_subtasks,seed\n"
        "100,0.5,1.5,0\n200,0.75,2.0,0\n")
    (runs / "broken.csv").write_text("step,success\n1,2,3\n")
    (runs / "strange.csv").write_text("alpha,beta\n1,2\n")
    (runs / "notes.txt").write_text("ignored entirely\n")
    out = tmp_path / "report.md"
    combined = tmp_path / "combined.csv"

    rc = cli.main(["report", "--runs", str(runs), "--out", str(out),
                   "--csv", str(combined)])
    captured = capsys.readouterr()
    assert rc == 0
    assert "skipping broken.csv" in captured.err
    assert "skipping strange.csv" in captured.err

    text = out.read_text()
    assert "| curve_a.csv | 200 | 0.75 | 2.0 | 0 |" in text
    comb = combined.read_text().strip().split("\n")
    assert comb[0] == "source,step,success_rate,mean_completed_subtasks,seed"
    assert comb[1] == "curve_a.csv,100,0.5,1.5,0"
    assert len(comb) == 3

    # regenerating the report must be byte-identical
    first = out.read_bytes()
    assert cli.main(["report", "--runs", str(runs), "--out", str(out)]) == 0
    assert out.read_bytes() == first


def test_report_empty_directory(tmp_path):
    runs = tmp_path / "runs"
    runs.mkdir()
    out = tmp_path / "report.md"
    assert cli.main(["report", "--runs", str(runs), "--out", str(out)]) == 0
    assert "No recognized CSV files found." in out.read_text()


def test_report_runs_must_be_directory(tmp_path, capsys):
    rc = cli.main(["report", "--runs", str(tmp_path / "nowhere"),
                   "--out", str(tmp_path / "r.md")])
    assert rc == 2
    assert "directory" in capsys.readouterr().err
