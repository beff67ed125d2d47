"""Config schema, CSV round trips, evaluation-pair sampling, threading
controls, CLI exit codes, and end-to-end run determinism."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from sorb import harness
from sorb.harness import ConfigError, EvalRecord
from sorb.gridworld import builtin_map


# ---------------------------------------------------------------------------
# config schema


def test_default_config_loads_without_file():
    cfg = harness.load_config(None)
    assert cfg.map.name == "four_rooms"
    assert cfg.maxdist == 3.0
    assert cfg.search_buffer_size == 1000
    assert cfg.train_buffer_capacity == 100_000
    assert cfg.train.num_bins == 20
    assert cfg.train.batch_size == 64
    assert cfg.ensemble.size == 3
    assert cfg.eval.distances == [5, 10, 20, 30]


def test_map_dependent_defaults():
    big = harness.config_from_dict({"map": {"name": "large_four_rooms"}})
    assert big.train.num_bins == 40
    assert big.episode.max_steps == 300
    assert big.eval.distances == [20, 40, 60, 80, 100]

    multi = harness.config_from_dict(
        {"map": {"name": "random_maze", "train_seeds": [1, 2], "heldout_seeds": [3]}}
    )
    assert multi.model.backend == "mlp"
    assert multi.model.encoder == "coords_patch"
    assert multi.eval.distances == [5, 10]


def test_learning_rate_default_tracks_backend():
    tab = harness.config_from_dict({"model": {"backend": "tabular"}})
    mlp = harness.config_from_dict({"model": {"backend": "mlp"}})
    assert tab.train.learning_rate == pytest.approx(0.1)
    assert mlp.train.learning_rate == pytest.approx(1e-4)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown config keys"):
        harness.config_from_dict({"maxdist_typo": 3})
    with pytest.raises(ConfigError, match="unknown TrainConfig keys"):
        harness.config_from_dict({"train": {"lr": 0.1}})
    with pytest.raises(ConfigError, match="unknown MapConfig keys"):
        harness.config_from_dict({"map": {"nme": "u_maze"}})


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        harness.config_from_dict({"maxdist": -1})
    with pytest.raises(ConfigError):
        harness.config_from_dict({"seeds": []})
    with pytest.raises(ConfigError):
        harness.config_from_dict({"model": {"backend": "transformer"}})
    with pytest.raises(ConfigError):
        harness.config_from_dict({"train": {"discount": 0.99}})
    # multi-maze needs a function approximator
    with pytest.raises(ConfigError, match="network backend"):
        harness.config_from_dict(
            {"map": {"name": "random_maze", "train_seeds": [1], "heldout_seeds": [2]},
             "model": {"backend": "tabular"}}
        )


def test_config_round_trips_through_dict():
    cfg = harness.config_from_dict(
        {"map": {"name": "u_maze"}, "train": {"total_env_steps": 5000},
         "ensemble": {"size": 2, "aggregation": "mean"}, "seeds": [4, 5]}
    )
    again = harness.config_from_dict(harness.config_to_dict(cfg))
    assert again == cfg


# ---------------------------------------------------------------------------
# sampling and CSV plumbing


def test_sample_pair_at_distance_exact():
    grid = builtin_map("u_maze")
    rng = np.random.default_rng(0)
    from oracles import bfs_grid

    for d in (3, 7, 15):
        for _ in range(10):
            s, g = harness.sample_pair_at_distance(grid, d, rng)
            assert bfs_grid(grid.occupancy, s.x, s.y)[g.y, g.x] == d


def test_sample_eval_pairs_fixed_by_seed():
    grid = builtin_map("u_maze")
    a = harness.sample_eval_pairs(grid, [5, 10], 6, seed=3)
    b = harness.sample_eval_pairs(grid, [5, 10], 6, seed=3)
    assert a == b
    c = harness.sample_eval_pairs(grid, [5, 10], 6, seed=4)
    assert a != c


def test_eval_csv_round_trip(tmp_path):
    recs = [
        EvalRecord("sorb", 0, 5, 0.9, 6.25),
        EvalRecord("greedy_only", 0, 5, 0.4, None),
        EvalRecord("random", 1, 10, 0.0, None),
    ]
    path = tmp_path / "eval.csv"
    harness.write_eval_csv(path, recs)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "method,seed,distance,success_rate,mean_steps"
    assert lines[2].endswith(",")  # None mean_steps -> empty field
    back = harness.read_eval_csv(path)
    assert [(r["method"], r["seed"], r["distance"]) for r in back] == [
        ("sorb", 0, 5), ("greedy_only", 0, 5), ("random", 1, 10)
    ]
    assert back[0]["mean_steps"] == pytest.approx(6.25)
    assert back[1]["mean_steps"] is None


def test_sweep_csv_layout(tmp_path):
    recs = [EvalRecord("sorb", 0, 5, 1.0, 5.5, axis="maxdist", setting=2)]
    path = tmp_path / "sweep.csv"
    harness.write_sweep_csv(path, recs)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "axis,setting,method,seed,distance,success_rate,mean_steps"
    assert lines[1].startswith("maxdist,2,sorb,0,5,")


def test_success_svg_written(tmp_path):
    recs = [EvalRecord(m, s, d, 0.5, 3.0)
            for m in ("sorb", "greedy_only") for s in (0, 1) for d in (5, 10)]
    path = tmp_path / "success.svg"
    harness.success_svg_from_records(path, recs, [5, 10], "test curves")
    text = path.read_text()
    assert "<svg" in text
    assert "test curves" in text


# ---------------------------------------------------------------------------
# threading helpers


def test_thread_count_honors_env(monkeypatch):
    monkeypatch.setenv("SORB_THREADS", "2")
    assert harness.thread_count() == 2
    monkeypatch.setenv("SORB_THREADS", "1")
    assert harness.thread_count() == 1
    monkeypatch.delenv("SORB_THREADS")
    assert harness.thread_count() >= 1


def test_run_ordered_preserves_order(monkeypatch):
    monkeypatch.setenv("SORB_THREADS", "4")
    out = harness.run_ordered([lambda i=i: i * i for i in range(10)])
    assert out == [i * i for i in range(10)]


# ---------------------------------------------------------------------------
# CLI + end-to-end determinism (tiny budgets)

_TINY = {
    "map": {"name": "u_maze"},
    "model": {"backend": "tabular"},
    "train": {"total_env_steps": 1500, "random_warmup_steps": 200},
    "ensemble": {"size": 2},
    "eval": {"distances": [3], "trials_per_distance": 4},
    "search_buffer_size": 50,
    "seeds": [0],
    "probe_every": 10_000,
}


def _cli(*argv, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "sorb.cli", *argv],
        capture_output=True, text=True, cwd=cwd,
        env={**os.environ, "SORB_THREADS": "1"},
    )


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps({**_TINY, "out_dir": str(root / "run")}))
    r = _cli("train", "--config", str(cfg_path))
    assert r.returncode == 0, r.stderr
    return root, cfg_path


def test_cli_train_outputs(tiny_run):
    root, _ = tiny_run
    out = root / "run"
    assert (out / "config.json").exists()
    assert (out / "ensemble_seed0.sorb").exists()
    assert (out / "search_buffer_seed0.csv").exists()
    assert (out / "loss_seed0.csv").exists()
    loss_lines = (out / "loss_seed0.csv").read_text().strip().splitlines()
    assert loss_lines[0] == "step,loss,probe_success"


def test_cli_eval_exit0(tiny_run):
    root, cfg_path = tiny_run
    r = _cli("eval", "--config", str(cfg_path), "--checkpoint", str(root / "run"),
             "--out", str(root / "eval"))
    assert r.returncode == 0, r.stderr
    assert (root / "eval" / "eval.csv").exists()
    assert (root / "eval" / "success.svg").exists()


def test_cli_distcheck_exit0(tiny_run):
    root, cfg_path = tiny_run
    r = _cli("distcheck", "--config", str(cfg_path), "--checkpoint", str(root / "run"),
             "--out", str(root / "dc"))
    assert r.returncode == 0, r.stderr
    lines = (root / "dc" / "distcheck.csv").read_text().strip().splitlines()
    assert lines[0] == "seed,oracle_distance,predicted_distance,success,steps"


def test_cli_sweep_exit0(tiny_run, tmp_path):
    root, _ = tiny_run
    cfg = {**_TINY, "sweep": {"axis": "aggregation"}}
    cfg_path = tmp_path / "sweep.json"
    cfg_path.write_text(json.dumps(cfg))
    r = _cli("sweep", "--config", str(cfg_path), "--checkpoint", str(root / "run"),
             "--out", str(tmp_path / "sw"))
    assert r.returncode == 0, r.stderr
    lines = (tmp_path / "sw" / "sweep.csv").read_text().strip().splitlines()
    assert lines[0] == "axis,setting,method,seed,distance,success_rate,mean_steps"
    assert any(line.startswith("aggregation,mean,") for line in lines[1:])


def test_cli_config_error_is_exit2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _cli("train", "--config", str(bad)).returncode == 2

    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"bogus_key": 1}))
    assert _cli("train", "--config", str(unknown)).returncode == 2

    # sweep without an axis in config
    empty = tmp_path / "empty.json"
    empty.write_text("{}")
    r = _cli("sweep", "--config", str(empty), "--checkpoint", str(tmp_path))
    assert r.returncode == 2

    # eval without --checkpoint
    assert _cli("eval", "--config", str(empty)).returncode == 2


def test_cli_io_error_is_exit3(tiny_run, tmp_path):
    root, cfg_path = tiny_run
    # checkpoint directory that does not exist
    r = _cli("eval", "--config", str(cfg_path), "--checkpoint", str(tmp_path / "nope"),
             "--out", str(tmp_path / "o1"))
    assert r.returncode == 3, r.stderr
    # corrupt checkpoint payload
    bad_dir = tmp_path / "bad_ckpt"
    bad_dir.mkdir()
    src = (root / "run" / "ensemble_seed0.sorb").read_bytes()
    (bad_dir / "ensemble_seed0.sorb").write_bytes(src[:40])
    (bad_dir / "search_buffer_seed0.csv").write_text(
        (root / "run" / "search_buffer_seed0.csv").read_text()
    )
    (bad_dir / "config.json").write_text((root / "run" / "config.json").read_text())
    r = _cli("eval", "--config", str(cfg_path), "--checkpoint", str(bad_dir),
             "--out", str(tmp_path / "o2"))
    assert r.returncode == 3, r.stderr
    # missing map file
    r = _cli("train", "--config", str(cfg_path), "--map", str(tmp_path / "ghost.map"))
    assert r.returncode in (2, 3)


def test_cli_usage_error_exit2():
    r = _cli("not_a_command")
    assert r.returncode == 2


def test_cli_seed_flag_overrides_config(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({**_TINY, "seeds": [0, 1], "out_dir": str(tmp_path / "r")}))
    r = _cli("train", "--config", str(cfg_path), "--seed", "7")
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "r" / "ensemble_seed7.sorb").exists()
    assert not (tmp_path / "r" / "ensemble_seed0.sorb").exists()


def test_identical_config_and_seed_reproduce_bitwise(tmp_path):
    # the determinism contract the acceptance gate also checks, at toy scale
    outs = []
    for name in ("a", "b"):
        cfg = harness.config_from_dict({**_TINY, "out_dir": str(tmp_path / name)})
        harness.cmd_train(cfg, progress=False)
        outs.append(tmp_path / name)
    a, b = outs
    for fname in ("ensemble_seed0.sorb", "search_buffer_seed0.csv", "loss_seed0.csv"):
        assert (a / fname).read_bytes() == (b / fname).read_bytes(), fname


def test_different_seed_changes_checkpoint(tmp_path):
    cfg_a = harness.config_from_dict({**_TINY, "out_dir": str(tmp_path / "a")})
    cfg_b = harness.config_from_dict({**_TINY, "seeds": [1], "out_dir": str(tmp_path / "b")})
    harness.cmd_train(cfg_a, progress=False)
    harness.cmd_train(cfg_b, progress=False)
    a = (tmp_path / "a" / "ensemble_seed0.sorb").read_bytes()
    b = (tmp_path / "b" / "ensemble_seed1.sorb").read_bytes()
    assert a != b
