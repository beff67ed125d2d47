"""Checkpoint format: bit-exact round trips for every backend, header
validation, and the peek helpers."""

import numpy as np
import pytest

from sorb import checkpoint as ck, distval
from sorb.distval import (
    MLPEstimator,
    ScalarMLPEstimator,
    ScalarTabularEstimator,
    TabularEstimator,
    TrainConfig,
    make_encoder,
)
from sorb.ensemble import EnsembleConfig, ValueEnsemble
from sorb.gridworld import State, Transition, builtin_map


@pytest.fixture(scope="module")
def grid():
    return builtin_map("u_maze")


def _train_a_little(est, grid, steps=30):
    buf = distval.ReplayBuffer(capacity=128, encoder=getattr(est, "encoder", None))
    g = State(3, 1)
    for i in range(40):
        s = State(1 + i % 3, 1)
        nxt = State(min(s.x + 1, 3), 1)
        buf.add(grid, Transition(s, 2, nxt, g, -1.0, nxt == g, False))
    cfg = TrainConfig(num_bins=est.num_bins, batch_size=8)
    rng = np.random.default_rng(1)
    for _ in range(steps):
        est.train_step(buf, cfg, rng)
    return est


def _make(backend, grid, seed=3):
    if backend == "tabular":
        return TabularEstimator(grid, num_bins=8, seed=seed)
    if backend == "scalar_tabular":
        return ScalarTabularEstimator(grid, num_bins=8, seed=seed)
    enc = make_encoder("coords_patch" if backend == "mlp" else "coords",
                       grid.width, grid.height, 2)
    cls = MLPEstimator if backend == "mlp" else ScalarMLPEstimator
    return cls(grid, num_bins=8, encoder=enc, hidden=(16, 16), seed=seed)


@pytest.mark.parametrize("backend", ["tabular", "mlp", "scalar_tabular", "scalar_mlp"])
def test_estimator_round_trip_bit_exact(tmp_path, grid, backend):
    est = _train_a_little(_make(backend, grid), grid)
    path = tmp_path / f"{backend}.sorb"
    ck.save_estimator(est, path)
    first = path.read_bytes()
    loaded = ck.load_estimator(path, grid)
    assert ck.roundtrip_bytes(loaded) == first

    # predictions identical, both live and target networks
    xs = np.array([1, 2, 3, 4])
    ys = np.array([1, 1, 1, 1])
    for use_target in (False, True):
        np.testing.assert_array_equal(
            est.action_values_batch(xs, ys, ys, xs, use_target),
            loaded.action_values_batch(xs, ys, ys, xs, use_target),
        )


def test_ensemble_round_trip_bit_exact(tmp_path, grid):
    members = [_train_a_little(_make("tabular", grid, seed=s), grid) for s in (1, 2, 3)]
    ens = ValueEnsemble(members, EnsembleConfig(size=3, aggregation="mean"))
    path = tmp_path / "ens.sorb"
    ck.save_ensemble(ens, path)
    first = path.read_bytes()
    loaded = ck.load_ensemble(path, grid)
    assert loaded.config.size == 3
    assert loaded.config.aggregation == "mean"
    ck.save_ensemble(loaded, path)
    assert path.read_bytes() == first
    xs = np.array([1, 5, 3])
    ys = np.array([1, 5, 9])
    np.testing.assert_array_equal(
        ens.aggregate_distances(xs, ys, ys, xs),
        loaded.aggregate_distances(xs, ys, ys, xs),
    )


def test_bad_magic_rejected(tmp_path, grid):
    est = _make("tabular", grid)
    path = tmp_path / "x.sorb"
    ck.save_estimator(est, path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"JUNK"
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="magic"):
        ck.load_estimator(path, grid)


def test_unsupported_version_rejected(tmp_path, grid):
    est = _make("tabular", grid)
    path = tmp_path / "x.sorb"
    ck.save_estimator(est, path)
    blob = bytearray(path.read_bytes())
    blob[4] = 99  # little-endian u16 version field
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="version"):
        ck.load_estimator(path, grid)


def test_trailing_bytes_rejected(tmp_path, grid):
    est = _make("tabular", grid)
    path = tmp_path / "x.sorb"
    ck.save_estimator(est, path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ValueError, match="trailing"):
        ck.load_estimator(path, grid)


def test_truncated_payload_rejected(tmp_path, grid):
    est = _make("mlp", grid)
    path = tmp_path / "x.sorb"
    ck.save_estimator(est, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 16])
    with pytest.raises(ValueError, match="truncated"):
        ck.load_estimator(path, grid)


def test_wrong_map_size_rejected(tmp_path, grid):
    est = _make("tabular", grid)
    path = tmp_path / "x.sorb"
    ck.save_estimator(est, path)
    other = builtin_map("four_rooms")
    with pytest.raises(ValueError, match="map"):
        ck.load_estimator(path, other)


def test_read_map_name_and_is_ensemble(tmp_path, grid):
    est = _make("tabular", grid)
    p1 = tmp_path / "est.sorb"
    ck.save_estimator(est, p1, map_name="custom_name")
    assert ck.read_map_name(p1) == "custom_name"
    assert not ck.is_ensemble_file(p1)

    ens = ValueEnsemble([_make("tabular", grid, s) for s in (1, 2)], EnsembleConfig(size=2))
    p2 = tmp_path / "ens.sorb"
    ck.save_ensemble(ens, p2)
    assert ck.is_ensemble_file(p2)
    assert ck.read_map_name(p2) == grid.name


def test_mlp_architecture_survives_round_trip(tmp_path, grid):
    enc = make_encoder("coords_patch", grid.width, grid.height, 2)
    est = MLPEstimator(grid, num_bins=12, encoder=enc, hidden=(24, 8), seed=9)
    path = tmp_path / "arch.sorb"
    ck.save_estimator(est, path)
    loaded = ck.load_estimator(path, grid)
    assert loaded.num_bins == 12
    assert [p.shape for p in loaded.params] == [p.shape for p in est.params]
    assert loaded.encoder_kind == "coords_patch"
    assert loaded.encoder.radius == 2
