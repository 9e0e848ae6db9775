"""
corrupt.py のテスト
"""

import numpy as np
import pytest

from missformer.config import CorruptionConfig, GeneratorConfig
from missformer.corrupt import (
    corrupt,
    corrupt_many,
    extend_with_missing,
    from_offsets,
    mask_tail_for_prediction,
    to_mode,
    to_offsets,
)
from missformer.errors import ModeError, ShapeError
from missformer.models import Trajectory
from missformer.trajgen import generate, make_rng


def test_identity_corruption(line_trajectory, clean):
    obs = corrupt(line_trajectory, clean)
    np.testing.assert_array_equal(obs.values, line_trajectory.positions)
    assert not obs.missing.any()
    assert obs.mode == "positions"


def test_all_missing_keeps_first_step(line_trajectory):
    obs = corrupt(line_trajectory, CorruptionConfig(missing_prob=1.0, protect_first=True))
    assert obs.missing.tolist() == [0] + [1] * (line_trajectory.k - 1)
    np.testing.assert_array_equal(obs.values[0], line_trajectory.positions[0])
    assert not obs.values[1:].any()


def test_all_missing_without_protection(line_trajectory):
    obs = corrupt(line_trajectory, CorruptionConfig(missing_prob=1.0, protect_first=False))
    assert obs.missing.all()


def test_empirical_missing_rate():
    traj = Trajectory(np.zeros((100000, 2)))
    obs = corrupt(traj, CorruptionConfig(missing_prob=0.1, protect_first=False, seed=3))
    assert obs.missing.mean() == pytest.approx(0.1, abs=0.005)


def test_noise_has_requested_spread():
    traj = Trajectory(np.zeros((50000, 2)))
    obs = corrupt(traj, CorruptionConfig(noise_std=0.3, seed=4))
    assert obs.values.std() == pytest.approx(0.3, rel=0.02)
    np.testing.assert_array_equal(obs.noise, obs.values)


def test_same_seed_same_noise_and_mask(object_corpus):
    cfg = CorruptionConfig(noise_std=0.5, missing_prob=0.2, seed=8)
    a = corrupt_many(object_corpus, cfg)
    b = corrupt_many(object_corpus, cfg)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)
        np.testing.assert_array_equal(x.missing, y.missing)


def test_corrupt_many_uses_per_sample_streams(object_corpus):
    cfg = CorruptionConfig(noise_std=0.5, missing_prob=0.2, seed=8)
    many = corrupt_many(object_corpus, cfg, stream=(3, 1))
    single = corrupt(object_corpus[5], cfg, make_rng(8, 3, 1, 5))
    np.testing.assert_array_equal(many[5].values, single.values)
    np.testing.assert_array_equal(many[5].missing, single.missing)


# ----------------------------------------
# オフセット
# ----------------------------------------
def test_offsets_constant_velocity(obs_factory):
    obs = obs_factory([[0, 0], [5, 0], [10, 0]], [0, 0, 0])
    off = to_offsets(obs)
    np.testing.assert_array_equal(off.values, [[0, 0], [5, 0], [5, 0]])
    assert off.missing.tolist() == [0, 0, 0]
    assert off.mode == "offsets"


def test_offsets_gap_touches_both_differences(obs_factory):
    obs = obs_factory([[0, 0], [5, 0], [10, 0], [15, 0], [20, 0]], [0, 0, 1, 0, 0])
    off = to_offsets(obs)
    # 0 始まりで 2 と 3（1 始まりで 3 と 4）
    assert off.missing.tolist() == [0, 0, 1, 1, 0]
    np.testing.assert_array_equal(off.values[2:4], 0.0)
    np.testing.assert_array_equal(off.values[4], [5, 0])


def test_path_integration_round_trip():
    traj = generate(GeneratorConfig.object_regime(seed=17), 1)[0]
    obs = corrupt(traj, CorruptionConfig())
    off = to_offsets(obs)
    restored = from_offsets(off, start=traj.positions[0])
    np.testing.assert_allclose(restored, traj.positions, atol=1e-12)


def test_truth_at_missing_steps_has_no_influence(rng):
    truth = Trajectory(np.cumsum(rng.normal(size=(20, 2)), axis=0))
    cfg = CorruptionConfig(noise_std=0.3, missing_prob=0.4, seed=21)
    a = corrupt(truth, cfg)
    hidden = np.flatnonzero(a.missing)
    assert hidden.size > 0

    positions = truth.positions.copy()
    positions[hidden] = rng.uniform(50.0, 100.0, size=(hidden.size, 2))
    b = corrupt(Trajectory(positions, truth.dt), cfg)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.missing, b.missing)
    np.testing.assert_array_equal(a.values[hidden], 0.0)

    off_a, off_b = to_offsets(a), to_offsets(b)
    np.testing.assert_array_equal(off_a.values, off_b.values)
    np.testing.assert_array_equal(off_a.missing, off_b.missing)
    # 欠測オフセットは (0, 0) として積算される
    np.testing.assert_array_equal(from_offsets(off_a), from_offsets(off_b))
    np.testing.assert_allclose(from_offsets(off_a), np.cumsum(off_a.values, axis=0), atol=1e-12)


def test_double_conversion_is_mode_error(obs_factory):
    off = to_offsets(obs_factory([[0, 0], [1, 1]], [0, 0]))
    with pytest.raises(ModeError):
        to_offsets(off)
    with pytest.raises(ModeError):
        from_offsets(obs_factory([[0, 0], [1, 1]], [0, 0]))
    with pytest.raises(ModeError):
        to_mode(off, "positions")


def test_to_mode_same_mode_is_identity(obs_factory):
    obs = obs_factory([[0, 0], [1, 1]], [0, 0])
    assert to_mode(obs, "positions") is obs


# ----------------------------------------
# 予測用の末尾マスク
# ----------------------------------------
def test_mask_tail_twelve_of_twenty(rng):
    traj = Trajectory(rng.normal(size=(20, 2)))
    masked = mask_tail_for_prediction(corrupt(traj, CorruptionConfig()), 12)
    assert masked.missing.tolist() == [0] * 8 + [1] * 12
    np.testing.assert_array_equal(masked.values[:8], traj.positions[:8])
    assert not masked.values[8:].any()


def test_mask_tail_zero_is_identity(line_trajectory):
    obs = corrupt(line_trajectory, CorruptionConfig())
    same = mask_tail_for_prediction(obs, 0)
    np.testing.assert_array_equal(same.values, obs.values)
    np.testing.assert_array_equal(same.missing, obs.missing)


def test_mask_tail_leaves_eight_observed_of_fourteen(rng):
    obs = corrupt(Trajectory(rng.normal(size=(14, 2))), CorruptionConfig())
    assert mask_tail_for_prediction(obs, 6).n_observed == 8


def test_mask_tail_too_long(line_trajectory):
    obs = corrupt(line_trajectory, CorruptionConfig())
    with pytest.raises(ShapeError):
        mask_tail_for_prediction(obs, line_trajectory.k)


def test_extend_with_missing(obs_factory):
    obs = obs_factory([[1, 2], [3, 4]], [0, 0])
    ext = extend_with_missing(obs, 3)
    assert ext.k == 5
    assert ext.missing.tolist() == [0, 0, 1, 1, 1]
    assert extend_with_missing(obs, 0) is obs
    with pytest.raises(ShapeError):
        extend_with_missing(obs, -1)
