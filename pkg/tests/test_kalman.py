"""
kalman.py のテスト（等速度カルマンフィルタ + RTS 平滑化）
"""

import numpy as np
import pytest

from missformer.config import CorruptionConfig
from missformer.corrupt import corrupt, mask_tail_for_prediction, to_offsets
from missformer.errors import ModeError
from missformer.evaluation import ade, evaluate
from missformer.kalman import KalmanBaseline, make_filter
from missformer.models import Trajectory


def test_filter_matrices():
    kf = make_filter(0.4, 1.0, 0.2)
    assert kf.F.shape == (4, 4) and kf.F[0, 1] == pytest.approx(0.4)
    np.testing.assert_array_equal(kf.H, [[1, 0, 0, 0], [0, 0, 1, 0]])
    np.testing.assert_allclose(kf.R, np.eye(2) * 0.04)
    assert kf.Q.shape == (4, 4)


def test_constant_velocity_is_tracked(line_trajectory):
    obs = corrupt(line_trajectory, CorruptionConfig())
    est = KalmanBaseline().estimate(obs)
    assert est.shape == (line_trajectory.k, 2)
    assert ade(est, line_trajectory) < 0.1


def test_missing_steps_are_filled(line_trajectory):
    obs = corrupt(line_trajectory, CorruptionConfig())
    values, missing = obs.values.copy(), obs.missing.copy()
    values[[3, 4]] = 0.0
    missing[[3, 4]] = 1
    gappy = type(obs)(values, missing, dt=obs.dt)
    est = KalmanBaseline().estimate(gappy)
    np.testing.assert_allclose(est[[3, 4]], line_trajectory.positions[[3, 4]], atol=0.5)


def test_tail_is_extrapolated():
    truth = Trajectory(np.stack([np.arange(20) * 0.5, np.arange(20) * 0.25], axis=1), dt=0.4)
    obs = mask_tail_for_prediction(corrupt(truth, CorruptionConfig()), 12)
    est = KalmanBaseline().estimate(obs)
    assert ade(est, truth, slice(8, 20)) < 0.5


def test_smoothing_reduces_noise(object_corpus):
    cfg = CorruptionConfig(noise_std=1.0, seed=3)
    raw = [corrupt(t, cfg) for t in object_corpus]
    noisy = np.mean([ade(o.values, t) for o, t in zip(raw, object_corpus)])
    baseline = KalmanBaseline(process_var=3.0, measurement_std=1.0)
    smoothed = evaluate(baseline, object_corpus, cfg, task="filtering")
    assert smoothed.ade < noisy


def test_rejects_offsets(obs_factory):
    with pytest.raises(ModeError):
        KalmanBaseline().estimate(to_offsets(obs_factory([[0, 0], [1, 0], [2, 0]], [0, 0, 0])))
