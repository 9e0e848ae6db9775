"""
trajgen.py
==========

合成の真値軌跡を生成するモジュール。

物体レジーム（1 fps, 速度 U(5, 10) m/s）と歩行者レジーム
（2.5 fps, 速度 N(1.38, 0.37^2) m/s）の 2 種類を扱う。

各ステップで:
    速度   += 加速度 * dt   （0 未満にはしない）
    方位   += 方位変化
    位置   += 速度 * dt * (cos 方位, sin 方位)
加速度と方位変化はステップごとに引き直す。
"""

from __future__ import annotations

import logging
from typing import List, Optional, Sequence

import numpy as np

from .config import GeneratorConfig
from .errors import ConfigError
from .models import Trajectory

logger = logging.getLogger(__name__)

# 正規分布の初速が 0 以下になったときの引き直し上限
_MAX_RESAMPLE = 1000

MOTION_CLASSES = ("constant_velocity", "curved", "accelerating")


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """(seed, ワーカー番号, ...) から派生した独立な乱数列"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(s) for s in stream]]))


# ----------------------------------------------------------------------
#  1 本分の生成
# ----------------------------------------------------------------------
def _sample_initial_speed(config: GeneratorConfig, rng: np.random.Generator) -> float:
    dist = config.speed_dist
    if dist.kind == "uniform":
        return float(dist.sample(rng))
    for _ in range(_MAX_RESAMPLE):
        v = float(dist.sample(rng))
        if v > 0:
            return v
    raise ConfigError(f"正の初速を引けません: {dist}")


def simulate(
    config: GeneratorConfig,
    rng: np.random.Generator,
    length: Optional[int] = None,
) -> Trajectory:
    """GeneratorConfig に従って軌跡を 1 本生成する"""
    if length is None:
        k_min, k_max = config.length_range
        length = int(rng.integers(k_min, k_max + 1))
    dt = config.dt

    speed = _sample_initial_speed(config, rng)
    heading = np.deg2rad(float(config.heading_dist.sample(rng)))
    start = np.zeros(2)
    if config.start_offset > 0:
        start = rng.uniform(-config.start_offset, config.start_offset, size=2)

    # ステップごとの加速度と方位変化は先にまとめて引く
    accels = config.accel_dist.sample(rng, length - 1)
    turns = np.deg2rad(config.heading_change_dist.sample(rng, length - 1))

    positions = np.empty((length, 2), dtype=np.float64)
    positions[0] = start
    for i in range(1, length):
        speed = max(0.0, speed + float(accels[i - 1]) * dt)
        heading += float(turns[i - 1])
        positions[i] = positions[i - 1] + speed * dt * np.array([np.cos(heading), np.sin(heading)])
    return Trajectory(positions, dt)


def generate(config: GeneratorConfig, n: int, worker: int = 0) -> List[Trajectory]:
    """
    n 本の軌跡を生成する。

    同じ config（seed を含む）と worker からは常に同じコーパスが得られる。
    """
    if n < 1:
        raise ConfigError(f"生成本数は 1 以上が必要です: {n}")
    rng = make_rng(config.seed, worker)
    corpus = [simulate(config, rng) for _ in range(n)]
    logger.info("%s レジームの軌跡を %d 本生成しました (seed=%d)", config.regime, n, config.seed)
    return corpus


def generate_object(config: Optional[GeneratorConfig], n: int) -> List[Trajectory]:
    """物体レジーム。config が None なら既定の物体設定を使う。"""
    return generate(config if config is not None else GeneratorConfig.object_regime(), n)


def generate_pedestrian(config: Optional[GeneratorConfig], n: int) -> List[Trajectory]:
    """歩行者レジーム。config が None なら既定の歩行者設定を使う。"""
    return generate(config if config is not None else GeneratorConfig.pedestrian_regime(), n)


# ----------------------------------------------------------------------
#  運動パターンの分類
# ----------------------------------------------------------------------
def net_heading_change(traj: Trajectory) -> float:
    """最初と最後の移動方向の差 [deg]（ステップごとの差を -180..180 に折り返して累積）"""
    d = np.diff(traj.positions, axis=0)
    moving = np.linalg.norm(d, axis=1) > 1e-12
    d = d[moving]
    if len(d) < 2:
        return 0.0
    angles = np.arctan2(d[:, 1], d[:, 0])
    steps = np.diff(angles)
    steps = (steps + np.pi) % (2 * np.pi) - np.pi
    return float(np.rad2deg(steps.sum()))


def speed_change(traj: Trajectory) -> float:
    """最初と最後のステップ速度の差 [m/s]"""
    v = traj.step_lengths() / traj.dt
    return float(v[-1] - v[0])


def classify_motion(
    traj: Trajectory,
    curve_deg: float = 45.0,
    accel_ms: float = 1.0,
) -> List[str]:
    """
    軌跡に当てはまる運動パターンのラベルを返す。

    - curved       : |正味の方位変化| > curve_deg
    - accelerating : |速度変化| > accel_ms（減速も含む）
    - constant_velocity: どちらにも当てはまらない
    """
    labels: List[str] = []
    if abs(net_heading_change(traj)) > curve_deg:
        labels.append("curved")
    if abs(speed_change(traj)) > accel_ms:
        labels.append("accelerating")
    if not labels:
        labels.append("constant_velocity")
    return labels


def motion_coverage(corpus: Sequence[Trajectory]) -> dict:
    """運動パターンごとの本数"""
    counts = {name: 0 for name in MOTION_CLASSES}
    for traj in corpus:
        for label in classify_motion(traj):
            counts[label] += 1
    return counts
