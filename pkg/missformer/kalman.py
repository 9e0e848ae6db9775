"""
kalman.py
=========

等速度モデルのカルマンフィルタ + RTS 平滑化による古典的なベースライン。

状態は [x, vx, y, vy]。欠測ステップは観測更新をせず予測だけを行うので、
欠測の穴埋めと末尾の外挿を同じ仕組みで扱える。
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from filterpy.common import Q_discrete_white_noise
from filterpy.kalman import KalmanFilter

from .errors import ModeError, ShapeError
from .models import ObservedSequence


def make_filter(dt: float, process_var: float, measurement_std: float) -> KalmanFilter:
    kf = KalmanFilter(dim_x=4, dim_z=2)
    kf.F = np.array(
        [
            [1.0, dt, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, dt],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    kf.H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    kf.Q = Q_discrete_white_noise(dim=2, dt=dt, var=process_var, block_size=2)
    kf.R = np.eye(2) * measurement_std ** 2
    return kf


@dataclass
class KalmanBaseline:
    """
    estimate(obs) で (k, 2) の平滑化位置を返す推定器。

    - process_var    : 加速度の白色雑音の分散 [m^2/s^4]
    - measurement_std: 観測ノイズの標準偏差 [m]（0 にはしない）
    - velocity_var   : 初期速度の事前分散
    """

    process_var: float = 1.0
    measurement_std: float = 0.1
    velocity_var: float = 100.0

    def estimate(self, obs: ObservedSequence) -> np.ndarray:
        if obs.mode != "positions":
            raise ModeError(f"カルマンベースラインは positions モードのみ扱えます: {obs.mode}")
        observed = obs.observed_indices()
        if len(observed) == 0:
            raise ShapeError("観測済みのステップがありません")

        kf = make_filter(obs.dt, self.process_var, max(self.measurement_std, 1e-3))
        first = obs.values[observed[0]]
        kf.x = np.array([[first[0]], [0.0], [first[1]], [0.0]])
        kf.P = np.diag([self.measurement_std ** 2 + 1e-6, self.velocity_var] * 2)

        zs = np.empty(obs.k, dtype=object)
        for i in range(obs.k):
            zs[i] = obs.values[i].copy() if obs.missing[i] == 0 else None
        means, covs, _, _ = kf.batch_filter(zs, update_first=True)
        smoothed, _, _, _ = kf.rts_smoother(means, covs)
        return np.asarray(smoothed)[:, [0, 2], 0].copy()
