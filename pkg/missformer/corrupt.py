"""
corrupt.py
==========

真値軌跡からモデル入力（ObservedSequence）を作る。

- 位置観測ノイズ N(0, noise_std^2) を座標ごとに独立に加える
- 各ステップをベルヌーイ試行で欠測させ、欠測トークン (0, 0, 1) に置き換える
- 位置入力 / オフセット入力の変換
- 予測用に末尾を欠測トークンで埋める

ノイズは欠測判定の前に加える（欠測ステップの値は 0 で上書きされるので結果は変わらない）。
"""

from __future__ import annotations

from typing import Iterable, List, Optional, Sequence

import numpy as np

from .config import CorruptionConfig
from .errors import ModeError, ShapeError
from .models import ObservedSequence, Trajectory
from .trajgen import make_rng


# ----------------------------------------------------------------------
#  破損
# ----------------------------------------------------------------------
def corrupt(
    traj: Trajectory,
    config: CorruptionConfig,
    rng: Optional[np.random.Generator] = None,
) -> ObservedSequence:
    """
    1 本の軌跡にノイズと欠測を加える。

    rng を省略すると config.seed から乱数列を作る。
    乱数の引き順（ノイズ → 欠測）は noise_std / missing_prob の値に関わらず固定。
    """
    if traj.k < 2:
        raise ShapeError(f"軌跡長は 2 以上が必要です: {traj.k}")
    rng = rng if rng is not None else make_rng(config.seed)

    noise = rng.normal(0.0, 1.0, size=(traj.k, 2)) * config.noise_std
    missing = rng.random(traj.k) < config.missing_prob
    if config.protect_first:
        missing[0] = False

    values = traj.positions + noise
    values[missing] = 0.0
    return ObservedSequence(values, missing.astype(np.uint8), mode="positions", noise=noise, dt=traj.dt)


def corrupt_many(
    corpus: Sequence[Trajectory],
    config: CorruptionConfig,
    stream: Iterable[int] = (),
) -> List[ObservedSequence]:
    """
    コーパス全体を破損させる。

    サンプル i は (config.seed, *stream, i) から派生した乱数列を使うので、
    並列化してもサンプル単位で同じ結果になる。
    """
    stream = tuple(stream)
    return [corrupt(t, config, make_rng(config.seed, *stream, i)) for i, t in enumerate(corpus)]


# ----------------------------------------------------------------------
#  位置 ⇔ オフセット
# ----------------------------------------------------------------------
def to_offsets(obs: ObservedSequence) -> ObservedSequence:
    """
    位置入力をオフセット入力に変換する。

    - offsets[0] は観測済みの (0, 0)
    - offsets[i] = positions[i] - positions[i-1]（両端が観測済みのときだけ）
    - どちらかの端が欠測なら欠測トークン
    """
    if obs.mode != "positions":
        raise ModeError(f"to_offsets は positions モードにのみ適用できます: {obs.mode}")
    k = obs.k
    values = np.zeros((k, 2), dtype=np.float64)
    missing = np.zeros(k, dtype=np.uint8)
    if k > 1:
        both = (obs.missing[1:] == 0) & (obs.missing[:-1] == 0)
        diffs = obs.values[1:] - obs.values[:-1]
        values[1:][both] = diffs[both]
        missing[1:] = (~both).astype(np.uint8)
    return ObservedSequence(values, missing, mode="offsets", noise=obs.noise, dt=obs.dt)


def from_offsets(obs: ObservedSequence, start: Sequence[float] = (0.0, 0.0)) -> np.ndarray:
    """
    経路積分で位置を復元する（start + オフセットの累積和）。
    欠測オフセットは 0 として積算する。
    """
    if obs.mode != "offsets":
        raise ModeError(f"from_offsets は offsets モードにのみ適用できます: {obs.mode}")
    return np.asarray(start, dtype=np.float64) + np.cumsum(obs.values, axis=0)


def to_mode(obs: ObservedSequence, mode: str) -> ObservedSequence:
    """モデルの入力モードに合わせる（同じモードならそのまま）"""
    if obs.mode == mode:
        return obs
    if mode == "offsets":
        return to_offsets(obs)
    raise ModeError(f"{obs.mode} から {mode} へは変換できません")


# ----------------------------------------------------------------------
#  予測用の末尾マスク
# ----------------------------------------------------------------------
def mask_tail_for_prediction(obs: ObservedSequence, n_pred: int) -> ObservedSequence:
    """最後の n_pred ステップを欠測トークンにする（それ以前は変更しない）"""
    n_pred = int(n_pred)
    if n_pred < 0 or n_pred >= obs.k:
        raise ShapeError(f"n_pred ({n_pred}) は 0 以上かつ系列長 ({obs.k}) 未満が必要です")
    values = obs.values.copy()
    missing = obs.missing.copy()
    if n_pred:
        values[-n_pred:] = 0.0
        missing[-n_pred:] = 1
    return ObservedSequence(values, missing, mode=obs.mode, noise=obs.noise, dt=obs.dt)


def extend_with_missing(obs: ObservedSequence, n: int) -> ObservedSequence:
    """末尾に n 個の欠測トークンを追加する"""
    n = int(n)
    if n < 0:
        raise ShapeError(f"追加するステップ数は 0 以上が必要です: {n}")
    if n == 0:
        return obs
    values = np.concatenate([obs.values, np.zeros((n, 2))], axis=0)
    missing = np.concatenate([obs.missing, np.ones(n, dtype=np.uint8)])
    noise = None
    if obs.noise is not None:
        noise = np.concatenate([obs.noise, np.zeros((n, 2))], axis=0)
    return ObservedSequence(values, missing, mode=obs.mode, noise=noise, dt=obs.dt)
