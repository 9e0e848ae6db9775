"""
models.py
======================

アプリ全体で共通して使う「データモデル」だけを定義するモジュール。

ここでは以下を扱う:
- Trajectory      : 真の 2 次元軌跡（学習の目標値）
- ObservedSequence: ノイズ・欠測を含む入力系列（x, y, 欠測ビット）
- AttentionRecord : 層ごと・ヘッドごとの注意重み行列
- EvalReport      : ADE / σ_ADE / FDE とサンプルごとの誤差
- TrainRun        : エポックごとの損失などの学習記録
- RawRecord / SampleSet : 実データ（ETH/UCY）の行と切り出した窓

※生成・破損・推論などのロジックそのものは専用モジュールに持たせる。
  models.py はあくまで「構造」と 1 行テキスト形式との相互変換に徹する。
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ModeError, NumericError, ParseError, ShapeError


def _fmt(x: float) -> str:
    # repr は往復で同じ float に戻る最短表記
    return repr(float(x))


# ----------------------------------------------------------------------
#  真の軌跡
# ----------------------------------------------------------------------
@dataclass
class Trajectory:
    """
    一定時間間隔 dt [s] でサンプリングされた 2 次元位置列 [m]。

    コーパスファイルの 1 行と 1:1 で対応する:
        k dt x1 y1 x2 y2 ...
    """

    positions: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ShapeError(f"positions は (k, 2) が必要です: {pos.shape}")
        if pos.shape[0] < 2:
            raise ShapeError(f"軌跡長は 2 以上が必要です: {pos.shape[0]}")
        if not np.isfinite(pos).all():
            raise NumericError("軌跡に非有限の座標が含まれています")
        if not self.dt > 0:
            raise ShapeError(f"dt は正の値が必要です: {self.dt}")
        self.positions = pos
        self.dt = float(self.dt)

    @property
    def k(self) -> int:
        return int(self.positions.shape[0])

    def __len__(self) -> int:
        return self.k

    def step_lengths(self) -> np.ndarray:
        """連続する位置間の移動量 [m]"""
        return np.linalg.norm(np.diff(self.positions, axis=0), axis=1)

    def prefix(self, n: int) -> "Trajectory":
        return Trajectory(self.positions[:n].copy(), self.dt)

    def translated(self, offset: Sequence[float]) -> "Trajectory":
        return Trajectory(self.positions + np.asarray(offset, dtype=np.float64), self.dt)

    # --------------------------------------------------
    #  1 行テキスト形式
    # --------------------------------------------------
    def to_line(self) -> str:
        coords = " ".join(_fmt(v) for v in self.positions.reshape(-1))
        return f"{self.k} {_fmt(self.dt)} {coords}"

    @classmethod
    def from_line(cls, line: str) -> "Trajectory":
        parts = line.split()
        if len(parts) < 2:
            raise ParseError("フィールドが足りません")
        try:
            k = int(parts[0])
            dt = float(parts[1])
            values = [float(p) for p in parts[2:]]
        except ValueError as e:
            raise ParseError(f"数値として読めません: {e}") from e
        if len(values) != 2 * k:
            raise ParseError(f"座標数 {len(values)} が k={k} と一致しません")
        return cls(np.asarray(values, dtype=np.float64).reshape(k, 2), dt)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Trajectory":
        return cls(np.asarray(data["positions"], dtype=np.float64), float(data.get("dt", 1.0)))

    def to_dict(self) -> Dict[str, Any]:
        return {"positions": self.positions.tolist(), "dt": self.dt}


# ----------------------------------------------------------------------
#  観測系列（モデル入力）
# ----------------------------------------------------------------------
@dataclass
class ObservedSequence:
    """
    破損済みの入力系列。

    - values : (k, 2) 観測値。欠測ステップは厳密に (0, 0)
    - missing: (k,) 欠測ビット（1 = 欠測）
    - mode   : "positions" または "offsets"
    - noise  : 付加したノイズの記録（任意、(k, 2)）
    - dt     : 元の軌跡のサンプリング間隔
    """

    values: np.ndarray
    missing: np.ndarray
    mode: str = "positions"
    noise: Optional[np.ndarray] = None
    dt: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        missing = np.asarray(self.missing).astype(np.uint8)
        if values.ndim != 2 or values.shape[1] != 2:
            raise ShapeError(f"values は (k, 2) が必要です: {values.shape}")
        if missing.shape != (values.shape[0],):
            raise ShapeError(f"missing の長さ {missing.shape} が values {values.shape} と一致しません")
        if self.mode not in ("positions", "offsets"):
            raise ModeError(f"未知の入力モードです: {self.mode!r}")
        if np.any(missing > 1):
            raise ShapeError("missing は 0/1 のビット列が必要です")
        if not np.isfinite(values).all():
            raise NumericError("観測値に非有限の値が含まれています")
        if np.any(values[missing == 1] != 0.0):
            raise ShapeError("欠測ステップの値は (0, 0) でなければなりません")
        if self.noise is not None:
            self.noise = np.asarray(self.noise, dtype=np.float64)
        self.values = values
        self.missing = missing
        self.dt = float(self.dt)

    @property
    def k(self) -> int:
        return int(self.values.shape[0])

    def __len__(self) -> int:
        return self.k

    @property
    def n_observed(self) -> int:
        return int(self.k - self.missing.sum())

    def observed_indices(self) -> np.ndarray:
        return np.flatnonzero(self.missing == 0)

    def to_input_array(self) -> np.ndarray:
        """モデル入力の 3 チャンネル配列 (x, y, miss) を返す"""
        return np.concatenate([self.values, self.missing[:, None].astype(np.float64)], axis=1)

    # --------------------------------------------------
    #  1 行テキスト形式: k mode x1 y1 m1 x2 y2 m2 ...
    # --------------------------------------------------
    def to_line(self) -> str:
        body = " ".join(
            f"{_fmt(x)} {_fmt(y)} {int(m)}" for (x, y), m in zip(self.values, self.missing)
        )
        return f"{self.k} {self.mode} {body}"

    @classmethod
    def from_line(cls, line: str, dt: float = 1.0) -> "ObservedSequence":
        parts = line.split()
        if len(parts) < 2:
            raise ParseError("フィールドが足りません")
        try:
            k = int(parts[0])
            mode = parts[1]
            raw = parts[2:]
            if len(raw) != 3 * k:
                raise ParseError(f"フィールド数 {len(raw)} が k={k} と一致しません")
            triples = np.asarray([float(v) for v in raw], dtype=np.float64).reshape(k, 3)
        except ValueError as e:
            raise ParseError(f"数値として読めません: {e}") from e
        return cls(triples[:, :2], triples[:, 2].astype(np.uint8), mode=mode, dt=dt)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "values": self.values.tolist(),
            "missing": self.missing.tolist(),
            "mode": self.mode,
            "dt": self.dt,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ObservedSequence":
        return cls(
            np.asarray(data["values"], dtype=np.float64),
            np.asarray(data["missing"], dtype=np.uint8),
            mode=data.get("mode", "positions"),
            dt=float(data.get("dt", 1.0)),
        )


# ----------------------------------------------------------------------
#  注意重みの記録
# ----------------------------------------------------------------------
@dataclass
class AttentionRecord:
    """
    layers[l] は (n_head, k, k) の行確率行列（各行の和が 1）。
    """

    layers: List[np.ndarray] = field(default_factory=list)

    @property
    def n_layer(self) -> int:
        return len(self.layers)

    def head(self, layer: int, head: int) -> np.ndarray:
        return self.layers[layer][head]

    def max_row_error(self) -> float:
        """全層・全ヘッドの |行和 - 1| の最大値"""
        if not self.layers:
            return 0.0
        return float(max(np.abs(w.sum(axis=-1) - 1.0).max() for w in self.layers))

    def to_dict(self) -> Dict[str, Any]:
        return {"layers": [w.tolist() for w in self.layers]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AttentionRecord":
        return cls([np.asarray(w, dtype=np.float64) for w in data.get("layers", [])])


# ----------------------------------------------------------------------
#  評価レポート
# ----------------------------------------------------------------------
@dataclass
class EvalReport:
    """
    ade_std はサンプルごとの ADE の母標準偏差（σ_ADE）。
    """

    task: str
    n_samples: int
    ade: float
    ade_std: float
    fde: float
    per_sample: List[Tuple[float, float]] = field(default_factory=list)
    label: str = ""

    @classmethod
    def from_errors(
        cls,
        task: str,
        ades: Sequence[float],
        fdes: Sequence[float],
        label: str = "",
    ) -> "EvalReport":
        a = np.asarray(ades, dtype=np.float64)
        f = np.asarray(fdes, dtype=np.float64)
        if a.size == 0 or a.shape != f.shape:
            raise ShapeError(f"サンプル誤差の数が不正です: ade={a.shape}, fde={f.shape}")
        return cls(
            task=task,
            n_samples=int(a.size),
            ade=float(a.mean()),
            ade_std=float(a.std()),
            fde=float(f.mean()),
            per_sample=[(float(x), float(y)) for x, y in zip(a, f)],
            label=label,
        )

    def to_record_line(self) -> str:
        """機械可読な 1 行: task n ade ade_std fde"""
        return f"{self.task} {self.n_samples} {_fmt(self.ade)} {_fmt(self.ade_std)} {_fmt(self.fde)}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task": self.task,
            "n_samples": self.n_samples,
            "ade": self.ade,
            "ade_std": self.ade_std,
            "fde": self.fde,
            "per_sample": [list(p) for p in self.per_sample],
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalReport":
        return cls(
            task=data["task"],
            n_samples=int(data["n_samples"]),
            ade=float(data["ade"]),
            ade_std=float(data["ade_std"]),
            fde=float(data["fde"]),
            per_sample=[(float(a), float(f)) for a, f in data.get("per_sample", [])],
            label=data.get("label", ""),
        )


# ----------------------------------------------------------------------
#  学習記録
# ----------------------------------------------------------------------
@dataclass
class TrainRun:
    """
    - losses          : エポックごとの平均学習損失
    - masked_fraction : エポックごとの「末尾マスクされたステップ」の割合
    - epoch_ms        : エポックごとの経過時間 [ms]
    """

    losses: List[float] = field(default_factory=list)
    masked_fraction: List[float] = field(default_factory=list)
    epoch_ms: List[float] = field(default_factory=list)
    wallclock_s: float = 0.0
    checkpoint: Optional[str] = None
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def epochs(self) -> int:
        return len(self.losses)

    def log_lines(self) -> List[str]:
        """学習ログ: epoch loss wallclock_ms"""
        return [
            f"{i} {_fmt(loss)} {ms:.3f}"
            for i, (loss, ms) in enumerate(zip(self.losses, self.epoch_ms))
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "losses": list(self.losses),
            "masked_fraction": list(self.masked_fraction),
            "epoch_ms": list(self.epoch_ms),
            "wallclock_s": self.wallclock_s,
            "checkpoint": self.checkpoint,
            "config": self.config,
        }


# ----------------------------------------------------------------------
#  実データ
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class RawRecord:
    """アノテーション 1 行: frame agent x y"""

    frame_id: int
    agent_id: int
    x: float
    y: float


@dataclass
class SampleSet:
    """
    固定プロトコル（観測 obs_len / 予測 pred_len）で切り出した窓の集合。

    windows は (n, obs_len + pred_len, 2)。
    """

    windows: np.ndarray
    obs_len: int = 8
    pred_len: int = 12
    split: str = ""
    frame_stride: int = 1
    dt: float = 0.4
    agents: List[int] = field(default_factory=list)

    def __post_init__(self):
        w = np.asarray(self.windows, dtype=np.float64)
        if w.size == 0:
            w = w.reshape(0, self.obs_len + self.pred_len, 2)
        if w.ndim != 3 or w.shape[1:] != (self.obs_len + self.pred_len, 2):
            raise ShapeError(
                f"windows は (n, {self.obs_len + self.pred_len}, 2) が必要です: {w.shape}"
            )
        self.windows = w

    def __len__(self) -> int:
        return int(self.windows.shape[0])

    def trajectories(self) -> List[Trajectory]:
        return [Trajectory(w, self.dt) for w in self.windows]
