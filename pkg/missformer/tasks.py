"""
tasks.py
========

推論タスク（再構成 / フィルタリング / 予測）の実験設定と、
実データ 5 分割の名前、比較用の引用値を定義する。

実験表の構造をそのままコード化したもので、
cli.py / evaluation.py / tools/leave_one_out.py が参照する正規データソース。

階層:
- task（reconstruction / filtering / prediction）
- 入力モード（positions / offsets）
- サンプル数・エポック数・ノイズ・欠測
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ShapeError


# ============================================================
# データ構造
# ============================================================

@dataclass(frozen=True)
class TaskSpec:
    """推論タスク 1 種類の観測長 / 予測長の範囲"""
    name: str
    obs_range: Tuple[int, int]
    pred_range: Tuple[int, int]  # (0, 0) なら末尾マスクなし

    @property
    def predicts(self) -> bool:
        return self.pred_range[1] > 0


@dataclass(frozen=True)
class Experiment:
    """実験表の 1 行"""
    task: str
    input_mode: str
    samples: int
    epochs: int
    noise_std: float
    missing_prob: float
    ade: float
    ade_std: float


@dataclass(frozen=True)
class CitedResult:
    """実データ比較表の 1 行（ADE/FDE は分割ごと + 平均）"""
    approach: str
    model_type: str
    ade_fde: Tuple[Tuple[float, float], ...]
    average: Tuple[float, float]
    reproduced: bool = False


# ============================================================
# タスク定義
# ============================================================

TASKS: Dict[str, TaskSpec] = {
    "reconstruction": TaskSpec("reconstruction", (8, 20), (0, 0)),
    "filtering": TaskSpec("filtering", (8, 20), (0, 0)),
    "prediction": TaskSpec("prediction", (8, 14), (6, 12)),
}

# 実データ: 観測 8 点 (3.2 s) → 予測 12 点 (4.8 s), 2.5 fps
REAL_OBS_LEN = 8
REAL_PRED_LEN = 12
REAL_FRAME_RATE = 2.5

# 評価セットは常に 5000 サンプル
EVAL_SAMPLES = 5000

SPLITS: Tuple[str, ...] = ("eth", "hotel", "univ", "zara1", "zara2")
SPLIT_LABELS: Dict[str, str] = {
    "eth": "BIWI:ETH",
    "hotel": "BIWI:Hotel",
    "univ": "UCY:Univ",
    "zara1": "UCY:Zara1",
    "zara2": "UCY:Zara2",
}


# ============================================================
# 合成データ実験（物体レジーム）
# ============================================================

EXPERIMENTS: List[Experiment] = [
    # --------------------------------------------------------
    # 再構成
    # --------------------------------------------------------
    Experiment("reconstruction", "positions", 1000, 1000, 0.0, 0.0, 0.067, 0.013),
    Experiment("reconstruction", "offsets", 1000, 1000, 0.0, 0.0, 0.061, 0.012),
    Experiment("reconstruction", "positions", 1000, 1000, 0.0, 0.1, 0.377, 0.403),
    Experiment("reconstruction", "offsets", 1000, 1000, 0.0, 0.1, 0.175, 0.154),
    Experiment("reconstruction", "positions", 3000, 1000, 0.0, 0.1, 0.138, 0.074),
    Experiment("reconstruction", "offsets", 3000, 1000, 0.0, 0.1, 0.155, 0.079),
    Experiment("reconstruction", "positions", 3000, 3000, 0.0, 0.0, 0.030, 0.020),
    Experiment("reconstruction", "offsets", 3000, 3000, 0.0, 0.0, 0.039, 0.013),
    Experiment("reconstruction", "positions", 3000, 3000, 0.0, 0.1, 0.087, 0.060),
    Experiment("reconstruction", "offsets", 3000, 3000, 0.0, 0.1, 0.095, 0.065),
    Experiment("reconstruction", "positions", 4000, 4000, 0.0, 0.0, 0.028, 0.015),
    Experiment("reconstruction", "positions", 4000, 4000, 0.0, 0.1, 0.081, 0.015),
    Experiment("reconstruction", "offsets", 4000, 4000, 0.0, 0.0, 0.031, 0.014),
    Experiment("reconstruction", "offsets", 4000, 4000, 0.0, 0.1, 0.084, 0.014),

    # --------------------------------------------------------
    # フィルタリング
    # --------------------------------------------------------
    Experiment("filtering", "positions", 4000, 4000, 1.0, 0.0, 0.126, 0.049),
    Experiment("filtering", "positions", 4000, 4000, 1.0, 0.1, 0.165, 0.071),
    Experiment("filtering", "offsets", 4000, 4000, 1.0, 0.0, 0.148, 0.055),
    Experiment("filtering", "offsets", 4000, 4000, 1.0, 0.1, 0.222, 0.137),

    # --------------------------------------------------------
    # 予測
    # --------------------------------------------------------
    Experiment("prediction", "positions", 4000, 4000, 1.0, 0.0, 0.809, 0.514),
    Experiment("prediction", "positions", 4000, 4000, 1.0, 0.1, 0.920, 0.422),
    Experiment("prediction", "offsets", 4000, 4000, 1.0, 0.0, 1.186, 0.583),
    Experiment("prediction", "offsets", 4000, 4000, 1.0, 0.1, 1.221, 0.734),
]


# ============================================================
# 実データ比較（引用値。学習済み比較モデルは再現しない）
# ============================================================

CITED_RESULTS: List[CitedResult] = [
    CitedResult("Linear interpolation", "classic",
                ((1.33, 2.94), (0.39, 0.72), (0.82, 1.59), (0.62, 1.21), (0.77, 1.48)), (0.79, 1.59)),
    CitedResult("LSTM", "RNN",
                ((1.09, 2.94), (0.86, 1.91), (0.61, 1.31), (0.41, 0.88), (0.52, 1.11)), (0.70, 1.52)),
    CitedResult("GAN (Ind.)", "RNN",
                ((1.13, 2.21), (1.01, 2.18), (0.60, 1.28), (0.42, 0.91), (0.52, 1.11)), (0.74, 1.54)),
    CitedResult("Social-LSTM", "RNN",
                ((1.09, 2.35), (0.79, 1.76), (0.67, 1.40), (0.47, 1.00), (0.56, 1.17)), (0.72, 1.54)),
    CitedResult("Social-Att.", "RNN",
                ((0.39, 3.74), (0.29, 2.64), (0.33, 3.92), (0.20, 0.52), (0.30, 2.13)), (0.30, 2.59)),
    CitedResult("Trajectron++", "RNN",
                ((0.50, 1.19), (0.24, 0.59), (0.36, 0.89), (0.29, 0.72), (0.27, 0.67)), (0.34, 0.84)),
    CitedResult("TCN", "TCN",
                ((1.04, 2.07), (0.59, 1.17), (0.57, 1.21), (0.43, 0.90), (0.34, 0.75)), (0.59, 1.22)),
    CitedResult("TF", "transformer",
                ((1.03, 2.10), (0.36, 0.71), (0.53, 1.32), (0.44, 1.00), (0.34, 0.76)), (0.54, 1.17)),
    CitedResult("MissFormer", "transformer",
                ((0.99, 1.94), (0.36, 0.89), (0.51, 1.29), (0.43, 0.89), (0.34, 0.74)), (0.53, 1.15)),
]


# ============================================================
# ユーティリティ関数
# ============================================================

def get_task(name: str) -> TaskSpec:
    try:
        return TASKS[name]
    except KeyError:
        raise KeyError(f"未知のタスクです: {name!r}") from None


def find_experiments(task: Optional[str] = None, input_mode: Optional[str] = None) -> List[Experiment]:
    """task / input_mode の完全一致でフィルタ"""
    return [
        e for e in EXPERIMENTS
        if (task is None or e.task == task) and (input_mode is None or e.input_mode == input_mode)
    ]


def get_cited(approach: str) -> Optional[CitedResult]:
    for row in CITED_RESULTS:
        if row.approach == approach:
            return row
    return None


def sample_pred_length(
    k: int,
    obs_range: Tuple[int, int],
    pred_range: Tuple[int, int],
    rng: np.random.Generator,
) -> int:
    """
    長さ k の系列に対する予測長を一様に引く。

    観測長 k - n が obs_range に、n が pred_range に収まる n から選ぶ。
    候補が無いときは観測長が obs_range の下限になる n を使うが、
    予測長は常に 1 以上 k-1 以下（観測 1 点・予測 1 点は必ず残す）。
    """
    if k < 2:
        raise ShapeError(f"予測には長さ 2 以上の系列が必要です: k={k}")
    lo = max(pred_range[0], k - obs_range[1], 1)
    hi = min(pred_range[1], k - obs_range[0], k - 1)
    if lo <= hi:
        return int(rng.integers(lo, hi + 1))
    return int(max(1, min(pred_range[1], k - obs_range[0], k - 1)))
