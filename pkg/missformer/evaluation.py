"""
evaluation.py
=============

評価指標（ADE / σ_ADE / FDE）、タスク別の評価ループ、古典的ベースライン、
実データの leave-one-out プロトコルとレポート出力をまとめたモジュール。

推定器は estimate(obs) -> (k, 2) の位置配列を返すものなら何でもよい
（MissFormerModel, LinearBaseline, KalmanBaseline, IdentityBaseline, テスト用のスタブ）。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from typing_extensions import Protocol, runtime_checkable

from .config import CorruptionConfig, EvalConfig
from .corrupt import corrupt, mask_tail_for_prediction
from .errors import ConfigError, ModeError, ShapeError
from .models import EvalReport, ObservedSequence, SampleSet, Trajectory
from .tasks import CITED_RESULTS, EXPERIMENTS, SPLIT_LABELS, SPLITS, get_task, sample_pred_length
from .trajgen import make_rng

logger = logging.getLogger(__name__)

ArrayOrTrajectory = Union[Trajectory, np.ndarray]
EvalRange = Union[None, slice, Sequence[int]]

_STREAM_EVAL_CORRUPT = 11
_STREAM_EVAL_TAIL = 12

CITED_NOTE = "cited, not reproduced"


def _positions(x: ArrayOrTrajectory) -> np.ndarray:
    arr = x.positions if isinstance(x, Trajectory) else np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ShapeError(f"位置列は (k, 2) が必要です: {arr.shape}")
    return arr


# ----------------------------------------------------------------------
#  指標
# ----------------------------------------------------------------------
def ade(estimate: ArrayOrTrajectory, truth: ArrayOrTrajectory, eval_range: EvalRange = None) -> float:
    """
    eval_range で選んだステップ（0 始まりの添字またはスライス、None なら全ステップ）の
    ユークリッド距離の平均。
    """
    est, tru = _positions(estimate), _positions(truth)
    if est.shape != tru.shape:
        raise ShapeError(f"推定 {est.shape} と真値 {tru.shape} の長さが一致しません")
    dist = np.linalg.norm(est - tru, axis=1)
    if eval_range is not None:
        dist = dist[eval_range] if isinstance(eval_range, slice) else dist[np.asarray(eval_range, dtype=int)]
    if dist.size == 0:
        raise ShapeError("評価範囲が空です")
    return float(dist.mean())


def fde(estimate: ArrayOrTrajectory, truth: ArrayOrTrajectory) -> float:
    """最終ステップのユークリッド距離"""
    est, tru = _positions(estimate), _positions(truth)
    if est.shape != tru.shape:
        raise ShapeError(f"推定 {est.shape} と真値 {tru.shape} の長さが一致しません")
    return float(np.linalg.norm(est[-1] - tru[-1]))


# ----------------------------------------------------------------------
#  推定器
# ----------------------------------------------------------------------
@runtime_checkable
class Estimator(Protocol):
    def estimate(self, obs: ObservedSequence) -> np.ndarray:
        ...


def linear_baseline(obs: ObservedSequence, horizon: int = 0) -> Trajectory:
    """
    観測済みステップに等速直線を最小二乗で当てはめ、
    全長 k + horizon に外挿した軌跡を返す。
    """
    if obs.mode != "positions":
        raise ModeError(f"線形ベースラインは positions モードのみ扱えます: {obs.mode}")
    if horizon < 0:
        raise ShapeError(f"horizon は 0 以上が必要です: {horizon}")
    t_obs = obs.observed_indices()
    if len(t_obs) < 2:
        raise ShapeError(f"観測済みステップが 2 つ以上必要です: {len(t_obs)}")

    design = np.stack([np.ones(len(t_obs)), t_obs.astype(np.float64)], axis=1)
    coef, *_ = np.linalg.lstsq(design, obs.values[t_obs], rcond=None)
    t_all = np.arange(obs.k + int(horizon), dtype=np.float64)
    positions = coef[0] + t_all[:, None] * coef[1]
    return Trajectory(positions, obs.dt)


class LinearBaseline:
    """linear_baseline を推定器として使うためのラッパー"""

    label = "Linear interpolation"

    def estimate(self, obs: ObservedSequence) -> np.ndarray:
        return linear_baseline(obs).positions


class IdentityBaseline:
    """
    ノイズ入りの観測をそのまま返す。
    欠測ステップは直前の観測値を保持する（先頭が欠測なら最初の観測値）。
    """

    label = "Identity"

    def estimate(self, obs: ObservedSequence) -> np.ndarray:
        if obs.mode != "positions":
            raise ModeError(f"恒等ベースラインは positions モードのみ扱えます: {obs.mode}")
        observed = obs.observed_indices()
        if len(observed) == 0:
            raise ShapeError("観測済みのステップがありません")
        out = obs.values.copy()
        last = obs.values[observed[0]]
        for i in range(obs.k):
            if obs.missing[i]:
                out[i] = last
            else:
                last = obs.values[i]
        return out


def _estimate_all(estimator: Estimator, observations: Sequence[ObservedSequence]) -> List[np.ndarray]:
    batched = getattr(estimator, "estimate_many", None)
    if callable(batched):
        return list(batched(observations))
    return [estimator.estimate(o) for o in observations]


# ----------------------------------------------------------------------
#  評価ループ
# ----------------------------------------------------------------------
def _default_eval_config(task: str) -> EvalConfig:
    spec = get_task(task)
    return EvalConfig(task=task, obs_range=spec.obs_range, pred_range=spec.pred_range)


def build_eval_inputs(
    corpus: Sequence[Trajectory],
    corrupt_config: CorruptionConfig,
    eval_config: EvalConfig,
) -> Tuple[List[ObservedSequence], List[int]]:
    """
    タスクに応じた破損と末尾マスクを適用する。
    戻り値は (観測系列, サンプルごとの予測長)。予測長は予測タスク以外では 0。
    """
    predicts = eval_config.task == "prediction"
    observations: List[ObservedSequence] = []
    n_preds: List[int] = []
    for i, traj in enumerate(corpus):
        obs = corrupt(traj, corrupt_config, make_rng(corrupt_config.seed, _STREAM_EVAL_CORRUPT, i))
        n_pred = 0
        if predicts:
            rng = make_rng(eval_config.seed, _STREAM_EVAL_TAIL, i)
            n_pred = sample_pred_length(traj.k, eval_config.obs_range, eval_config.pred_range, rng)
            obs = mask_tail_for_prediction(obs, n_pred)
        observations.append(obs)
        n_preds.append(n_pred)
    return observations, n_preds


def score(
    estimates: Sequence[np.ndarray],
    truths: Sequence[Trajectory],
    n_preds: Sequence[int],
    task: str,
    label: str = "",
) -> EvalReport:
    """予測タスクは末尾（予測部分）のみ、それ以外は全ステップで評価する"""
    ades: List[float] = []
    fdes: List[float] = []
    for est, traj, n_pred in zip(estimates, truths, n_preds):
        eval_range = slice(traj.k - n_pred, traj.k) if n_pred > 0 else None
        ades.append(ade(est, traj, eval_range))
        fdes.append(fde(est, traj))
    return EvalReport.from_errors(task, ades, fdes, label=label)


def evaluate(
    estimator: Estimator,
    corpus: Sequence[Trajectory],
    corrupt_config: CorruptionConfig,
    task: str = "reconstruction",
    eval_config: Optional[EvalConfig] = None,
    label: str = "",
) -> EvalReport:
    """
    タスクに応じて入力を作り、推定器で推定して ADE / σ_ADE / FDE を集計する。
    corpus は学習コーパスと重複しないこと（標準は 5000 サンプル）。
    """
    if not corpus:
        raise ShapeError("評価コーパスが空です")
    if eval_config is None:
        eval_config = _default_eval_config(task)
    elif eval_config.task != task:
        eval_config = EvalConfig(
            task=task,
            n_samples=eval_config.n_samples,
            obs_range=eval_config.obs_range,
            pred_range=eval_config.pred_range,
            seed=eval_config.seed,
        )

    observations, n_preds = build_eval_inputs(corpus, corrupt_config, eval_config)
    estimates = _estimate_all(estimator, observations)
    report = score(estimates, corpus, n_preds, task, label=label)
    logger.info(
        "%s %s: n=%d ADE=%.4f σ_ADE=%.4f FDE=%.4f",
        label or type(estimator).__name__, task, report.n_samples, report.ade, report.ade_std, report.fde,
    )
    return report


def evaluate_windows(estimator: Estimator, samples: SampleSet, label: str = "") -> EvalReport:
    """
    固定プロトコル（観測 obs_len 点をすべて与えて pred_len 点を予測）で評価する。
    """
    if len(samples) == 0:
        raise ShapeError(f"評価窓がありません: {samples.split}")
    truths = samples.trajectories()
    observations = [
        mask_tail_for_prediction(corrupt(t, CorruptionConfig()), samples.pred_len) for t in truths
    ]
    estimates = _estimate_all(estimator, observations)
    return score(estimates, truths, [samples.pred_len] * len(truths), "prediction", label=label)


# ----------------------------------------------------------------------
#  Leave-one-out（ETH / UCY 5 分割）
# ----------------------------------------------------------------------
@dataclass
class LeaveOneOutResult:
    per_split: Dict[str, EvalReport] = field(default_factory=dict)
    label: str = ""

    @property
    def average_ade(self) -> float:
        return float(np.mean([self.per_split[s].ade for s in SPLITS]))

    @property
    def average_fde(self) -> float:
        return float(np.mean([self.per_split[s].fde for s in SPLITS]))

    def to_dict(self) -> Dict[str, object]:
        return {
            "label": self.label,
            "per_split": {s: r.to_dict() for s, r in self.per_split.items()},
            "average": {"ade": self.average_ade, "fde": self.average_fde},
        }


TrainFn = Callable[[str, List[SampleSet]], Estimator]


def leave_one_out(
    datasets: Mapping[str, SampleSet],
    train_fn: TrainFn,
    protocol: Tuple[int, int] = (8, 12),
    label: str = "",
) -> LeaveOneOutResult:
    """
    5 分割それぞれを評価用に残し、残り 4 分割で train_fn に推定器を作らせて評価する。

    train_fn(held_out, training_sets) は推定器を返す
    （合成データでの事前学習やチェックポイントからの追加学習は train_fn 側の責務）。
    """
    missing = [s for s in SPLITS if s not in datasets]
    if missing:
        raise ConfigError(f"分割が足りません: {', '.join(missing)}")
    obs_len, pred_len = protocol
    for name in SPLITS:
        ss = datasets[name]
        if (ss.obs_len, ss.pred_len) != (obs_len, pred_len):
            raise ConfigError(
                f"{name}: 窓のプロトコル {ss.obs_len}/{ss.pred_len} が {obs_len}/{pred_len} と一致しません"
            )

    result = LeaveOneOutResult(label=label)
    for held_out in SPLITS:
        training = [datasets[s] for s in SPLITS if s != held_out]
        estimator = train_fn(held_out, training)
        report = evaluate_windows(estimator, datasets[held_out], label=f"{label}:{held_out}")
        result.per_split[held_out] = report
        logger.info("leave-one-out %s: ADE=%.3f FDE=%.3f", held_out, report.ade, report.fde)
    logger.info("leave-one-out 平均: ADE=%.3f FDE=%.3f", result.average_ade, result.average_fde)
    return result


# ----------------------------------------------------------------------
#  レポート
# ----------------------------------------------------------------------
def results_frame(reports: Sequence[EvalReport], include_reference: bool = True) -> pd.DataFrame:
    """
    合成データ実験の表。include_reference=True なら同じタスクの引用値も並べる。
    """
    rows = [
        {
            "approach": r.label or "MissFormer",
            "task": r.task,
            "n": r.n_samples,
            "ADE": r.ade,
            "σ_ADE": r.ade_std,
            "FDE": r.fde,
            "source": "measured",
        }
        for r in reports
    ]
    if include_reference:
        tasks = {r.task for r in reports}
        for e in EXPERIMENTS:
            if e.task not in tasks:
                continue
            rows.append(
                {
                    "approach": f"MissFormer ({e.input_mode}, {e.samples}/{e.epochs}, "
                                f"σ={e.noise_std:g}, p={e.missing_prob:g})",
                    "task": e.task,
                    "n": 5000,
                    "ADE": e.ade,
                    "σ_ADE": e.ade_std,
                    "FDE": np.nan,
                    "source": CITED_NOTE,
                }
            )
    return pd.DataFrame(rows, columns=["approach", "task", "n", "ADE", "σ_ADE", "FDE", "source"])


def loo_frame(results: Sequence[LeaveOneOutResult], include_cited: bool = True) -> pd.DataFrame:
    """実データ比較の表（分割ごとの ADE/FDE と平均）"""
    columns = ["approach"] + [SPLIT_LABELS[s] for s in SPLITS] + ["Avg", "source"]
    rows = []
    if include_cited:
        for c in CITED_RESULTS:
            row = {"approach": c.approach, "source": CITED_NOTE}
            for s, (a, f) in zip(SPLITS, c.ade_fde):
                row[SPLIT_LABELS[s]] = f"{a:.2f}/{f:.2f}"
            row["Avg"] = f"{c.average[0]:.2f}/{c.average[1]:.2f}"
            rows.append(row)
    for res in results:
        row = {"approach": res.label or "MissFormer", "source": "measured"}
        for s in SPLITS:
            r = res.per_split[s]
            row[SPLIT_LABELS[s]] = f"{r.ade:.2f}/{r.fde:.2f}"
        row["Avg"] = f"{res.average_ade:.2f}/{res.average_fde:.2f}"
        rows.append(row)
    return pd.DataFrame(rows, columns=columns)


def render_table(frame: pd.DataFrame) -> str:
    return frame.to_string(index=False, float_format=lambda v: f"{v:.3f}", na_rep="-")


def write_records(reports: Sequence[EvalReport], path: Union[str, Path], header: Optional[str] = None) -> Path:
    """
    機械可読なレコードファイル（1 行 "task n ade ade_std fde"）。
    header は "# " 付きのコメント行として先頭に書く（解決済み設定の記録用）。
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if header:
        lines += [f"# {h}" for h in header.splitlines()]
    lines += [r.to_record_line() for r in reports]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_records(path: Union[str, Path]) -> List[EvalReport]:
    reports: List[EvalReport] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        task, n, a, s, f = line.split()
        reports.append(EvalReport(task=task, n_samples=int(n), ade=float(a), ade_std=float(s), fde=float(f)))
    return reports
