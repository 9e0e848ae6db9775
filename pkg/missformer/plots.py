"""
plots.py
========

注意フィルタのヒートマップと軌跡の重ね描きを SVG で書き出す。

すべての図には同名の .json サイドカー（描画した生データ）を添える。
テストは SVG のバイト列ではなくサイドカーを検証する。
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .config import AppConfig  # noqa: E402
from .errors import ShapeError  # noqa: E402
from .models import AttentionRecord, ObservedSequence, Trajectory  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".json")


def _save(fig, path: Path, sidecar: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.savefig(path, format="svg")
    finally:
        plt.close(fig)
    AppConfig.write_json(sidecar_path(path), sidecar)
    logger.info("図を書き出しました: %s", path)
    return path


# ----------------------------------------------------------------------
#  注意フィルタ
# ----------------------------------------------------------------------
def plot_attention(
    record: AttentionRecord,
    missing: Sequence[int],
    path: PathLike,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    層 × ヘッドごとに k×k の注意行列を色で描く（0 が白、最大値が濃色）。
    欠測している入力の添字はフィルタの上に "×" で示す。
    """
    if not record.layers:
        raise ShapeError("注意重みの記録が空です")
    missing = np.asarray(missing, dtype=np.uint8)
    k = record.layers[0].shape[-1]
    if missing.shape != (k,):
        raise ShapeError(f"欠測ビットの長さ {missing.shape} が注意行列の大きさ {k} と一致しません")

    n_layer = record.n_layer
    n_head = record.layers[0].shape[0]
    fig, axes = plt.subplots(
        n_layer, n_head, figsize=(3.2 * n_head, 3.4 * n_layer), squeeze=False
    )
    missing_idx = np.flatnonzero(missing)
    for layer in range(n_layer):
        for head in range(n_head):
            ax = axes[layer][head]
            w = record.head(layer, head)
            ax.imshow(w, cmap="Blues", vmin=0.0, vmax=max(float(w.max()), 1e-12), interpolation="nearest")
            ax.set_title(f"layer {layer} / head {head}", fontsize=9, pad=14)
            ax.set_xlabel("key step")
            ax.set_ylabel("query step")
            for i in missing_idx:
                ax.text(i, -0.9, "×", ha="center", va="bottom", color="crimson", fontsize=8)
    fig.tight_layout()

    sidecar = {
        "kind": "attention",
        "layers": [w.tolist() for w in record.layers],
        "missing": missing.tolist(),
        "missing_indices": missing_idx.tolist(),
    }
    if extra:
        sidecar["config"] = extra
    return _save(fig, Path(path), sidecar)


# ----------------------------------------------------------------------
#  軌跡の重ね描き
# ----------------------------------------------------------------------
def plot_trajectories(
    truth: Trajectory,
    observed: ObservedSequence,
    estimate: Union[Trajectory, np.ndarray],
    path: PathLike,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    真値・ノイズ入り観測・推定を重ねて描く。
    欠測ステップは真値の位置に × を付ける（× の数 = 欠測ビットの数）。
    """
    est = estimate.positions if isinstance(estimate, Trajectory) else np.asarray(estimate, dtype=np.float64)
    if observed.mode != "positions":
        raise ShapeError(f"観測は positions モードで渡してください: {observed.mode}")
    if not (truth.k == observed.k == est.shape[0]):
        raise ShapeError(f"長さが一致しません: 真値 {truth.k}, 観測 {observed.k}, 推定 {est.shape[0]}")

    obs_idx = observed.observed_indices()
    miss_idx = np.flatnonzero(observed.missing)
    crosses = truth.positions[miss_idx]

    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    ax.plot(truth.positions[:, 0], truth.positions[:, 1], "-", color="black", label="ground truth")
    ax.plot(observed.values[obs_idx, 0], observed.values[obs_idx, 1], "o", color="gray", ms=4, label="observations")
    if len(miss_idx):
        ax.plot(crosses[:, 0], crosses[:, 1], "x", color="crimson", ms=7, label="missing")
    ax.plot(est[:, 0], est[:, 1], "--", color="tab:blue", label="estimate")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(fontsize=8)
    fig.tight_layout()

    sidecar = {
        "kind": "trajectory",
        "truth": truth.positions.tolist(),
        "observed": observed.values[obs_idx].tolist(),
        "observed_indices": obs_idx.tolist(),
        "crosses": crosses.tolist(),
        "estimate": est.tolist(),
    }
    if extra:
        sidecar["config"] = extra
    return _save(fig, Path(path), sidecar)
