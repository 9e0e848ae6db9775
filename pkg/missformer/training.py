"""
training.py
===========

L2 損失（平均二乗誤差）による MissFormer の学習ループ。

- エポックごとにシャッフルしたミニバッチ（同じ長さの系列どうしでまとめる）
- エポックごとに破損（ノイズ・欠測）を引き直す（fresh_corruption=False なら固定）
- カリキュラム: 切り替えエポック以降は末尾を欠測トークンにして予測タスクにする
- 損失は入力でマスクしたステップも含む全長の軌跡で計算する
"""

from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .checkpoint import save_checkpoint
from .config import CorruptionConfig, TrainConfig, config_to_dict
from .corrupt import corrupt_many, mask_tail_for_prediction, to_mode
from .errors import DivergenceError, NumericError, ShapeError
from .meta import RunMeta
from .models import ObservedSequence, Trajectory, TrainRun
from .network import MissFormerModel
from .optim import AdamW
from .tasks import sample_pred_length
from .tensor import Tensor, as_tensor
from .trajgen import make_rng

logger = logging.getLogger(__name__)

# 乱数ストリームの識別子（seed, 用途, エポック）
_STREAM_BATCHES = 1
_STREAM_TAIL = 2
_STREAM_CORRUPT = 3


# ----------------------------------------------------------------------
#  損失
# ----------------------------------------------------------------------
def mse_loss(estimates, truth: Union[Trajectory, np.ndarray]) -> Tensor:
    """推定位置と真値の全座標にわたる二乗誤差の平均"""
    estimates = as_tensor(estimates)
    target = truth.positions if isinstance(truth, Trajectory) else np.asarray(truth, dtype=np.float64)
    if estimates.shape != target.shape:
        raise ShapeError(f"推定 {estimates.shape} と真値 {target.shape} の長さが一致しません")
    diff = estimates - target
    return (diff * diff).mean()


# ----------------------------------------------------------------------
#  カリキュラム
# ----------------------------------------------------------------------
def tail_masking_active(config: TrainConfig, epoch: int) -> bool:
    """
    このエポックで末尾マスクを使うか。

    切り替えエポックが指定されていればそれ以降、
    無ければ task == "prediction" のとき全エポック。
    """
    if config.curriculum_switch_epoch is not None:
        return epoch >= config.curriculum_switch_epoch
    return config.task == "prediction"


def prepare_inputs(
    observations: Sequence[ObservedSequence],
    config: TrainConfig,
    input_mode: str,
    epoch: int,
) -> Tuple[List[ObservedSequence], int]:
    """
    末尾マスクと入力モード変換を適用する。
    戻り値は (モデル入力, マスクした末尾ステップの総数)。
    """
    masking = tail_masking_active(config, epoch)
    rng = make_rng(config.seed, _STREAM_TAIL, epoch)
    prepared: List[ObservedSequence] = []
    masked = 0
    for obs in observations:
        if masking:
            n_pred = sample_pred_length(obs.k, config.obs_range, config.pred_range, rng)
            obs = mask_tail_for_prediction(obs, n_pred)
            masked += n_pred
        prepared.append(to_mode(obs, input_mode))
    return prepared, masked


def make_batches(lengths: Sequence[int], batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """
    同じ長さのサンプルだけでバッチを作り、バッチの順序もシャッフルする。
    長さの昇順で処理するので、同じ rng からは常に同じ並びになる。
    """
    buckets: Dict[int, List[int]] = {}
    for i, k in enumerate(lengths):
        buckets.setdefault(int(k), []).append(i)

    batches: List[np.ndarray] = []
    for k in sorted(buckets):
        idx = np.asarray(buckets[k])
        idx = idx[rng.permutation(len(idx))]
        for start in range(0, len(idx), batch_size):
            batches.append(idx[start:start + batch_size])
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


# ----------------------------------------------------------------------
#  学習ループ
# ----------------------------------------------------------------------
def train(
    model: MissFormerModel,
    corpus: Sequence[Trajectory],
    corrupt_config: CorruptionConfig,
    train_config: TrainConfig,
    log_path: Optional[Union[str, Path]] = None,
    meta: Optional[RunMeta] = None,
    checkpoint_path: Optional[Union[str, Path]] = None,
    log_every: int = 10,
) -> TrainRun:
    """
    model のパラメータをその場で更新し、TrainRun を返す。

    - log_path を渡すと 1 エポック 1 行 "epoch loss wallclock_ms" を書き出す
    - meta を渡すとエポックごとの記録と終了状態を manifest に残す
    - 損失や勾配が非有限になったら DivergenceError（最後に有限だったエポック付き）
    """
    if not corpus:
        raise ShapeError("学習コーパスが空です")
    too_long = [t.k for t in corpus if t.k > model.config.k_max]
    if too_long:
        raise ShapeError(f"k_max={model.config.k_max} を超える軌跡があります (最大 {max(too_long)})")

    cfg = train_config
    optimizer = AdamW(
        model.named_parameters(),
        lr=cfg.learning_rate,
        betas=cfg.betas,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    truths = [t.positions for t in corpus]
    lengths = [t.k for t in corpus]
    total_steps = float(sum(lengths))

    snapshot = {
        "model": config_to_dict(model.config),
        "train": config_to_dict(cfg),
        "corrupt": config_to_dict(corrupt_config),
    }
    run = TrainRun(config=snapshot)
    if meta is not None:
        meta.set_command("train", snapshot)

    log_file = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_file = log_path.open("w", encoding="utf-8")
        if meta is not None:
            meta.record_artifact("log", log_path)

    frozen: Optional[List[ObservedSequence]] = None
    if not cfg.fresh_corruption:
        frozen = corrupt_many(corpus, corrupt_config, stream=(_STREAM_CORRUPT,))

    started = time.perf_counter()
    last_finite: Optional[int] = None
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            observations = frozen
            if observations is None:
                observations = corrupt_many(corpus, corrupt_config, stream=(_STREAM_CORRUPT, epoch))
            inputs, masked = prepare_inputs(observations, cfg, model.config.input_mode, epoch)

            batch_rng = make_rng(cfg.seed, _STREAM_BATCHES, epoch)
            loss_sum = 0.0
            for idx in make_batches(lengths, cfg.batch_size, batch_rng):
                x = np.stack([inputs[i].to_input_array() for i in idx])
                y = np.stack([truths[i] for i in idx])
                try:
                    optimizer.zero_grad()
                    estimates, _ = model.forward(x)
                    loss = mse_loss(estimates, y)
                    loss.backward()
                    optimizer.step()
                except NumericError as e:
                    raise DivergenceError(f"エポック {epoch} で発散しました: {e}", last_finite) from e
                loss_sum += loss.item() * len(idx)

            epoch_loss = loss_sum / len(corpus)
            if not np.isfinite(epoch_loss):
                raise DivergenceError(f"エポック {epoch} の損失が非有限です", last_finite)
            elapsed_ms = (time.perf_counter() - t0) * 1000.0
            fraction = masked / total_steps

            run.losses.append(epoch_loss)
            run.masked_fraction.append(fraction)
            run.epoch_ms.append(elapsed_ms)
            last_finite = epoch

            if log_file is not None:
                log_file.write(run.log_lines()[-1] + "\n")
                log_file.flush()
            if meta is not None:
                meta.record_epoch(epoch, epoch_loss, fraction, elapsed_ms)
            if epoch % max(1, log_every) == 0 or epoch == cfg.epochs - 1:
                logger.info(
                    "epoch %d/%d loss=%.6f masked=%.3f (%.1f ms)",
                    epoch, cfg.epochs, epoch_loss, fraction, elapsed_ms,
                )
    except DivergenceError:
        if meta is not None:
            meta.finish("diverged")
            meta.save()
        raise
    finally:
        if log_file is not None:
            log_file.close()

    run.wallclock_s = time.perf_counter() - started
    if checkpoint_path is not None:
        run.checkpoint = str(save_checkpoint(model, checkpoint_path, extra=snapshot))
        if meta is not None:
            meta.record_artifact("checkpoint", run.checkpoint)
    if meta is not None:
        meta.finish("finished")
        meta.save()
    logger.info("学習終了: %d エポック, 最終損失 %.6f, %.1f s", run.epochs, run.losses[-1], run.wallclock_s)
    return run
