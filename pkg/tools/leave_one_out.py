"""
tools/leave_one_out.py
===========================

ETH / UCY の 5 分割で leave-one-out 評価（観測 8 点 → 予測 12 点）を回すバッチスクリプト。

主な役割:
- data_dir から 5 分割を読み込む (ingest.load_split_dir)
- 線形ベースライン、または MissFormer を評価
  - MissFormer は歩行者レジームの合成データで事前学習し、
    評価しない 4 分割で追加学習してから残り 1 分割を評価する
  - 学習の前半は全長の軌跡を与え、後半は末尾 12 点を欠測トークンにする
- 分割ごとの ADE/FDE と平均を JSON に書き出す（`app.py report --loo` で表にできる）

前提:
- data_dir に eth / hotel / univ / zara1 / zara2 のファイルがあること
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from missformer.checkpoint import load_checkpoint, save_checkpoint
from missformer.cli import configure_logging
from missformer.config import AppConfig, CorruptionConfig, GeneratorConfig, ModelConfig, TrainConfig
from missformer.errors import MissFormerError
from missformer.evaluation import LinearBaseline, leave_one_out, loo_frame, render_table
from missformer.ingest import load_split_dir
from missformer.models import SampleSet, Trajectory
from missformer.network import MissFormerModel
from missformer.tasks import REAL_OBS_LEN, REAL_PRED_LEN
from missformer.training import train
from missformer.trajgen import generate

logger = logging.getLogger("leave_one_out")


# -------------------------------------------------------------
#  事前学習
# -------------------------------------------------------------
def pretrain(
    out_dir: Path,
    samples: int,
    epochs: int,
    model_config: ModelConfig,
    seed: int,
) -> Path:
    """
    歩行者レジームの合成データで 8/12 予測を事前学習し、チェックポイントのパスを返す。
    既にあれば再利用する。
    """
    path = out_dir / "pretrain.bin"
    if path.exists():
        logger.info("事前学習済みチェックポイントを再利用します: %s", path)
        return path

    n = REAL_OBS_LEN + REAL_PRED_LEN
    gen = GeneratorConfig.pedestrian_regime(length_range=(n, n), seed=seed)
    corpus = generate(gen, samples)
    model = MissFormerModel(model_config)
    train(
        model,
        corpus,
        CorruptionConfig(seed=seed),
        _protocol_train_config(epochs, seed),
        log_path=out_dir / "pretrain.log",
        checkpoint_path=path,
    )
    return path


def _protocol_train_config(epochs: int, seed: int) -> TrainConfig:
    # 前半は全長、後半は末尾 12 点をマスク
    return TrainConfig(
        epochs=epochs,
        task="prediction",
        curriculum_switch_epoch=epochs // 2,
        obs_range=(REAL_OBS_LEN, REAL_OBS_LEN),
        pred_range=(REAL_PRED_LEN, REAL_PRED_LEN),
        seed=seed,
    )


def make_finetune_fn(pretrained: Path, out_dir: Path, epochs: int, seed: int):
    def finetune(held_out: str, training: List[SampleSet]):
        model, _ = load_checkpoint(pretrained)
        if epochs <= 0:
            return model
        corpus: List[Trajectory] = [t for ss in training for t in ss.trajectories()]
        train(
            model,
            corpus,
            CorruptionConfig(seed=seed),
            _protocol_train_config(epochs, seed),
            log_path=out_dir / f"finetune_{held_out}.log",
        )
        save_checkpoint(model, out_dir / f"finetune_{held_out}.bin", extra={"held_out": held_out})
        return model

    return finetune


# -------------------------------------------------------------
#  メイン処理
# -------------------------------------------------------------
def run_protocol(
    data_dir: Path,
    out_dir: Path,
    approach: str,
    pretrain_samples: int,
    pretrain_epochs: int,
    finetune_epochs: int,
    model_config: ModelConfig,
    seed: int,
    translate: bool = False,
    lenient: bool = False,
) -> Path:
    datasets = load_split_dir(data_dir, lenient=lenient, translate=translate)
    out_dir.mkdir(parents=True, exist_ok=True)

    if approach == "linear":
        result = leave_one_out(datasets, lambda held_out, training: LinearBaseline(), label="Linear interpolation")
    else:
        pretrained = pretrain(out_dir, pretrain_samples, pretrain_epochs, model_config, seed)
        result = leave_one_out(
            datasets,
            make_finetune_fn(pretrained, out_dir, finetune_epochs, seed),
            label="MissFormer",
        )

    path = out_dir / f"loo_{approach}.json"
    AppConfig.write_json(path, result.to_dict())
    print(render_table(loo_frame([result])))
    print(f"結果を {path} に書き出しました")
    return path


# -------------------------------------------------------------
#  CLI エントリーポイント
# -------------------------------------------------------------
def main(argv: Optional[List[str]] = None) -> int:
    app = AppConfig.from_file()
    parser = argparse.ArgumentParser(
        description="ETH / UCY leave-one-out 評価（観測 8 点 / 予測 12 点）",
    )
    parser.add_argument("--data-dir", type=Path, default=app.data_dir, help="5 分割のファイルがあるディレクトリ")
    parser.add_argument("--out-dir", type=Path, default=app.output_dir / "loo")
    parser.add_argument("--approach", choices=["linear", "missformer"], default="linear")
    parser.add_argument("--pretrain-samples", type=int, default=4000, help="歩行者レジームの事前学習本数")
    parser.add_argument("--pretrain-epochs", type=int, default=100)
    parser.add_argument("--finetune-epochs", type=int, default=20)
    parser.add_argument("--d-model", type=int, default=256)
    parser.add_argument("--heads", type=int, default=2)
    parser.add_argument("--layers", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--translate", action="store_true", help="各窓を最後の観測点が原点になるよう平行移動する")
    parser.add_argument("--lenient", action="store_true", help="壊れた行をスキップする")
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)

    configure_logging(args.log_level)
    try:
        run_protocol(
            data_dir=args.data_dir,
            out_dir=args.out_dir,
            approach=args.approach,
            pretrain_samples=args.pretrain_samples,
            pretrain_epochs=args.pretrain_epochs,
            finetune_epochs=args.finetune_epochs,
            model_config=ModelConfig(d_model=args.d_model, n_head=args.heads, n_layer=args.layers, seed=args.seed),
            seed=args.seed,
            translate=args.translate,
            lenient=args.lenient,
        )
    except (MissFormerError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
