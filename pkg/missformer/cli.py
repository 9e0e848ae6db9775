"""
cli.py
======

コマンドラインのエントリーポイント。

    python app.py <command> [options]

コマンド:
    generate   合成軌跡コーパスを生成
    corrupt    コーパスにノイズ・欠測を加えた観測系列ファイルを作る
    train      MissFormer を学習（チェックポイント・学習ログ・run.json を出力）
    eval       学習済みモデルまたはベースラインを評価
    predict    1 本の観測系列から全長の軌跡を推定
    plot-attn  注意フィルタのヒートマップ（SVG + JSON）
    plot-traj  真値・観測・推定の重ね描き（SVG + JSON）
    report     評価レコードと引用値の比較表

終了コード: 0 成功 / 1 使い方の誤り / 2 実行時エラー
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .checkpoint import load_checkpoint
from .config import (
    ACTIVATIONS,
    INPUT_MODES,
    PE_VARIANTS,
    TASKS,
    AppConfig,
    CorruptionConfig,
    EvalConfig,
    GeneratorConfig,
    ModelConfig,
    TrainConfig,
    build_config,
    config_to_dict,
    json_line,
)
from .corpus import load_corpus, save_corpus, save_observations
from .corrupt import corrupt, corrupt_many, mask_tail_for_prediction, to_mode
from .errors import ConfigError, MissFormerError
from .evaluation import (
    IdentityBaseline,
    LeaveOneOutResult,
    LinearBaseline,
    evaluate,
    loo_frame,
    read_records,
    render_table,
    results_frame,
    write_records,
)
from .kalman import KalmanBaseline
from .meta import RunMeta
from .models import EvalReport, Trajectory
from .network import MissFormerModel, encoder_forward, predict_full
from .plots import plot_attention, plot_trajectories
from .tasks import get_task, sample_pred_length
from .training import train
from .trajgen import generate, make_rng

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

BASELINES = ("linear", "kalman", "identity")


class UsageError(MissFormerError):
    """引数の誤り（終了コード 1）"""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


# ----------------------------------------------------------------------
#  引数定義
# ----------------------------------------------------------------------
def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="TOML 設定ファイル（既定: config.toml）")
    p.add_argument("--seed", type=int, default=None, help="すべての乱数の種")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _data_flags(p: argparse.ArgumentParser, required: bool = False) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--corpus", type=Path, default=None, help="軌跡コーパスファイル")
    g.add_argument("--samples", type=int, default=None, help="合成データを生成するときの本数")
    p.add_argument("--regime", choices=["object", "pedestrian"], default=None)
    p.add_argument("--lenient", action="store_true", help="壊れた行を警告してスキップする")


def _corrupt_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--noise", type=float, default=None, help="観測ノイズの標準偏差 [m]")
    p.add_argument("--missing", type=float, default=None, help="欠測確率")
    p.add_argument("--no-protect-first", action="store_true", help="先頭ステップの欠測も許す")


def _estimator_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--ckpt", type=Path, default=None, help="モデルのチェックポイント")
    g.add_argument("--baseline", choices=BASELINES, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="missformer", description="MissFormer: 欠測を含む軌跡の再構成・フィルタリング・予測")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="合成軌跡コーパスを生成")
    _common(p)
    p.add_argument("--regime", choices=["object", "pedestrian"], default=None)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--min-len", type=int, default=None)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--start-offset", type=float, default=None)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("corrupt", help="観測系列ファイルを作る")
    _common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--lenient", action="store_true")
    _corrupt_flags(p)
    p.add_argument("--mode", choices=INPUT_MODES, default="positions")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="MissFormer を学習")
    _common(p)
    _data_flags(p)
    _corrupt_flags(p)
    p.add_argument("--task", choices=TASKS, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--switch-epoch", type=int, default=None, help="末尾マスクを始めるエポック")
    p.add_argument("--frozen-corruption", action="store_true", help="破損をエポックごとに引き直さない")
    p.add_argument("--d-model", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--d-ff", type=int, default=None)
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("--input-mode", choices=INPUT_MODES, default=None)
    p.add_argument("--pe-variant", choices=PE_VARIANTS, default=None)
    p.add_argument("--activation", choices=ACTIVATIONS, default=None)
    p.add_argument("--init-ckpt", type=Path, default=None, help="このチェックポイントから追加学習する")
    p.add_argument("--out-dir", type=Path, default=None)

    p = sub.add_parser("eval", help="モデル / ベースラインを評価")
    _common(p)
    _estimator_flags(p)
    _data_flags(p)
    _corrupt_flags(p)
    p.add_argument("--task", choices=TASKS, default=None)
    p.add_argument("--records", type=Path, default=None, help="task n ade ade_std fde を書き出すファイル")

    p = sub.add_parser("predict", help="1 本の観測系列から全長の軌跡を推定")
    _common(p)
    p.add_argument("--ckpt", type=Path, required=True)
    _data_flags(p)
    _corrupt_flags(p)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--horizon", type=int, default=0, help="末尾に追加する予測ステップ数")
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("plot-attn", help="注意フィルタのヒートマップ")
    _common(p)
    p.add_argument("--ckpt", type=Path, required=True)
    _data_flags(p)
    _corrupt_flags(p)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("plot-traj", help="真値・観測・推定の重ね描き")
    _common(p)
    _estimator_flags(p)
    _data_flags(p)
    _corrupt_flags(p)
    p.add_argument("--task", choices=TASKS, default=None)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("report", help="評価レコードと引用値の比較表")
    _common(p)
    p.add_argument("--records", type=Path, nargs="*", default=[])
    p.add_argument("--loo", type=Path, nargs="*", default=[], help="leave_one_out の結果 JSON")
    p.add_argument("--no-cited", action="store_true", help="引用値の行を出さない")
    p.add_argument("--out", type=Path, default=None)

    return parser


# ----------------------------------------------------------------------
#  設定の解決（フラグ > 設定ファイル > 既定値）
# ----------------------------------------------------------------------
class Context:
    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.app = AppConfig.from_file(args.config)
        self.seed: Optional[int] = args.seed

    def _seeded(self, overrides: Dict[str, Any]) -> Dict[str, Any]:
        return {**overrides, "seed": self.seed}

    def task(self) -> str:
        name = "train" if self.args.command == "train" else "eval"
        return getattr(self.args, "task", None) or self.app.section(name).get("task", "reconstruction")

    def generator(self) -> GeneratorConfig:
        a = self.args
        file_section = self.app.section("generator")
        regime = getattr(a, "regime", None) or file_section.get("regime", "object")
        section = {k: v for k, v in file_section.items() if k != "regime"}

        overrides: Dict[str, Any] = {"start_offset": getattr(a, "start_offset", None), "seed": self.seed}
        lo, hi = getattr(a, "min_len", None), getattr(a, "max_len", None)
        if "length_range" not in section and lo is None and hi is None and self.task() == "prediction":
            # 予測タスクは 観測長の下限 + 予測長の下限 以上の長さが必要
            spec = get_task("prediction")
            lo, hi = spec.obs_range[0] + spec.pred_range[0], self.model_k_max()
        if lo is not None or hi is not None:
            default_lo, default_hi = section.get("length_range", GeneratorConfig().length_range)
            overrides["length_range"] = (lo or default_lo, hi or default_hi)
        merged = {**section, **{k: v for k, v in overrides.items() if v is not None}}
        try:
            return GeneratorConfig.for_regime(regime, **merged)
        except TypeError as e:
            raise ConfigError(f"[generator] の設定が不正です: {e}") from e

    def model_k_max(self) -> int:
        return int(getattr(self.args, "k_max", None) or self.app.section("model").get("k_max", 20))

    def corruption(self) -> CorruptionConfig:
        a = self.args
        overrides = {
            "noise_std": getattr(a, "noise", None),
            "missing_prob": getattr(a, "missing", None),
            "protect_first": False if getattr(a, "no_protect_first", False) else None,
        }
        return build_config(CorruptionConfig, self.app.section("corrupt"), self._seeded(overrides))

    def model(self) -> ModelConfig:
        a = self.args
        overrides = {
            "d_model": a.d_model,
            "n_head": a.heads,
            "n_layer": a.layers,
            "d_ff": a.d_ff,
            "k_max": a.k_max,
            "input_mode": a.input_mode,
            "pe_variant": a.pe_variant,
            "activation": a.activation,
        }
        return build_config(ModelConfig, self.app.section("model"), self._seeded(overrides))

    def train(self) -> TrainConfig:
        a = self.args
        spec = get_task(self.task())
        base = {"obs_range": spec.obs_range}
        if spec.predicts:
            base["pred_range"] = spec.pred_range
        overrides = {
            "task": a.task,
            "epochs": a.epochs,
            "batch_size": a.batch_size,
            "learning_rate": a.lr,
            "weight_decay": a.weight_decay,
            "curriculum_switch_epoch": a.switch_epoch,
            "fresh_corruption": False if a.frozen_corruption else None,
        }
        return build_config(TrainConfig, {**base, **self.app.section("train")}, self._seeded(overrides))

    def evaluation(self) -> EvalConfig:
        task = self.task()
        spec = get_task(task)
        base = {"obs_range": spec.obs_range, "pred_range": spec.pred_range}
        section = self.app.section("eval")
        return build_config(EvalConfig, {**base, **section}, self._seeded({"task": task}))

    def corpus(self, worker: int) -> List[Trajectory]:
        """--corpus のファイル、または --samples 本の合成データ（学習は worker 0、評価は worker 1）"""
        a = self.args
        if getattr(a, "corpus", None) is not None:
            return load_corpus(a.corpus, lenient=getattr(a, "lenient", False))
        n = getattr(a, "samples", None)
        if n is None:
            n = self.evaluation().n_samples if worker else 1000
        return generate(self.generator(), n, worker=worker)

    def pick(self, corpus: Sequence[Trajectory]) -> Trajectory:
        i = self.args.sample
        if not 0 <= i < len(corpus):
            raise UsageError(f"--sample {i} は 0 以上 {len(corpus)} 未満で指定してください")
        return corpus[i]

    def estimator(self):
        a = self.args
        if a.ckpt is not None:
            model, _ = load_checkpoint(a.ckpt)
            return model, "MissFormer"
        if a.baseline == "linear":
            return LinearBaseline(), LinearBaseline.label
        if a.baseline == "kalman":
            noise = self.corruption().noise_std
            return KalmanBaseline(measurement_std=max(noise, 0.1)), "Kalman (CV + RTS)"
        return IdentityBaseline(), IdentityBaseline.label


# ----------------------------------------------------------------------
#  サブコマンド
# ----------------------------------------------------------------------
def cmd_generate(ctx: Context) -> int:
    cfg = ctx.generator()
    corpus = generate(cfg, ctx.args.n)
    save_corpus(corpus, ctx.args.out, config={"generator": config_to_dict(cfg), "n": ctx.args.n})
    print(f"{len(corpus)} 本の軌跡を {ctx.args.out} に書き出しました")
    return EXIT_OK


def cmd_corrupt(ctx: Context) -> int:
    a = ctx.args
    corpus = load_corpus(a.corpus, lenient=a.lenient)
    corrupt_cfg = ctx.corruption()
    observations = [to_mode(o, a.mode) for o in corrupt_many(corpus, corrupt_cfg)]
    header = {"corrupt": config_to_dict(corrupt_cfg), "mode": a.mode, "corpus": str(a.corpus)}
    save_observations(observations, a.out, config=header)
    print(f"{len(observations)} 本の観測系列を {a.out} に書き出しました")
    return EXIT_OK


def cmd_train(ctx: Context) -> int:
    a = ctx.args
    train_cfg = ctx.train()
    corrupt_cfg = ctx.corruption()
    if a.init_ckpt is not None:
        model, _ = load_checkpoint(a.init_ckpt)
    else:
        model = MissFormerModel(ctx.model())
    corpus = ctx.corpus(worker=0)

    out_dir = Path(a.out_dir) if a.out_dir is not None else ctx.app.output_dir / "train"
    meta = RunMeta(out_dir / "run.json").load()
    run = train(
        model,
        corpus,
        corrupt_cfg,
        train_cfg,
        log_path=out_dir / "train.log",
        meta=meta,
        checkpoint_path=out_dir / "model.bin",
    )
    print(f"final loss {run.losses[-1]:.6f} / checkpoint {run.checkpoint}")
    return EXIT_OK


def cmd_eval(ctx: Context) -> int:
    a = ctx.args
    estimator, label = ctx.estimator()
    eval_cfg = ctx.evaluation()
    corpus = ctx.corpus(worker=1)
    report = evaluate(estimator, corpus, ctx.corruption(), task=eval_cfg.task, eval_config=eval_cfg, label=label)
    print(render_table(results_frame([report], include_reference=True)))
    if a.records is not None:
        header = json_line(
            {"eval": config_to_dict(eval_cfg), "corrupt": config_to_dict(ctx.corruption()), "estimator": label}
        )
        write_records([report], a.records, header=header)
    return EXIT_OK


def cmd_predict(ctx: Context) -> int:
    a = ctx.args
    model, _ = load_checkpoint(a.ckpt)
    traj = ctx.pick(ctx.corpus(worker=1))
    observed_len = traj.k - a.horizon
    if a.horizon < 0 or observed_len < 2:
        raise UsageError(f"--horizon {a.horizon} を引いた観測長が 2 未満です（軌跡長 {traj.k}）")
    corrupt_cfg = ctx.corruption()
    obs = corrupt(traj.prefix(observed_len), corrupt_cfg, make_rng(corrupt_cfg.seed, a.sample))
    obs = to_mode(obs, model.config.input_mode)
    estimate = predict_full(obs, model, a.horizon)
    if a.out is not None:
        header = {
            "model": config_to_dict(model.config),
            "corrupt": config_to_dict(corrupt_cfg),
            "sample": a.sample,
            "horizon": a.horizon,
        }
        save_corpus([estimate], a.out, config=header)
    print(estimate.to_line())
    return EXIT_OK


def cmd_plot_attn(ctx: Context) -> int:
    a = ctx.args
    model, extra = load_checkpoint(a.ckpt)
    traj = ctx.pick(ctx.corpus(worker=1))
    obs = corrupt(traj, ctx.corruption(), make_rng(ctx.corruption().seed, a.sample))
    model_obs = to_mode(obs, model.config.input_mode)
    _, record = encoder_forward(model_obs, model)
    plot_attention(record, model_obs.missing, a.out, extra={"model": config_to_dict(model.config)})
    print(f"{a.out} を書き出しました")
    return EXIT_OK


def cmd_plot_traj(ctx: Context) -> int:
    a = ctx.args
    estimator, label = ctx.estimator()
    eval_cfg = ctx.evaluation()
    traj = ctx.pick(ctx.corpus(worker=1))
    obs = corrupt(traj, ctx.corruption(), make_rng(ctx.corruption().seed, a.sample))
    if eval_cfg.task == "prediction":
        n_pred = sample_pred_length(traj.k, eval_cfg.obs_range, eval_cfg.pred_range, make_rng(eval_cfg.seed, a.sample))
        obs = mask_tail_for_prediction(obs, n_pred)
    estimate = estimator.estimate(obs)
    plot_trajectories(traj, obs, estimate, a.out, extra={"estimator": label, "eval": config_to_dict(eval_cfg)})
    print(f"{a.out} を書き出しました")
    return EXIT_OK


def _load_loo(path: Path) -> LeaveOneOutResult:
    data = AppConfig.read_json(path)
    if data is None:
        raise ConfigError(f"ファイルが見つかりません: {path}")
    return LeaveOneOutResult(
        per_split={s: EvalReport.from_dict(r) for s, r in data["per_split"].items()},
        label=data.get("label", ""),
    )


def cmd_report(ctx: Context) -> int:
    a = ctx.args
    if not a.records and not a.loo:
        raise UsageError("--records か --loo のどちらかを指定してください")
    blocks: List[str] = []
    if a.records:
        reports = [r for p in a.records for r in read_records(p)]
        blocks.append(render_table(results_frame(reports, include_reference=not a.no_cited)))
    if a.loo:
        results = [_load_loo(p) for p in a.loo]
        blocks.append(render_table(loo_frame(results, include_cited=not a.no_cited)))
    text = "\n\n".join(blocks)
    if a.out is not None:
        Path(a.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "corrupt": cmd_corrupt,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "plot-attn": cmd_plot_attn,
    "plot-traj": cmd_plot_traj,
    "report": cmd_report,
}


# ----------------------------------------------------------------------
#  エントリーポイント
# ----------------------------------------------------------------------
def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def run(argv: Optional[Sequence[str]] = None) -> int:
    """サブコマンドを実行して終了コードを返す（例外は外に出さない）"""
    parser = build_parser()
    try:
        args = parser.parse_args(None if argv is None else list(argv))
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)

    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](Context(args))
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (MissFormerError, OSError, ValueError) as e:
        logger.debug("実行時エラー", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())
