"""
config.py
=========

アプリ全体で利用する設定値を一元管理する。
データ生成・破損（ノイズ / 欠測）・モデル・学習・評価の各設定と、
出力先などのパス設定はすべてこのモジュールの dataclass を通じて取得する。

設定の優先順位:
    コマンドライン引数 > 設定ファイル(config.toml) > dataclass のデフォルト値

本ファイルは missformer/cli.py と tools/leave_one_out.py の共通設定でもある。
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Type, TypeVar

try:
    import ujson as _json  # type: ignore[import]
except Exception:  # ujson が無い環境でも動くように
    _json = json  # type: ignore[assignment]

import toml

from .errors import ConfigError


# ------------------------------------------------------------
# 基本パス定義
# ------------------------------------------------------------

ROOT_DIR = Path(__file__).resolve().parent.parent
DEFAULT_CONFIG_PATH = ROOT_DIR / "config.toml"
OUTPUT_DIR_ENV = "MISSFORMER_OUTPUT_DIR"

# 正弦波位置エンコーディングが一意な時刻を保証する系列長の上限
PE_MAX_LENGTH = 10000

InputMode = str  # "positions" | "offsets"
INPUT_MODES = ("positions", "offsets")
TASKS = ("reconstruction", "filtering", "prediction")
PE_VARIANTS = ("literal", "conventional")
ACTIVATIONS = ("relu", "gelu")


# ------------------------------------------------------------
# 確率分布
# ------------------------------------------------------------

@dataclass(frozen=True)
class Dist:
    """
    一様分布 / 正規分布の簡易表現。

    - kind="uniform": a=下限, b=上限
    - kind="normal" : a=平均, b=標準偏差
    """

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in ("uniform", "normal"):
            raise ConfigError(f"未知の分布種別です: {self.kind!r}")
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ConfigError(f"分布パラメータが有限ではありません: {self}")
        if self.kind == "uniform" and self.a > self.b:
            raise ConfigError(f"一様分布の下限が上限を超えています: U({self.a}, {self.b})")
        if self.kind == "normal" and self.b < 0:
            raise ConfigError(f"正規分布の標準偏差が負です: N({self.a}, {self.b}^2)")

    @classmethod
    def uniform(cls, low: float, high: float) -> "Dist":
        return cls("uniform", float(low), float(high))

    @classmethod
    def normal(cls, mean: float, std: float) -> "Dist":
        return cls("normal", float(mean), float(std))

    @classmethod
    def coerce(cls, value: Any) -> "Dist":
        """TOML から来る dict / list 表現も受け付ける"""
        if isinstance(value, Dist):
            return value
        if isinstance(value, Mapping):
            return cls(str(value["kind"]), float(value["a"]), float(value["b"]))
        if isinstance(value, (list, tuple)) and len(value) == 3:
            return cls(str(value[0]), float(value[1]), float(value[2]))
        raise ConfigError(f"分布として解釈できません: {value!r}")

    def sample(self, rng, size=None):
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size)
        return rng.normal(self.a, self.b, size)

    @property
    def low(self) -> float:
        return self.a if self.kind == "uniform" else -math.inf

    @property
    def high(self) -> float:
        return self.b if self.kind == "uniform" else math.inf

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "a": self.a, "b": self.b}


def _int_pair(value: Any, name: str) -> Tuple[int, int]:
    try:
        lo, hi = (int(v) for v in value)
    except Exception as e:
        raise ConfigError(f"{name} は 2 要素の整数列で指定してください: {value!r}") from e
    if lo > hi:
        raise ConfigError(f"{name} の下限が上限を超えています: {value!r}")
    return lo, hi


# ------------------------------------------------------------
# GeneratorConfig
# ------------------------------------------------------------

@dataclass
class GeneratorConfig:
    """
    合成軌跡ジェネレータの設定。

    角度は度(deg)、速度は m/s、加速度は m/s^2 で指定する。
    デフォルトは「物体」レジーム（1 fps, U(5, 10) m/s）。
    """

    regime: str = "object"
    speed_dist: Dist = field(default_factory=lambda: Dist.uniform(5.0, 10.0))
    heading_dist: Dist = field(default_factory=lambda: Dist.uniform(0.0, 360.0))
    heading_change_dist: Dist = field(default_factory=lambda: Dist.uniform(-20.0, 20.0))
    accel_dist: Dist = field(default_factory=lambda: Dist.uniform(-0.8, 1.5))
    frame_rate: float = 1.0
    length_range: Tuple[int, int] = (8, 20)
    # 開始位置を U(-start_offset, start_offset)^2 でずらす（0 なら原点固定）
    start_offset: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.speed_dist = Dist.coerce(self.speed_dist)
        self.heading_dist = Dist.coerce(self.heading_dist)
        self.heading_change_dist = Dist.coerce(self.heading_change_dist)
        self.accel_dist = Dist.coerce(self.accel_dist)
        self.length_range = _int_pair(self.length_range, "length_range")
        self.frame_rate = float(self.frame_rate)
        self.start_offset = float(self.start_offset)
        self.seed = int(self.seed)

        if not self.frame_rate > 0:
            raise ConfigError(f"frame_rate は正の値が必要です: {self.frame_rate}")
        k_min, k_max = self.length_range
        if k_min < 2:
            raise ConfigError(f"軌跡長の下限は 2 以上が必要です: {self.length_range}")
        if k_max >= PE_MAX_LENGTH:
            raise ConfigError(f"軌跡長の上限は {PE_MAX_LENGTH} 未満が必要です: {k_max}")
        if self.start_offset < 0:
            raise ConfigError(f"start_offset は 0 以上が必要です: {self.start_offset}")
        if self.regime == "object" and self.speed_dist.kind == "uniform" and self.speed_dist.a < 0:
            raise ConfigError(f"初速の下限が負です: {self.speed_dist}")

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    @classmethod
    def object_regime(cls, **overrides: Any) -> "GeneratorConfig":
        """一般物体の運動（1 fps, U(5, 10) m/s）"""
        return cls(**{"regime": "object", **overrides})

    @classmethod
    def pedestrian_regime(cls, **overrides: Any) -> "GeneratorConfig":
        """
        歩行者の運動（2.5 fps, N(1.38, 0.37^2) m/s）。
        1 ステップ (0.4 s) あたりの方位変化は U(-10, 10) 度、加速度は U(-0.3, 0.3) m/s^2。
        """
        base: Dict[str, Any] = {
            "regime": "pedestrian",
            "speed_dist": Dist.normal(1.38, 0.37),
            "heading_change_dist": Dist.uniform(-10.0, 10.0),
            "accel_dist": Dist.uniform(-0.3, 0.3),
            "frame_rate": 2.5,
        }
        base.update(overrides)
        return cls(**base)

    @classmethod
    def for_regime(cls, regime: str, **overrides: Any) -> "GeneratorConfig":
        if regime == "object":
            return cls.object_regime(**overrides)
        if regime == "pedestrian":
            return cls.pedestrian_regime(**overrides)
        raise ConfigError(f"未知のレジームです: {regime!r}")


# ------------------------------------------------------------
# CorruptionConfig
# ------------------------------------------------------------

@dataclass
class CorruptionConfig:
    """観測ノイズ（位置に対する N(0, noise_std^2)）と欠測確率の設定"""

    noise_std: float = 0.0
    missing_prob: float = 0.0
    protect_first: bool = True
    seed: int = 0

    def __post_init__(self):
        self.noise_std = float(self.noise_std)
        self.missing_prob = float(self.missing_prob)
        self.seed = int(self.seed)
        if not (self.noise_std >= 0 and math.isfinite(self.noise_std)):
            raise ConfigError(f"noise_std は 0 以上が必要です: {self.noise_std}")
        if not 0.0 <= self.missing_prob <= 1.0:
            raise ConfigError(f"missing_prob は [0, 1] の範囲が必要です: {self.missing_prob}")


# ------------------------------------------------------------
# ModelConfig
# ------------------------------------------------------------

@dataclass
class ModelConfig:
    """
    MissFormer のアーキテクチャ設定。

    - d_model は n_head で割り切れること（d_k = d_v = d_model / n_head）
    - d_ff 未指定時は 4 * d_model
    - coord_scale: 入力座標をこの値で割り、出力座標にこの値を掛ける（メートル → 単位スケール）
    """

    d_model: int = 64
    n_head: int = 1
    n_layer: int = 1
    d_ff: Optional[int] = None
    k_max: int = 20
    input_mode: InputMode = "positions"
    pe_variant: str = "literal"
    activation: str = "relu"
    coord_scale: float = 10.0
    ln_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        for name in ("d_model", "n_head", "n_layer", "k_max"):
            value = int(getattr(self, name))
            if value < 1:
                raise ConfigError(f"{name} は 1 以上が必要です: {value}")
            setattr(self, name, value)
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        self.d_ff = int(self.d_ff)
        if self.d_ff < 1:
            raise ConfigError(f"d_ff は 1 以上が必要です: {self.d_ff}")
        if self.d_model % self.n_head != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) が n_head ({self.n_head}) で割り切れません"
            )
        if self.k_max >= PE_MAX_LENGTH:
            raise ConfigError(f"k_max は {PE_MAX_LENGTH} 未満が必要です: {self.k_max}")
        if self.input_mode not in INPUT_MODES:
            raise ConfigError(f"未知の input_mode です: {self.input_mode!r}")
        if self.pe_variant not in PE_VARIANTS:
            raise ConfigError(f"未知の pe_variant です: {self.pe_variant!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"未知の activation です: {self.activation!r}")
        self.coord_scale = float(self.coord_scale)
        if not self.coord_scale > 0:
            raise ConfigError(f"coord_scale は正の値が必要です: {self.coord_scale}")
        self.ln_eps = float(self.ln_eps)
        self.seed = int(self.seed)

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_head


# ------------------------------------------------------------
# TrainConfig
# ------------------------------------------------------------

@dataclass
class TrainConfig:
    """
    学習ループの設定。

    curriculum_switch_epoch を指定すると、そのエポック以降は
    末尾を欠測トークンに置き換えた予測タスクに切り替わる。
    """

    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    task: str = "reconstruction"
    curriculum_switch_epoch: Optional[int] = None
    weight_decay: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    obs_range: Tuple[int, int] = (8, 20)
    pred_range: Tuple[int, int] = (6, 12)
    fresh_corruption: bool = True
    seed: int = 0

    def __post_init__(self):
        self.learning_rate = float(self.learning_rate)
        self.epochs = int(self.epochs)
        self.batch_size = int(self.batch_size)
        self.weight_decay = float(self.weight_decay)
        self.eps = float(self.eps)
        self.seed = int(self.seed)
        self.betas = tuple(float(b) for b in self.betas)  # type: ignore[assignment]
        self.obs_range = _int_pair(self.obs_range, "obs_range")
        self.pred_range = _int_pair(self.pred_range, "pred_range")

        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate は正の値が必要です: {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs は 1 以上が必要です: {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size は 1 以上が必要です: {self.batch_size}")
        if self.task not in TASKS:
            raise ConfigError(f"未知のタスクです: {self.task!r}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay は 0 以上が必要です: {self.weight_decay}")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"betas は [0, 1) の 2 値が必要です: {self.betas}")
        if self.curriculum_switch_epoch is not None:
            self.curriculum_switch_epoch = int(self.curriculum_switch_epoch)
            if not 0 <= self.curriculum_switch_epoch < self.epochs:
                raise ConfigError(
                    f"curriculum_switch_epoch ({self.curriculum_switch_epoch}) は "
                    f"epochs ({self.epochs}) 未満が必要です"
                )
        if self.pred_range[0] < 0:
            raise ConfigError(f"pred_range の下限は 0 以上が必要です: {self.pred_range}")


# ------------------------------------------------------------
# EvalConfig
# ------------------------------------------------------------

@dataclass
class EvalConfig:
    """評価設定（評価セットは常に 5000 サンプルが標準）"""

    task: str = "reconstruction"
    n_samples: int = 5000
    obs_range: Tuple[int, int] = (8, 20)
    pred_range: Tuple[int, int] = (6, 12)
    seed: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"未知のタスクです: {self.task!r}")
        self.n_samples = int(self.n_samples)
        if self.n_samples < 1:
            raise ConfigError(f"n_samples は 1 以上が必要です: {self.n_samples}")
        self.obs_range = _int_pair(self.obs_range, "obs_range")
        self.pred_range = _int_pair(self.pred_range, "pred_range")
        self.seed = int(self.seed)


# ------------------------------------------------------------
# AppConfig
# ------------------------------------------------------------

@dataclass
class AppConfig:
    """
    アプリ設定クラス。

    - 出力ディレクトリ（環境変数 MISSFORMER_OUTPUT_DIR で既定値を上書き可能）
    - 実データ（ETH/UCY）ディレクトリ
    - 設定ファイルから読んだセクションの保持
    """

    output_dir: Path = ROOT_DIR / "runs"
    data_dir: Path = ROOT_DIR / "data"
    sections: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    # ============================================================
    # 初期化処理
    # ============================================================

    def __post_init__(self):
        env_dir = self._load_output_dir()
        if env_dir is not None:
            self.output_dir = env_dir
        self.output_dir = Path(self.output_dir)
        self.data_dir = Path(self.data_dir)

    # ============================================================
    # 内部関数
    # ============================================================

    @staticmethod
    def _load_output_dir() -> Optional[Path]:
        value = os.environ.get(OUTPUT_DIR_ENV)
        if value:
            return Path(value)
        return None

    @classmethod
    def from_file(cls, path: Optional[Path] = None) -> "AppConfig":
        """
        config.toml を読み込む。
        パス未指定でデフォルトファイルが無い場合は空設定を返す。
        """
        sections = load_config_file(path)
        paths = sections.get("paths", {})
        kwargs: Dict[str, Any] = {"sections": sections}
        if "output_dir" in paths:
            kwargs["output_dir"] = _resolve(paths["output_dir"])
        if "data_dir" in paths:
            kwargs["data_dir"] = _resolve(paths["data_dir"])
        return cls(**kwargs)

    def section(self, name: str) -> Dict[str, Any]:
        value = self.sections.get(name, {})
        if not isinstance(value, dict):
            raise ConfigError(f"[{name}] はテーブルで指定してください")
        return dict(value)

    # ============================================================
    # JSON 読み書きユーティリティ
    # ============================================================

    @staticmethod
    def read_json(path: Path):
        if not path.exists():
            return None
        return _json.loads(path.read_text(encoding="utf-8"))

    @staticmethod
    def write_json(path: Path, data: dict):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, ensure_ascii=False, indent=2), encoding="utf-8")


# ------------------------------------------------------------
# 設定ファイル / 上書きのマージ
# ------------------------------------------------------------

C = TypeVar("C")


def _resolve(value: Any) -> Path:
    p = Path(str(value))
    return p if p.is_absolute() else ROOT_DIR / p


def load_config_file(path: Optional[Path] = None) -> Dict[str, Dict[str, Any]]:
    """TOML 設定ファイルを {section: {key: value}} として読む"""
    explicit = path is not None
    path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    if not path.exists():
        if explicit:
            raise ConfigError(f"設定ファイルが見つかりません: {path}")
        return {}
    try:
        data = toml.load(str(path))
    except (toml.TomlDecodeError, OSError) as e:
        raise ConfigError(f"設定ファイルを読み込めません: {path}: {e}") from e
    return {k: v for k, v in data.items() if isinstance(v, dict)}


def build_config(cls: Type[C], file_section: Mapping[str, Any], overrides: Mapping[str, Any]) -> C:
    """
    dataclass 設定を「デフォルト < ファイル < 上書き」の順で組み立てる。
    overrides の値が None のキーは未指定として扱う。
    未知のキーはエラーにする。
    """
    known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    unknown = sorted(set(file_section) - known)
    if unknown:
        raise ConfigError(f"{cls.__name__} に未知の設定キーがあります: {', '.join(unknown)}")
    merged: Dict[str, Any] = dict(file_section)
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"{cls.__name__} に未知の設定キーがあります: {key}")
        merged[key] = value
    try:
        return cls(**merged)
    except TypeError as e:
        raise ConfigError(f"{cls.__name__} を構築できません: {e}") from e


def config_to_dict(cfg: Any) -> Dict[str, Any]:
    """成果物に埋め込むための JSON 互換 dict（Path / Dist / tuple を展開）"""
    raw = asdict(cfg)

    def conv(v: Any) -> Any:
        if isinstance(v, Path):
            return str(v)
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        return v

    return {k: conv(v) for k, v in raw.items()}


def json_line(data: Mapping[str, Any]) -> str:
    """1 行の JSON（ファイル先頭の "# config: ..." などに使う）"""
    return _json.dumps(dict(data), ensure_ascii=False)


def load_json_line(text: str) -> Dict[str, Any]:
    return _json.loads(text)
