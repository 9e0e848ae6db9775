"""
network.py
==========

MissFormer 本体（エンコーダのみの Transformer）。

構成:
    入力 (x, y, 欠測ビット) --線形埋め込み--> d_model 次元 + 正弦波位置エンコーディング
    → N_layer 個の {マルチヘッド自己注意, 全結合 FFN}（各サブ層は 残差 + LayerNorm）
    → トークンごとの線形出力ヘッド d_model → 2（常に絶対位置を出力）

欠測位置は注意のマスクをしない。欠測トークンも key / query として参照でき、
末尾の欠測トークンが予測スロットとして働く。
"""

from __future__ import annotations

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import PE_MAX_LENGTH, ModelConfig
from .corrupt import extend_with_missing, to_mode
from .errors import ModeError, ShapeError
from .models import AttentionRecord, ObservedSequence, Trajectory
from .tensor import Tensor, as_tensor, layer_norm, softmax
from .trajgen import make_rng

logger = logging.getLogger(__name__)

INPUT_CHANNELS = 3  # (x, y, miss)
OUTPUT_CHANNELS = 2


# ----------------------------------------------------------------------
#  位置エンコーディング
# ----------------------------------------------------------------------
def positional_encoding(k: int, d_model: int, variant: str = "literal") -> np.ndarray:
    """
    ステップ k の位置エンコーディング（長さ d_model）。

    literal     : 偶数 d は sin(k / 10000^(d/d_model))、奇数 d は cos(同)
    conventional: 指数を 2*floor(d/2)/d_model にする（sin/cos の組が同じ周波数を共有）
    """
    if not 0 <= k < PE_MAX_LENGTH:
        raise ShapeError(f"位置 k は 0 以上 {PE_MAX_LENGTH} 未満が必要です: {k}")
    d = np.arange(d_model)
    if variant == "literal":
        expo = d / d_model
    elif variant == "conventional":
        expo = 2 * (d // 2) / d_model
    else:
        raise ShapeError(f"未知の位置エンコーディング種別です: {variant!r}")
    angle = k / np.power(10000.0, expo)
    return np.where(d % 2 == 0, np.sin(angle), np.cos(angle))


def positional_table(k: int, d_model: int, variant: str = "literal") -> np.ndarray:
    return np.stack([positional_encoding(i, d_model, variant) for i in range(k)])


# ----------------------------------------------------------------------
#  注意
# ----------------------------------------------------------------------
def attention(q, k, v) -> Tuple[Tensor, Tensor]:
    """
    スケール付き内積注意 softmax(Q Kᵀ / √d_k) V。

    q [..., n_q, d_k], k [..., n_k, d_k], v [..., n_k, d_v]
    戻り値は (出力, 重み)。
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"Q と K の d_k が一致しません: {q.shape} と {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"K と V の系列長が一致しません: {k.shape} と {v.shape}")
    logits = (q @ k.transpose()) * (1.0 / math.sqrt(q.shape[-1]))
    weights = softmax(logits, axis=-1)
    return weights @ v, weights


# ----------------------------------------------------------------------
#  パラメータ
# ----------------------------------------------------------------------
def parameter_specs(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """宣言順の (名前, 形状) 一覧。パラメータ数は config だけで決まる。"""
    d, f = config.d_model, config.d_ff
    specs: List[Tuple[str, Tuple[int, ...]]] = [
        ("embed.weight", (INPUT_CHANNELS, d)),
        ("embed.bias", (d,)),
    ]
    for layer in range(config.n_layer):
        p = f"layers.{layer}"
        specs += [
            (f"{p}.attn.w_q", (d, d)),
            (f"{p}.attn.w_k", (d, d)),
            (f"{p}.attn.w_v", (d, d)),
            (f"{p}.attn.w_o", (d, d)),
            (f"{p}.attn.b_o", (d,)),
            (f"{p}.ln1.gain", (d,)),
            (f"{p}.ln1.bias", (d,)),
            (f"{p}.ff.w1", (d, f)),
            (f"{p}.ff.b1", (f,)),
            (f"{p}.ff.w2", (f, d)),
            (f"{p}.ff.b2", (d,)),
            (f"{p}.ln2.gain", (d,)),
            (f"{p}.ln2.bias", (d,)),
        ]
    specs += [
        ("head.weight", (d, OUTPUT_CHANNELS)),
        ("head.bias", (OUTPUT_CHANNELS,)),
    ]
    return specs


def count_parameters(config: ModelConfig) -> int:
    return int(sum(np.prod(shape) for _, shape in parameter_specs(config)))


def init_parameters(config: ModelConfig) -> Dict[str, np.ndarray]:
    """
    重みは N(0, 1/fan_in)、バイアスは 0、LayerNorm の gain は 1。
    config.seed だけで決まる。
    """
    rng = make_rng(config.seed)
    params: Dict[str, np.ndarray] = {}
    for name, shape in parameter_specs(config):
        if name.endswith(".gain"):
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)
    return params


# ----------------------------------------------------------------------
#  MissFormerModel
# ----------------------------------------------------------------------
class MissFormerModel:
    """
    パラメータ集合 + アーキテクチャ設定。

    推論中は変更しないので複数の読み手で共有してよい。
    学習はパラメータを書き換えるので排他的に行うこと。
    """

    def __init__(self, config: ModelConfig, params: Optional[Dict[str, np.ndarray]] = None):
        self.config = config
        self.specs = parameter_specs(config)
        if params is None:
            params = init_parameters(config)
        missing = [name for name, _ in self.specs if name not in params]
        if missing:
            raise ShapeError(f"パラメータが足りません: {', '.join(missing)}")
        self.params: Dict[str, Tensor] = {}
        for name, shape in self.specs:
            arr = np.asarray(params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name}: 形状 {arr.shape} が期待値 {shape} と一致しません")
            self.params[name] = Tensor(arr, requires_grad=True)
        self._pe = positional_table(config.k_max, config.d_model, config.pe_variant)

    # --------------------------------------------------
    #  パラメータ操作
    # --------------------------------------------------
    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return [(name, self.params[name]) for name, _ in self.specs]

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def _weights(self, track: bool) -> Dict[str, Tensor]:
        if track:
            return self.params
        # 推論時はグラフを作らない
        return {name: Tensor._from_op(p.data, False, None) for name, p in self.params.items()}

    # --------------------------------------------------
    #  順伝播
    # --------------------------------------------------
    def check_inputs(self, inputs: np.ndarray) -> None:
        if inputs.ndim != 3 or inputs.shape[-1] != INPUT_CHANNELS:
            raise ShapeError(f"入力は (batch, k, 3) が必要です: {inputs.shape}")
        k = inputs.shape[1]
        if not 2 <= k <= self.config.k_max:
            raise ShapeError(f"系列長 {k} は 2 以上 k_max={self.config.k_max} 以下が必要です")

    def embed_inputs(self, inputs: np.ndarray, track: bool = True) -> Tensor:
        """(batch, k, 3) → (batch, k, d_model)。座標は coord_scale で割ってから埋め込む。"""
        w = self._weights(track)
        k = inputs.shape[1]
        if k > self.config.k_max:
            raise ShapeError(f"系列長 {k} が k_max={self.config.k_max} を超えています")
        scaled = np.array(inputs, dtype=np.float64)
        scaled[..., :2] /= self.config.coord_scale
        return Tensor(scaled) @ w["embed.weight"] + w["embed.bias"] + self._pe[:k]

    def _self_attention(
        self,
        h: Tensor,
        w: Dict[str, Tensor],
        prefix: str,
        identity_attention: bool,
    ) -> Tuple[Tensor, np.ndarray]:
        batch, k, d = h.shape
        n_head, d_k = self.config.n_head, self.config.d_k

        def split(t: Tensor) -> Tensor:
            return t.reshape(batch, k, n_head, d_k).transpose(0, 2, 1, 3)

        q = split(h @ w[f"{prefix}.w_q"])
        key = split(h @ w[f"{prefix}.w_k"])
        v = split(h @ w[f"{prefix}.w_v"])
        if identity_attention:
            weights = Tensor(np.broadcast_to(np.eye(k), (batch, n_head, k, k)))
            out = weights @ v
        else:
            out, weights = attention(q, key, v)
        merged = out.transpose(0, 2, 1, 3).reshape(batch, k, d)
        return merged @ w[f"{prefix}.w_o"] + w[f"{prefix}.b_o"], weights.data

    def forward(
        self,
        inputs: np.ndarray,
        track: bool = True,
        identity_attention: bool = False,
    ) -> Tuple[Tensor, List[np.ndarray]]:
        """
        バッチ順伝播。

        inputs: (batch, k, 3) の (x, y, miss)。同じバッチ内の系列長は揃っていること。
        戻り値: (推定位置 (batch, k, 2) [m], 層ごとの注意重み (batch, n_head, k, k))
        """
        inputs = np.asarray(inputs, dtype=np.float64)
        self.check_inputs(inputs)
        w = self._weights(track)
        eps = self.config.ln_eps

        h = self.embed_inputs(inputs, track)
        attn: List[np.ndarray] = []
        for layer in range(self.config.n_layer):
            p = f"layers.{layer}"
            a, weights = self._self_attention(h, w, f"{p}.attn", identity_attention)
            attn.append(weights)
            h = layer_norm(h + a, w[f"{p}.ln1.gain"], w[f"{p}.ln1.bias"], eps)
            hidden = h @ w[f"{p}.ff.w1"] + w[f"{p}.ff.b1"]
            hidden = hidden.gelu() if self.config.activation == "gelu" else hidden.relu()
            f = hidden @ w[f"{p}.ff.w2"] + w[f"{p}.ff.b2"]
            h = layer_norm(h + f, w[f"{p}.ln2.gain"], w[f"{p}.ln2.bias"], eps)

        out = (h @ w["head.weight"] + w["head.bias"]) * self.config.coord_scale
        return out, attn

    # --------------------------------------------------
    #  推定器インターフェース
    # --------------------------------------------------
    def estimate(self, obs: ObservedSequence) -> np.ndarray:
        """位置モードの観測系列から (k, 2) の推定位置を返す"""
        return self.estimate_many([obs])[0]

    def estimate_many(self, observations: Sequence[ObservedSequence]) -> List[np.ndarray]:
        """同じ長さの系列をまとめて推論する（結果の順序は入力と同じ）"""
        converted = [to_mode(o, self.config.input_mode) for o in observations]
        results: List[Optional[np.ndarray]] = [None] * len(converted)
        groups: Dict[int, List[int]] = {}
        for i, o in enumerate(converted):
            groups.setdefault(o.k, []).append(i)
        for _, idx in sorted(groups.items()):
            batch = np.stack([converted[i].to_input_array() for i in idx])
            out, _ = self.forward(batch, track=False)
            for j, i in enumerate(idx):
                results[i] = out.data[j].copy()
        return results  # type: ignore[return-value]


# ----------------------------------------------------------------------
#  単一系列向けの関数
# ----------------------------------------------------------------------
def _check_mode(obs: ObservedSequence, model: MissFormerModel) -> None:
    if obs.mode != model.config.input_mode:
        raise ModeError(f"入力モード {obs.mode} がモデルの {model.config.input_mode} と一致しません")


def embed(obs: ObservedSequence, model: MissFormerModel) -> Tensor:
    """行 i = EMB((values[i], missing[i])) + PE^i の (k, d_model) テンソル"""
    if obs.k > model.config.k_max:
        raise ShapeError(f"系列長 {obs.k} が k_max={model.config.k_max} を超えています")
    return model.embed_inputs(obs.to_input_array()[None], track=True)[0]


def encoder_forward(
    obs: ObservedSequence,
    model: MissFormerModel,
    identity_attention: bool = False,
) -> Tuple[Tensor, AttentionRecord]:
    """(k, 2) の推定位置と注意重みの記録を返す"""
    _check_mode(obs, model)
    out, attn = model.forward(obs.to_input_array()[None], identity_attention=identity_attention)
    return out[0], AttentionRecord([w[0].copy() for w in attn])


def predict_full(obs: ObservedSequence, model: MissFormerModel, horizon: int = 0) -> Trajectory:
    """
    観測系列の後ろに horizon 個の欠測トークンを付けて、全長の推定軌跡を返す。
    末尾 horizon ステップが予測にあたる。horizon=0 ならフィルタリング / 再構成。
    """
    horizon = int(horizon)
    if horizon < 0 or obs.k + horizon > model.config.k_max:
        raise ShapeError(
            f"観測長 {obs.k} + 予測長 {horizon} が k_max={model.config.k_max} を超えています"
        )
    extended = extend_with_missing(obs, horizon)
    _check_mode(extended, model)
    out, _ = model.forward(extended.to_input_array()[None], track=False)
    return Trajectory(out.data[0].copy(), obs.dt)
