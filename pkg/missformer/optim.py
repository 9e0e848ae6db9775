"""
optim.py
========

重み減衰を分離した ADAM 変種（AdamW）。

adamw_step() は numpy 配列の辞書を受け取って新しい辞書を返す純粋関数。
AdamW クラスはそれを名前付き Tensor パラメータに適用するラッパー。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """一次・二次モーメントとステップ数"""

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    AdamW の 1 ステップ。

    - 勾配の無いパラメータはそのまま返す
    - 重み減衰は勾配とは独立に p *= (1 - lr * weight_decay)
    - モーメントはバイアス補正してから使う
    """
    beta1, beta2 = betas
    t = state.step + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t

    new_params: Dict[str, np.ndarray] = dict(params)
    new_state = AdamState(step=t, m=dict(state.m), v=dict(state.v))

    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"未知のパラメータの勾配です: {name}")
        p = params[name]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"{name}: 勾配 {g.shape} がパラメータ {p.shape} と一致しません")
        if not np.isfinite(g).all():
            raise NumericError(f"{name}: 非有限の勾配を検出しました（ステップ {t}）")

        m = new_state.m.get(name)
        v = new_state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        elif m.shape != p.shape or v.shape != p.shape:
            raise ShapeError(f"{name}: オプティマイザ状態の形状 {m.shape} がパラメータ {p.shape} と一致しません")

        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2

        updated = p * (1.0 - lr * weight_decay) - lr * m_hat / (np.sqrt(v_hat) + eps)
        if not np.isfinite(updated).all():
            raise NumericError(f"{name}: 更新後のパラメータが非有限です（ステップ {t}）")
        new_params[name] = updated
        new_state.m[name] = m
        new_state.v[name] = v

    return new_params, new_state


class AdamW:
    """
    名前付き Tensor パラメータに adamw_step() を適用する。

    使い方:
        opt = AdamW(model.named_parameters(), lr=1e-3)
        opt.zero_grad(); loss.backward(); opt.step()
    """

    def __init__(
        self,
        named_params: Sequence[Tuple[str, Tensor]],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
    ):
        self.params: Dict[str, Tensor] = dict(named_params)
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        grads = {name: p.grad for name, p in self.params.items() if p.grad is not None}
        arrays = {name: p.data for name, p in self.params.items()}
        updated, self.state = adamw_step(
            arrays,
            grads,
            self.state,
            lr=self.lr,
            betas=self.betas,
            eps=self.eps,
            weight_decay=self.weight_decay,
        )
        for name in grads:
            # パラメータ Tensor の同一性は保ったまま中身だけ差し替える
            self.params[name].data[...] = updated[name]
