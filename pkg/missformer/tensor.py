"""
tensor.py
=========

MissFormer を表現・学習するための最小限の密テンソル演算と、
テープ方式のリバースモード自動微分。

- データは常に float64 の numpy 配列（行優先）
- 順伝播のたびにグラフを作り直す（系列長が可変なので静的グラフは持たない）
- NaN / Inf は黙って伝播させず、生成した時点で NumericError を投げる

使い方:
    w = Tensor([1.0, 2.0], requires_grad=True)
    loss = (w * w).sum()
    loss.backward()
    w.grad  # -> [2., 4.]
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import GradientStateError, NumericError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]


# ----------------------------------------------------------------------
#  ユーティリティ
# ----------------------------------------------------------------------
def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{what} が NaN / Inf を含みます")


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """ブロードキャストで広がった勾配を元の形状へ畳み込む"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def as_tensor(x: ArrayLike) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


# ----------------------------------------------------------------------
#  Tensor
# ----------------------------------------------------------------------
class Tensor:
    """
    勾配追跡つきの n 次元配列。

    構築後はデータを変更しない（例外はオプティマイザによる更新と
    gradcheck による摂動のみ）。grad は backward() でだけ埋まる。
    """

    __array_ufunc__ = None  # ndarray との二項演算で Tensor 側の演算子を使わせる

    def __init__(self, data: Any, requires_grad: bool = False, _ctx: Optional["Function"] = None):
        arr = np.asarray(data, dtype=np.float64)
        if _ctx is None:
            arr = arr.copy()
            _check_finite(arr, "Tensor の入力")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._ctx = _ctx

    @classmethod
    def _from_op(cls, arr: np.ndarray, requires_grad: bool, ctx: Optional["Function"]) -> "Tensor":
        """演算結果用。コピーと有限性チェックは Function.apply 側で済ませてある。"""
        t = cls.__new__(cls)
        t.data = np.asarray(arr, dtype=np.float64)
        t.requires_grad = requires_grad
        t.grad = None
        t._ctx = ctx
        return t

    # --------------------------------------------------
    #  基本属性
    # --------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() はスカラーにのみ使えます: {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # --------------------------------------------------
    #  演算子
    # --------------------------------------------------
    def __add__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, (int, float)):
            return Scale.apply(self, c=float(other))
        return Mul.apply(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return self.__mul__(other)

    def __truediv__(self, other: float) -> "Tensor":
        if not isinstance(other, (int, float)):
            raise ShapeError("Tensor の除算はスカラーでのみサポートしています")
        return Scale.apply(self, c=1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return Scale.apply(self, c=-1.0)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return MatMul.apply(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return Slice.apply(self, index=index)

    # --------------------------------------------------
    #  メソッド形式
    # --------------------------------------------------
    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def transpose(self, *axes: int) -> "Tensor":
        return Transpose.apply(self, axes=axes or None)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def relu(self) -> "Tensor":
        return ReLU.apply(self)

    def gelu(self) -> "Tensor":
        return GELU.apply(self)

    def softmax(self, axis: int = -1) -> "Tensor":
        return Softmax.apply(self, axis=axis)

    # --------------------------------------------------
    #  逆伝播
    # --------------------------------------------------
    def backward(self, accumulate: bool = False) -> None:
        """
        スカラー損失から勾配を逆伝播する。

        accumulate=False のとき、すでに grad を持つ葉テンソルがあれば
        GradientStateError を投げる（zero_grad() を忘れた 2 回目の呼び出し）。
        accumulate=True なら既存の grad に加算する。
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() はスカラー損失にのみ使えます: {self.shape}")
        if not self.requires_grad:
            raise GradientStateError("損失が勾配追跡されたパラメータに接続されていません")

        graph = ComputationGraph.from_root(self)
        grads = {id(self): np.ones_like(self.data)}
        leaves: List[Tuple[Tensor, np.ndarray]] = []

        for node in reversed(graph.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._ctx is None:
                leaves.append((node, g))
                continue
            for parent, pg in zip(node._ctx.parents, node._ctx.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

        if not accumulate:
            for leaf, _ in leaves:
                if leaf.grad is not None:
                    raise GradientStateError(
                        "勾配がリセットされていません。zero_grad() を呼ぶか accumulate=True を指定してください"
                    )
        for leaf, g in leaves:
            g = np.array(g, dtype=np.float64).reshape(leaf.shape)
            _check_finite(g, "勾配")
            leaf.grad = g if leaf.grad is None else leaf.grad + g


# ----------------------------------------------------------------------
#  計算グラフ
# ----------------------------------------------------------------------
@dataclass
class ComputationGraph:
    """
    勾配追跡テンソルのトポロジカル順リスト。
    各ノードの入力は必ずそのノードより前に並ぶ。
    """

    nodes: List[Tensor] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputationGraph":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        # 再帰上限を避けるため反復 DFS
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    def leaves(self) -> List[Tensor]:
        return [n for n in self.nodes if n._ctx is None]


# ----------------------------------------------------------------------
#  Function 基底
# ----------------------------------------------------------------------
class Function:
    """
    微分可能な演算の基底クラス。

    forward() は numpy 配列を受け取り numpy 配列を返す。
    backward() は出力に対する勾配から、各入力に対する勾配のタプルを返す。
    """

    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *inputs: ArrayLike, **kwargs: Any) -> Tensor:
        parents = tuple(as_tensor(x) for x in inputs)
        fn = cls(*parents)
        out = fn.forward(*[p.data for p in parents], **kwargs)
        _check_finite(out, f"{cls.__name__} の出力")
        requires_grad = any(p.requires_grad for p in parents)
        return Tensor._from_op(out, requires_grad, fn if requires_grad else None)

    def forward(self, *args: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError


# ----------------------------------------------------------------------
#  要素ごとの演算
# ----------------------------------------------------------------------
class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        sa, sb = self.shapes
        return unbroadcast(grad, sa), unbroadcast(grad, sb)


class Sub(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        sa, sb = self.shapes
        return unbroadcast(grad, sa), unbroadcast(-grad, sb)


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return unbroadcast(grad * self.b, self.a.shape), unbroadcast(grad * self.a, self.b.shape)


class Scale(Function):
    def forward(self, x, c: float):
        self.c = c
        return x * c

    def backward(self, grad):
        return (grad * self.c,)


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class GELU(Function):
    """tanh 近似の GELU"""

    _C = math.sqrt(2.0 / math.pi)

    def forward(self, x):
        self.x = x
        self.t = np.tanh(self._C * (x + 0.044715 * x ** 3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad):
        x, t = self.x, self.t
        dt = (1.0 - t * t) * self._C * (1.0 + 3 * 0.044715 * x * x)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * dt),)


# ----------------------------------------------------------------------
#  行列積・形状操作
# ----------------------------------------------------------------------
class MatMul(Function):
    """
    a [..., m, k] @ b [..., k, n] -> [..., m, n]（先頭の次元はブロードキャスト）
    dL/dA = dL/dC · Bᵀ, dL/dB = Aᵀ · dL/dC
    """

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul の次元が合いません: {a.shape} と {b.shape}")
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        ga = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        gb = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return unbroadcast(ga, self.a.shape), unbroadcast(gb, self.b.shape)


class Transpose(Function):
    def forward(self, x, axes=None):
        if axes is None:
            if x.ndim < 2:
                raise ShapeError(f"transpose には 2 次元以上が必要です: {x.shape}")
            axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
        if sorted(axes) != list(range(x.ndim)):
            raise ShapeError(f"transpose の軸指定 {axes} が形状 {x.shape} と合いません")
        self.axes = tuple(axes)
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Reshape(Function):
    def forward(self, x, shape):
        self.in_shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as e:
            raise ShapeError(f"reshape できません: {x.shape} -> {shape}") from e

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Concat(Function):
    """最後の軸での連結"""

    def forward(self, *xs):
        if not xs:
            raise ShapeError("concat には 1 個以上のテンソルが必要です")
        lead = xs[0].shape[:-1]
        for x in xs:
            if x.shape[:-1] != lead:
                raise ShapeError(f"concat の先頭次元が一致しません: {[a.shape for a in xs]}")
        self.sizes = [x.shape[-1] for x in xs]
        return np.concatenate(xs, axis=-1)

    def backward(self, grad):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=-1))


class Slice(Function):
    def forward(self, x, index):
        self.in_shape = x.shape
        self.index = index
        return np.array(x[index], dtype=np.float64)

    def backward(self, grad):
        out = np.zeros(self.in_shape, dtype=np.float64)
        np.add.at(out, self.index, grad)
        return (out,)


# ----------------------------------------------------------------------
#  縮約
# ----------------------------------------------------------------------
class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.in_shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.in_shape),)


class Mean(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.in_shape, self.axis, self.keepdims = x.shape, axis, keepdims
        n = x.size if axis is None else x.shape[axis]
        if n == 0:
            raise ShapeError(f"空の軸の平均は定義されません: {x.shape}, axis={axis}")
        self.n = n
        return np.asarray(x.mean(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad / self.n, self.in_shape),)


# ----------------------------------------------------------------------
#  softmax / layer norm
# ----------------------------------------------------------------------
class Softmax(Function):
    """最大値を引いてから exp を取る（オーバーフロー対策）"""

    def forward(self, x, axis=-1):
        if x.ndim == 0 or x.shape[axis] == 0:
            raise ShapeError(f"softmax の軸が空です: {x.shape}, axis={axis}")
        self.axis = axis
        z = x - x.max(axis=axis, keepdims=True)
        e = np.exp(z)
        self.y = e / e.sum(axis=axis, keepdims=True)
        return self.y

    def backward(self, grad):
        y = self.y
        return (y * (grad - (grad * y).sum(axis=self.axis, keepdims=True)),)


class LayerNorm(Function):
    """
    最後の次元で正規化する。eps は平方根の内側に足す。
    y = (x - mean) / sqrt(var + eps) * gain + bias  （var は母分散）
    """

    def forward(self, x, gain, bias, eps=1e-5):
        d = x.shape[-1] if x.ndim else 0
        if d == 0:
            raise ShapeError(f"layer_norm の最後の次元が空です: {x.shape}")
        if gain.shape != (d,) or bias.shape != (d,):
            raise ShapeError(f"gain/bias {gain.shape}/{bias.shape} が最後の次元 {d} と合いません")
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = xc * self.inv_std
        self.gain = gain
        return self.xhat * gain + bias

    def backward(self, grad):
        xhat, inv_std = self.xhat, self.inv_std
        d = xhat.shape[-1]
        lead = tuple(range(grad.ndim - 1))
        dgain = (grad * xhat).sum(axis=lead)
        dbias = grad.sum(axis=lead)
        dxhat = grad * self.gain
        dx = (inv_std / d) * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dx, dgain, dbias


# ----------------------------------------------------------------------
#  関数形式の API
# ----------------------------------------------------------------------
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Add.apply(a, b)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Sub.apply(a, b)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return Mul.apply(a, b)


def scale(x: ArrayLike, c: float) -> Tensor:
    return Scale.apply(x, c=float(c))


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return MatMul.apply(a, b)


def transpose(x: ArrayLike, *axes: int) -> Tensor:
    return Transpose.apply(x, axes=axes or None)


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def concat(xs: Sequence[ArrayLike]) -> Tensor:
    return Concat.apply(*xs)


def slice_tensor(x: ArrayLike, index: Any) -> Tensor:
    return Slice.apply(x, index=index)


def relu(x: ArrayLike) -> Tensor:
    return ReLU.apply(x)


def gelu(x: ArrayLike) -> Tensor:
    return GELU.apply(x)


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def layer_norm(x: ArrayLike, gain: ArrayLike, bias: ArrayLike, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(x, gain, bias, eps=float(eps))


def tsum(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def tmean(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


# ----------------------------------------------------------------------
#  数値微分による勾配チェック
# ----------------------------------------------------------------------
@dataclass
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    worst: Optional[Tuple[int, int]] = None  # (パラメータ番号, 平坦化インデックス)
    analytic: float = 0.0
    numeric: float = 0.0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int = 1000,
    rng: Optional[np.random.Generator] = None,
    floor: float = 1e-5,
) -> GradCheckResult:
    """
    解析勾配と中心差分 (f(x+h) - f(x-h)) / 2h を比較する。

    相対誤差は |a - n| / max(|a| + |n|, floor)。
    座標数が max_coords を超える場合は rng で無作為に選ぶ。
    loss_fn は呼ばれるたびにグラフを組み直す関数であること。
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if len(coords) > max_coords:
        rng = rng if rng is not None else np.random.default_rng(0)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[int(c)] for c in sorted(picked)]

    result = GradCheckResult(0.0, len(coords))
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        fp = loss_fn().item()
        flat[j] = orig - h
        fm = loss_fn().item()
        flat[j] = orig
        num = (fp - fm) / (2.0 * h)
        a = float(analytic[i].reshape(-1)[j])
        rel = abs(a - num) / max(abs(a) + abs(num), floor)
        if rel > result.max_rel_error:
            result.max_rel_error = rel
            result.worst = (i, j)
            result.analytic, result.numeric = a, num

    for p in params:
        p.zero_grad()
    logger.debug("gradcheck: %d 座標, 最大相対誤差 %.3e", result.n_checked, result.max_rel_error)
    return result
