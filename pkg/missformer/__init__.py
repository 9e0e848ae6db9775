"""
missformer パッケージ

欠測トークン付きの軌跡を再構成・フィルタリング・予測する
エンコーダのみの Transformer（MissFormer）と、その学習・評価一式。
ここでは副作用のある import は行わず、必要なサブモジュールは
利用側が明示的に import する方針にしています。

例:
    from missformer.trajgen import generate_object
    from missformer.network import MissFormerModel
    from missformer.training import train
"""

# パッケージとして公開しているサブモジュール名
__all__ = [
    "checkpoint",
    "cli",
    "config",
    "corpus",
    "corrupt",
    "errors",
    "evaluation",
    "ingest",
    "kalman",
    "meta",
    "models",
    "network",
    "optim",
    "plots",
    "tasks",
    "tensor",
    "training",
    "trajgen",
]
