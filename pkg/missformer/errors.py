"""
errors.py
=========

パッケージ全体で使う例外クラスをまとめたモジュール。

ライブラリ側は例外を投げるだけにして、終了コードへの変換は
cli.run() だけが行う。各例外は対応する組み込み例外（ValueError / RuntimeError など）も継承する。
"""

from __future__ import annotations

from typing import Optional


class MissFormerError(Exception):
    """パッケージ固有の例外の共通基底クラス"""


class ShapeError(MissFormerError, ValueError):
    """テンソル形状・系列長が演算の前提に合わない"""


class ConfigError(MissFormerError, ValueError):
    """設定値（分布の範囲・確率・ハイパーパラメータ）が不正"""


class ModeError(MissFormerError, ValueError):
    """positions / offsets の入力モードが食い違っている"""


class ParseError(MissFormerError, ValueError):
    """テキストファイルの読み込み失敗。行番号を保持する。"""

    def __init__(self, message: str, path: Optional[str] = None, line_no: Optional[int] = None):
        self.path = path
        self.line_no = line_no
        where = ""
        if path is not None:
            where = f"{path}"
            if line_no is not None:
                where += f":{line_no}"
            where += ": "
        super().__init__(f"{where}{message}")


class NumericError(MissFormerError, FloatingPointError):
    """NaN / Inf を検出した"""


class GradientStateError(MissFormerError, RuntimeError):
    """勾配をリセットせずに backward() を再実行した"""


class DivergenceError(MissFormerError, RuntimeError):
    """学習中に損失・勾配が非有限になった"""

    def __init__(self, message: str, last_finite_epoch: Optional[int] = None):
        self.last_finite_epoch = last_finite_epoch
        super().__init__(f"{message} (最後に有限だったエポック: {last_finite_epoch})")


class CheckpointError(MissFormerError, ValueError):
    """チェックポイントの形式・バージョンが読めない"""
