"""
checkpoint.py
=============

モデルのチェックポイント（自己記述型バイナリ）の保存と読み込み。

ファイル構造:
    1 行目      : "MISSFORMER <version> <header_bytes>"
    ヘッダ      : TOML テキスト（[model] に ModelConfig、[params] に名前と形状、[extra] に任意情報）
    データ      : リトルエンディアン float64 を宣言順に連結したもの
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import toml

from .config import ModelConfig, config_to_dict
from .errors import CheckpointError, ConfigError
from .network import MissFormerModel, parameter_specs

logger = logging.getLogger(__name__)

MAGIC = "MISSFORMER"
VERSION = 1
_DTYPE = np.dtype("<f8")


def _header_text(model: MissFormerModel, extra: Optional[Dict[str, Any]]) -> str:
    header: Dict[str, Any] = {
        "model": config_to_dict(model.config),
        "params": {
            "names": [name for name, _ in model.specs],
            "shapes": [list(shape) for _, shape in model.specs],
        },
    }
    if extra:
        header["extra"] = {k: v for k, v in extra.items() if v is not None}
    return toml.dumps(header)


def save_checkpoint(
    model: MissFormerModel,
    path: Union[str, Path],
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    モデルを書き出す。extra には学習設定などの来歴情報（TOML で表せる値）を入れる。
    """
    path = Path(path)
    header = _header_text(model, extra).encode("utf-8")
    first = f"{MAGIC} {VERSION} {len(header)}\n".encode("ascii")
    payload = b"".join(
        np.ascontiguousarray(p.data, dtype=_DTYPE).tobytes() for _, p in model.named_parameters()
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(first)
        f.write(header)
        f.write(payload)
    logger.info("チェックポイントを保存しました: %s (%d パラメータ)", path, model.num_parameters)
    return path


def read_header(path: Union[str, Path]) -> Tuple[Dict[str, Any], bytes]:
    """(ヘッダ dict, データ部のバイト列) を返す"""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"チェックポイントを読めません: {path}: {e}") from e

    newline = raw.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"チェックポイントの先頭行がありません: {path}")
    parts = raw[:newline].decode("ascii", errors="replace").split()
    if len(parts) != 3 or parts[0] != MAGIC:
        raise CheckpointError(f"MissFormer のチェックポイントではありません: {path}")
    try:
        version, header_len = int(parts[1]), int(parts[2])
    except ValueError as e:
        raise CheckpointError(f"先頭行が壊れています: {path}") from e
    if version != VERSION:
        raise CheckpointError(f"未対応のバージョンです: {version} (対応: {VERSION})")

    start = newline + 1
    try:
        header = toml.loads(raw[start:start + header_len].decode("utf-8"))
    except (toml.TomlDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"ヘッダを解釈できません: {path}: {e}") from e
    return header, raw[start + header_len:]


def load_checkpoint(path: Union[str, Path]) -> Tuple[MissFormerModel, Dict[str, Any]]:
    """(モデル, extra) を返す"""
    header, payload = read_header(path)
    try:
        config = ModelConfig(**header.get("model", {}))
    except (ConfigError, TypeError) as e:
        raise CheckpointError(f"ヘッダの ModelConfig が不正です: {e}") from e

    specs = parameter_specs(config)
    names = header.get("params", {}).get("names", [])
    shapes = [tuple(s) for s in header.get("params", {}).get("shapes", [])]
    if names != [n for n, _ in specs] or shapes != [s for _, s in specs]:
        raise CheckpointError("パラメータの並びが ModelConfig と一致しません")

    expected = sum(int(np.prod(s)) for _, s in specs) * _DTYPE.itemsize
    if len(payload) != expected:
        raise CheckpointError(f"データ長 {len(payload)} バイトが期待値 {expected} と一致しません")

    flat = np.frombuffer(payload, dtype=_DTYPE).astype(np.float64)
    params: Dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in specs:
        size = int(np.prod(shape))
        params[name] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    if not all(np.isfinite(v).all() for v in params.values()):
        raise CheckpointError("チェックポイントに非有限のパラメータが含まれています")

    logger.debug("チェックポイントを読み込みました: %s", path)
    return MissFormerModel(config, params), dict(header.get("extra", {}))
