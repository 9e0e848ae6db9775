"""
corpus.py
=========

軌跡コーパス / 観測系列ファイル（1 行 1 レコードのテキスト）の読み書き。

目的:
- コーパスは巨大化するので 1 行ずつ読み込む
- 破損行への耐性（lenient=True なら警告を出してスキップ）
- Trajectory / ObservedSequence モデルとの型整合性
- 同じファイルを何度も読むときのウォームキャッシュ

形式:
    軌跡     : k dt x1 y1 x2 y2 ...
    観測系列 : k mode x1 y1 m1 x2 y2 m2 ...
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

from .config import json_line, load_json_line
from .errors import ParseError
from .models import ObservedSequence, Trajectory

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CONFIG_PREFIX = "# config: "

# ----------------------------------------------------------------------
#  プロセス内キャッシュ（パスと mtime をキーにする）
# ----------------------------------------------------------------------
_CORPUS_CACHE: Dict[Tuple[str, float, bool], List[Trajectory]] = {}


def clear_cache() -> None:
    _CORPUS_CACHE.clear()


# ----------------------------------------------------------------------
#  書き込み
# ----------------------------------------------------------------------
def _write_lines(path: PathLike, lines: Iterable[str], config: Optional[Mapping[str, Any]] = None) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as f:
        if config is not None:
            f.write(f"{CONFIG_PREFIX}{json_line(config)}\n")
        for line in lines:
            f.write(line)
            f.write("\n")
            n += 1
    return n


def save_corpus(corpus: Iterable[Trajectory], path: PathLike, config: Optional[Mapping[str, Any]] = None) -> int:
    """
    軌跡コーパスを書き出し、書いた行数を返す。
    config を渡すと先頭に "# config: {...}" を書く（行数には数えない）。
    """
    n = _write_lines(path, (t.to_line() for t in corpus), config)
    logger.info("軌跡 %d 本を %s に保存しました", n, path)
    return n


def save_observations(
    observations: Iterable[ObservedSequence],
    path: PathLike,
    config: Optional[Mapping[str, Any]] = None,
) -> int:
    n = _write_lines(path, (o.to_line() for o in observations), config)
    logger.info("観測系列 %d 本を %s に保存しました", n, path)
    return n


# ----------------------------------------------------------------------
#  読み込み
# ----------------------------------------------------------------------
def _read_records(path: PathLike, parse, lenient: bool) -> list:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"ファイルが見つかりません: {path}")

    records = []
    skipped = 0
    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                records.append(parse(line))
            except (ParseError, ValueError) as e:
                if not lenient:
                    raise ParseError(str(e), path=str(path), line_no=line_no) from e
                skipped += 1
                logger.warning("%s:%d: 壊れた行をスキップしました (%s)", path, line_no, e)
    if skipped:
        logger.warning("%s: %d 行をスキップしました", path, skipped)
    return records


def read_config_header(path: PathLike) -> Optional[Dict[str, Any]]:
    """先頭行の "# config: {...}" を dict で返す（無ければ None）"""
    with Path(path).open("r", encoding="utf-8") as f:
        first = f.readline().strip()
    if not first.startswith(CONFIG_PREFIX):
        return None
    try:
        return load_json_line(first[len(CONFIG_PREFIX):])
    except ValueError as e:
        raise ParseError(f"設定ヘッダを読めません: {e}", path=str(path), line_no=1) from e


def load_corpus(path: PathLike, lenient: bool = False, force_reload: bool = False) -> List[Trajectory]:
    """
    軌跡コーパスを読み込む。

    - lenient=False なら最初の壊れた行で ParseError（行番号付き）
    - 同じファイル（mtime 同一）の 2 回目以降はキャッシュを返す
    """
    path = Path(path)
    key = (str(path.resolve()), path.stat().st_mtime if path.exists() else 0.0, lenient)
    if not force_reload and key in _CORPUS_CACHE:
        return list(_CORPUS_CACHE[key])

    corpus = _read_records(path, Trajectory.from_line, lenient)
    _CORPUS_CACHE[key] = corpus
    logger.debug("%s から軌跡 %d 本を読み込みました", path, len(corpus))
    return list(corpus)


def load_observations(path: PathLike, dt: float = 1.0, lenient: bool = False) -> List[ObservedSequence]:
    """観測系列ファイルを読み込む（dt はファイルに含まれないので呼び出し側が渡す）"""
    return _read_records(path, lambda line: ObservedSequence.from_line(line, dt=dt), lenient)
