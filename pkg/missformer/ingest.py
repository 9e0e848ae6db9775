"""
ingest.py
=========

ETH / UCY 形式（ワールド座標 [m]）の実データを読み込み、
固定プロトコル（観測 8 点 / 予測 12 点）の窓に切り出すモジュール。

入力ファイル: 空白区切り 4 列 "frame agent x y"（前処理済み配布形式はタブ区切り・float 表記）
"""

from __future__ import annotations

import logging
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, ParseError
from .models import RawRecord, SampleSet
from .tasks import REAL_FRAME_RATE, REAL_OBS_LEN, REAL_PRED_LEN, SPLITS

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


# ----------------------------------------------------------------------
#  読み込み / 書き出し
# ----------------------------------------------------------------------
def _parse_id(token: str) -> int:
    value = float(token)
    if not np.isfinite(value) or value != int(value):
        raise ValueError(f"整数ではありません: {token!r}")
    return int(value)


def parse_line(line: str) -> RawRecord:
    parts = line.split()
    if len(parts) != 4:
        raise ValueError(f"4 列が必要です（{len(parts)} 列）")
    x, y = float(parts[2]), float(parts[3])
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValueError("座標が有限ではありません")
    return RawRecord(_parse_id(parts[0]), _parse_id(parts[1]), x, y)


def parse_file(path: PathLike, lenient: bool = False) -> List[RawRecord]:
    """
    アノテーションファイルを読み込む。

    - 空行とコメント行（#）は無視
    - 壊れた行は ParseError（行番号付き）。lenient=True なら警告してスキップ
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(f"ファイルを読めません: {e}", path=str(path)) from e

    records: List[RawRecord] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            records.append(parse_line(line))
        except ValueError as e:
            if not lenient:
                raise ParseError(str(e), path=str(path), line_no=line_no) from e
            logger.warning("%s:%d: 壊れた行をスキップしました (%s)", path, line_no, e)
    logger.debug("%s: %d 行を読み込みました", path, len(records))
    return records


def serialize_records(records: Iterable[RawRecord], path: Optional[PathLike] = None) -> str:
    """parse_file と往復できるテキストを返す（path を渡すと書き出す）"""
    text = "".join(f"{int(r.frame_id)} {int(r.agent_id)} {float(r.x)!r} {float(r.y)!r}\n" for r in records)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    return text


# ----------------------------------------------------------------------
#  窓の切り出し
# ----------------------------------------------------------------------
def _by_agent(records: Sequence[RawRecord]) -> Dict[int, List[RawRecord]]:
    agents: Dict[int, List[RawRecord]] = {}
    for r in records:
        agents.setdefault(r.agent_id, []).append(r)
    for rows in agents.values():
        rows.sort(key=lambda r: r.frame_id)
    return agents


def infer_frame_stride(records: Sequence[RawRecord]) -> int:
    """エージェント内で連続するフレーム差の最頻値（同数なら小さい方、データが無ければ 1）"""
    counts: Counter = Counter()
    for rows in _by_agent(records).values():
        for a, b in zip(rows, rows[1:]):
            delta = b.frame_id - a.frame_id
            if delta > 0:
                counts[delta] += 1
    if not counts:
        return 1
    best = max(counts.values())
    return min(d for d, c in counts.items() if c == best)


def windows(
    records: Sequence[RawRecord],
    obs_len: int = REAL_OBS_LEN,
    pred_len: int = REAL_PRED_LEN,
    stride: int = 1,
    frame_stride: Optional[int] = None,
    translate: bool = False,
    split: str = "",
    dt: float = 1.0 / REAL_FRAME_RATE,
) -> SampleSet:
    """
    エージェントごとに、フレームが frame_stride 間隔で連続する区間から
    長さ obs_len + pred_len の窓を stride 個ずつずらして切り出す。

    - フレームの抜け（差が frame_stride 以外）で区間は切れる
    - 異なるエージェントが 1 つの窓に混ざることはない
    - translate=True なら各窓を最後の観測点が原点になるよう平行移動する
    """
    if stride < 1:
        raise ConfigError(f"stride は 1 以上が必要です: {stride}")
    n = obs_len + pred_len
    if frame_stride is None:
        frame_stride = infer_frame_stride(records)

    out: List[np.ndarray] = []
    agent_ids: List[int] = []
    for agent, rows in sorted(_by_agent(records).items()):
        run: List[RawRecord] = []
        runs: List[List[RawRecord]] = []
        for r in rows:
            if run and r.frame_id - run[-1].frame_id != frame_stride:
                runs.append(run)
                run = []
            run.append(r)
        if run:
            runs.append(run)

        for run in runs:
            if len(run) < n:
                continue
            xy = np.array([[r.x, r.y] for r in run], dtype=np.float64)
            for start in range(0, len(run) - n + 1, stride):
                w = xy[start:start + n].copy()
                if translate:
                    w -= w[obs_len - 1]
                out.append(w)
                agent_ids.append(agent)

    data = np.stack(out) if out else np.zeros((0, n, 2))
    return SampleSet(
        windows=data,
        obs_len=obs_len,
        pred_len=pred_len,
        split=split,
        frame_stride=frame_stride,
        dt=dt,
        agents=agent_ids,
    )


# ----------------------------------------------------------------------
#  5 分割の読み込み
# ----------------------------------------------------------------------
def split_files(data_dir: PathLike, split: str) -> List[Path]:
    """data_dir/<split>.txt、または data_dir/<split>/ 以下の *.txt"""
    data_dir = Path(data_dir)
    single = data_dir / f"{split}.txt"
    if single.is_file():
        return [single]
    folder = data_dir / split
    if folder.is_dir():
        return sorted(folder.rglob("*.txt"))
    return []


def load_split_dir(
    data_dir: PathLike,
    splits: Sequence[str] = SPLITS,
    lenient: bool = False,
    translate: bool = False,
    stride: int = 1,
) -> Dict[str, SampleSet]:
    """
    各分割のファイルを読み、ファイルごとに窓を切り出して分割単位でまとめる。
    フレーム間隔はファイルごとに推定する。
    """
    result: Dict[str, SampleSet] = {}
    missing: List[str] = []
    for split in splits:
        files = split_files(data_dir, split)
        if not files:
            missing.append(split)
            continue
        parts = [windows(parse_file(f, lenient=lenient), split=split, translate=translate, stride=stride) for f in files]
        result[split] = SampleSet(
            windows=np.concatenate([p.windows for p in parts], axis=0),
            obs_len=REAL_OBS_LEN,
            pred_len=REAL_PRED_LEN,
            split=split,
            frame_stride=parts[0].frame_stride,
            dt=parts[0].dt,
            agents=[a for p in parts for a in p.agents],
        )
        logger.info("%s: %d ファイルから %d 窓", split, len(files), len(result[split]))
    if missing:
        raise ConfigError(f"{data_dir} に分割のファイルがありません: {', '.join(missing)}")
    return result
