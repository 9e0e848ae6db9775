"""
meta.py
=======

学習・評価の実行記録（run manifest, JSON）の読み書きを扱うモジュール。

manifest の想定構造（抜粋）:

{
  "version": 1,
  "created_at": "1970-01-01T00:00:00Z",
  "updated_at": "1970-01-01T00:00:00Z",
  "command": "train",
  "config": { "model": {...}, "train": {...}, "corrupt": {...} },
  "epochs": [
      {"epoch": 0, "loss": 12.3, "masked_fraction": 0.0, "wallclock_ms": 41.0},
      ...
  ],
  "status": "running" | "finished" | "diverged",
  "last_finite_epoch": null,
  "artifacts": {"checkpoint": "model.bin", "log": "train.log"},
  "reports": [ {EvalReport.to_dict()}, ... ]
}
"""

from __future__ import annotations

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Union

from typing_extensions import Literal

try:
    import ujson as _json  # type: ignore[import]
except Exception:
    _json = json  # type: ignore[assignment]

from .models import EvalReport

logger = logging.getLogger(__name__)

RunStatus = Literal["running", "finished", "diverged"]

MANIFEST_VERSION = 1


class RunMeta:
    """
    run.json を扱うユーティリティクラス。

    主な責務:
    - manifest のロード／セーブ（存在しなければ骨格を作る）
    - 解決済み設定の記録
    - エポックごとの損失・経過時間の追記
    - 発散時の診断情報（最後に有限だったエポック）
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.meta: Dict[str, Any] = {}

    # ------------------------------------------------------------------
    # ロード / セーブ
    # ------------------------------------------------------------------
    def load(self) -> "RunMeta":
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as f:
                self.meta = _json.load(f)
        else:
            now = _now_iso()
            self.meta = {
                "version": MANIFEST_VERSION,
                "created_at": now,
                "updated_at": now,
            }
        self._ensure_structure()
        return self

    def save(self) -> None:
        """更新日時を進めて書き出す"""
        if not self.meta:
            self._ensure_structure()
        self.meta["updated_at"] = _now_iso()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", encoding="utf-8") as f:
            f.write(json.dumps(self.meta, ensure_ascii=False, indent=2))

    def _ensure_structure(self) -> None:
        m = self.meta
        m.setdefault("version", MANIFEST_VERSION)
        m.setdefault("created_at", _now_iso())
        m.setdefault("updated_at", _now_iso())
        m.setdefault("command", None)
        m.setdefault("config", {})
        m.setdefault("epochs", [])
        m.setdefault("status", "running")
        m.setdefault("last_finite_epoch", None)
        m.setdefault("artifacts", {})
        m.setdefault("reports", [])
        if not isinstance(m["epochs"], list):
            m["epochs"] = []

    # ------------------------------------------------------------------
    # 更新
    # ------------------------------------------------------------------
    def set_command(self, command: str, config: Dict[str, Any]) -> None:
        self.meta["command"] = command
        self.meta["config"] = config

    def record_epoch(self, epoch: int, loss: float, masked_fraction: float, wallclock_ms: float) -> None:
        self.meta["epochs"].append(
            {
                "epoch": int(epoch),
                "loss": float(loss),
                "masked_fraction": float(masked_fraction),
                "wallclock_ms": float(wallclock_ms),
            }
        )
        self.meta["last_finite_epoch"] = int(epoch)

    def record_artifact(self, name: str, path: Union[str, Path]) -> None:
        self.meta["artifacts"][name] = str(path)

    def record_report(self, report: EvalReport) -> None:
        data = report.to_dict()
        # サンプルごとの誤差は manifest には入れない
        data.pop("per_sample", None)
        self.meta["reports"].append(data)

    def finish(self, status: RunStatus = "finished") -> None:
        self.meta["status"] = status
        if status == "diverged":
            logger.warning(
                "実行は発散で終了しました (最後に有限だったエポック: %s)",
                self.meta.get("last_finite_epoch"),
            )

    @property
    def status(self) -> Optional[str]:
        return self.meta.get("status")

    @property
    def last_finite_epoch(self) -> Optional[int]:
        return self.meta.get("last_finite_epoch")


# ----------------------------------------------------------------------
# ユーティリティ
# ----------------------------------------------------------------------
def _now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
