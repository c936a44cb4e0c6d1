import json
import os
from typing import Any, Dict, Optional

from meshtok.losses import LossReport

TRAIN_LOG_NAME = "train_log.jsonl"


class TrainLog:
    """Append-only JSON-lines training curve, one object per optimiser step or epoch summary."""

    def __init__(self, out_dir: Optional[str]) -> None:
        self.path = None
        self._handle = None
        if out_dir is not None:
            if not os.path.exists(out_dir):
                os.makedirs(out_dir)
            self.path = os.path.join(out_dir, TRAIN_LOG_NAME)
            self._handle = open(self.path, "w")

    def write(self, entry: Dict[str, Any]) -> None:
        if self._handle is not None:
            self._handle.write(json.dumps(entry) + "\n")
            self._handle.flush()

    def write_report(self, report: LossReport) -> None:
        if self._handle is not None:
            self._handle.write(report.to_json() + "\n")
            self._handle.flush()

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def __enter__(self) -> "TrainLog":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
