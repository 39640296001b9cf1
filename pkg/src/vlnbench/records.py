"""Trajectory log records.

One ``TrajectoryRecord`` per episode, stored as a single JSON line. All
wall-clock values live under ``timing`` keys so determinism checks can
drop them mechanically with :func:`strip_timing`.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterator

STOPPED = "Stopped"
STEP_LIMIT = "StepLimit"
GENERATION_ERROR = "GenerationError"
TERMINATIONS = (STOPPED, STEP_LIMIT, GENERATION_ERROR)


@dataclass
class TrajectoryRecord:
    run_id: str
    episode_id: str
    scan_id: str
    instruction: str
    granularity: str
    start: dict
    goals: list[str]
    gt_path: list[str]
    executed: list[str]
    steps: list[dict] = field(default_factory=list)
    termination: str = STOPPED
    error: str | None = None
    metrics: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryRecord":
        return cls(**d)

    def model_calls(self) -> Iterator[dict]:
        for step in self.steps:
            yield from step.get("calls", ())
            if step.get("oracle"):
                yield step["oracle"]


def strip_timing(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k != "timing"}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def read_log(path: str | os.PathLike) -> list[TrajectoryRecord]:
    out = []
    p = Path(path)
    if not p.exists():
        return out
    with p.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                out.append(TrajectoryRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError):
                # a torn final line from a crash; resumption reruns that episode
                continue
    return out
