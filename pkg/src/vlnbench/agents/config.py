from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping


class Memory(str, enum.Enum):
    TEXT_SUMMARY = "text_summary"
    TEXT_MAP = "text_map"


class Reasoning(str, enum.Enum):
    BASELINE = "baseline"
    COT = "cot"
    REFLECTION = "reflection"
    COT_REFLECTION = "cot_reflection"

    @property
    def reflects(self) -> bool:
        return self in (Reasoning.REFLECTION, Reasoning.COT_REFLECTION)


@dataclass(frozen=True)
class OracleAssist:
    oracle_model: str
    loop_threshold: int = 3
    regress_steps: int = 3


@dataclass(frozen=True)
class FailureICL:
    n: int
    exemplar_set: str = "default"

    def __post_init__(self) -> None:
        if self.n not in (1, 2, 3):
            raise ValueError(f"failure exemplar count must be 1, 2 or 3, got {self.n}")


@dataclass(frozen=True)
class AgentConfig:
    memory: Memory = Memory.TEXT_SUMMARY
    reasoning: Reasoning = Reasoning.BASELINE
    oracle_assist: OracleAssist | None = None
    failure_icl: FailureICL | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "memory", Memory(self.memory))
        object.__setattr__(self, "reasoning", Reasoning(self.reasoning))
        if self.failure_icl is not None:
            available = len(load_exemplars(self.failure_icl.exemplar_set))
            if self.failure_icl.n > available:
                raise ValueError(
                    f"exemplar set {self.failure_icl.exemplar_set!r} has {available} entries, {self.failure_icl.n} requested"
                )

    @classmethod
    def from_dict(cls, d: Mapping) -> "AgentConfig":
        oracle = d.get("oracle_assist")
        icl = d.get("failure_icl")
        return cls(
            memory=Memory(d.get("memory", "text_summary")),
            reasoning=Reasoning(d.get("reasoning", "baseline")),
            oracle_assist=OracleAssist(**oracle) if oracle else None,
            failure_icl=FailureICL(**icl) if icl else None,
        )


@lru_cache(maxsize=None)
def load_exemplars(exemplar_set: str = "default") -> tuple[dict, ...]:
    text = resources.files("vlnbench").joinpath("data/failure_exemplars.json").read_text(encoding="utf-8")
    sets = json.loads(text)
    if exemplar_set not in sets:
        raise KeyError(f"unknown exemplar set {exemplar_set!r}")
    return tuple(sets[exemplar_set])


# registry ids of the eight built-in configurations
BUILTIN_AGENTS: dict[str, AgentConfig] = {}
for _mem, _family in ((Memory.TEXT_SUMMARY, "navgpt"), (Memory.TEXT_MAP, "mapgpt")):
    for _r, _suffix in (
        (Reasoning.BASELINE, ""),
        (Reasoning.COT, "-cot"),
        (Reasoning.REFLECTION, "-reflection"),
        (Reasoning.COT_REFLECTION, "-cot-reflection"),
    ):
        BUILTIN_AGENTS[_family + _suffix] = AgentConfig(_mem, _r)
