"""Agent configurations, prompts, memory and the decision loop."""

from .config import BUILTIN_AGENTS, AgentConfig, FailureICL, Memory, OracleAssist, Reasoning, load_exemplars
from .core import AgentDecision, NavigationAgent, OracleTrigger, decide, oracle_assist
from .memory import HistoryEntry, TextSummaryMemory, TopoMemory, new_memory, update_memory
from .prompts import GUIDANCE_HEADING, build_prompt

__all__ = [
    "AgentConfig",
    "AgentDecision",
    "BUILTIN_AGENTS",
    "FailureICL",
    "GUIDANCE_HEADING",
    "HistoryEntry",
    "Memory",
    "NavigationAgent",
    "OracleAssist",
    "OracleTrigger",
    "Reasoning",
    "TextSummaryMemory",
    "TopoMemory",
    "build_prompt",
    "decide",
    "load_exemplars",
    "new_memory",
    "oracle_assist",
    "update_memory",
]
