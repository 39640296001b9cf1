"""Prompt assembly from the versioned template files."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

from ..models import ModelRequest
from ..observation import Observation
from ..tasks import EpisodeSpec
from .config import AgentConfig, Memory, load_exemplars
from .memory import AgentMemory, TopoMemory

PLACEHOLDERS = ("instruction", "history", "heading", "elevation", "options", "map", "guidance", "exemplars")
_PLACEHOLDER = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")
GUIDANCE_HEADING = "## Assistant guidance"
EXEMPLAR_HEADING = "### Failure example"
OPTION_ORDER = ("Front", "Right", "Back", "Left")


@lru_cache(maxsize=None)
def load_template(memory: str, variant: str) -> tuple[str, str]:
    """(system, task) halves of ``templates/<memory>/<variant>.txt``."""
    text = (
        resources.files("vlnbench.agents")
        .joinpath(f"templates/{memory}/{variant}.txt")
        .read_text(encoding="utf-8")
    )
    head, _, rest = text.partition("[system]\n")
    system, sep, task = rest.partition("\n[task]\n")
    if head.strip() or not sep:
        raise ValueError(f"template {memory}/{variant} must contain [system] and [task] sections")
    return system.rstrip("\n"), task.rstrip("\n")


def fill(template: str, values: dict[str, str]) -> str:
    # single pass, so placeholder-like text inside values is left alone
    return _PLACEHOLDER.sub(lambda m: values.get(m.group(1), ""), template)


def render_options(obs: Observation, memory: AgentMemory | None = None) -> str:
    lines = []
    for bucket in OPTION_ORDER:
        entries = []
        for c in obs.in_bucket(bucket):
            desc = c.caption or "no description available"
            node = ""
            if isinstance(memory, TopoMemory) and c.target in memory.by_viewpoint:
                node = f" ({memory.by_viewpoint[c.target]})"
            entries.append(f"[{c.marker}]{node} {desc}, {c.distance:.2f} m away")
        lines.append(f"{bucket}: " + ("; ".join(entries) if entries else "no navigable option"))
    lines.append("Stop: stop at the current location")
    return "\n".join(lines)


def render_exemplars(cfg: AgentConfig) -> str:
    if cfg.failure_icl is None:
        return ""
    blocks = []
    for i, ex in enumerate(load_exemplars(cfg.failure_icl.exemplar_set)[: cfg.failure_icl.n], start=1):
        blocks.append(
            f"{EXEMPLAR_HEADING} {i}\n"
            f"Instruction excerpt: {ex['instruction_excerpt']}\n"
            f"Wrong decision: {ex['wrong_decision']}\n"
            f"Consequence: {ex['consequence']}\n"
        )
    return "Past navigation failures to avoid:\n\n" + "\n".join(blocks) + "\n"


def render_guidance(guidance: str | None) -> str:
    return f"{GUIDANCE_HEADING}\n{guidance.strip()}\n\n" if guidance else ""


def build_prompt(
    cfg: AgentConfig,
    episode: EpisodeSpec,
    obs: Observation,
    memory: AgentMemory,
    guidance: str | None = None,
    images: tuple[str, ...] | None = None,
) -> ModelRequest:
    """Pure: identical inputs give byte-identical request text."""
    system_t, task_t = load_template(cfg.memory.value, cfg.reasoning.value)
    values = {
        "instruction": episode.instruction.text,
        "history": memory.render(),
        "heading": f"{obs.pose.heading:.2f}",
        "elevation": f"{obs.pose.elevation:.2f}",
        "options": render_options(obs, memory),
        "map": memory.render_map() if cfg.memory is Memory.TEXT_MAP and isinstance(memory, TopoMemory) else "",
        "guidance": render_guidance(guidance),
        "exemplars": render_exemplars(cfg),
    }
    refs = tuple(images) if images is not None else tuple(obs.image_refs())
    return ModelRequest(system_text=fill(system_t, values), task_text=fill(task_t, values), images=refs)
