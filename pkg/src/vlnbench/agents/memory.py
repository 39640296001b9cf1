"""Agent memory: step summaries or a growing topological text map."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..observation import Candidate, Observation
from ..world import Pose
from .config import AgentConfig, Memory


def signed_turn(old_heading: float, new_heading: float) -> float:
    """Minimal signed angle from old to new heading; clockwise is positive."""
    d = (new_heading - old_heading + 180.0) % 360.0 - 180.0
    return 180.0 if d == -180.0 else d


@dataclass(frozen=True)
class HistoryEntry:
    step: int
    turn_angle: float
    forward: float
    destination_summary: str


@dataclass
class TextSummaryMemory:
    entries: list[HistoryEntry] = field(default_factory=list)

    def render(self) -> str:
        if not self.entries:
            return "No history yet: this is the first step."
        lines = []
        for e in self.entries:
            turn = round(e.turn_angle)
            if turn == 0:
                how = "kept the same heading"
            else:
                how = f"turned {abs(turn)} degrees {'right' if turn > 0 else 'left'}"
            lines.append(
                f"Step {e.step}: {how} and moved forward {e.forward:.2f} m, arriving at {e.destination_summary}"
            )
        return "\n".join(lines)


@dataclass
class TopoMemory:
    labels: dict[str, str] = field(default_factory=dict)  # label -> viewpoint
    by_viewpoint: dict[str, str] = field(default_factory=dict)
    summaries: dict[str, str] = field(default_factory=dict)  # label -> summary
    adjacency: set[frozenset] = field(default_factory=set)
    visited: set[str] = field(default_factory=set)
    order: list[str] = field(default_factory=list)  # labels in first-seen order
    trajectory: list[str] = field(default_factory=list)
    current: str | None = None

    def label(self, vp: str) -> str:
        lab = self.by_viewpoint.get(vp)
        if lab is None:
            lab = f"node_{len(self.order)}"
            self.labels[lab] = vp
            self.by_viewpoint[vp] = lab
            self.order.append(lab)
        return lab

    @property
    def frontier(self) -> set[str]:
        return set(self.order) - self.visited

    def arrive(self, vp: str, summary: str, obs: Observation) -> None:
        lab = self.label(vp)
        self.current = lab
        self.visited.add(lab)
        self.trajectory.append(lab)
        self.summaries[lab] = summary
        for c in obs.candidates:
            other = self.label(c.target)
            self.adjacency.add(frozenset((lab, other)))
            if c.caption and other not in self.summaries:
                self.summaries.setdefault(other, c.caption)

    def neighbours(self, lab: str) -> list[str]:
        out = [next(iter(p - {lab})) for p in self.adjacency if lab in p]
        return sorted(out, key=lambda s: int(s.split("_")[1]))

    def render_map(self) -> str:
        lines = []
        for lab in self.order:
            nbrs = self.neighbours(lab)
            if nbrs:
                lines.append(f"{lab} is connected to {', '.join(nbrs)}")
        return "\n".join(lines) if lines else "No map yet."

    def render(self) -> str:
        def fmt(labels) -> str:
            return ", ".join(sorted(labels, key=lambda s: int(s.split("_")[1]))) or "none"

        cur = self.current or "none"
        return "\n".join(
            [
                f"Current node: {cur}",
                f"Current node description: {self.summaries.get(cur, 'unknown')}",
                f"Trajectory: {' -> '.join(self.trajectory) or 'none'}",
                f"Visited nodes: {fmt(self.visited)}",
                f"Unvisited nodes: {fmt(self.frontier)}",
            ]
        )


AgentMemory = TextSummaryMemory | TopoMemory


def new_memory(cfg: AgentConfig, start_obs: Observation, start_summary: str) -> AgentMemory:
    if cfg.memory is Memory.TEXT_MAP:
        mem = TopoMemory()
        mem.arrive(start_obs.pose.viewpoint, start_summary, start_obs)
        return mem
    return TextSummaryMemory()


def update_memory(
    cfg: AgentConfig,
    memory: AgentMemory,
    move: Candidate,
    old_pose: Pose,
    new_pose: Pose,
    new_summary: str,
    new_obs: Observation | None = None,
) -> AgentMemory:
    """Record one executed move. ``new_obs`` is required for text-map memory."""
    if isinstance(memory, TopoMemory):
        if new_obs is None:
            raise ValueError("text-map memory needs the observation at the new pose")
        memory.arrive(new_pose.viewpoint, new_summary, new_obs)
        return memory
    memory.entries.append(
        HistoryEntry(
            step=len(memory.entries) + 1,
            turn_angle=signed_turn(old_pose.heading, move.global_heading),
            forward=move.distance,
            destination_summary=new_summary,
        )
    )
    return memory
