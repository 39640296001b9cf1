"""Decision loop: prompt, generate, parse, validate, re-prompt on error."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

from ..analysis import loop_evidence_at
from ..errors import InvalidAction, ModelUnavailable, NoActionFound
from ..models import Model, ModelRequest
from ..observation import Observation
from ..parser import ExecutableAction, Move, ParseOutcome, parse_baseline, parse_reflection, validate_action
from ..tasks import EpisodeSpec
from ..world import Pose, WorldGraph, geodesic_distance
from .config import AgentConfig, OracleAssist
from .memory import AgentMemory, new_memory, update_memory
from .prompts import build_prompt

log = logging.getLogger(__name__)

DEFAULT_RETRIES = 3
_REASONING = re.compile(r"<\s*reasoning\s*>(.*?)(?:<\s*/\s*reasoning\s*>|$)", re.I | re.S)

ORACLE_SYSTEM = (
    "You are an expert navigation assistant supervising a less capable navigation agent. "
    "You see the same observation and prompt as the agent. Give short high-level guidance: "
    "what the agent is doing wrong and a concrete plan for its next moves."
)


@dataclass
class AgentDecision:
    raw_text: str
    action: ExecutableAction | None
    reasoning_trace: str | None = None
    reflection: str | None = None
    final_decision: str | None = None
    revised: bool = False
    calls: list[dict] = field(default_factory=list)
    generation_error: str | None = None

    @property
    def failed(self) -> bool:
        return self.action is None

    def to_log(self) -> dict:
        return {
            "raw_text": self.raw_text,
            "reasoning_trace": self.reasoning_trace,
            "reflection": self.reflection,
            "final_decision": self.final_decision,
            "revised": self.revised,
            "generation_error": self.generation_error,
        }


def _error_sentence(exc: Exception) -> str:
    if isinstance(exc, NoActionFound):
        return (
            "Error: your previous answer could not be parsed because no 'Action:' line was found. "
            "Answer again using exactly the required output format."
        )
    assert isinstance(exc, InvalidAction)
    return (
        f"Error: your previous answer chose an invalid action ({exc}). "
        "Choose one of the offered marker numbers, or Stop."
    )


def _revise_sentence(outcome: ParseOutcome) -> str:
    return (
        f"You decided to revise your previous action ({outcome.action_token}). "
        "Replan before moving: give a new next action in the same output format."
    )


def decide(
    cfg: AgentConfig,
    episode: EpisodeSpec,
    obs: Observation,
    memory: AgentMemory,
    model: Model,
    retries: int = DEFAULT_RETRIES,
    guidance: str | None = None,
    context: Mapping[str, Any] | None = None,
    images: tuple[str, ...] | None = None,
) -> AgentDecision:
    """Ask the model for one action.

    Unparseable or invalid outputs are re-prompted with an error sentence
    up to ``retries`` times; after that the decision carries a
    ``generation_error`` instead of an action. Reflection variants that
    answer Revise get exactly one replanning call.
    """
    base = build_prompt(cfg, episode, obs, memory, guidance=guidance, images=images)
    parse = parse_reflection if cfg.reasoning.reflects else parse_baseline
    ctx = dict(context or {})
    ctx.setdefault("viewpoint", obs.pose.viewpoint)
    ctx["candidates"] = {c.marker: c.target for c in obs.candidates}

    calls: list[dict] = []
    failures = 0
    suffix = ""
    phase = "act"
    revised = False
    while True:
        req = replace(
            base,
            task_text=base.task_text + suffix,
            context={**ctx, "phase": phase, "attempt": len(calls)},
        )
        call = {"phase": phase, "request": req.to_log(), "response": None, "error": None}
        calls.append(call)
        try:
            resp = model.generate(req)
        except ModelUnavailable as exc:
            call["error"] = f"{type(exc).__name__}: {exc}"
            return AgentDecision("", None, calls=calls, revised=revised,
                                 generation_error=f"model unavailable: {exc}")
        call["response"] = resp.text
        call["timing"] = {"latency_s": resp.latency}
        try:
            outcome = parse(resp.text)
            action = validate_action(outcome, obs)
        except (NoActionFound, InvalidAction) as exc:
            call["error"] = f"{type(exc).__name__}: {exc}"
            failures += 1
            if failures > retries:
                return AgentDecision(resp.text, None, calls=calls, revised=revised,
                                     generation_error=f"no valid action after {retries} retries: {exc}")
            suffix = "\n\n" + _error_sentence(exc)
            phase = "retry" if phase == "act" else phase
            continue
        if cfg.reasoning.reflects and outcome.decision_text == "Revise" and not revised:
            revised = True
            phase = "replan"
            suffix = "\n\nYour previous answer was:\n" + resp.text + "\n\n" + _revise_sentence(outcome)
            continue
        trace = _REASONING.search(resp.text)
        return AgentDecision(
            raw_text=resp.text,
            action=action,
            reasoning_trace=trace.group(1).strip() if trace else None,
            reflection=outcome.reflection_text,
            final_decision=outcome.decision_text if cfg.reasoning.reflects else None,
            revised=revised,
            calls=calls,
        )


class OracleTrigger:
    """Fires on fresh loop evidence or on a run of distance regressions."""

    def __init__(self, params: OracleAssist):
        self.params = params

    def check(self, executed: list[str], goal_distances: list[float]) -> str | None:
        if loop_evidence_at(executed, self.params.loop_threshold):
            return "looping"
        run = 0
        for prev, cur in zip(goal_distances[-2::-1], goal_distances[::-1]):
            if cur > prev:
                run += 1
            else:
                break
        if run and run % self.params.regress_steps == 0:
            return "moving away from the goal"
        return None


def oracle_assist(reason: str, navigator_request: ModelRequest, oracle: Model) -> tuple[str | None, dict]:
    """Query the oracle once; returns (guidance or None, call log)."""
    req = ModelRequest(
        system_text=ORACLE_SYSTEM,
        task_text=(
            f"The navigator appears to be struggling ({reason}). Its current prompt follows.\n\n"
            f"--- navigator prompt ---\n{navigator_request.task_text}\n--- end of navigator prompt ---\n\n"
            "Give brief guidance and a suggested plan for the next moves."
        ),
        images=navigator_request.images,
        context={**navigator_request.context, "phase": "oracle", "trigger": reason},
    )
    call = {"phase": "oracle", "trigger": reason, "request": req.to_log(), "response": None, "error": None}
    try:
        resp = oracle.generate(req)
    except ModelUnavailable as exc:
        log.warning("oracle unavailable, guidance skipped: %s", exc)
        call["error"] = f"{type(exc).__name__}: {exc}"
        return None, call
    call["response"] = resp.text
    call["timing"] = {"latency_s": resp.latency}
    return resp.text, call


class NavigationAgent:
    """Per-episode agent state: memory, guidance and the oracle trigger."""

    def __init__(
        self,
        cfg: AgentConfig,
        episode: EpisodeSpec,
        g: WorldGraph,
        model: Model,
        oracle: Model | None = None,
        retries: int = DEFAULT_RETRIES,
    ):
        self.cfg = cfg
        self.episode = episode
        self.g = g
        self.model = model
        self.oracle = oracle
        self.retries = retries
        self.memory: AgentMemory | None = None
        self.guidance: str | None = None
        self.trigger = OracleTrigger(cfg.oracle_assist) if cfg.oracle_assist and oracle else None

    def summary(self, vp: str) -> str:
        return self.g.nodes[vp].summary or "an undescribed location"

    def start(self, obs: Observation) -> None:
        self.memory = new_memory(self.cfg, obs, self.summary(obs.pose.viewpoint))

    def goal_distance(self, vp: str) -> float:
        return min(geodesic_distance(self.g, vp, goal) for goal in self.episode.goals)

    def act(
        self,
        obs: Observation,
        executed: list[str],
        context: Mapping[str, Any],
        images: tuple[str, ...] | None = None,
    ) -> tuple[AgentDecision, dict | None]:
        """Decide at the current pose; returns the decision and any oracle call."""
        assert self.memory is not None, "start() must be called first"
        oracle_call = None
        if self.trigger is not None:
            reason = self.trigger.check(executed, [self.goal_distance(v) for v in executed])
            if reason:
                nav_req = build_prompt(self.cfg, self.episode, obs, self.memory, self.guidance, images)
                nav_req = replace(nav_req, context={**context, "viewpoint": obs.pose.viewpoint,
                                                    "candidates": {c.marker: c.target for c in obs.candidates}})
                guidance, oracle_call = oracle_assist(reason, nav_req, self.oracle)
                if guidance:
                    self.guidance = guidance
        decision = decide(self.cfg, self.episode, obs, self.memory, self.model, self.retries,
                          guidance=self.guidance, context=context, images=images)
        return decision, oracle_call

    def moved(self, move: Move, obs: Observation, old_pose: Pose, new_pose: Pose, new_obs: Observation) -> None:
        cand = obs.candidate(move.marker)
        assert cand is not None and self.memory is not None
        update_memory(self.cfg, self.memory, cand, old_pose, new_pose, self.summary(new_pose.viewpoint), new_obs)
