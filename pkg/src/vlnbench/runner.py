"""Episode orchestration, config preflight and crash-safe logging."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

from .agents.config import AgentConfig
from .agents.core import NavigationAgent
from .agents.memory import signed_turn
from .errors import ConfigInvalid, MissingAssets
from .metrics import aggregate, score_episode, MetricsReport
from .models import Model
from .observation import ObservationFormat, compose_observation
from .parser import StopAction
from .records import GENERATION_ERROR, STEP_LIMIT, STOPPED, TERMINATIONS, TrajectoryRecord, read_log
from .registry import BuildContext, Registry, default_registry
from .tasks import EpisodeSpec, Granularity, load_split
from .world import Pose, WorldGraph

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    run_id: str
    task: str = "fine"
    split: str = "val"
    agent: str = "navgpt"
    model: str = "echo"
    model_params: dict = field(default_factory=dict)
    observation_format: str = "four_view"
    max_steps: int = 20
    retries: int = 3
    seed: int = 0
    concurrency: int = 4
    output_dir: str = "runs"
    asset_root: str | None = None
    data_root: str = "data"
    text_only: bool = False
    # optional agent diagnostics: {"oracle_assist": {...}, "failure_icl": {...}}
    diagnostics: dict = field(default_factory=dict)
    oracle_params: dict = field(default_factory=dict)
    episodes: list[str] | None = None  # restrict to these ids

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {', '.join(unknown)}")
        if "run_id" not in d:
            raise ConfigInvalid("config needs a run_id")
        return cls(**dict(d))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.run_id


def load_config(path: str | os.PathLike) -> RunConfig:
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix in (".yaml", ".yml"):
        import yaml

        doc = yaml.safe_load(text)
    else:
        doc = json.loads(text)
    if not isinstance(doc, dict):
        raise ConfigInvalid(f"{p}: expected a mapping at top level")
    return RunConfig.from_dict(doc)


def preflight(cfg: RunConfig, registry: Registry | None = None) -> None:
    """Validate ids and scalar fields; constructs nothing."""
    reg = registry or default_registry()
    problems = []
    if not cfg.run_id or "/" in cfg.run_id or cfg.run_id in (".", ".."):
        problems.append(f"bad run_id {cfg.run_id!r}")
    for kind, cid in (("task", cfg.task), ("agent", cfg.agent), ("model", cfg.model)):
        if not reg.has(kind, cid):
            problems.append(f"unregistered {kind} {cid!r}")
    oracle = (cfg.diagnostics or {}).get("oracle_assist")
    if oracle:
        if not isinstance(oracle, Mapping) or "oracle_model" not in oracle:
            problems.append("oracle_assist needs an oracle_model id")
        elif not reg.has("model", oracle["oracle_model"]):
            problems.append(f"unregistered oracle model {oracle['oracle_model']!r}")
    extra = set(cfg.diagnostics or {}) - {"oracle_assist", "failure_icl"}
    if extra:
        problems.append(f"unknown diagnostics {sorted(extra)}")
    icl = (cfg.diagnostics or {}).get("failure_icl")
    if icl and (not isinstance(icl, Mapping) or icl.get("n") not in (1, 2, 3)):
        problems.append("failure_icl.n must be 1, 2 or 3")
    try:
        ObservationFormat(cfg.observation_format)
    except ValueError:
        problems.append(f"unknown observation format {cfg.observation_format!r}")
    for name in ("max_steps", "concurrency"):
        if not isinstance(getattr(cfg, name), int) or getattr(cfg, name) < 1:
            problems.append(f"{name} must be a positive integer")
    if not isinstance(cfg.retries, int) or cfg.retries < 0:
        problems.append("retries must be a non-negative integer")
    if problems:
        raise ConfigInvalid("; ".join(problems))


class LogWriter:
    """Serialised append-only writer; one flushed line per record."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        path.parent.mkdir(parents=True, exist_ok=True)
        self._repair()

    def _repair(self) -> None:
        # drop a torn final line left by a crash so appends start clean
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        if data and not data.endswith(b"\n"):
            cut = data.rfind(b"\n") + 1
            self.path.write_bytes(data[:cut])

    def append(self, record: TrajectoryRecord) -> None:
        line = record.to_json() + "\n"
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())


@dataclass
class RunResult:
    summary: dict
    log_path: Path
    records: list[TrajectoryRecord]


def _image_paths(g: WorldGraph, refs: Sequence[str], text_only: bool) -> tuple[str, ...]:
    if text_only:
        return ()
    if g.asset_dir is None:
        return tuple(refs)
    return tuple(str(g.asset_dir / r) for r in refs)


def run_episode(
    cfg: RunConfig,
    ep: EpisodeSpec,
    g: WorldGraph,
    agent_cfg: AgentConfig,
    model: Model,
    oracle: Model | None = None,
) -> TrajectoryRecord:
    t0 = time.perf_counter()
    fmt = ObservationFormat(cfg.observation_format)
    pose = ep.start
    obs = compose_observation(g, pose, fmt, cfg.text_only)
    agent = NavigationAgent(agent_cfg, ep, g, model, oracle, cfg.retries)
    agent.start(obs)
    executed = [pose.viewpoint]
    steps: list[dict] = []
    termination, error = STEP_LIMIT, None

    for step in range(cfg.max_steps):
        ts = time.perf_counter()
        context = {
            "episode_id": ep.episode_id,
            "scan_id": ep.scan_id,
            "step": step,
            "viewpoint": pose.viewpoint,
            "trajectory": list(executed),
            "goals": list(ep.goals),
            "gt_path": list(ep.gt_path),
            "reasoning": agent_cfg.reasoning.value,
        }
        images = _image_paths(g, obs.image_refs(), cfg.text_only)
        decision, oracle_call = agent.act(obs, executed, context, images)
        rec: dict[str, Any] = {
            "step": step,
            "pose_before": pose.to_dict(),
            "observation": obs.digest(),
            "candidates": [c.to_dict() for c in obs.candidates],
            "guidance": agent.guidance,
            "oracle": oracle_call,
            "calls": decision.calls,
            "decision": decision.to_log(),
            "executed_action": None,
            "pose_after": None,
        }
        steps.append(rec)
        if decision.action is None:
            termination, error = GENERATION_ERROR, decision.generation_error
            rec["timing"] = {"wall_s": time.perf_counter() - ts}
            break
        if isinstance(decision.action, StopAction):
            rec["executed_action"] = {"type": "stop"}
            rec["pose_after"] = pose.to_dict()
            rec["timing"] = {"wall_s": time.perf_counter() - ts}
            termination = STOPPED
            break
        cand = obs.candidate(decision.action.marker)
        new_pose = Pose(cand.target, cand.global_heading, pose.elevation)
        rec["executed_action"] = {
            "type": "move",
            "marker": cand.marker,
            "target": cand.target,
            "turn_angle": signed_turn(pose.heading, cand.global_heading),
            "forward": cand.distance,
        }
        rec["pose_after"] = new_pose.to_dict()
        new_obs = compose_observation(g, new_pose, fmt, cfg.text_only)
        agent.moved(decision.action, obs, pose, new_pose, new_obs)
        executed.append(new_pose.viewpoint)
        pose, obs = new_pose, new_obs
        rec["timing"] = {"wall_s": time.perf_counter() - ts}

    report = score_episode(g, ep, executed)
    return TrajectoryRecord(
        run_id=cfg.run_id,
        episode_id=ep.episode_id,
        scan_id=ep.scan_id,
        instruction=ep.instruction.text,
        granularity=ep.instruction.granularity.value,
        start=ep.start.to_dict(),
        goals=list(ep.goals),
        gt_path=list(ep.gt_path),
        executed=executed,
        steps=steps,
        termination=termination,
        error=error,
        metrics=report.to_dict(),
        timing={"wall_s": time.perf_counter() - t0},
    )


def _check_assets(worlds: Mapping[str, WorldGraph], episodes: Sequence[EpisodeSpec]) -> None:
    for ep in episodes:
        g = worlds[ep.scan_id]
        missing = [vp for vp, n in g.nodes.items() if n.navigable and not n.view_assets]
        if missing:
            raise MissingAssets(
                f"{ep.scan_id}: {len(missing)} navigable nodes lack view images (e.g. {missing[0]}); "
                "use text_only to run without images"
            )


def summarize(cfg: RunConfig, records: Sequence[TrajectoryRecord]) -> dict:
    reports = [MetricsReport(**r.metrics) for r in records]
    terms = {t: 0 for t in TERMINATIONS}
    for r in records:
        terms[r.termination] += 1
    return {
        "run_id": cfg.run_id,
        "task": cfg.task,
        "split": cfg.split,
        "agent": cfg.agent,
        "model": cfg.model,
        "episodes": len(records),
        "terminations": terms,
        "metrics": aggregate(reports),
    }


def run(
    cfg: RunConfig,
    registry: Registry | None = None,
    worlds: Mapping[str, WorldGraph] | None = None,
    episodes: Sequence[EpisodeSpec] | None = None,
) -> RunResult:
    """Run every episode of the split, appending one record per episode.

    ``worlds``/``episodes`` may be supplied directly (in-memory fixtures);
    otherwise the split is loaded from ``data_root``/``asset_root``.
    """
    reg = registry or default_registry()
    preflight(cfg, reg)

    if episodes is None:
        loaded: dict[str, WorldGraph] = dict(worlds or {})
        episodes = load_split(Granularity(reg.build("task", cfg.task)), cfg.split, cfg.data_root,
                              cfg.asset_root, worlds=loaded)
        worlds = loaded
        if not episodes:
            raise ConfigInvalid(f"split {cfg.task}/{cfg.split} has no valid episodes")
    if worlds is None:
        raise ConfigInvalid("episodes were given without their worlds")
    if cfg.episodes is not None:
        wanted = set(cfg.episodes)
        episodes = [ep for ep in episodes if ep.episode_id in wanted]
    if not cfg.text_only:
        _check_assets(worlds, episodes)

    ctx = BuildContext(config=cfg, worlds=worlds)
    diag = cfg.diagnostics or {}
    agent_cfg: AgentConfig = reg.build("agent", cfg.agent, ctx, **diag)
    model = reg.build("model", cfg.model, ctx, **cfg.model_params)
    oracle = None
    if agent_cfg.oracle_assist is not None:
        oracle = reg.build("model", agent_cfg.oracle_assist.oracle_model, ctx, **cfg.oracle_params)

    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log_path = run_dir / "trajectories.jsonl"
    writer = LogWriter(log_path)
    done = {r.episode_id for r in read_log(log_path) if r.run_id == cfg.run_id}
    todo = [ep for ep in episodes if ep.episode_id not in done]
    if done:
        log.info("resuming %s: %d episodes already logged, %d to go", cfg.run_id, len(done), len(todo))

    # records are appended in split order whatever the completion order, so
    # logs stay byte-comparable across concurrency settings
    pending: dict[int, TrajectoryRecord] = {}
    cursor = [0]
    order_lock = threading.Lock()

    def one(i: int, ep: EpisodeSpec) -> None:
        rec = run_episode(cfg, ep, worlds[ep.scan_id], agent_cfg, model, oracle)
        with order_lock:
            pending[i] = rec
            while cursor[0] in pending:
                writer.append(pending.pop(cursor[0]))
                cursor[0] += 1

    t0 = time.perf_counter()
    if cfg.concurrency == 1 or len(todo) <= 1:
        for i, ep in enumerate(todo):
            one(i, ep)
    else:
        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            for fut in [pool.submit(one, i, ep) for i, ep in enumerate(todo)]:
                fut.result()

    order = {ep.episode_id: i for i, ep in enumerate(episodes)}
    by_id = {r.episode_id: r for r in read_log(log_path) if r.run_id == cfg.run_id and r.episode_id in order}
    records = sorted(by_id.values(), key=lambda r: order[r.episode_id])
    summary = summarize(cfg, records)
    summary["timing"] = {"wall_s": time.perf_counter() - t0}
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return RunResult(summary, log_path, records)
