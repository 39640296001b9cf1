"""Post-hoc trajectory forensics and static per-episode reports."""

from __future__ import annotations

import html
import os
import platform
import random
import statistics
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .metrics import SUCCESS_RADIUS, score_episode
from .observation import ObservationFormat, compose_observation, resolve_images
from .records import GENERATION_ERROR, STEP_LIMIT, TrajectoryRecord
from .tasks import EpisodeSpec, Instruction
from .world import Pose, WorldGraph, geodesic_distance

LOOP_VISITS = 3

SUCCESS = "Success"
INCORRECT = "IncorrectNavigation"
OUTCOMES = (SUCCESS, INCORRECT, GENERATION_ERROR)


@dataclass(frozen=True)
class LoopSegment:
    start: int
    end: int  # inclusive index into the executed path
    viewpoints: tuple[str, ...]
    repeated: tuple[str, ...]


def _evidence(executed: Sequence[str], threshold: int) -> list[tuple[int, int]]:
    spans = []
    visits: dict[str, list[int]] = {}
    for i, vp in enumerate(executed):
        visits.setdefault(vp, []).append(i)
    for idx in visits.values():
        if len(idx) >= threshold:
            spans.append((idx[0], idx[-1]))
    moves: dict[tuple[str, str], list[int]] = {}
    for i, pair in enumerate(zip(executed, executed[1:])):
        moves.setdefault(pair, []).append(i)
    for idx in moves.values():
        if len(idx) >= 2:
            spans.append((idx[0], idx[-1] + 1))
    return spans


def detect_loops(executed: Sequence[str], threshold: int = LOOP_VISITS) -> list[LoopSegment]:
    """Maximal looping segments of a path.

    A loop is a viewpoint visited ``threshold`` times or the same move
    (viewpoint, next viewpoint) taken twice. A single backtrack A-B-A is
    not a loop.
    """
    spans = sorted(_evidence(executed, threshold))
    merged: list[list[int]] = []
    for s, e in spans:
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    out = []
    for s, e in merged:
        seg = executed[s : e + 1]
        counts = Counter(seg)
        out.append(
            LoopSegment(
                start=s,
                end=e,
                viewpoints=tuple(sorted(counts)),
                repeated=tuple(sorted(v for v, c in counts.items() if c > 1)),
            )
        )
    return out


def loop_evidence_at(executed: Sequence[str], threshold: int = LOOP_VISITS) -> bool:
    """Whether the latest position adds loop evidence to a running path."""
    if not executed:
        return False
    last = executed[-1]
    if executed.count(last) >= threshold:
        return True
    if len(executed) >= 2:
        move = (executed[-2], last)
        return move in set(zip(executed[:-2], executed[1:-1]))
    return False


@dataclass
class EpisodeDiagnosis:
    episode_id: str
    outcome: str
    termination: str
    looping: bool
    loops: list[LoopSegment]
    deviation_step: int | None
    near_goal_loop: bool
    perfect: bool
    steps: int
    timing: dict = field(default_factory=dict)
    cause: str = ""  # manual annotation slot

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loops"] = [asdict(s) for s in self.loops]
        return d


def deviation_step(executed: Sequence[str], gt_path: Sequence[str]) -> int | None:
    for i, vp in enumerate(executed):
        if i >= len(gt_path) or vp != gt_path[i]:
            return i
    return None


def episode_from_record(record: TrajectoryRecord) -> EpisodeSpec:
    return EpisodeSpec(
        episode_id=record.episode_id,
        scan_id=record.scan_id,
        start=Pose.from_dict(record.start),
        instruction=Instruction(record.instruction, record.granularity,
                                record.instruction if record.granularity == "zero" else None),
        goals=tuple(record.goals),
        gt_path=tuple(record.gt_path),
    )


def diagnose(record: TrajectoryRecord, ep: EpisodeSpec | None, g: WorldGraph) -> EpisodeDiagnosis:
    ep = ep or episode_from_record(record)
    sr = record.metrics.get("SR")
    if sr is None:
        sr = score_episode(g, ep, record.executed).SR
    if record.termination == GENERATION_ERROR:
        outcome = GENERATION_ERROR
    elif sr >= 1.0:
        outcome = SUCCESS
    else:
        outcome = INCORRECT
    loops = detect_loops(record.executed)
    near = False
    if outcome == SUCCESS:
        for seg in loops:
            if any(
                min(geodesic_distance(g, vp, goal) for goal in ep.goals) <= SUCCESS_RADIUS
                for vp in seg.repeated
            ):
                near = True
                break
    latencies = [c.get("timing", {}).get("latency_s", 0.0) for s in record.steps for c in s.get("calls", ())]
    timing = {
        "wall_s": record.timing.get("wall_s", 0.0),
        "model_calls": len(latencies),
        "mean_latency_s": statistics.fmean(latencies) if latencies else 0.0,
    }
    return EpisodeDiagnosis(
        episode_id=record.episode_id,
        outcome=outcome,
        termination=record.termination,
        looping=bool(loops),
        loops=loops,
        deviation_step=deviation_step(record.executed, ep.gt_path),
        near_goal_loop=near,
        perfect=outcome == SUCCESS and not loops,
        steps=len(record.steps),
        timing=timing,
    )


def taxonomy_report(diagnoses: Sequence[EpisodeDiagnosis]) -> dict:
    """Outcome breakdown plus a rendered text table under ``"table"``."""
    n = len(diagnoses)
    by = Counter(d.outcome for d in diagnoses)
    succ = [d for d in diagnoses if d.outcome == SUCCESS]
    nav_fail = [d for d in diagnoses if d.outcome == INCORRECT]
    failures = by[INCORRECT] + by[GENERATION_ERROR]
    counts = {
        "total": n,
        SUCCESS: by[SUCCESS],
        INCORRECT: by[INCORRECT],
        GENERATION_ERROR: by[GENERATION_ERROR],
        "perfect_success": sum(d.perfect for d in succ),
        "looping_success": sum(d.looping for d in succ),
        "near_goal_loop_success": sum(d.near_goal_loop for d in succ),
        "looping_failure": sum(d.looping for d in nav_fail),
        "timeout_failure": sum(d.termination == STEP_LIMIT for d in nav_fail),
        "failures": failures,
    }

    def pct(k: int, base: int) -> float:
        return round(100.0 * k / base, 2) if base else 0.0

    shares = {o: pct(by[o], n) for o in OUTCOMES}
    report = {
        "counts": counts,
        "shares": shares,
        "looping_share_of_failures": pct(counts["looping_failure"], failures),
    }
    rows = [
        ("Success", counts[SUCCESS], shares[SUCCESS]),
        ("  perfect (no loop)", counts["perfect_success"], pct(counts["perfect_success"], n)),
        ("  with looping", counts["looping_success"], pct(counts["looping_success"], n)),
        ("    near goal", counts["near_goal_loop_success"], pct(counts["near_goal_loop_success"], n)),
        ("Incorrect navigation", counts[INCORRECT], shares[INCORRECT]),
        ("  looping", counts["looping_failure"], pct(counts["looping_failure"], n)),
        ("  step limit", counts["timeout_failure"], pct(counts["timeout_failure"], n)),
        ("Generation error", counts[GENERATION_ERROR], shares[GENERATION_ERROR]),
    ]
    lines = [f"{'outcome':<24}{'count':>7}{'share':>10}"]
    lines += [f"{label:<24}{c:>7}{s:>9.2f}%" for label, c, s in rows]
    lines.append(f"{'total':<24}{n:>7}")
    report["table"] = "\n".join(lines)
    return report


# -- static replay -------------------------------------------------------
_CSS = """
body{font-family:sans-serif;margin:2em;max-width:70em}
pre{background:#f6f6f6;padding:.6em;white-space:pre-wrap;word-break:break-word}
section.step{border-left:4px solid #ccc;padding-left:1em;margin:1.5em 0}
section.deviation{border-left-color:#d33}
.flag{color:#d33;font-weight:bold}
table{border-collapse:collapse}td,th{border:1px solid #ccc;padding:.2em .6em}
""".strip()


def _svg(record: TrajectoryRecord, g: WorldGraph, width: int = 640, height: int = 420) -> str:
    xs = [n.position[0] for n in g.nodes.values()]
    ys = [n.position[1] for n in g.nodes.values()]
    pad = 20
    span = max(max(xs) - min(xs), max(ys) - min(ys), 1e-6)
    scale = min(width - 2 * pad, height - 2 * pad) / span

    def pt(vp: str) -> tuple[float, float]:
        x, y, _ = g.nodes[vp].position
        return pad + (x - min(xs)) * scale, height - pad - (y - min(ys)) * scale

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    for e in sorted(tuple(sorted(e)) for e in g.edges):
        (x1, y1), (x2, y2) = pt(e[0]), pt(e[1])
        parts.append(f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" stroke="#ddd"/>')
    for vp in sorted(g.nodes):
        x, y = pt(vp)
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="2.5" fill="#bbb"/>')

    def polyline(path: Sequence[str], colour: str, dash: str = "") -> None:
        if len(path) < 2:
            return
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in map(pt, path))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="3"{extra}/>')

    polyline(record.gt_path, "#2a2")
    polyline(record.executed, "#d33", "6,4")
    labelled = sorted(set(record.gt_path) | set(record.executed) | set(record.goals))
    for vp in labelled:
        x, y = pt(vp)
        fill = "#26c" if vp in record.goals else "#333"
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="4.5" fill="{fill}"/>')
        parts.append(f'<text x="{x + 6:.1f}" y="{y - 6:.1f}" font-size="10">{html.escape(vp)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def replay_episode(record: TrajectoryRecord, g: WorldGraph, diagnosis: EpisodeDiagnosis | None = None) -> str:
    """Self-contained HTML replay of one episode (no scripts)."""
    diag = diagnosis or diagnose(record, None, g)
    esc = html.escape
    out = [
        "<!DOCTYPE html>",
        f"<html><head><meta charset='utf-8'><title>{esc(record.episode_id)}</title>",
        f"<style>{_CSS}</style></head><body>",
        f"<h1>Episode {esc(record.episode_id)}</h1>",
        f"<p><b>Scan:</b> {esc(record.scan_id)} &middot; <b>Run:</b> {esc(record.run_id)}</p>",
        f"<p><b>Instruction ({esc(record.granularity)}):</b> {esc(record.instruction)}</p>",
        f"<p><b>Termination:</b> {esc(record.termination)} &middot; <b>Outcome:</b> {esc(diag.outcome)}</p>",
    ]
    if record.error:
        out.append(f"<p class='flag'>Error: {esc(record.error)}</p>")
    if record.metrics:
        out.append("<table><tr>" + "".join(f"<th>{esc(k)}</th>" for k in record.metrics) + "</tr><tr>")
        out.append("".join(f"<td>{v:.3f}</td>" for v in record.metrics.values()) + "</tr></table>")
    out.append(f"<p><b>Ground truth path:</b> {esc(' → '.join(record.gt_path))}</p>")
    out.append(f"<p><b>Executed path:</b> {esc(' → '.join(record.executed))}</p>")
    if diag.deviation_step is not None:
        out.append(f"<p class='flag'>First deviation from ground truth at step {diag.deviation_step}</p>")
    for seg in diag.loops:
        out.append(
            f"<p class='flag'>Loop over {esc(', '.join(seg.viewpoints))} (path positions {seg.start} to {seg.end})</p>"
        )
    out.append(_svg(record, g))

    for i, step in enumerate(record.steps, start=1):
        cls = "step deviation" if diag.deviation_step == i else "step"
        out.append(f"<section class='{cls}' id='step-{i}'><h2>Step {i}</h2>")
        if diag.deviation_step == i:
            out.append("<p class='flag'>Deviation from the ground truth happens here.</p>")
        pose = step.get("pose_before", {})
        out.append(
            f"<p><b>Viewpoint:</b> {esc(str(pose.get('viewpoint')))} &middot; "
            f"heading {pose.get('heading', 0):.1f}°</p>"
        )
        cands = step.get("candidates", [])
        if cands:
            out.append("<p><b>Options:</b> " + esc(", ".join(f"[{c['marker']}] {c['target']} ({c['relative_bucket']})" for c in cands)) + "</p>")
        if step.get("guidance"):
            out.append(f"<p><b>Assistant guidance:</b></p><pre>{esc(step['guidance'])}</pre>")
        for j, call in enumerate(step.get("calls", []), start=1):
            req = call.get("request", {})
            out.append(f"<h3>Call {j} ({esc(call.get('phase', 'act'))})</h3>")
            out.append(f"<details><summary>System prompt</summary><pre>{esc(req.get('system', ''))}</pre></details>")
            out.append(f"<p>Task prompt</p><pre>{esc(req.get('task', ''))}</pre>")
            out.append(f"<p>LLM output</p><pre>{esc(call.get('response') or '')}</pre>")
            if call.get("error"):
                out.append(f"<p class='flag'>{esc(call['error'])}</p>")
        act = step.get("executed_action") or {}
        if act:
            desc = "Stop" if act.get("type") == "stop" else f"marker {act.get('marker')} → {act.get('target')}"
            extra = ""
            if "turn_angle" in act:
                extra = f" (turn {act['turn_angle']:.0f}°, forward {act['forward']:.2f} m)"
            out.append(f"<p><b>Executed:</b> {esc(desc)}{esc(extra)}</p>")
        out.append("</section>")
    out.append("</body></html>")
    return "\n".join(out)


def write_reports(records: Sequence[TrajectoryRecord], worlds: dict[str, WorldGraph], out_dir: str | os.PathLike) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for rec in records:
        p = out / f"{rec.episode_id}.html"
        p.write_text(replay_episode(rec, worlds[rec.scan_id]), encoding="utf-8")
        paths.append(p)
    return paths


# -- performance -----------------------------------------------------------
def measure_access_latency(
    g: WorldGraph,
    samples: int = 500,
    seed: int = 0,
    fmt: ObservationFormat = ObservationFormat.FOUR_VIEW,
) -> dict:
    """Median/p95 latency of composing an observation and reading its images."""
    rng = random.Random(seed)
    nav = sorted(vp for vp, n in g.nodes.items() if n.navigable)
    text_only = not any(g.nodes[vp].view_assets for vp in nav)
    times = []
    for _ in range(samples):
        pose = Pose(rng.choice(nav), rng.uniform(0.0, 360.0))
        t0 = time.perf_counter()
        obs = compose_observation(g, pose, fmt, text_only=text_only)
        resolve_images(g, obs, read=True)
        times.append(time.perf_counter() - t0)
    times.sort()
    p95 = times[min(len(times) - 1, int(round(0.95 * (len(times) - 1))))]
    return {
        "samples": samples,
        "median_ms": 1000.0 * statistics.median(times),
        "p95_ms": 1000.0 * p95,
        "mean_ms": 1000.0 * statistics.fmean(times),
        "disk_backed": g.asset_dir is not None and not text_only,
        "machine": {
            "platform": platform.platform(),
            "processor": platform.processor() or platform.machine(),
            "python": platform.python_version(),
            "cpus": os.cpu_count(),
        },
    }
