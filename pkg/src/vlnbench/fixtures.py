"""Synthetic worlds, episode splits and scripted model behaviours.

Everything here is a pure function of its seed so whole-pipeline tests
run offline and reproducibly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .agents.memory import signed_turn
from .models import ModelRequest
from .tasks import (
    Granularity,
    EpisodeSpec,
    Instruction,
    LengthBin,
    bin_index,
    largest_remainder,
    save_split,
    validate_episode,
)
from .world import CARDINALS, NodeRecord, Pose, WorldGraph, save_world, shortest_path, view_image_name

log = logging.getLogger(__name__)

LAYER_HEIGHT = 3.0
OBJECT_CATEGORIES = (
    "chair", "table", "picture", "cabinet", "cushion", "sofa", "bed",
    "chest_of_drawers", "plant", "sink", "toilet", "stool", "towel",
    "tv_monitor", "shower", "bathtub", "counter", "fireplace",
    "gym_equipment", "seating", "clothes",
)


@dataclass
class SynthSpec:
    seed: int = 0
    nodes: int = 25  # per layer
    degree: tuple[int, int] = (2, 4)
    scale: float = 2.0  # grid spacing in metres
    jitter: float = 0.15  # fraction of scale
    layers: int = 1
    stairs: int = 1  # stair edges between consecutive layers
    scans: int = 1
    episodes: int = 20
    granularity_mix: dict[str, float] = field(default_factory=lambda: {"fine": 1.0})
    length_bins: list[LengthBin] = field(
        default_factory=lambda: [(0.0, 6.0, 0.5), (6.0, 12.0, 0.3), (12.0, math.inf, 0.2)]
    )
    split: str = "val"

    def __post_init__(self) -> None:
        self.degree = (int(self.degree[0]), int(self.degree[1]))
        if not 1 <= self.degree[0] <= self.degree[1]:
            raise ValueError(f"bad degree range {self.degree}")
        if self.nodes < 2:
            raise ValueError("a synthetic world needs at least 2 nodes per layer")
        self.length_bins = [(float(lo), float(hi), float(p)) for lo, hi, p in self.length_bins]

    def scan_ids(self) -> list[str]:
        return [f"synth_{self.seed}_{k}" for k in range(self.scans)]

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthSpec":
        d = dict(d)
        if "length_bins" in d:
            d["length_bins"] = [(lo, math.inf if hi is None else hi, p) for lo, hi, p in d["length_bins"]]
        if "degree" in d:
            d["degree"] = tuple(d["degree"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["degree"] = list(self.degree)
        d["length_bins"] = [[lo, None if math.isinf(hi) else hi, p] for lo, hi, p in self.length_bins]
        return d


def room_caption(index: int) -> str:
    return f"a synthetic room {index}"


def node_id(index: int) -> str:
    return f"v{index:03d}"


def _rng(*parts) -> random.Random:
    # str seeds hash through sha512, so this is stable across processes
    return random.Random(":".join(str(p) for p in parts))


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def _layer_edges(positions: list[tuple[float, float, float]], lo: int, hi: int, reach: float, rng: random.Random):
    """Connected edge set with every degree in [lo, hi], or None."""
    n = len(positions)
    cand = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if math.dist(positions[i], positions[j]) <= reach
    ]
    rng.shuffle(cand)
    deg = [0] * n
    edges: set[tuple[int, int]] = set()
    uf = _UnionFind(n)
    for i, j in cand:  # spanning forest under the degree cap
        if deg[i] < hi and deg[j] < hi and uf.union(i, j):
            edges.add((i, j))
            deg[i] += 1
            deg[j] += 1
    if len({uf.find(i) for i in range(n)}) != 1:
        return None
    target = [rng.randint(lo, hi) for _ in range(n)]
    for i, j in cand:
        if (i, j) not in edges and deg[i] < target[i] and deg[j] < target[j]:
            edges.add((i, j))
            deg[i] += 1
            deg[j] += 1
    for i, j in cand:
        if (i, j) not in edges and (deg[i] < lo or deg[j] < lo) and deg[i] < hi and deg[j] < hi:
            edges.add((i, j))
            deg[i] += 1
            deg[j] += 1
    if min(deg) < lo:
        return None
    return edges


def gen_world(spec: SynthSpec, scan_index: int = 0) -> WorldGraph:
    """Jittered-grid world; extra layers sit 3 m up, joined by stair edges."""
    scan_id = spec.scan_ids()[scan_index]
    lo, hi = spec.degree
    cols = math.ceil(math.sqrt(spec.nodes))
    for attempt in range(200):
        rng = _rng("world", spec.seed, scan_index, attempt)
        positions: list[tuple[float, float, float]] = []
        edges: set[tuple[int, int]] = set()
        ok = True
        for layer in range(spec.layers):
            base = len(positions)
            layer_pos = []
            for k in range(spec.nodes):
                col, row = k % cols, k // cols
                x = (col + rng.uniform(-spec.jitter, spec.jitter)) * spec.scale
                y = (row + rng.uniform(-spec.jitter, spec.jitter)) * spec.scale
                layer_pos.append((round(x, 4), round(y, 4), layer * LAYER_HEIGHT))
            layer_edges = _layer_edges(layer_pos, lo, hi, 1.5 * spec.scale, rng)
            if layer_edges is None:
                ok = False
                break
            positions.extend(layer_pos)
            edges |= {(base + i, base + j) for i, j in layer_edges}
        if not ok:
            continue
        deg = [0] * len(positions)
        for i, j in edges:
            deg[i] += 1
            deg[j] += 1
        for layer in range(1, spec.layers):
            lower = range((layer - 1) * spec.nodes, layer * spec.nodes)
            upper = range(layer * spec.nodes, (layer + 1) * spec.nodes)
            # a stair climbs from a lower node to a horizontally offset upper node
            pairs = [
                (i, j)
                for i in lower
                for j in upper
                if deg[i] < hi and deg[j] < hi
                and 0 < math.dist(positions[i][:2], positions[j][:2]) <= 1.5 * spec.scale
            ]
            if len(pairs) < spec.stairs:
                ok = False
                break
            for i, j in rng.sample(pairs, len(pairs)):
                if sum(1 for a, b in edges if a in lower and b in upper) >= spec.stairs:
                    break
                if deg[i] < hi and deg[j] < hi:
                    edges.add((i, j))
                    deg[i] += 1
                    deg[j] += 1
            if sum(1 for a, b in edges if a in lower and b in upper) < spec.stairs:
                ok = False
                break
        if ok:
            return _assemble(scan_id, positions, edges)
    raise ValueError(f"could not build a world for {spec} after 200 attempts")


def _assemble(scan_id: str, positions, edges) -> WorldGraph:
    ids = [node_id(i) for i in range(len(positions))]
    bare = WorldGraph(
        scan_id,
        {vp: NodeRecord(position=positions[i]) for i, vp in enumerate(ids)},
        [(ids[i], ids[j]) for i, j in sorted(edges)],
    )
    nodes = {}
    for i, vp in enumerate(ids):
        ordered = sorted(bare.neighbors(vp), key=lambda t: (bare.heading_between(vp, t), t))
        nodes[vp] = NodeRecord(
            position=positions[i],
            view_assets={h: view_image_name(vp, h) for h in CARDINALS},
            summary=room_caption(i),
            marker_captions={m: room_caption(int(t[1:])) for m, t in enumerate(ordered, start=1)},
        )
    return bare.with_nodes(nodes)


def node_category(scan_id: str, vp: str) -> str:
    return _rng("category", scan_id, vp).choice(OBJECT_CATEGORIES)


# -- instructions --------------------------------------------------------
_FINE_STEP = re.compile(r"Step \d+:")


def _turn_phrase(turn: float) -> str:
    if abs(turn) < 45:
        return "go straight"
    if abs(turn) > 135:
        return "turn around"
    return "turn right" if turn > 0 else "turn left"


def _fine_texts(g: WorldGraph, heading: float, gt: Sequence[str]) -> list[str]:
    variants: list[list[str]] = [[], [], []]
    for i, (a, b) in enumerate(zip(gt, gt[1:]), start=1):
        h = g.heading_between(a, b)
        turn = _turn_phrase(signed_turn(heading, h))
        d = g.edge_weight(a, b)
        dest = g.nodes[b].summary or b
        climb = g.nodes[b].position[2] - g.nodes[a].position[2]
        stairs = " up the stairs" if climb > 0 else " down the stairs" if climb < 0 else ""
        variants[0].append(f"Step {i}: {turn} and walk{stairs} {d:.1f} meters to {dest}.")
        variants[1].append(f"Step {i}: {turn}, then continue{stairs} for about {d:.0f} meters until you reach {dest}.")
        variants[2].append(f"Step {i}: head {round(h) % 360} degrees{stairs} for {d:.1f} meters towards {dest}.")
        heading = h
    return [" ".join(v + ["Then stop."]) for v in variants]


def fine_step_count(text: str) -> int:
    return len(_FINE_STEP.findall(text))


def _coarse_texts(g: WorldGraph, goal: str) -> list[str]:
    dest = g.nodes[goal].summary or goal
    return [
        f"Find {dest} and stop there.",
        f"Go to {dest}.",
        f"Your destination is {dest}; stop when you arrive.",
    ]


def _pools(worlds: Sequence[WorldGraph], gran: Granularity, bins: Sequence[LengthBin]):
    """Candidate (scan, start, goals, gt) tuples grouped by length bin."""
    pools: dict[int, list[tuple]] = {}
    for g in worlds:
        ids = sorted(vp for vp, n in g.nodes.items() if n.navigable)
        if gran is Granularity.ZERO:
            by_cat: dict[str, list[str]] = {}
            for vp in ids:
                by_cat.setdefault(node_category(g.scan_id, vp), []).append(vp)
        for s in ids:
            dist = g.distances_from(s)
            if gran is Granularity.ZERO:
                choices = []
                for cat in sorted(by_cat):
                    goals = tuple(by_cat[cat])
                    if s in goals:
                        continue
                    nearest = min(goals, key=lambda t: (dist[t], t))
                    choices.append((cat, goals, nearest))
            else:
                choices = [(None, (t,), t) for t in ids if t != s]
            for cat, goals, target in choices:
                if math.isinf(dist[target]):
                    continue
                b = bin_index(dist[target], bins)
                if b is not None:
                    pools.setdefault(b, []).append((g.scan_id, s, goals, target, cat))
    return pools


def gen_split(worlds: WorldGraph | Sequence[WorldGraph], spec: SynthSpec) -> list[EpisodeSpec]:
    """Episodes over ``worlds`` with exact per-bin counts and shortest gt paths."""
    if isinstance(worlds, WorldGraph):
        worlds = [worlds]
    by_scan = {g.scan_id: g for g in worlds}
    rng = _rng("split", spec.seed, *sorted(by_scan))
    slots = [b for b, n in enumerate(largest_remainder(spec.episodes, [p for _, _, p in spec.length_bins]))
             for _ in range(n)]
    grans = [Granularity(k) for k in sorted(spec.granularity_mix, key=lambda k: list(Granularity).index(Granularity(k)))]
    counts = largest_remainder(spec.episodes, [spec.granularity_mix[g.value] / sum(spec.granularity_mix.values()) for g in grans])
    labels = [g for g, n in zip(grans, counts) for _ in range(n)]
    rng.shuffle(labels)

    pools: dict[Granularity, dict[int, list[tuple]]] = {}
    out = []
    for i, (gran, b) in enumerate(zip(labels, slots)):
        if gran not in pools:
            pools[gran] = {k: rng.sample(v, len(v)) for k, v in _pools(worlds, gran, spec.length_bins).items()}
        pool = pools[gran].get(b) or []
        if not pool:
            lo, hi, _ = spec.length_bins[b]
            raise ValueError(f"no {gran.value} start/goal pair left with length in [{lo}, {hi})")
        scan_id, s, goals, target, cat = pool.pop()
        g = by_scan[scan_id]
        gt = tuple(shortest_path(g, s, target))
        heading = float(rng.randrange(0, 360, 15))
        if gran is Granularity.FINE:
            texts = _fine_texts(g, heading, gt)
            ins, alts = Instruction(texts[0], gran), tuple(Instruction(t, gran) for t in texts[1:])
        elif gran is Granularity.COARSE:
            texts = _coarse_texts(g, target)
            ins, alts = Instruction(texts[0], gran), tuple(Instruction(t, gran) for t in texts[1:])
        else:
            ins, alts = Instruction(cat, gran, cat), ()
        ep = EpisodeSpec(
            episode_id=f"{scan_id}_{gran.value}_{i:04d}",
            scan_id=scan_id,
            start=Pose(s, heading, 0.0),
            instruction=ins,
            goals=tuple(goals),
            gt_path=gt,
            alternatives=alts,
        )
        out.append(validate_episode(ep, g))
    return out


def hard_episodes(g: WorldGraph, episodes: Sequence[EpisodeSpec], radius: float = 3.0) -> list[EpisodeSpec]:
    """Episodes whose start and every start neighbour lie outside the success radius."""
    out = []
    for ep in episodes:
        near = [ep.start.viewpoint, *g.neighbors(ep.start.viewpoint)]
        if all(min(g.distances_from(vp)[t] for t in ep.goals) > radius for vp in near):
            out.append(ep)
    return out


# -- asset trees -----------------------------------------------------------
def _placeholder_jpeg(path: Path, key: str, size: tuple[int, int]) -> None:
    from PIL import Image

    digest = hashlib.sha256(key.encode()).digest()
    Image.new("RGB", size, tuple(digest[:3])).save(path, format="JPEG", quality=70)


def write_synthetic_tree(spec: SynthSpec, out_dir: str | os.PathLike, image_size: tuple[int, int] = (64, 48)) -> dict:
    """Write ``assets/<scan>/`` and ``data/<task>/<split>.json`` under ``out_dir``."""
    out = Path(out_dir)
    assets, data = out / "assets", out / "data"
    worlds = [gen_world(spec, k) for k in range(spec.scans)]
    for g in worlds:
        scan_dir = save_world(g, assets)
        images = scan_dir / "images"
        images.mkdir(exist_ok=True)
        for vp, node in sorted(g.nodes.items()):
            for h, ref in sorted(node.view_assets.items()):
                _placeholder_jpeg(scan_dir / ref, f"{g.scan_id}/{vp}/{h}", image_size)
    episodes = gen_split(worlds, spec)
    splits = {}
    for gran in Granularity:
        eps = [ep for ep in episodes if ep.instruction.granularity is gran]
        if eps:
            splits[gran.value] = str(save_split(eps, data, gran, spec.split))
    (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"asset_root": str(assets), "data_root": str(data), "scans": [g.scan_id for g in worlds], "splits": splits}


# -- scripted behaviours ------------------------------------------------------
def _reply(ctx: Mapping, action: str, decision: str = "Keep", note: str = "") -> str:
    """Model text in the grammar of the requesting variant."""
    reasoning = ctx.get("reasoning", "baseline")
    parts = []
    if reasoning in ("cot", "cot_reflection"):
        parts.append(f"<Reasoning>{note or 'Following the plan.'}</Reasoning>")
    parts.append(f"Action: {action}")
    if reasoning in ("reflection", "cot_reflection"):
        parts.append("<Reflection>The action is consistent with the instruction so far.</Reflection>")
        parts.append(f"<Final Decision>{decision}</Final Decision>")
    return "\n".join(parts)


def _marker_for(ctx: Mapping, target: str) -> int | None:
    for marker, vp in sorted(ctx.get("candidates", {}).items()):
        if vp == target:
            return int(marker)
    return None


def _next_on(path: Sequence[str], vp: str) -> str | None:
    path = list(path)
    if vp not in path:
        return None
    i = len(path) - 1 - path[::-1].index(vp)
    return path[i + 1] if i + 1 < len(path) else None


class OptimalFollower:
    """Emits the marker whose target is the next gt node; Stop at the end."""

    def __call__(self, req: ModelRequest) -> str:
        ctx = req.context
        nxt = _next_on(ctx["gt_path"], ctx["viewpoint"])
        if nxt is None:
            return _reply(ctx, "Stop", note="The destination is reached.")
        marker = _marker_for(ctx, nxt)
        return _reply(ctx, str(marker) if marker is not None else "Stop")


class RandomWalker:
    def __init__(self, seed: int = 0, stop_prob: float = 0.1):
        self.seed = seed
        self.stop_prob = stop_prob

    def __call__(self, req: ModelRequest) -> str:
        ctx = req.context
        rng = _rng("walk", self.seed, ctx.get("episode_id"), ctx.get("step"), ctx.get("attempt"))
        markers = sorted(ctx.get("candidates", {}))
        if not markers or (ctx.get("step", 0) > 0 and rng.random() < self.stop_prob):
            return _reply(ctx, "Stop")
        return _reply(ctx, str(rng.choice(markers)))


class Looper:
    """Oscillates between the start and its first neighbour; never stops."""

    def __call__(self, req: ModelRequest) -> str:
        ctx = req.context
        traj = ctx.get("trajectory", [ctx["viewpoint"]])
        if len(traj) >= 2:
            marker = _marker_for(ctx, traj[-2])
            if marker is not None:
                return _reply(ctx, str(marker))
        return _reply(ctx, str(min(ctx["candidates"])))


class GarbageEmitter:
    def __call__(self, req: ModelRequest) -> str:
        return "I am not sure what to do here. Perhaps the hallway looks nice."


class ReviseOnce:
    """Proposes a wrong move, revises it, then follows the gt path."""

    def __init__(self):
        self.follower = OptimalFollower()

    def __call__(self, req: ModelRequest) -> str:
        ctx = req.context
        if ctx.get("phase") == "replan":
            return self.follower(req)
        nxt = _next_on(ctx["gt_path"], ctx["viewpoint"])
        wrong = [m for m, vp in sorted(ctx.get("candidates", {}).items()) if vp != nxt]
        proposal = str(wrong[0]) if wrong else "Stop"
        return _reply({**ctx, "reasoning": ctx.get("reasoning", "reflection")}, proposal, decision="Revise")


ROUTE_LINE = re.compile(r"Suggested route:\s*([^\n]+?)\s+then stop", re.I)


class GuidedLooper:
    """Loops until guidance with a suggested route appears in its prompt, then follows it."""

    def __init__(self):
        self.looper = Looper()

    def __call__(self, req: ModelRequest) -> str:
        ctx = req.context
        m = ROUTE_LINE.search(req.task_text)
        if m:
            route = [v.strip() for v in m.group(1).split("->")]
            if route and ctx["viewpoint"] == route[-1]:
                return _reply(ctx, "Stop")
            nxt = _next_on(route, ctx["viewpoint"])
            marker = _marker_for(ctx, nxt) if nxt else None
            if marker is not None:
                return _reply(ctx, str(marker))
        return self.looper(req)


class RouteOracle:
    """Shortest-path-aware helper: answers with a route to the nearest goal."""

    def __init__(self, worlds: Mapping[str, WorldGraph]):
        self.worlds = worlds

    def __call__(self, req: ModelRequest) -> str:
        ctx = req.context
        g = self.worlds[ctx["scan_id"]]
        here = ctx["viewpoint"]
        dist = g.distances_from(here)
        goal = min(ctx["goals"], key=lambda t: (dist[t], t))
        route = shortest_path(g, here, goal)
        return (
            "You are repeating moves without progress. Leave this area and head for the goal.\n"
            f"Suggested route: {' -> '.join(route)} then stop"
        )


def scripted_policies(worlds: Mapping[str, WorldGraph] | None = None, seed: int = 0) -> dict[str, Callable[[ModelRequest], str]]:
    policies: dict[str, Callable[[ModelRequest], str]] = {
        "OptimalFollower": OptimalFollower(),
        "RandomWalker": RandomWalker(seed),
        "Looper": Looper(),
        "GarbageEmitter": GarbageEmitter(),
        "ReviseOnce": ReviseOnce(),
        "GuidedLooper": GuidedLooper(),
    }
    if worlds is not None:
        policies["RouteOracle"] = RouteOracle(worlds)
    return policies
