"""Connectivity-graph environments backed by pre-rendered view assets.

A scan lives under ``<asset_root>/<scan_id>/``::

    graph.json          nodes (id, position, navigable) and undirected edges
    annotations.json    optional viewpoint summaries and marker captions
    images/<vp>_<heading>.jpg  four cardinal renders per viewpoint

Edge weights are never trusted from disk; they are the Euclidean distance
between endpoint positions.
"""

from __future__ import annotations

import heapq
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import GraphMalformed, GraphNotFound, UnknownViewpoint, Unreachable

CARDINALS = (0, 90, 180, 270)
UNREACHABLE = math.inf
ASSET_ROOT_ENV = "VLN_ASSET_ROOT"

_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class NodeRecord:
    position: tuple[float, float, float]
    navigable: bool = True
    view_assets: Mapping[int, str] = field(default_factory=dict)
    summary: str | None = None
    marker_captions: Mapping[int, str] | None = None


@dataclass(frozen=True)
class Pose:
    viewpoint: str
    heading: float = 0.0
    elevation: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", normalize_heading(self.heading))

    def to_dict(self) -> dict:
        return {"viewpoint": self.viewpoint, "heading": self.heading, "elevation": self.elevation}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Pose":
        return cls(str(d["viewpoint"]), float(d.get("heading", 0.0)), float(d.get("elevation", 0.0)))


def normalize_heading(h: float) -> float:
    h = math.fmod(float(h), 360.0)
    if h < 0:
        h += 360.0
    # fmod of a tiny negative can round up to exactly 360
    return 0.0 if h >= 360.0 else h


def euclidean(a: Iterable[float], b: Iterable[float]) -> float:
    return math.dist(tuple(a), tuple(b))


def view_image_name(viewpoint: str, heading: int) -> str:
    return f"images/{viewpoint}_{heading}.jpg"


class WorldGraph:
    """Immutable navigable viewpoint graph of one scan.

    Shortest-path trees are memoised per source; the cache is the only
    mutable state and is safe to fill from concurrent readers.
    """

    def __init__(
        self,
        scan_id: str,
        nodes: Mapping[str, NodeRecord],
        edges: Iterable[tuple[str, str]],
        asset_dir: Path | None = None,
    ):
        self.scan_id = scan_id
        self.nodes: dict[str, NodeRecord] = dict(nodes)
        self.asset_dir = asset_dir
        for vp, node in self.nodes.items():
            if len(node.position) != 3 or not all(math.isfinite(c) for c in node.position):
                raise GraphMalformed(f"{scan_id}: non-finite or malformed position at {vp!r}")
        self._adj: dict[str, dict[str, float]] = {vp: {} for vp in self.nodes}
        for a, b in edges:
            if a not in self.nodes or b not in self.nodes:
                missing = a if a not in self.nodes else b
                raise GraphMalformed(f"{scan_id}: edge ({a}, {b}) references unknown node {missing!r}")
            if a == b:
                raise GraphMalformed(f"{scan_id}: self-loop at {a!r}")
            if b in self._adj[a]:
                raise GraphMalformed(f"{scan_id}: duplicate edge ({a}, {b})")
            w = euclidean(self.nodes[a].position, self.nodes[b].position)
            self._adj[a][b] = w
            self._adj[b][a] = w
        for vp, node in self.nodes.items():
            if node.navigable and not self._adj[vp]:
                raise GraphMalformed(f"{scan_id}: navigable node {vp!r} has no incident edge")
            if node.view_assets and set(node.view_assets) != set(CARDINALS):
                raise GraphMalformed(f"{scan_id}: {vp!r} view assets must cover exactly {CARDINALS}")
        self._sssp: dict[str, tuple[dict[str, float], dict[str, str]]] = {}

    # -- structure -----------------------------------------------------
    @property
    def edges(self) -> dict[frozenset, float]:
        out = {}
        for a, nbrs in self._adj.items():
            for b, w in nbrs.items():
                out[frozenset((a, b))] = w
        return out

    def neighbors(self, vp: str) -> dict[str, float]:
        self._check(vp)
        return self._adj[vp]

    def edge_weight(self, a: str, b: str) -> float | None:
        self._check(a)
        return self._adj[a].get(b)

    def has_edge(self, a: str, b: str) -> bool:
        return a in self._adj and b in self._adj[a]

    def _check(self, vp: str) -> None:
        if vp not in self.nodes:
            raise UnknownViewpoint(f"{self.scan_id}: unknown viewpoint {vp!r}")

    def heading_between(self, a: str, b: str) -> float:
        """Global heading of the move a -> b, 0 = north (+y), clockwise."""
        pa, pb = self.nodes[a].position, self.nodes[b].position
        return normalize_heading(math.degrees(math.atan2(pb[0] - pa[0], pb[1] - pa[1])))

    def with_nodes(self, nodes: Mapping[str, NodeRecord]) -> "WorldGraph":
        edges = [tuple(sorted(e)) for e in self.edges]
        return WorldGraph(self.scan_id, nodes, edges, self.asset_dir)

    # -- geometry ------------------------------------------------------
    def _tree(self, src: str) -> tuple[dict[str, float], dict[str, str]]:
        cached = self._sssp.get(src)
        if cached is not None:
            return cached
        dist = {src: 0.0}
        prev: dict[str, str] = {}
        heap = [(0.0, src)]
        done = set()
        while heap:
            d, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            # sorted neighbour order keeps tie-breaking deterministic
            for v in sorted(self._adj[u]):
                nd = d + self._adj[u][v]
                if nd < dist.get(v, math.inf):
                    dist[v] = nd
                    prev[v] = u
                    heapq.heappush(heap, (nd, v))
        self._sssp[src] = (dist, prev)
        return dist, prev

    def distances_from(self, src: str) -> dict[str, float]:
        self._check(src)
        return self._tree(src)[0]


def geodesic_distance(g: WorldGraph, a: str, b: str) -> float:
    """Shortest weighted path length; ``UNREACHABLE`` (inf) if disconnected."""
    g._check(a)
    g._check(b)
    if a == b:
        return 0.0
    return g._tree(a)[0].get(b, UNREACHABLE)


def shortest_path(g: WorldGraph, a: str, b: str) -> list[str]:
    g._check(a)
    g._check(b)
    if a == b:
        return [a]
    dist, prev = g._tree(a)
    if b not in dist:
        raise Unreachable(f"{g.scan_id}: no path {a!r} -> {b!r}")
    path = [b]
    while path[-1] != a:
        path.append(prev[path[-1]])
    return path[::-1]


def path_length(g: WorldGraph, path: list[str]) -> float:
    total = 0.0
    for a, b in zip(path, path[1:]):
        w = g.edge_weight(a, b)
        if w is None:
            raise GraphMalformed(f"{g.scan_id}: ({a}, {b}) is not an edge")
        total += w
    return total


# -- persistence -------------------------------------------------------
def default_asset_root() -> Path:
    root = os.environ.get(ASSET_ROOT_ENV)
    return Path(root) if root else Path("assets")


def _scan_dir(asset_root: str | os.PathLike | None, scan_id: str) -> Path:
    root = Path(asset_root) if asset_root is not None else default_asset_root()
    return root / scan_id


def load_world(asset_root: str | os.PathLike | None, scan_id: str) -> WorldGraph:
    scan_dir = _scan_dir(asset_root, scan_id)
    graph_file = scan_dir / "graph.json"
    if not graph_file.is_file():
        raise GraphNotFound(f"no graph file at {graph_file}")
    try:
        doc = json.loads(graph_file.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphMalformed(f"{graph_file}: {exc}") from exc

    images_dir = scan_dir / "images"
    present = set(os.listdir(images_dir)) if images_dir.is_dir() else set()

    annotations = {}
    ann_file = scan_dir / "annotations.json"
    if ann_file.is_file():
        annotations = json.loads(ann_file.read_text(encoding="utf-8"))
    summaries = annotations.get("summaries", {})
    captions = annotations.get("marker_captions", {})

    nodes: dict[str, NodeRecord] = {}
    try:
        for entry in doc["nodes"]:
            vp = str(entry["id"])
            if vp in nodes:
                raise GraphMalformed(f"{scan_id}: duplicate node {vp!r}")
            pos = tuple(float(c) for c in entry["position"])
            assets = {h: view_image_name(vp, h) for h in CARDINALS}
            if not all(Path(ref).name in present for ref in assets.values()):
                assets = {}  # text-only node
            caps = captions.get(vp)
            nodes[vp] = NodeRecord(
                position=pos,  # type: ignore[arg-type]
                navigable=bool(entry.get("navigable", True)),
                view_assets=assets,
                summary=summaries.get(vp),
                marker_captions={int(k): str(v) for k, v in caps.items()} if caps else None,
            )
        edges = []
        for e in doc["edges"]:
            if isinstance(e, Mapping):
                a, b, w = str(e["a"]), str(e["b"]), e.get("weight")
            else:
                a, b, w = str(e[0]), str(e[1]), (e[2] if len(e) > 2 else None)
            edges.append((a, b, w))
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphMalformed(f"{graph_file}: {exc}") from exc

    g = WorldGraph(str(doc.get("scan_id", scan_id)), nodes, [(a, b) for a, b, _ in edges], scan_dir)
    for a, b, w in edges:
        if w is not None and abs(float(w) - g.edge_weight(a, b)) > _WEIGHT_TOL:
            raise GraphMalformed(f"{scan_id}: stored weight of ({a}, {b}) disagrees with positions")
    return g


def graph_document(g: WorldGraph) -> dict:
    nodes = [
        {"id": vp, "position": list(g.nodes[vp].position), "navigable": g.nodes[vp].navigable}
        for vp in sorted(g.nodes)
    ]
    edges = sorted(sorted(e) for e in g.edges)
    return {"scan_id": g.scan_id, "nodes": nodes, "edges": edges}


def annotations_document(g: WorldGraph) -> dict:
    summaries = {vp: n.summary for vp, n in sorted(g.nodes.items()) if n.summary is not None}
    captions = {
        vp: {str(k): v for k, v in sorted(n.marker_captions.items())}
        for vp, n in sorted(g.nodes.items())
        if n.marker_captions
    }
    return {"summaries": summaries, "marker_captions": captions}


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_world(g: WorldGraph, asset_root: str | os.PathLike) -> Path:
    """Write the canonical graph and annotation files; returns the scan dir."""
    scan_dir = Path(asset_root) / g.scan_id
    scan_dir.mkdir(parents=True, exist_ok=True)
    (scan_dir / "graph.json").write_text(_dump(graph_document(g)), encoding="utf-8")
    save_annotations(g, asset_root)
    return scan_dir


def save_annotations(g: WorldGraph, asset_root: str | os.PathLike) -> Path:
    path = Path(asset_root) / g.scan_id / "annotations.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dump(annotations_document(g)), encoding="utf-8")
    return path
