"""Trajectory metrics: TL, NE, SR, OSR, SPL, nDTW, SDTW and CLS.

All distances are geodesic over the connectivity graph.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .errors import NonContiguousPath
from .tasks import EpisodeSpec
from .world import WorldGraph, geodesic_distance

SUCCESS_RADIUS = 3.0
RATE_KEYS = ("SR", "OSR", "SPL", "nDTW", "SDTW", "CLS")
LENGTH_KEYS = ("TL", "NE")


@dataclass(frozen=True)
class MetricsReport:
    TL: float
    NE: float
    SR: float
    OSR: float
    SPL: float
    nDTW: float
    SDTW: float
    CLS: float

    def to_dict(self) -> dict:
        return asdict(self)


def dtw(g: WorldGraph, query: Sequence[str], reference: Sequence[str]) -> float:
    """Unconstrained DTW with geodesic node-to-node cost."""
    n, m = len(query), len(reference)
    prev = [math.inf] * (m + 1)
    prev[0] = 0.0
    for i in range(1, n + 1):
        dists = g.distances_from(query[i - 1])
        cur = [math.inf] * (m + 1)
        for j in range(1, m + 1):
            cost = dists.get(reference[j - 1], math.inf)
            cur[j] = cost + min(prev[j], cur[j - 1], prev[j - 1])
        prev = cur
    return prev[m]


def _goal_distance(g: WorldGraph, vp: str, goals: Iterable[str]) -> float:
    return min(geodesic_distance(g, vp, goal) for goal in goals)


def score_episode(
    g: WorldGraph,
    ep: EpisodeSpec,
    executed: Sequence[str],
    radius: float = SUCCESS_RADIUS,
) -> MetricsReport:
    if not executed or executed[0] != ep.start.viewpoint:
        raise NonContiguousPath(f"{ep.episode_id}: executed path must begin at the start viewpoint")
    tl = 0.0
    for a, b in zip(executed, executed[1:]):
        w = g.edge_weight(a, b)
        if w is None:
            raise NonContiguousPath(f"{ep.episode_id}: ({a}, {b}) is not an edge")
        tl += w

    ne = _goal_distance(g, executed[-1], ep.goals)
    sr = 1.0 if ne <= radius else 0.0
    osr = 1.0 if any(_goal_distance(g, vp, ep.goals) <= radius for vp in set(executed)) else 0.0

    shortest = _goal_distance(g, ep.start.viewpoint, ep.goals)
    spl = sr if shortest == 0 else sr * shortest / max(tl, shortest)

    gt = list(ep.gt_path)
    ndtw = math.exp(-dtw(g, executed, gt) / (len(gt) * radius))

    coverage = sum(
        math.exp(-min(geodesic_distance(g, r, p) for p in executed) / radius) for r in gt
    ) / len(gt)
    gt_len = sum(g.edge_weight(a, b) or 0.0 for a, b in zip(gt, gt[1:]))
    epl = coverage * gt_len
    if epl == 0 and tl == 0:
        ls = 1.0
    else:
        ls = epl / (epl + abs(epl - tl))
    return MetricsReport(
        TL=tl, NE=ne, SR=sr, OSR=osr, SPL=spl, nDTW=ndtw, SDTW=sr * ndtw, CLS=coverage * ls
    )


def aggregate(reports: Sequence[MetricsReport]) -> dict:
    """Run-level means: TL/NE in metres, rates as percentages, two decimals."""
    n = len(reports)
    out: dict = {"episodes": n}
    for key in LENGTH_KEYS:
        out[key] = round(sum(getattr(r, key) for r in reports) / n, 2) if n else 0.0
    for key in RATE_KEYS:
        out[key] = round(100.0 * sum(getattr(r, key) for r in reports) / n, 2) if n else 0.0
    return out


def format_table(summary: dict) -> str:
    keys = LENGTH_KEYS + RATE_KEYS
    head = " | ".join(f"{k:>6}" for k in keys)
    row = " | ".join(f"{summary.get(k, 0.0):6.2f}" for k in keys)
    return f"{head}\n{row}"
