"""Episodes, split files and stratified benchmark sampling."""

from __future__ import annotations

import enum
import json
import logging
import math
import os
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .errors import EpisodeInvalid, GraphNotFound, InsufficientPool, SplitNotFound
from .world import Pose, WorldGraph, load_world, path_length

log = logging.getLogger(__name__)


class Granularity(str, enum.Enum):
    FINE = "fine"
    COARSE = "coarse"
    ZERO = "zero"


@dataclass(frozen=True)
class Instruction:
    text: str
    granularity: Granularity
    object_category: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "granularity", Granularity(self.granularity))

    def to_dict(self) -> dict:
        d = {"text": self.text, "granularity": self.granularity.value}
        if self.object_category is not None:
            d["object_category"] = self.object_category
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Instruction":
        return cls(d["text"], Granularity(d["granularity"]), d.get("object_category"))


@dataclass(frozen=True)
class EpisodeSpec:
    episode_id: str
    scan_id: str
    start: Pose
    instruction: Instruction
    goals: tuple[str, ...]
    gt_path: tuple[str, ...]
    # alternative phrasings of the same trajectory; the sampler keeps one
    alternatives: tuple[Instruction, ...] = ()
    gt_length: float | None = None

    def to_dict(self) -> dict:
        d = {
            "episode_id": self.episode_id,
            "scan_id": self.scan_id,
            "start": self.start.to_dict(),
            "instruction": self.instruction.to_dict(),
            "goals": list(self.goals),
            "gt_path": list(self.gt_path),
        }
        if self.alternatives:
            d["alternatives"] = [i.to_dict() for i in self.alternatives]
        if self.gt_length is not None:
            d["gt_length"] = self.gt_length
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "EpisodeSpec":
        return cls(
            episode_id=str(d["episode_id"]),
            scan_id=str(d["scan_id"]),
            start=Pose.from_dict(d["start"]),
            instruction=Instruction.from_dict(d["instruction"]),
            goals=tuple(str(g) for g in d["goals"]),
            gt_path=tuple(str(v) for v in d["gt_path"]),
            alternatives=tuple(Instruction.from_dict(i) for i in d.get("alternatives", ())),
            gt_length=d.get("gt_length"),
        )


def validate_episode(ep: EpisodeSpec, g: WorldGraph) -> EpisodeSpec:
    """Check an episode against its scan and fill in ``gt_length``."""
    def bad(reason: str) -> EpisodeInvalid:
        return EpisodeInvalid(ep.episode_id, reason)

    if ep.scan_id != g.scan_id:
        raise bad(f"scan {ep.scan_id!r} does not match graph {g.scan_id!r}")
    if not ep.goals:
        raise bad("empty goal set")
    if not ep.gt_path:
        raise bad("empty gt_path")
    for vp in (ep.start.viewpoint, *ep.goals, *ep.gt_path):
        if vp not in g.nodes:
            raise bad(f"unknown viewpoint {vp!r}")
    if ep.gt_path[0] != ep.start.viewpoint:
        raise bad("gt_path does not begin at the start viewpoint")
    if ep.gt_path[-1] not in ep.goals:
        raise bad("gt_path does not end at a goal")
    for a, b in zip(ep.gt_path, ep.gt_path[1:]):
        if not g.has_edge(a, b):
            raise bad(f"gt_path step ({a}, {b}) is not an edge")
    for ins in (ep.instruction, *ep.alternatives):
        if ins.granularity is Granularity.ZERO:
            if not ins.object_category or ins.text != ins.object_category:
                raise bad("zero-granularity text must equal its object category")
        elif ins.object_category is not None:
            raise bad(f"{ins.granularity.value} instruction must not carry an object category")
    return replace(ep, gt_length=path_length(g, list(ep.gt_path)))


def split_path(data_root: str | os.PathLike, task: Granularity | str, split_name: str) -> Path:
    return Path(data_root) / Granularity(task).value / f"{split_name}.json"


def load_split(
    task: Granularity | str,
    split_name: str,
    data_root: str | os.PathLike,
    asset_root: str | os.PathLike | None = None,
    worlds: Mapping[str, WorldGraph] | None = None,
    rejected: list[EpisodeInvalid] | None = None,
) -> list[EpisodeSpec]:
    """Load and validate a split.

    Invalid episodes are dropped with a warning; pass ``rejected`` to
    collect the reasons. Scans loaded on the way are added to ``worlds``
    when it is a dict.
    """
    path = split_path(data_root, task, split_name)
    if not path.is_file():
        raise SplitNotFound(f"no split file at {path}")
    raw = json.loads(path.read_text(encoding="utf-8"))
    cache: dict[str, WorldGraph] = worlds if isinstance(worlds, dict) else dict(worlds or {})
    out = []
    for item in raw:
        try:
            ep = EpisodeSpec.from_dict(item)
        except (KeyError, TypeError, ValueError) as exc:
            err = EpisodeInvalid(str(item.get("episode_id", "?")) if isinstance(item, dict) else "?", f"malformed record: {exc}")
            _reject(err, rejected)
            continue
        if ep.scan_id not in cache:
            try:
                cache[ep.scan_id] = load_world(asset_root, ep.scan_id)
            except GraphNotFound as exc:
                _reject(EpisodeInvalid(ep.episode_id, str(exc)), rejected)
                continue
        try:
            out.append(validate_episode(ep, cache[ep.scan_id]))
        except EpisodeInvalid as err:
            _reject(err, rejected)
    return out


def _reject(err: EpisodeInvalid, sink: list | None) -> None:
    log.warning("rejected episode %s", err)
    if sink is not None:
        sink.append(err)


def save_split(episodes: Iterable[EpisodeSpec], data_root: str | os.PathLike, task: Granularity | str, split_name: str) -> Path:
    path = split_path(data_root, task, split_name)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = [ep.to_dict() for ep in episodes]
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# -- sampling ----------------------------------------------------------
LengthBin = tuple[float, float, float]  # (min m, max m, proportion)


@dataclass
class SamplingPlan:
    strata: dict[str, int] = field(default_factory=dict)
    length_bins: list[LengthBin] = field(default_factory=lambda: [(0.0, math.inf, 1.0)])
    instruction_rule: str = "uniform"  # or "first"
    category_balance: dict[str, int] | None = None
    tolerance: float = 0.05

    def __post_init__(self) -> None:
        self.length_bins = [(float(lo), float(hi), float(p)) for lo, hi, p in self.length_bins]
        total = sum(p for _, _, p in self.length_bins)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"length-bin proportions sum to {total}, expected 1")
        if self.instruction_rule not in ("uniform", "first"):
            raise ValueError(f"unknown instruction rule {self.instruction_rule!r}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SamplingPlan":
        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise ValueError(f"unknown sampling plan keys: {', '.join(unknown)}")
        bins = [
            (b[0], math.inf if b[1] is None else b[1], b[2]) for b in d.get("length_bins", [(0.0, None, 1.0)])
        ]
        return cls(
            strata={str(k): int(v) for k, v in d.get("strata", {}).items()},
            length_bins=bins,
            instruction_rule=d.get("instruction_rule", "uniform"),
            category_balance=d.get("category_balance"),
            tolerance=float(d.get("tolerance", 0.05)),
        )


def largest_remainder(total: int, proportions: Sequence[float]) -> list[int]:
    """Apportion ``total`` seats; ties in the remainder go to the earlier bin."""
    # rounding guards against 100 * 0.29 = 28.999999999999996
    quotas = [round(total * p, 9) for p in proportions]
    counts = [math.floor(q) for q in quotas]
    leftover = total - sum(counts)
    remainders = [round(q - c, 9) for q, c in zip(quotas, counts)]
    order = sorted(range(len(quotas)), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def bin_index(length: float, bins: Sequence[LengthBin]) -> int | None:
    for i, (lo, hi, _) in enumerate(bins):
        if lo <= length < hi:
            return i
    return None


def _length(ep: EpisodeSpec) -> float:
    if ep.gt_length is None:
        raise InsufficientPool(f"{ep.episode_id}: gt_length unknown; load or validate the pool first")
    return ep.gt_length


def stratified_sample(pool: Sequence[EpisodeSpec], plan: SamplingPlan, seed: int) -> list[EpisodeSpec]:
    """Draw a benchmark subset from ``pool``.

    Each stratum (scan, or target category when ``category_balance`` is
    set) receives its exact count, split across length bins by
    largest-remainder apportionment. One instruction is kept per episode.
    """
    rng = random.Random(seed)
    if plan.category_balance:
        key: Callable[[EpisodeSpec], str] = lambda ep: ep.instruction.object_category or ""
        targets = {str(k): int(v) for k, v in plan.category_balance.items()}
    else:
        key = lambda ep: ep.scan_id
        targets = plan.strata

    groups: dict[str, list[EpisodeSpec]] = defaultdict(list)
    for ep in sorted(pool, key=lambda e: e.episode_id):
        groups[key(ep)].append(ep)

    proportions = [p for _, _, p in plan.length_bins]
    chosen: list[EpisodeSpec] = []
    for stratum in sorted(targets):
        want = targets[stratum]
        by_bin: dict[int, list[EpisodeSpec]] = defaultdict(list)
        for ep in groups.get(stratum, ()):
            b = bin_index(_length(ep), plan.length_bins)
            if b is not None:
                by_bin[b].append(ep)
        for b, n in enumerate(largest_remainder(want, proportions)):
            have = by_bin.get(b, [])
            if len(have) < n:
                lo, hi, _ = plan.length_bins[b]
                raise InsufficientPool(f"stratum {stratum!r} bin [{lo}, {hi}) needs {n}, pool has {len(have)}")
            chosen.extend(rng.sample(have, n))

    out = []
    for ep in chosen:
        options = (ep.instruction, *ep.alternatives)
        pick = options[0] if plan.instruction_rule == "first" else options[rng.randrange(len(options))]
        out.append(replace(ep, instruction=pick, alternatives=()))
    return out


# -- summaries ---------------------------------------------------------
DEFAULT_LENGTH_BINS: list[LengthBin] = [(0.0, 8.0, 0.5), (8.0, 15.0, 0.3), (15.0, math.inf, 0.2)]
DEFAULT_WORD_BINS = [(0, 10), (10, 20), (20, 30), (30, 40), (40, math.inf)]


def _label(lo: float, hi: float) -> str:
    return f"[{lo:g}, {'inf' if math.isinf(hi) else f'{hi:g}'})"


def describe_benchmark(
    episodes: Sequence[EpisodeSpec],
    length_bins: Sequence[LengthBin] = DEFAULT_LENGTH_BINS,
    word_bins: Sequence[tuple[float, float]] = DEFAULT_WORD_BINS,
) -> dict:
    """Per-scan counts and path/instruction length histograms."""
    scans = Counter(ep.scan_id for ep in episodes)
    length_hist = {_label(lo, hi): 0 for lo, hi, _ in length_bins}
    for ep in episodes:
        b = bin_index(_length(ep), length_bins)
        if b is not None:
            lo, hi, _ = length_bins[b]
            length_hist[_label(lo, hi)] += 1
    word_hist = {_label(lo, hi): 0 for lo, hi in word_bins}
    for ep in episodes:
        n = len(ep.instruction.text.split())
        for lo, hi in word_bins:
            if lo <= n < hi:
                word_hist[_label(lo, hi)] += 1
                break
    n = len(episodes)
    return {
        "episodes": n,
        "per_scan": dict(sorted(scans.items())),
        "path_length_hist": length_hist,
        "path_length_share": {k: (v / n if n else 0.0) for k, v in length_hist.items()},
        "instruction_words_hist": word_hist,
        "mean_path_length": (sum(_length(ep) for ep in episodes) / n) if n else 0.0,
        "mean_instruction_words": (sum(len(ep.instruction.text.split()) for ep in episodes) / n) if n else 0.0,
    }
