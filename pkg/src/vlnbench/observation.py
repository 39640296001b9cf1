"""Agent-centric panoramas and marker-indexed candidate actions."""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MissingAssets, NonFiniteHeading, UnknownViewpoint, UnsupportedFormat
from .world import Pose, WorldGraph, normalize_heading

VIEW_ORDER = ("Left", "Front", "Right", "Back")
# offset of each panel from the front cardinal, clockwise
_VIEW_OFFSETS = {"Left": 270, "Front": 0, "Right": 90, "Back": 180}
_BUCKETS = {0: "Front", 90: "Right", 180: "Back", 270: "Left"}
STITCHED_PREFIX = "stitched:"


class ObservationFormat(str, enum.Enum):
    FOUR_VIEW = "four_view"
    SINGLE_STITCHED = "single_stitched"
    DENSE_24 = "dense_24"
    DENSE_36 = "dense_36"


@dataclass(frozen=True)
class Candidate:
    marker: int
    target: str
    global_heading: float
    relative_bucket: str
    distance: float
    caption: str | None = None

    def to_dict(self) -> dict:
        return {
            "marker": self.marker,
            "target": self.target,
            "global_heading": self.global_heading,
            "relative_bucket": self.relative_bucket,
            "distance": self.distance,
            "caption": self.caption,
        }


@dataclass(frozen=True)
class Observation:
    pose: Pose
    front_cardinal: int
    views: tuple[tuple[str, str | None], ...]
    candidates: tuple[Candidate, ...]
    format: ObservationFormat = ObservationFormat.FOUR_VIEW
    stop_available: bool = True
    metadata: dict = field(default_factory=dict, compare=False)

    def candidate(self, marker: int) -> Candidate | None:
        for c in self.candidates:
            if c.marker == marker:
                return c
        return None

    def in_bucket(self, bucket: str) -> list[Candidate]:
        return [c for c in self.candidates if c.relative_bucket == bucket]

    def image_refs(self) -> list[str]:
        """Image files backing the views, in panel order."""
        if self.format is ObservationFormat.SINGLE_STITCHED:
            return [ref for _, ref in self.metadata.get("segments", ()) if ref]
        return [ref for _, ref in self.views if ref]

    def to_dict(self) -> dict:
        return {
            "pose": self.pose.to_dict(),
            "front_cardinal": self.front_cardinal,
            "format": self.format.value,
            "views": [list(v) for v in self.views],
            "candidates": [c.to_dict() for c in self.candidates],
            "stop_available": self.stop_available,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def quantize_heading(h: float) -> int:
    """Snap a heading to the centre of its 90-degree quadrant.

    Quadrants are half-open, so 45 maps to 90 and 315 maps to 0.
    """
    if not math.isfinite(h):
        raise NonFiniteHeading(f"heading must be finite, got {h!r}")
    h = normalize_heading(h)
    return int(math.floor((h + 45.0) / 90.0) % 4) * 90


def relative_bucket(global_heading: float, front_cardinal: int) -> str:
    return _BUCKETS[quantize_heading(global_heading - front_cardinal)]


def compose_observation(
    g: WorldGraph,
    pose: Pose,
    fmt: ObservationFormat | str = ObservationFormat.FOUR_VIEW,
    text_only: bool = False,
) -> Observation:
    fmt = ObservationFormat(fmt)
    if fmt in (ObservationFormat.DENSE_24, ObservationFormat.DENSE_36):
        raise UnsupportedFormat(f"{fmt.value}: assets provide only four cardinal renders")
    if pose.viewpoint not in g.nodes:
        raise UnknownViewpoint(f"{g.scan_id}: unknown viewpoint {pose.viewpoint!r}")
    node = g.nodes[pose.viewpoint]
    if not node.navigable:
        raise UnknownViewpoint(f"{g.scan_id}: viewpoint {pose.viewpoint!r} is not navigable")
    if not node.view_assets and not text_only:
        raise MissingAssets(f"{g.scan_id}: no view images for {pose.viewpoint!r}")

    front = quantize_heading(pose.heading)
    panels = tuple(
        (label, node.view_assets.get((front + _VIEW_OFFSETS[label]) % 360)) for label in VIEW_ORDER
    )

    nbrs = g.neighbors(pose.viewpoint)
    ordered = sorted(nbrs, key=lambda vp: (g.heading_between(pose.viewpoint, vp), vp))
    captions = node.marker_captions or {}
    cands = []
    for marker, vp in enumerate(ordered, start=1):
        gh = g.heading_between(pose.viewpoint, vp)
        cands.append(
            Candidate(
                marker=marker,
                target=vp,
                global_heading=gh,
                relative_bucket=relative_bucket(gh, front),
                distance=nbrs[vp],
                caption=captions.get(marker),
            )
        )

    metadata: dict = {}
    views = panels
    if fmt is ObservationFormat.SINGLE_STITCHED:
        metadata["segments"] = panels
        refs = [ref or "" for _, ref in panels]
        views = (("Panorama", STITCHED_PREFIX + "|".join(refs) if any(refs) else None),)
    return Observation(
        pose=pose,
        front_cardinal=front,
        views=views,
        candidates=tuple(cands),
        format=fmt,
        metadata=metadata,
    )


def render_format_variant(g: WorldGraph, pose: Pose, fmt: ObservationFormat | str) -> Observation:
    return compose_observation(g, pose, fmt)


def resolve_images(g: WorldGraph, obs: Observation, read: bool = True) -> list[Path]:
    """Map view references to files under the scan directory.

    With ``read`` set, each file is read fully so callers pay the real I/O
    cost; missing files raise ``MissingAssets``.
    """
    if g.asset_dir is None:
        return []
    paths = []
    for ref in obs.image_refs():
        path = g.asset_dir / ref
        if read:
            try:
                path.read_bytes()
            except OSError as exc:
                raise MissingAssets(str(exc)) from exc
        paths.append(path)
    return paths
