"""Offline annotation: marker captions and one-sentence viewpoint summaries."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import replace

from .errors import MalformedCaptionPayload
from .models import Model, ModelRequest
from .observation import compose_observation
from .world import Pose, WorldGraph

log = logging.getLogger(__name__)

SUMMARY_SEED = "This is a scene of"

CAPTION_SYSTEM = (
    "You annotate viewpoints of an indoor navigation graph. Numbered markers in the images "
    "show the directions an agent can move to."
)
SUMMARY_SYSTEM = "You describe indoor scenes in one short sentence."

_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S | re.I)
_OBJECT = re.compile(r"\{.*\}", re.S)


def parse_caption_payload(text: str) -> dict[int, str]:
    """Index -> caption mapping from model text; tolerates code fences and chatter."""
    m = _FENCE.search(text)
    body = m.group(1) if m else text
    m = _OBJECT.search(body)
    if not m:
        raise MalformedCaptionPayload(f"no JSON object in captioner output: {text[:80]!r}")
    try:
        doc = json.loads(m.group(0))
    except json.JSONDecodeError as exc:
        raise MalformedCaptionPayload(f"captioner output is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedCaptionPayload("captioner output is not a mapping")
    out = {}
    for k, v in doc.items():
        try:
            idx = int(str(k).strip())
        except ValueError:
            raise MalformedCaptionPayload(f"caption key {k!r} is not a marker index") from None
        if not isinstance(v, str) or not v.strip():
            raise MalformedCaptionPayload(f"caption for marker {idx} is not a non-empty string")
        out[idx] = v.strip()
    return out


def _first_sentence(text: str) -> str:
    text = " ".join(text.split())
    m = re.search(r"^(.+?[.!?])(\s|$)", text)
    return m.group(1) if m else text


def caption_request(g: WorldGraph, vp: str) -> ModelRequest:
    obs = compose_observation(g, Pose(vp, 0.0), text_only=True)
    lines = [
        f"Marker {c.marker}: {c.relative_bucket} view, heading {c.global_heading:.0f} degrees, {c.distance:.2f} m away"
        for c in obs.candidates
    ]
    task = (
        "The four images are ordered Left, Front, Right, Back. The markers are:\n"
        + "\n".join(lines)
        + "\nGenerate a JSON object mapping each marker index to a descriptive sentence of what lies in that direction."
    )
    images = tuple(obs.image_refs())
    if g.asset_dir is not None:
        images = tuple(str(g.asset_dir / r) for r in images)
    return ModelRequest(
        CAPTION_SYSTEM, task, images,
        context={"phase": "caption", "scan_id": g.scan_id, "viewpoint": vp,
                 "markers": [c.marker for c in obs.candidates]},
    )


def summarize_node(g: WorldGraph, vp: str, summarizer: Model) -> str:
    obs = compose_observation(g, Pose(vp, 0.0), text_only=True)
    parts = []
    for label, ref in obs.views:
        if ref is None:
            continue
        image = str(g.asset_dir / ref) if g.asset_dir is not None else ref
        req = ModelRequest(
            SUMMARY_SYSTEM,
            f"Describe the {label.lower()} view in one sentence, starting with: {SUMMARY_SEED}",
            (image,),
            context={"phase": "view_summary", "scan_id": g.scan_id, "viewpoint": vp, "view": label},
        )
        parts.append(f"{label}: {summarizer.generate(req).text.strip()}")
    req = ModelRequest(
        SUMMARY_SYSTEM,
        "Combine these view descriptions into a single sentence summarising the location, "
        f"starting with: {SUMMARY_SEED}\n" + "\n".join(parts),
        context={"phase": "summary", "scan_id": g.scan_id, "viewpoint": vp},
    )
    return _first_sentence(summarizer.generate(req).text)


def annotate_world(g: WorldGraph, captioner: Model, summarizer: Model, overwrite: bool = False) -> WorldGraph:
    """Return a copy of ``g`` with captions and summaries filled in.

    Nodes whose captioner output is malformed are skipped with a warning.
    ``ModelUnavailable`` propagates.
    """
    nodes = dict(g.nodes)
    skipped = []
    for vp in sorted(nodes):
        node = nodes[vp]
        if not node.navigable:
            continue
        captions = node.marker_captions
        if overwrite or not captions:
            try:
                captions = parse_caption_payload(captioner.generate(caption_request(g, vp)).text)
            except MalformedCaptionPayload as exc:
                log.warning("%s/%s: skipped, %s", g.scan_id, vp, exc)
                skipped.append(vp)
                continue
        summary = node.summary
        if overwrite or not summary:
            summary = summarize_node(g, vp, summarizer)
        nodes[vp] = replace(node, marker_captions=captions, summary=summary)
    if skipped:
        log.warning("%s: %d nodes left unannotated", g.scan_id, len(skipped))
    return g.with_nodes(nodes)
