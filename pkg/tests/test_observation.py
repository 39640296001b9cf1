from __future__ import annotations

import math

import pytest
from hypothesis import given, strategies as st

from conftest import make_graph
from vlnbench.errors import MissingAssets, NonFiniteHeading, UnknownViewpoint, UnsupportedFormat
from vlnbench.fixtures import SynthSpec, gen_world
from vlnbench.observation import (
    VIEW_ORDER,
    ObservationFormat,
    compose_observation,
    quantize_heading,
    relative_bucket,
    render_format_variant,
    resolve_images,
)
from vlnbench.world import Pose, WorldGraph, save_world


def _at(heading_deg: float, r: float = 2.0):
    t = math.radians(heading_deg)
    return (r * math.sin(t), r * math.cos(t), 0.0)


@pytest.fixture
def star() -> WorldGraph:
    # neighbours of O at global headings 350, 10 and 100 degrees
    coords = {"O": (0, 0, 0), "a": _at(350), "b": _at(10), "c": _at(100)}
    return make_graph(coords, [("O", "a"), ("O", "b"), ("O", "c")])


def oracle_bucket(angle: float) -> str:
    # independent restatement: distance to each bucket centre, ties to the clockwise side
    rel = angle % 360.0
    for name, lo, hi in (("Front", -45, 45), ("Right", 45, 135), ("Back", 135, 225), ("Left", 225, 315)):
        for shifted in (rel, rel - 360.0):
            if lo <= shifted < hi:
                return name
    raise AssertionError(angle)


def test_quantize_examples():
    assert quantize_heading(60) == 90
    assert quantize_heading(0) == 0
    assert quantize_heading(359) == 0
    assert quantize_heading(-10) == 0
    assert quantize_heading(45.0) == 90  # boundary goes to the higher quadrant


def test_quantize_exhaustive_fibers():
    fibers: dict[int, list[int]] = {}
    for h in range(360):
        fibers.setdefault(quantize_heading(h), []).append(h)
    assert set(fibers) == {0, 90, 180, 270}
    assert all(len(v) == 90 for v in fibers.values())
    assert fibers[90] == list(range(45, 135))


@given(st.floats(allow_nan=False, allow_infinity=False, min_value=-1e6, max_value=1e6))
def test_quantize_idempotent(h):
    q = quantize_heading(h)
    assert quantize_heading(q) == q


@pytest.mark.parametrize("h", [math.nan, math.inf, -math.inf])
def test_quantize_non_finite(h):
    with pytest.raises(NonFiniteHeading):
        quantize_heading(h)


def test_view_order_and_front_image(star):
    obs = compose_observation(star, Pose("O", 60))
    assert VIEW_ORDER == ("Left", "Front", "Right", "Back")
    assert [label for label, _ in obs.views] == ["Left", "Front", "Right", "Back"]
    assert obs.front_cardinal == 90
    assert [ref for _, ref in obs.views] == [f"images/O_{h}.jpg" for h in (0, 90, 180, 270)]
    assert obs.stop_available


def test_markers_follow_ascending_heading(star):
    obs = compose_observation(star, Pose("O", 0))
    assert [(c.marker, c.target) for c in obs.candidates] == [(1, "b"), (2, "c"), (3, "a")]
    assert [round(c.global_heading) for c in obs.candidates] == [10, 100, 350]
    assert [c.relative_bucket for c in obs.candidates] == ["Front", "Right", "Front"]


def test_marker_ties_break_on_target_id():
    coords = {"O": (0, 0, 0), "z": _at(90, 2.0), "y": _at(90, 3.0)}
    g = make_graph(coords, [("O", "z"), ("O", "y")])
    obs = compose_observation(g, Pose("O", 0))
    assert [c.target for c in obs.candidates] == ["y", "z"]


def test_captions_copied(star):
    g = make_graph(
        {"O": (0, 0, 0), "a": _at(350), "b": _at(10), "c": _at(100)},
        [("O", "a"), ("O", "b"), ("O", "c")],
        captions={"O": {1: "a doorway", 3: "a staircase"}},
    )
    obs = compose_observation(g, Pose("O", 0))
    assert [c.caption for c in obs.candidates] == ["a doorway", None, "a staircase"]


def test_random_world_buckets_match_oracle():
    g = gen_world(SynthSpec(seed=4, nodes=36, degree=(2, 4)))
    for vp in sorted(g.nodes):
        for heading in range(0, 360, 7):
            obs = compose_observation(g, Pose(vp, heading))
            assert sorted(c.target for c in obs.candidates) == sorted(g.neighbors(vp))
            assert [c.marker for c in obs.candidates] == list(range(1, len(obs.candidates) + 1))
            for c in obs.candidates:
                assert c.relative_bucket == oracle_bucket(c.global_heading - obs.front_cardinal)
                assert relative_bucket(c.global_heading, obs.front_cardinal) == c.relative_bucket


def test_compose_deterministic(star):
    a = compose_observation(star, Pose("O", 123.4))
    b = compose_observation(star, Pose("O", 123.4))
    assert a == b and a.digest() == b.digest()


def test_format_variants(star):
    assert len(render_format_variant(star, Pose("O", 0), ObservationFormat.FOUR_VIEW).views) == 4
    stitched = render_format_variant(star, Pose("O", 0), "single_stitched")
    assert len(stitched.views) == 1
    assert [label for label, _ in stitched.metadata["segments"]] == list(VIEW_ORDER)
    for fmt in ("dense_24", "dense_36"):
        with pytest.raises(UnsupportedFormat):
            render_format_variant(star, Pose("O", 0), fmt)


def test_missing_assets_and_text_only():
    g = make_graph({"A": (0, 0, 0), "B": (2, 0, 0)}, [("A", "B")], assets=False)
    with pytest.raises(MissingAssets):
        compose_observation(g, Pose("A", 0))
    obs = compose_observation(g, Pose("A", 0), text_only=True)
    assert [ref for _, ref in obs.views] == [None] * 4
    assert len(obs.candidates) == 1


def test_unknown_viewpoint(star):
    with pytest.raises(UnknownViewpoint):
        compose_observation(star, Pose("nowhere", 0))


def test_resolve_images_reads_disk(tmp_path, star):
    scan = save_world(star, tmp_path)
    (scan / "images").mkdir()
    from vlnbench.world import load_world

    for h in (0, 90, 180, 270):
        (scan / "images" / f"O_{h}.jpg").write_bytes(b"jpeg")
    g = load_world(tmp_path, "t")
    # only O has images on disk, so neighbours load as text-only
    obs = compose_observation(g, Pose("O", 0))
    paths = resolve_images(g, obs)
    # facing north: Left, Front, Right, Back are the 270, 0, 90, 180 renders
    assert [p.name for p in paths] == [f"O_{h}.jpg" for h in (270, 0, 90, 180)]
    (scan / "images" / "O_90.jpg").unlink()
    with pytest.raises(MissingAssets):
        resolve_images(g, obs)
