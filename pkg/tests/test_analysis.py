from __future__ import annotations

import random

import pytest

from conftest import make_graph
from vlnbench.analysis import (
    GENERATION_ERROR,
    INCORRECT,
    SUCCESS,
    deviation_step,
    detect_loops,
    diagnose,
    loop_evidence_at,
    measure_access_latency,
    replay_episode,
    taxonomy_report,
    write_reports,
)
from vlnbench.metrics import score_episode
from vlnbench.records import STEP_LIMIT, STOPPED, TrajectoryRecord
from vlnbench.tasks import EpisodeSpec, Instruction
from vlnbench.world import Pose, load_world


def _reference_loops(path, threshold=3):
    # brute force: does any viewpoint reach the threshold, or any directed move repeat?
    if any(path.count(v) >= threshold for v in set(path)):
        return True
    moves = list(zip(path, path[1:]))
    return any(moves.count(m) >= 2 for m in set(moves))


def test_backtrack_is_not_a_loop():
    assert detect_loops(["A", "B", "A"]) == []
    assert detect_loops(["A", "B", "C", "D"]) == []


def test_oscillation_segment():
    segs = detect_loops(["S", "A", "B", "A", "B", "C"])
    assert len(segs) == 1
    seg = segs[0]
    assert (seg.start, seg.end) == (1, 4)
    assert seg.viewpoints == ("A", "B") and seg.repeated == ("A", "B")


def test_detector_matches_reference_on_random_paths():
    rng = random.Random(0)
    for _ in range(500):
        path = [rng.choice("ABCDE") for _ in range(rng.randint(1, 9))]
        assert bool(detect_loops(path)) == _reference_loops(path), path
        # online evidence appears exactly when the prefix first becomes loopy
        for k in range(1, len(path) + 1):
            if loop_evidence_at(path[:k]):
                assert _reference_loops(path[:k])


def test_deviation_step():
    assert deviation_step(["A", "B", "C"], ["A", "B", "C"]) is None
    assert deviation_step(["A", "X", "C"], ["A", "B", "C"]) == 1
    assert deviation_step(["A", "B", "C", "D"], ["A", "B", "C"]) == 3


@pytest.fixture
def corridor():
    # 0 -- 1 -- ... -- 6 along x at 2 m, goal at node 6
    coords = {str(i): (2.0 * i, 0, 0) for i in range(7)}
    return make_graph(coords, [(str(i), str(i + 1)) for i in range(6)])


def _record(g, eid, executed, termination=STOPPED, steps=None):
    ep = EpisodeSpec(eid, g.scan_id, Pose("0", 90.0), Instruction("walk east", "coarse"), ("6",),
                     tuple(str(i) for i in range(7)))
    return TrajectoryRecord(
        run_id="mix", episode_id=eid, scan_id=g.scan_id, instruction="walk east", granularity="coarse",
        start=ep.start.to_dict(), goals=["6"], gt_path=list(ep.gt_path), executed=list(executed),
        steps=steps or [], termination=termination, metrics=score_episode(g, ep, executed).to_dict(),
    )


def test_near_goal_loop_success(corridor):
    rec = _record(corridor, "e", ["0", "1", "2", "3", "4", "5", "6", "5", "6", "5", "6"])
    d = diagnose(rec, None, corridor)
    assert d.outcome == SUCCESS and d.looping and d.near_goal_loop and not d.perfect
    far = _record(corridor, "f", ["0", "1", "0", "1", "2", "3", "4", "5", "6"])
    d = diagnose(far, None, corridor)
    assert d.outcome == SUCCESS and d.looping and not d.near_goal_loop


def test_generation_error_classified_first(corridor):
    rec = _record(corridor, "g", ["0", "1", "2", "3", "4", "5", "6"], termination=GENERATION_ERROR)
    assert diagnose(rec, None, corridor).outcome == GENERATION_ERROR


def test_taxonomy_table(corridor):
    recs = [
        _record(corridor, "ok", [str(i) for i in range(7)]),
        _record(corridor, "loop", ["0", "1", "0", "1", "0"], termination=STEP_LIMIT),
        _record(corridor, "short", ["0", "1"]),
    ]
    report = taxonomy_report([diagnose(r, None, corridor) for r in recs])
    c = report["counts"]
    assert (c[SUCCESS], c[INCORRECT], c["looping_failure"], c["timeout_failure"]) == (1, 2, 1, 1)
    assert report["looping_share_of_failures"] == 50.0
    assert report["shares"][SUCCESS] == 33.33
    assert "Incorrect navigation" in report["table"]


def test_replay_html(corridor, tmp_path):
    steps = [{
        "step": 0, "pose_before": {"viewpoint": "0", "heading": 90.0, "elevation": 0.0},
        "candidates": [{"marker": 1, "target": "1", "relative_bucket": "Front"}],
        "guidance": "take the stairs",
        "calls": [{"phase": "act", "request": {"system": "sys <b>", "task": "task"}, "response": "Action: 1", "error": None}],
        "executed_action": {"type": "move", "marker": 1, "target": "1", "turn_angle": 0.0, "forward": 2.0},
    }]
    rec = _record(corridor, "ep<1>", ["0", "1", "0", "1", "2"], termination=STEP_LIMIT, steps=steps)
    html = replay_episode(rec, corridor)
    assert "<script" not in html
    assert "sys &lt;b&gt;" in html and "Action: 1" in html
    assert "take the stairs" in html and "<svg" in html
    assert "First deviation from ground truth at step 2" in html and "Loop over" in html
    paths = write_reports([rec], {corridor.scan_id: corridor}, tmp_path)
    assert paths[0].read_text(encoding="utf-8") == html


def test_access_latency_report(synth_tree):
    g = load_world(synth_tree["asset_root"], synth_tree["scans"][0])
    r = measure_access_latency(g, samples=50)
    assert r["disk_backed"] and r["samples"] == 50
    assert 0 < r["median_ms"] <= r["p95_ms"]
    assert set(r["machine"]) == {"platform", "processor", "python", "cpus"}
