from __future__ import annotations

import pytest

from vlnbench.fixtures import SynthSpec, write_synthetic_tree
from vlnbench.world import CARDINALS, NodeRecord, WorldGraph, view_image_name


def make_graph(coords: dict, edges, scan_id: str = "t", assets: bool = True, captions=None) -> WorldGraph:
    nodes = {
        vp: NodeRecord(
            position=tuple(float(c) for c in xyz),
            view_assets={h: view_image_name(vp, h) for h in CARDINALS} if assets else {},
            summary=f"room {vp}",
            marker_captions=(captions or {}).get(vp),
        )
        for vp, xyz in coords.items()
    }
    return WorldGraph(scan_id, nodes, list(edges))


@pytest.fixture
def line_graph() -> WorldGraph:
    # A -- B -- C with 2 m edges along +x
    return make_graph({"A": (0, 0, 0), "B": (2, 0, 0), "C": (4, 0, 0)}, [("A", "B"), ("B", "C")])


@pytest.fixture(scope="session")
def synth_tree(tmp_path_factory):
    spec = SynthSpec(seed=7, nodes=25, episodes=24, granularity_mix={"fine": 0.5, "coarse": 0.25, "zero": 0.25})
    out = tmp_path_factory.mktemp("synth")
    info = write_synthetic_tree(spec, out)
    info["spec"] = spec
    return info


# acceptance criteria append (number, title, passed, detail) here
ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
