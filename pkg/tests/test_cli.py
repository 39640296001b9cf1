from __future__ import annotations

import json

import pytest

from vlnbench.cli import main


@pytest.fixture(scope="module")
def tree(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    spec = out / "spec.json"
    spec.write_text(json.dumps({"seed": 21, "nodes": 25, "episodes": 8,
                                "granularity_mix": {"fine": 0.5, "coarse": 0.5}}))
    assert main(["synth", "--spec", str(spec), "--out", str(out / "tree")]) == 0
    return out


def _config(tree, **kw):
    cfg = {"run_id": "cli", "model": "scripted.looper", "max_steps": 6, "concurrency": 2,
           "asset_root": str(tree / "tree" / "assets"), "data_root": str(tree / "tree" / "data"),
           "output_dir": str(tree / "runs")}
    cfg.update(kw)
    p = tree / f"{cfg['run_id']}.json"
    p.write_text(json.dumps(cfg))
    return p


def test_run_score_analyze_replay(tree, capsys):
    assert main(["run", "--config", str(_config(tree))]) == 0
    out = capsys.readouterr().out
    assert "SR" in out and '"StepLimit": 4' in out
    log = tree / "runs" / "cli" / "trajectories.jsonl"
    assets = str(tree / "tree" / "assets")

    assert main(["score", "--log", str(log), "--asset-root", assets, "--json"]) == 0
    scored = capsys.readouterr().out
    summary = json.loads((tree / "runs" / "cli" / "summary.json").read_text())
    assert json.loads(scored[scored.index("{"):]) == summary["metrics"]

    report = tree / "report"
    assert main(["analyze", "--log", str(log), "--asset-root", assets, "--out", str(report), "--html"]) == 0
    doc = json.loads((report / "taxonomy.json").read_text())
    assert doc["counts"]["total"] == 4 and doc["counts"]["looping_failure"] >= 1
    assert len(list((report / "replays").glob("*.html"))) == 4

    eid = json.loads(log.read_text().splitlines()[0])["episode_id"]
    html = tree / "one.html"
    assert main(["replay", "--log", str(log), "--episode", eid, "--asset-root", assets, "--out", str(html)]) == 0
    assert eid in html.read_text()
    assert main(["replay", "--log", str(log), "--episode", "nope", "--asset-root", assets]) == 2


def test_sample(tree, capsys):
    plan = tree / "plan.json"
    plan.write_text(json.dumps({"strata": {"synth_21_0": 2}, "length_bins": [[0, None, 1.0]], "source_split": "val",
                                "out_split": "tiny", "task": "coarse"}))
    assets = str(tree / "tree" / "assets")
    data = str(tree / "tree" / "data")
    assert main(["sample", "--plan", str(plan), "--data-root", data, "--asset-root", assets]) == 0
    assert "wrote 2 episodes" in capsys.readouterr().out
    assert len(json.loads((tree / "tree" / "data" / "coarse" / "tiny.json").read_text())) == 2
    plan.write_text(json.dumps({"total": 2}))
    assert main(["sample", "--plan", str(plan), "--data-root", data, "--asset-root", assets]) == 1
    assert "unknown sampling plan keys: total" in capsys.readouterr().err


def test_access(tree, capsys):
    scan = json.loads((tree / "tree" / "synth_spec.json").read_text())["seed"]
    assert main(["access", "--scan", f"synth_{scan}_0", "--asset-root", str(tree / "tree" / "assets"), "--samples", "20"]) == 0
    assert json.loads(capsys.readouterr().out)["samples"] == 20


def test_config_errors_exit_nonzero(tree, capsys):
    assert main(["run", "--config", str(_config(tree, run_id="bad", agent="ghost"))]) == 1
    assert "ConfigInvalid" in capsys.readouterr().err
