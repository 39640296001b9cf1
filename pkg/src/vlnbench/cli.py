"""``vln`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import VLNError


def _load_doc(path: str) -> dict:
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    if p.suffix in (".yaml", ".yml"):
        import yaml

        return yaml.safe_load(text)
    return json.loads(text)


def _worlds_for(records, asset_root):
    from .world import load_world

    return {scan: load_world(asset_root, scan) for scan in sorted({r.scan_id for r in records})}


def cmd_run(args) -> int:
    from .metrics import format_table
    from .runner import RunConfig, load_config, run

    cfg = load_config(args.config)
    overrides = {k: v for k, v in (("output_dir", args.output_dir), ("concurrency", args.concurrency)) if v is not None}
    if overrides:
        cfg = RunConfig.from_dict({**cfg.to_dict(), **overrides})
    result = run(cfg)
    print(format_table(result.summary["metrics"]))
    print(json.dumps(result.summary["terminations"], sort_keys=True))
    print(f"log: {result.log_path}")
    return 0


_PLAN_RUN_KEYS = ("task", "source_split", "out_split", "seed")


def cmd_sample(args) -> int:
    from .tasks import SamplingPlan, describe_benchmark, load_split, save_split, stratified_sample

    doc = _load_doc(args.plan)
    plan = SamplingPlan.from_dict({k: v for k, v in doc.items() if k not in _PLAN_RUN_KEYS})
    task = args.task or doc.get("task", "fine")
    source = args.source or doc.get("source_split", "pool")
    target = args.out_split or doc.get("out_split", "sampled")
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    pool = load_split(task, source, args.data_root, args.asset_root)
    chosen = stratified_sample(pool, plan, seed)
    path = save_split(chosen, args.data_root, task, target)
    print(json.dumps(describe_benchmark(chosen, plan.length_bins), indent=2, sort_keys=True))
    print(f"wrote {len(chosen)} episodes to {path}")
    return 0


def cmd_score(args) -> int:
    from .analysis import episode_from_record
    from .metrics import aggregate, format_table, score_episode
    from .records import read_log

    records = read_log(args.log)
    worlds = _worlds_for(records, args.asset_root)
    reports = [score_episode(worlds[r.scan_id], episode_from_record(r), r.executed) for r in records]
    summary = aggregate(reports)
    print(format_table(summary))
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_annotate(args) -> int:
    from .annotate import annotate_world
    from .registry import BuildContext, default_registry
    from .world import load_world, save_annotations

    g = load_world(args.asset_root, args.scan)
    reg = default_registry()
    ctx = BuildContext(worlds={g.scan_id: g})
    captioner = reg.build("model", args.captioner, ctx)
    summarizer = reg.build("model", args.summarizer or args.captioner, ctx)
    g = annotate_world(g, captioner, summarizer, overwrite=args.overwrite)
    path = save_annotations(g, args.asset_root or g.asset_dir.parent)
    print(f"wrote {path}")
    return 0


def cmd_replay(args) -> int:
    from .analysis import diagnose, replay_episode
    from .records import read_log

    records = [r for r in read_log(args.log) if r.episode_id == args.episode]
    if not records:
        print(f"episode {args.episode!r} not in {args.log}", file=sys.stderr)
        return 2
    rec = records[-1]
    g = _worlds_for([rec], args.asset_root)[rec.scan_id]
    html = replay_episode(rec, g, diagnose(rec, None, g))
    out = Path(args.out or f"{args.episode}.html")
    out.write_text(html, encoding="utf-8")
    print(f"wrote {out}")
    return 0


def cmd_analyze(args) -> int:
    from .analysis import diagnose, taxonomy_report, write_reports
    from .records import read_log

    records = read_log(args.log)
    worlds = _worlds_for(records, args.asset_root)
    diagnoses = [diagnose(r, None, worlds[r.scan_id]) for r in records]
    report = taxonomy_report(diagnoses)
    print(report["table"])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        doc = {k: v for k, v in report.items() if k != "table"}
        doc["episodes"] = [d.to_dict() for d in diagnoses]
        (out / "taxonomy.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if args.html:
            write_reports(records, worlds, out / "replays")
        print(f"wrote {out}")
    return 0


def cmd_synth(args) -> int:
    from .fixtures import SynthSpec, write_synthetic_tree

    spec = SynthSpec.from_dict(_load_doc(args.spec)) if args.spec else SynthSpec()
    info = write_synthetic_tree(spec, args.out)
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def cmd_access(args) -> int:
    from .analysis import measure_access_latency
    from .world import load_world

    g = load_world(args.asset_root, args.scan)
    print(json.dumps(measure_access_latency(g, samples=args.samples), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vln", description="Graph-based navigation evaluation harness")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="run an evaluation from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--output-dir")
    s.add_argument("--concurrency", type=int)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sample", help="draw a stratified benchmark split from a pool")
    s.add_argument("--plan", required=True)
    s.add_argument("--data-root", default="data")
    s.add_argument("--asset-root")
    s.add_argument("--task")
    s.add_argument("--source", help="pool split name")
    s.add_argument("--out-split")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("score", help="recompute metrics from a trajectory log")
    s.add_argument("--log", required=True)
    s.add_argument("--asset-root")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("annotate", help="caption markers and summarise viewpoints of a scan")
    s.add_argument("--scan", required=True)
    s.add_argument("--asset-root")
    s.add_argument("--captioner", default="openai-compatible")
    s.add_argument("--summarizer")
    s.add_argument("--overwrite", action="store_true")
    s.set_defaults(func=cmd_annotate)

    s = sub.add_parser("replay", help="render one logged episode as static HTML")
    s.add_argument("--log", required=True)
    s.add_argument("--episode", required=True)
    s.add_argument("--asset-root")
    s.add_argument("--out")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("analyze", help="failure taxonomy for a trajectory log")
    s.add_argument("--log", required=True)
    s.add_argument("--asset-root")
    s.add_argument("--out")
    s.add_argument("--html", action="store_true", help="also write per-episode replays")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("synth", help="write a synthetic asset and split tree")
    s.add_argument("--spec")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("access", help="measure observation access latency on a scan")
    s.add_argument("--scan", required=True)
    s.add_argument("--asset-root")
    s.add_argument("--samples", type=int, default=500)
    s.set_defaults(func=cmd_access)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (VLNError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
