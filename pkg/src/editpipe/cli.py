"""Command-line entry point.

Pipeline subcommands (scan, sample, filter, instruct, pack, stats, run,
bench) share a JSON config file; individual flags override their config
counterparts. ``edit-sim`` runs mask-localized sampling with a named mock
predictor and ``evaluate`` scores a benchmark manifest against precomputed
embeddings. Exit codes: 0 success, 2 config error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import conditioning_kernel as ck
from . import dataset_store, edit_metrics, pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

PIPELINE_COMMANDS = ("scan", "sample", "filter", "instruct", "pack", "stats",
                     "run", "bench")


def _add_pipeline_args(sub: argparse.ArgumentParser):
    sub.add_argument("--config", required=True, help="pipeline config JSON")
    sub.add_argument("--workers", type=int, default=None)
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--mllm-base-url", default=None)
    sub.add_argument("--mllm-model", default=None)
    sub.add_argument("--flow", default=None,
                     help="flow backend: builtin or precomputed:<dir>")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="editpipe")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
            ("scan", "load the corpus and apply the caption keyword filter"),
            ("sample", "scan, then emit fixed-interval frame pair candidates"),
            ("filter", "scan, sample, then run flow estimation and motion filtering"),
            ("instruct", "run all stages through instruction generation"),
            ("pack", "run all stages and write shards plus the manifest"),
            ("stats", "print the stats report for an existing manifest"),
            ("run", "run every stage end to end"),
            ("bench", "flow/filter throughput at 1, 2, 4 workers")):
        sub = commands.add_parser(name, help=help_text)
        _add_pipeline_args(sub)
        if name == "bench":
            sub.add_argument("--pairs", type=int, default=32)
            sub.add_argument("--image-size", type=int, default=256)
            sub.add_argument("--out", default=None, help="write the bench report JSON here")

    sim = commands.add_parser("edit-sim",
                              help="mask-localized DDIM sampling with a mock predictor")
    sim.add_argument("--source", default=None, help="source latent file")
    sim.add_argument("--shape", default=None,
                     help="C,H,W to generate a source latent instead of --source")
    sim.add_argument("--source-seed", type=int, default=0)
    sim.add_argument("--mask", default=None, help="grayscale PNG mask (white = edit)")
    sim.add_argument("--predictor", default="toward-source",
                     choices=("zero", "hash", "toward-source"))
    sim.add_argument("--steps", type=int, default=50)
    sim.add_argument("--timesteps", type=int, default=1000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="output latent file")

    ev = commands.add_parser("evaluate", help="editing metrics over embedding files")
    ev.add_argument("--benchmark", required=True, help="benchmark manifest JSONL")
    ev.add_argument("--embeddings", required=True, help="embedding JSONL")
    ev.add_argument("--out", default=None, help="write the metric report JSON here")
    return parser


def _pipeline_config(args) -> pipeline.PipelineConfig:
    return pipeline.PipelineConfig.from_file(
        args.config,
        workers=args.workers,
        seed=args.seed,
        mllm_base_url=args.mllm_base_url,
        mllm_model=args.mllm_model,
        flow_backend=args.flow,
    )


def _run_pipeline_command(args) -> int:
    config = _pipeline_config(args)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.command == "bench":
        report = pipeline.bench(config, args.pairs, image_size=args.image_size)
        text = json.dumps(report, sort_keys=True, indent=2) + "\n"
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        sys.stdout.write(text)
        sys.stderr.write(pipeline.format_bench(report))
        return EXIT_OK

    if args.command == "stats":
        manifest_path = out_dir / "manifest.json"
        if not manifest_path.exists():
            raise pipeline.StageError(f"no manifest at {manifest_path}; run pack first")
        report = dataset_store.stats(manifest_path)
        sys.stdout.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
        sys.stderr.write(dataset_store.format_stats(report))
        return EXIT_OK

    if args.command == "run":
        manifest_path, report = pipeline.run(config)
        sys.stdout.write(json.dumps({"manifest": str(manifest_path),
                                     "counters": report["counters"]},
                                    sort_keys=True, indent=2) + "\n")
        return EXIT_OK

    # staged execution: each command runs the pipeline up to its stage
    journal = pipeline.Journal(out_dir / "journal.jsonl")
    provider = pipeline._make_provider(config)
    sequences, counters = pipeline.scan_stage(config, journal, provider)
    if args.command == "scan":
        sys.stdout.write(json.dumps(counters, sort_keys=True, indent=2) + "\n")
        return EXIT_OK
    candidates = pipeline.sample_stage(config, sequences, counters)
    for cand in candidates:
        if cand.cid not in journal.entries:
            journal.record({"event": "registered", "id": cand.cid, "payload": {
                "sequence_id": cand.pair.sequence_id,
                "src_index": cand.pair.src_index,
                "tgt_index": cand.pair.tgt_index,
            }})
    if args.command == "sample":
        sys.stdout.write(json.dumps(counters, sort_keys=True, indent=2) + "\n")
        return EXIT_OK
    pipeline.filter_stage(config, candidates, journal)
    if args.command == "filter":
        decisions = {}
        for cand in candidates:
            entry = journal.get(cand.cid)
            decision = (entry.get("dropped") or entry.get("measured") or {}).get(
                "decision", "pending")
            decisions[decision] = decisions.get(decision, 0) + 1
        sys.stdout.write(json.dumps({**counters, "decisions": decisions},
                                    sort_keys=True, indent=2) + "\n")
        return EXIT_OK
    pipeline.instruct_stage(config, candidates, journal, provider)
    if args.command == "instruct":
        statuses = {}
        for cand in candidates:
            status = journal.status(cand.cid)
            statuses[status] = statuses.get(status, 0) + 1
        sys.stdout.write(json.dumps({**counters, "statuses": statuses},
                                    sort_keys=True, indent=2) + "\n")
        return EXIT_OK
    manifest_path = pipeline.pack_stage(config, candidates, journal, counters)
    report = dataset_store.stats(manifest_path)
    (out_dir / "stats.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    (out_dir / "stats.txt").write_text(dataset_store.format_stats(report),
                                       encoding="utf-8")
    sys.stdout.write(json.dumps({"manifest": str(manifest_path),
                                 "counters": report["counters"]},
                                sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def _run_edit_sim(args) -> int:
    if (args.source is None) == (args.shape is None):
        raise pipeline.ConfigError("give exactly one of --source or --shape")
    if args.source:
        zs = ck.read_latent(args.source)
    else:
        try:
            c, h, w = (int(x) for x in args.shape.split(","))
        except ValueError:
            raise pipeline.ConfigError(f"--shape must be C,H,W, got {args.shape!r}")
        rng = np.random.default_rng(args.source_seed)
        zs = rng.standard_normal((c, h, w)).astype(np.float32)
    mask = None
    if args.mask:
        from PIL import Image as PILImage

        with PILImage.open(args.mask) as im:
            mask = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    sched = ck.DiffusionSchedule.linear(T=args.timesteps)
    predictor = ck.make_predictor(args.predictor, zs=zs, sched=sched)
    result = ck.masked_ddim_sample(zs, cond=None, m=mask, predictor=predictor,
                                   sched=sched, steps=args.steps, seed=args.seed)
    ck.write_latent(args.out, np.asarray(result, dtype=np.float32))
    summary = {
        "out": args.out,
        "shape": list(result.shape),
        "mean": float(np.mean(result)),
        "std": float(np.std(result)),
    }
    sys.stdout.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def _run_evaluate(args) -> int:
    provider = edit_metrics.FileEmbeddingProvider(args.embeddings)
    examples = edit_metrics.load_benchmark(args.benchmark)
    report = edit_metrics.evaluate_batch(examples, provider)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in PIPELINE_COMMANDS:
            return _run_pipeline_command(args)
        if args.command == "edit-sim":
            return _run_edit_sim(args)
        if args.command == "evaluate":
            return _run_evaluate(args)
        parser.error(f"unknown command {args.command}")
    except pipeline.ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except Exception as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
