"""End-to-end orchestration: scan, sample, flow/filter, instruct, pack, stats.

Candidates carry a deterministic id hashed from (sequence, indices,
pipeline version), and every state change is appended to a journal so an
interrupted run resumes without repeating completed work; in particular a
candidate that already holds an instruction is never sent to the language
model again. Identical config, corpus, and seed produce byte-identical
manifests.

The flow/filter stage is CPU-bound and fans out over processes; the
instruct stage is I/O-bound and fans out over threads underneath the
provider's own in-flight bound.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import threading
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import dataset_store, flow_engine, instruction_gen, motion_filter, pair_sampler
from .mllm_client import MllmClient, MockMllm

PIPELINE_VERSION = "0.1.0"


class ConfigError(ValueError):
    """Invalid or inconsistent pipeline configuration."""


class StageError(RuntimeError):
    """A stage failed; the message names the offending candidates."""


@dataclass
class PipelineConfig:
    corpus_manifest: str
    out_dir: str
    interval_s: float = 3.0
    stride_s: float | None = None
    flow_backend: str = "builtin"  # builtin | precomputed:<dir>
    flow_levels: int = 4
    flow_iterations: int = 3
    mag_min: float = 2.0
    mag_max: float = 40.0
    occl_max: float = 0.3
    mag_stat: str = "mean"
    scale_thresholds_to_frame: bool = True
    occl_tau_abs: float = 1.5
    occl_tau_rel: float = 0.01
    occl_detector: str = "fb"  # fb | photometric
    photometric_threshold: float = 0.1
    subject_cutoff_scale: float = 2.0
    keyword_blocklist: tuple = tuple(sorted(pair_sampler.DEFAULT_BLOCKLIST))
    keyword_filter_enabled: bool = True
    emit_reversed: bool = False
    mllm_base_url: str | None = None  # None -> deterministic mock provider
    mllm_model: str = "mock-mllm"
    mllm_temperature: float = 0.0
    mllm_max_retries: int = 4
    mllm_backoff_s: float = 1.0
    mllm_max_in_flight: int = 4
    mock_reject_every: int = 6
    mock_invalid_every: int = 0
    template_path: str | None = None
    caption_frames: bool = True
    shard_capacity: int = 1000
    copy_images: bool = False
    workers: int = 1
    seed: int = 0
    manifest_timestamp: str | None = None

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError(f"worker count must be >= 1, got {self.workers}")
        if self.interval_s <= 0:
            raise ConfigError(f"interval_s must be positive, got {self.interval_s}")
        if self.stride_s is not None and self.stride_s <= 0:
            raise ConfigError(f"stride_s must be positive, got {self.stride_s}")
        if self.shard_capacity < 1:
            raise ConfigError("shard_capacity must be >= 1")
        if self.occl_detector not in ("fb", "photometric"):
            raise ConfigError(f"unknown occl_detector {self.occl_detector!r}")
        if not (self.flow_backend == "builtin"
                or self.flow_backend.startswith("precomputed:")):
            raise ConfigError(f"flow_backend must be builtin or precomputed:<dir>, "
                              f"got {self.flow_backend!r}")
        try:
            self.thresholds()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not Path(self.corpus_manifest).exists():
            raise ConfigError(f"corpus manifest not found: {self.corpus_manifest}")
        if self.template_path and not Path(self.template_path).exists():
            raise ConfigError(f"prompt template not found: {self.template_path}")
        if self.flow_backend.startswith("precomputed:"):
            flow_dir = self.flow_backend.split(":", 1)[1]
            if not Path(flow_dir).is_dir():
                raise ConfigError(f"precomputed flow dir not found: {flow_dir}")

    def thresholds(self) -> motion_filter.MotionThresholds:
        return motion_filter.MotionThresholds(
            mag_min=self.mag_min, mag_max=self.mag_max,
            occl_max=self.occl_max, stat=self.mag_stat)

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        if "keyword_blocklist" in data:
            data["keyword_blocklist"] = tuple(data["keyword_blocklist"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def candidate_id(sequence_id: str, src_index: int, tgt_index: int,
                 reversed_roles: bool = False,
                 version: str = PIPELINE_VERSION) -> str:
    tag = f"{sequence_id}:{src_index}:{tgt_index}:{int(reversed_roles)}:{version}"
    return hashlib.sha256(tag.encode("utf-8")).hexdigest()[:16]


# journal statuses advance pending -> dropped | instructed -> packed
_ALLOWED_TRANSITIONS = {
    ("pending", "dropped"),
    ("pending", "instructed"),
    ("instructed", "packed"),
}


class Journal:
    """Append-only per-candidate state, replayed on load for resume."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.entries = {}
        self.video_captions = {}
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if not line:
                        continue
                    event = json.loads(line)
                    self._apply(event)

    def _apply(self, event: dict):
        kind = event["event"]
        if kind == "video_caption":
            self.video_captions[event["sequence_id"]] = event["caption"]
            return
        cid = event["id"]
        entry = self.entries.setdefault(cid, {"status": "pending"})
        if kind == "registered":
            entry.update(event.get("payload", {}))
        elif kind == "measured":
            entry["measured"] = event["payload"]
        elif kind in ("dropped", "instructed", "packed"):
            if (entry["status"], kind) not in _ALLOWED_TRANSITIONS:
                raise StageError(
                    f"candidate {cid}: illegal status change {entry['status']} -> {kind}")
            entry["status"] = kind
            entry[kind] = event.get("payload", {})
        else:
            raise StageError(f"unknown journal event {kind!r}")

    def record(self, event: dict):
        with self._lock:
            self._apply(event)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(event, sort_keys=True) + "\n")
                f.flush()

    def status(self, cid: str) -> str:
        return self.entries.get(cid, {"status": "pending"})["status"]

    def get(self, cid: str) -> dict:
        return self.entries.get(cid, {"status": "pending"})


# ---------------------------------------------------------------------------
# scan + sample
# ---------------------------------------------------------------------------

@dataclass
class Candidate:
    """One sampled pair with resolved frame paths, in corpus order."""

    cid: str
    pair: pair_sampler.FramePairCandidate
    src_path: str
    tgt_path: str


def _make_provider(config: PipelineConfig):
    if not config.mllm_base_url or config.mllm_base_url == "mock":
        template = _load_template(config)
        return MockMllm(rejection_token=template.rejection_token,
                        reject_every=config.mock_reject_every,
                        invalid_every=config.mock_invalid_every)
    return MllmClient(
        base_url=config.mllm_base_url, model=config.mllm_model,
        temperature=config.mllm_temperature, max_retries=config.mllm_max_retries,
        backoff_s=config.mllm_backoff_s, max_in_flight=config.mllm_max_in_flight)


def _load_template(config: PipelineConfig) -> instruction_gen.PromptTemplate:
    if config.template_path:
        return instruction_gen.load_template(config.template_path)
    return instruction_gen.default_template()


def scan_stage(config: PipelineConfig, journal: Journal | None = None,
               provider=None) -> tuple:
    """Load the corpus and keyword-filter it; returns (kept sequences, counters)."""
    sequences = pair_sampler.load_corpus_manifest(config.corpus_manifest)
    counters = {"videos_total": len(sequences), "videos_blocked": 0}
    if not config.keyword_filter_enabled:
        return sequences, counters
    cfg = pair_sampler.KeywordFilterConfig(
        blocklist=frozenset(config.keyword_blocklist))
    kept = []
    for seq in sequences:
        caption = seq.caption
        if caption is None and provider is not None and seq.frames:
            if journal is not None and seq.id in journal.video_captions:
                caption = journal.video_captions[seq.id]
            else:
                caption = instruction_gen.caption(
                    flow_engine.load_image(seq.frames[0].path), provider)
                if journal is not None:
                    journal.record({"event": "video_caption", "sequence_id": seq.id,
                                    "caption": caption})
            seq.caption = caption
        if pair_sampler.keyword_filter(caption, cfg):
            kept.append(seq)
        else:
            counters["videos_blocked"] += 1
    return kept, counters


def sample_stage(config: PipelineConfig, sequences, counters: dict) -> list:
    """Fixed-interval pair sampling over the kept sequences, corpus order."""
    candidates = []
    for seq in sequences:
        frame_paths = {f.index: f.path for f in seq.frames}
        pairs = pair_sampler.sample_pairs(seq, config.interval_s, config.stride_s,
                                          counters=counters)
        if config.emit_reversed:
            pairs = pair_sampler.with_reversed(pairs)
        for pair in pairs:
            src_path = frame_paths[pair.src_index]
            tgt_path = frame_paths[pair.tgt_index]
            if pair.reversed_roles:
                src_path, tgt_path = tgt_path, src_path
            candidates.append(Candidate(
                cid=candidate_id(pair.sequence_id, pair.src_index, pair.tgt_index,
                                 pair.reversed_roles),
                pair=pair, src_path=src_path, tgt_path=tgt_path))
    counters["candidates"] = len(candidates)
    return candidates


# ---------------------------------------------------------------------------
# flow + filter (process-parallel)
# ---------------------------------------------------------------------------

def _precomputed_flow_path(flow_dir: str, sequence_id: str, a: int, b: int) -> Path:
    return Path(flow_dir) / f"{sequence_id}_{a:06d}_{b:06d}.flo"


def _flow_filter_task(task: dict) -> dict:
    """Measure one candidate; runs in a worker process, so inputs are paths."""
    src = flow_engine.load_image(task["src_path"])
    tgt = flow_engine.load_image(task["tgt_path"])
    if task["flow_fwd"] is not None:
        fwd = flow_engine.load_flow(task["flow_fwd"])
    else:
        fwd = flow_engine.estimate_flow(src, tgt, levels=task["levels"],
                                        iterations=task["iterations"])
    stats = flow_engine.flow_stats(fwd)
    if task["detector"] == "photometric":
        mask = flow_engine.occlusion_mask_photometric(
            src, tgt, fwd, threshold=task["photometric_threshold"])
    else:
        if task["flow_bwd"] is not None:
            bwd = flow_engine.load_flow(task["flow_bwd"])
        else:
            bwd = flow_engine.estimate_flow(tgt, src, levels=task["levels"],
                                            iterations=task["iterations"])
        mask = flow_engine.occlusion_mask(fwd, bwd, tau_abs=task["tau_abs"],
                                          tau_rel=task["tau_rel"])
    cutoff = flow_engine.default_subject_cutoff(stats, scale=task["cutoff_scale"])
    occl = flow_engine.occlusion_ratio(mask, fwd, cutoff)
    thresholds = motion_filter.MotionThresholds(*task["thresholds"])
    if task["scale_to_frame"]:
        thresholds = thresholds.scaled_for(src.width, src.height)
    verdict = motion_filter.evaluate(stats, occl, thresholds)
    return {
        "cid": task["cid"],
        "decision": verdict.decision.value,
        "stats": dataclasses.asdict(stats),
        "occl_ratio": occl,
    }


def _build_task(config: PipelineConfig, cand: Candidate) -> dict:
    flow_fwd = flow_bwd = None
    if config.flow_backend.startswith("precomputed:"):
        flow_dir = config.flow_backend.split(":", 1)[1]
        pair = cand.pair
        a, b = pair.src_index, pair.tgt_index
        if pair.reversed_roles:
            a, b = b, a
        flow_fwd = str(_precomputed_flow_path(flow_dir, pair.sequence_id, a, b))
        flow_bwd = str(_precomputed_flow_path(flow_dir, pair.sequence_id, b, a))
        if not Path(flow_fwd).exists() or not Path(flow_bwd).exists():
            raise StageError(f"candidate {cand.cid}: missing precomputed flow "
                             f"{flow_fwd} / {flow_bwd}")
    th = config.thresholds()
    return {
        "cid": cand.cid,
        "src_path": cand.src_path,
        "tgt_path": cand.tgt_path,
        "flow_fwd": flow_fwd,
        "flow_bwd": flow_bwd,
        "levels": config.flow_levels,
        "iterations": config.flow_iterations,
        "tau_abs": config.occl_tau_abs,
        "tau_rel": config.occl_tau_rel,
        "detector": config.occl_detector,
        "photometric_threshold": config.photometric_threshold,
        "cutoff_scale": config.subject_cutoff_scale,
        "thresholds": (th.mag_min, th.mag_max, th.occl_max, th.stat),
        "scale_to_frame": config.scale_thresholds_to_frame,
    }


def filter_stage(config: PipelineConfig, candidates, journal: Journal,
                 workers: int | None = None) -> None:
    """Flow + motion filtering for every candidate still lacking a measurement."""
    todo = [c for c in candidates
            if journal.status(c.cid) == "pending" and "measured" not in journal.get(c.cid)]
    if not todo:
        return
    tasks = [_build_task(config, c) for c in todo]
    workers = config.workers if workers is None else workers
    if workers == 1:
        results = [_flow_filter_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_flow_filter_task, tasks, chunksize=1))
    for result in results:
        payload = {"stats": result["stats"], "occl_ratio": result["occl_ratio"],
                   "decision": result["decision"]}
        if result["decision"] == motion_filter.Decision.PASS.value:
            journal.record({"event": "measured", "id": result["cid"],
                            "payload": payload})
        else:
            payload["reason"] = result["decision"]
            journal.record({"event": "dropped", "id": result["cid"],
                            "payload": payload})


# ---------------------------------------------------------------------------
# instruct (thread-parallel, bounded by the provider)
# ---------------------------------------------------------------------------

def _instruct_one(config: PipelineConfig, template, provider, cand: Candidate) -> dict:
    src = flow_engine.load_image(cand.src_path)
    tgt = flow_engine.load_image(cand.tgt_path)
    src_caption = tgt_caption = ""
    if config.caption_frames:
        src_caption = instruction_gen.caption(src, provider)
        tgt_caption = instruction_gen.caption(tgt, provider)
    messages = instruction_gen.build_prompt(src, tgt, src_caption or None, template)
    raw = provider.chat(messages)
    source = f"{config.mllm_model}@{template.version}"
    outcome = instruction_gen.parse_response(raw, template, source=source)
    payload = {"src_caption": src_caption, "tgt_caption": tgt_caption}
    if outcome.accepted:
        payload["instruction"] = dataclasses.asdict(outcome.instruction)
    else:
        payload["reason"] = f"rejected:{outcome.rejected_reason}"
    return payload


def instruct_stage(config: PipelineConfig, candidates, journal: Journal,
                   provider=None) -> None:
    """Caption frames and request instructions for filter-passing candidates."""
    template = _load_template(config)
    provider = provider or _make_provider(config)
    todo = []
    for cand in candidates:
        entry = journal.get(cand.cid)
        if entry["status"] != "pending":
            continue
        if "measured" not in entry:
            raise StageError(f"candidate {cand.cid} has no flow measurement; "
                             f"run the filter stage first")
        todo.append(cand)
    if not todo:
        return
    failures = []

    def work(cand: Candidate):
        measured = journal.get(cand.cid)["measured"]
        payload = _instruct_one(config, template, provider, cand)
        payload["stats"] = measured["stats"]
        payload["occl_ratio"] = measured["occl_ratio"]
        if "instruction" in payload:
            journal.record({"event": "instructed", "id": cand.cid, "payload": payload})
        else:
            journal.record({"event": "dropped", "id": cand.cid, "payload": payload})

    if config.workers == 1:
        for cand in todo:
            try:
                work(cand)
            except Exception as exc:
                failures.append((cand.cid, exc))
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = {pool.submit(work, cand): cand for cand in todo}
            for future, cand in futures.items():
                try:
                    future.result()
                except Exception as exc:
                    failures.append((cand.cid, exc))
    if failures:
        details = "; ".join(f"{cid}: {exc}" for cid, exc in failures[:5])
        raise StageError(f"instruct stage failed for {len(failures)} candidates "
                         f"({details})")


# ---------------------------------------------------------------------------
# pack + stats
# ---------------------------------------------------------------------------

def _manifest_timestamp(config: PipelineConfig) -> str:
    if config.manifest_timestamp:
        return config.manifest_timestamp
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        return datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()
    return datetime.now(tz=timezone.utc).isoformat()


def _corpus_relative(path: str, config: PipelineConfig) -> str:
    root = Path(config.corpus_manifest).parent.resolve()
    try:
        return str(Path(path).resolve().relative_to(root))
    except ValueError:
        return str(path)


def pack_stage(config: PipelineConfig, candidates, journal: Journal,
               counters: dict) -> Path:
    """Write accepted triplets to shards and emit the manifest."""
    template = _load_template(config)
    provider_id = config.mllm_model if config.mllm_base_url else "mock"
    provenance = dataset_store.Provenance(
        pipeline_version=PIPELINE_VERSION,
        template_version=template.version,
        provider_id=provider_id)
    records = []
    drop_counts = {d.value: 0 for d in motion_filter.Decision if d != motion_filter.Decision.PASS}
    drop_counts["rejected"] = 0
    for cand in candidates:
        entry = journal.get(cand.cid)
        if entry["status"] == "dropped":
            reason = entry["dropped"].get("reason", "")
            key = "rejected" if reason.startswith("rejected") else reason
            drop_counts[key] = drop_counts.get(key, 0) + 1
            continue
        if entry["status"] not in ("instructed", "packed"):
            continue
        payload = entry.get("instructed") or entry.get("packed")
        stats = flow_engine.FlowStats(**payload["stats"])
        instruction = instruction_gen.Instruction(**payload["instruction"])
        records.append((cand, dataset_store.TripletRecord(
            pair=cand.pair,
            instruction=instruction,
            src_caption=payload["src_caption"],
            tgt_caption=payload["tgt_caption"],
            flow_stats=stats,
            occl_ratio=payload["occl_ratio"],
            provenance=provenance,
            src_image=_corpus_relative(cand.src_path, config),
            tgt_image=_corpus_relative(cand.tgt_path, config),
        )))
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for shard_id, start in enumerate(range(0, len(records), config.shard_capacity)):
        chunk = records[start:start + config.shard_capacity]
        entries.append(dataset_store.write_shard(
            [r for _, r in chunk], shard_id, out_dir,
            capacity=config.shard_capacity, copy_images=config.copy_images))
        for cand, _ in chunk:
            if journal.status(cand.cid) != "packed":
                journal.record({"event": "packed", "id": cand.cid,
                                "payload": {**journal.get(cand.cid)["instructed"],
                                            "shard": shard_id}})
    all_counters = dict(counters)
    all_counters.update(drop_counts)
    all_counters["accepted"] = len(records)
    manifest = dataset_store.ShardManifest(
        shards=entries, counters=all_counters,
        created_at=_manifest_timestamp(config))
    manifest_path = out_dir / "manifest.json"
    manifest.write(manifest_path)
    return manifest_path


def run(config: PipelineConfig, provider=None) -> tuple:
    """All stages in order; returns (manifest_path, stats_report)."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    journal = Journal(out_dir / "journal.jsonl")
    provider = provider or _make_provider(config)
    sequences, counters = scan_stage(config, journal, provider)
    candidates = sample_stage(config, sequences, counters)
    for cand in candidates:
        if cand.cid not in journal.entries:
            journal.record({"event": "registered", "id": cand.cid, "payload": {
                "sequence_id": cand.pair.sequence_id,
                "src_index": cand.pair.src_index,
                "tgt_index": cand.pair.tgt_index,
            }})
    filter_stage(config, candidates, journal)
    instruct_stage(config, candidates, journal, provider)
    manifest_path = pack_stage(config, candidates, journal, counters)
    report = dataset_store.stats(manifest_path)
    (out_dir / "stats.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    (out_dir / "stats.txt").write_text(dataset_store.format_stats(report),
                                       encoding="utf-8")
    return manifest_path, report


# ---------------------------------------------------------------------------
# throughput benchmark
# ---------------------------------------------------------------------------

BENCH_WORKER_COUNTS = (1, 2, 4)


def bench(config: PipelineConfig, n_pairs: int, image_size: int = 256,
          worker_counts=BENCH_WORKER_COUNTS) -> dict:
    """Flow+filter throughput at several worker counts over a synthetic corpus."""
    from . import synth

    report = {"n_pairs": n_pairs, "image_size": image_size, "rows": []}
    if n_pairs <= 0:
        return report
    bench_root = Path(config.out_dir) / "bench_corpus"
    manifest = synth.make_pair_corpus(bench_root, n_pairs, size=image_size,
                                      interval_s=config.interval_s, seed=config.seed)
    bench_config = dataclasses.replace(config, corpus_manifest=str(manifest),
                                       out_dir=str(Path(config.out_dir) / "bench_out"))
    Path(bench_config.out_dir).mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sequences, counters = scan_stage(bench_config)
    candidates = sample_stage(bench_config, sequences, counters)
    report["sample_s"] = time.perf_counter() - t0
    for workers in worker_counts:
        journal = Journal(Path(bench_config.out_dir) / f"bench-journal-{workers}.jsonl")
        t0 = time.perf_counter()
        filter_stage(bench_config, candidates, journal, workers=workers)
        elapsed = time.perf_counter() - t0
        report["rows"].append({
            "workers": workers,
            "stage": "flow_filter",
            "wall_s": elapsed,
            "pairs_per_s": len(candidates) / elapsed if elapsed > 0 else float("inf"),
        })
    return report


def format_bench(report: dict) -> str:
    lines = [f"pairs: {report['n_pairs']}  size: {report['image_size']}px"]
    if "sample_s" in report:
        lines.append(f"sample stage: {report['sample_s']:.3f} s")
    lines.append(f"{'workers':>8} {'stage':>12} {'wall_s':>10} {'pairs/s':>10}")
    for row in report["rows"]:
        lines.append(f"{row['workers']:>8} {row['stage']:>12} "
                     f"{row['wall_s']:>10.3f} {row['pairs_per_s']:>10.2f}")
    return "\n".join(lines) + "\n"
