"""Walkthrough: the end-to-end dataset construction pipeline.

Generates a 20-clip synthetic corpus (captioned, with static / moderate /
excessive / background-churn motion profiles plus blocked and too-short
clips), runs every stage with the deterministic mock provider, and prints
the resulting accounting. Re-running with the same seed reproduces the
manifest byte for byte; interrupting and resuming never repeats a
completed model call.
"""

import hashlib
import tempfile
from pathlib import Path

from editpipe import dataset_store, pipeline, synth

workdir = Path(tempfile.mkdtemp(prefix="editpipe-demo-"))
print(f"Working under {workdir}")

print("\n1) Generate the synthetic corpus (20 clips).")
manifest = synth.make_synthetic_corpus(workdir / "corpus", n_clips=20, seed=0)

print("2) Run scan -> sample -> flow/filter -> instruct -> pack -> stats.")
config = pipeline.PipelineConfig(
    corpus_manifest=str(manifest),
    out_dir=str(workdir / "out"),
    workers=2,
    manifest_timestamp="2026-01-01T00:00:00+00:00",
)
manifest_path, report = pipeline.run(config)

print("\n3) Stats report:")
print(dataset_store.format_stats(report))

print("4) The manifest hash is reproducible for a fixed corpus and config:")
digest = hashlib.sha256(manifest_path.read_bytes()).hexdigest()
print(f"   sha256(manifest) = {digest}")

rerun_path, _ = pipeline.run(config)
print(f"   rerun identical  = {rerun_path.read_bytes() == manifest_path.read_bytes()}")

print("\n5) Shard hashes verify against the manifest:")
shard_manifest = dataset_store.ShardManifest.load(manifest_path)
dataset_store.verify_manifest(shard_manifest, manifest_path.parent)
for entry in shard_manifest.shards:
    print(f"   {entry['file']}: {entry['count']} records, sha256 {entry['sha256'][:16]}...")

records = dataset_store.read_shard(manifest_path.parent / shard_manifest.shards[0]["file"])
print("\n6) A packed triplet record:")
record = records[0]
print(f"   pair:        {record.pair.sequence_id} "
      f"[{record.pair.src_index} -> {record.pair.tgt_index}]")
print(f"   instruction: {record.instruction.text!r}")
print(f"   captions:    {record.src_caption!r} / {record.tgt_caption!r}")
print(f"   motion:      mean {record.flow_stats.mean_mag:.2f} px, "
      f"occlusion ratio {record.occl_ratio:.3f}")
