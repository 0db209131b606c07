"""Walkthrough: editing-evaluation metrics over embedding files.

The metrics are pure arithmetic over embedding vectors; the models that
produce those vectors stay outside the package. This demo fabricates
embeddings with a controlled geometry so each score is predictable, writes
them in the provider's JSONL layout, and evaluates a small benchmark.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from editpipe import edit_metrics as em

rng = np.random.default_rng(5)
workdir = Path(tempfile.mkdtemp(prefix="editpipe-metrics-"))

print("1) Fabricate embeddings where the image delta tracks the caption delta.")
entries = {}
rows = []
for i in range(8):
    direction = rng.standard_normal(32)
    img_src = rng.standard_normal(32)
    img_out = img_src + direction                   # image moved along `direction`
    cap_src = rng.standard_normal(32)
    cap_tgt = cap_src + direction + 0.1 * rng.standard_normal(32)
    inst = rng.standard_normal(32)
    regen = inst + 0.2 * rng.standard_normal(32)    # regenerated instruction is close
    for name, values, kind in (
            ("img_src", img_src, "image"), ("img_out", img_out, "image"),
            ("cap_src", cap_src, "text"), ("cap_tgt", cap_tgt, "text"),
            ("inst_orig", inst, "text"), ("inst_regen", regen, "text")):
        entries[f"{name}-{i}"] = em.EmbeddingVector(values=values, kind=kind)
    rows.append({"id": f"ex-{i}", **{n: f"{n}-{i}" for n in
                 ("img_src", "img_out", "cap_src", "cap_tgt", "inst_orig", "inst_regen")}})

emb_path = workdir / "embeddings.jsonl"
em.write_embeddings_jsonl(emb_path, entries)
bench_path = workdir / "benchmark.jsonl"
with open(bench_path, "w", encoding="utf-8") as f:
    for row in rows:
        f.write(json.dumps(row) + "\n")
print(f"   wrote {len(entries)} embeddings and {len(rows)} benchmark rows under {workdir}")

print("\n2) Evaluate: directional agreement (image delta vs caption delta),")
print("   instruction agreement, and source fidelity.")
provider = em.FileEmbeddingProvider(emb_path)
report = em.evaluate_batch(em.load_benchmark(bench_path), provider)
print(report.to_json())

print("3) The same evaluation is available as `editpipe evaluate`: ")
print(f"   editpipe evaluate --benchmark {bench_path} --embeddings {emb_path}")

print("\n4) Single-pair scores on controlled vectors:")
a = em.EmbeddingVector(np.array([1.0, 0.0]), "image")
b = em.EmbeddingVector(np.array([0.0, 1.0]), "image")
print(f"   identical images   -> clip_i = {em.clip_i(a, a):.4f}")
print(f"   orthogonal images  -> clip_i = {em.clip_i(a, b):.4f}")
t1 = em.EmbeddingVector(np.array([0.0, 2.0]), "text")
t2 = em.EmbeddingVector(np.array([-2.0, 4.0]), "text")  # caption delta (-2, 2) is parallel to the image delta (-1, 1)
print(f"   parallel deltas    -> clip_d = {em.clip_d(a, b, t1, t2):+.4f}")
