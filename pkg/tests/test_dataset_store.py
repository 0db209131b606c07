import json

import numpy as np
import pytest

from editpipe import dataset_store as ds
from editpipe.flow_engine import FlowStats
from editpipe.instruction_gen import Instruction
from editpipe.pair_sampler import FramePairCandidate

PROV = ds.Provenance(pipeline_version="0.1.0", template_version="default_v1",
                     provider_id="mock")


def make_record(i=0, rng=None, src_image="frames/a.png", tgt_image="frames/b.png"):
    rng = rng or np.random.default_rng(i)
    return ds.TripletRecord(
        pair=FramePairCandidate(sequence_id=f"clip{i:02d}", src_index=int(rng.integers(0, 50)),
                                tgt_index=int(rng.integers(51, 200)),
                                interval_s=float(rng.uniform(1, 5))),
        instruction=Instruction(text=f"Move the object {i} to the left",
                                verb="Move", source="mock@default_v1"),
        src_caption=f"caption src {i}",
        tgt_caption=f"caption tgt {i}",
        flow_stats=FlowStats(mean_mag=float(rng.uniform(0, 20)),
                             p50_mag=float(rng.uniform(0, 10)),
                             p95_mag=float(rng.uniform(10, 40)),
                             valid_fraction=float(rng.uniform(0.5, 1.0))),
        occl_ratio=float(rng.uniform(0, 1)),
        provenance=PROV,
        src_image=src_image,
        tgt_image=tgt_image,
    )


class TestShardRoundTrip:
    def test_three_records(self, tmp_path):
        records = [make_record(i) for i in range(3)]
        entry = ds.write_shard(records, 0, tmp_path)
        assert entry["count"] == 3
        assert entry["file"] == "shard-00000.jsonl"
        loaded = ds.read_shard(tmp_path / entry["file"], entry["sha256"])
        assert loaded == records

    def test_random_records_property(self, tmp_path):
        rng = np.random.default_rng(123)
        records = [make_record(i, rng=rng) for i in range(50)]
        entry = ds.write_shard(records, 7, tmp_path)
        assert ds.read_shard(tmp_path / entry["file"], entry["sha256"]) == records

    def test_order_preserved(self, tmp_path):
        records = [make_record(i) for i in (5, 1, 9)]
        entry = ds.write_shard(records, 0, tmp_path)
        loaded = ds.read_shard(tmp_path / entry["file"])
        assert [r.pair.sequence_id for r in loaded] == ["clip05", "clip01", "clip09"]

    def test_capacity_exceeded(self, tmp_path):
        records = [make_record(i) for i in range(4)]
        with pytest.raises(ds.CapacityExceeded):
            ds.write_shard(records, 0, tmp_path, capacity=3)

    def test_default_capacity_bound(self, tmp_path):
        records = [make_record(0)] * 1001
        with pytest.raises(ds.CapacityExceeded):
            ds.write_shard(records, 0, tmp_path)

    def test_determinism(self, tmp_path):
        records = [make_record(i) for i in range(5)]
        a = ds.write_shard(records, 0, tmp_path / "a")
        b = ds.write_shard(records, 0, tmp_path / "b")
        assert a["sha256"] == b["sha256"]

    def test_tampered_byte_detected(self, tmp_path):
        records = [make_record(i) for i in range(3)]
        entry = ds.write_shard(records, 0, tmp_path)
        path = tmp_path / entry["file"]
        raw = bytearray(path.read_bytes())
        raw[10] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ds.HashMismatch):
            ds.read_shard(path, entry["sha256"])

    def test_empty_file_corrupt(self, tmp_path):
        path = tmp_path / "shard-00000.jsonl"
        path.write_bytes(b"")
        with pytest.raises(ds.CorruptRecord):
            ds.read_shard(path)

    def test_bad_json_corrupt(self, tmp_path):
        path = tmp_path / "shard-00000.jsonl"
        path.write_text("{broken\n", encoding="utf-8")
        with pytest.raises(ds.CorruptRecord):
            ds.read_shard(path)

    def test_missing_fields_corrupt(self, tmp_path):
        path = tmp_path / "shard-00000.jsonl"
        path.write_text('{"pair": {}}\n', encoding="utf-8")
        with pytest.raises(ds.CorruptRecord):
            ds.read_shard(path)

    def test_occl_ratio_bounds(self):
        with pytest.raises(ValueError):
            make_record(0).__class__(**{**make_record(0).__dict__, "occl_ratio": 1.5})

    def test_copy_images(self, tmp_path):
        frames = tmp_path / "frames"
        frames.mkdir()
        (frames / "a.png").write_bytes(b"src-bytes")
        (frames / "b.png").write_bytes(b"tgt-bytes")
        record = make_record(0, src_image=str(frames / "a.png"),
                             tgt_image=str(frames / "b.png"))
        out = tmp_path / "out"
        entry = ds.write_shard([record], 0, out, copy_images=True)
        loaded = ds.read_shard(out / entry["file"], entry["sha256"])[0]
        assert loaded.src_image == "shard-00000.images/000000-src.png"
        assert (out / loaded.src_image).read_bytes() == b"src-bytes"
        assert (out / loaded.tgt_image).read_bytes() == b"tgt-bytes"


class TestManifest:
    def test_write_load_verify(self, tmp_path):
        entries = [ds.write_shard([make_record(i)], i, tmp_path) for i in range(2)]
        manifest = ds.ShardManifest(shards=entries, counters={"accepted": 2},
                                    created_at="2026-01-01T00:00:00+00:00")
        path = tmp_path / "manifest.json"
        manifest.write(path)
        loaded = ds.ShardManifest.load(path)
        assert loaded.total_records == 2
        assert loaded.counters["accepted"] == 2
        ds.verify_manifest(loaded, tmp_path)

    def test_verify_detects_tamper(self, tmp_path):
        entry = ds.write_shard([make_record(0)], 0, tmp_path)
        manifest = ds.ShardManifest(shards=[entry], counters={}, created_at="t")
        (tmp_path / entry["file"]).write_text("tampered\n", encoding="utf-8")
        with pytest.raises(ds.HashMismatch):
            ds.verify_manifest(manifest, tmp_path)


class TestStats:
    def test_counting_report(self, tmp_path):
        records = [make_record(i) for i in range(5)]
        entry = ds.write_shard(records, 0, tmp_path)
        counters = {"candidates": 10, "too_static": 4, "rejected": 1, "accepted": 5}
        ds.ShardManifest(shards=[entry], counters=counters,
                         created_at="t").write(tmp_path / "manifest.json")
        report = ds.stats(tmp_path / "manifest.json")
        assert report["counters"]["candidates"] == 10
        assert report["counters"]["too_static"] == 4
        assert report["counters"]["rejected"] == 1
        assert report["counters"]["accepted"] == 5
        assert report["verb_histogram"] == {"Move": 5}
        assert sum(report["magnitude_histogram"].values()) == 5
        assert sum(report["occlusion_histogram"].values()) == 5

    def test_empty_corpus(self, tmp_path):
        ds.ShardManifest(shards=[], counters={}, created_at="t").write(
            tmp_path / "manifest.json")
        report = ds.stats(tmp_path / "manifest.json")
        assert all(v == 0 for v in report["counters"].values())
        assert report["verb_histogram"] == {}

    def test_text_rendering(self, tmp_path):
        ds.ShardManifest(shards=[], counters={"accepted": 0}, created_at="t").write(
            tmp_path / "manifest.json")
        text = ds.format_stats(ds.stats(tmp_path / "manifest.json"))
        assert "counters:" in text
        assert "accepted" in text

    def test_accounting_identity(self, tmp_path):
        counters = {"candidates": 16, "too_static": 4, "too_dynamic": 5,
                    "background_changed": 3, "rejected": 1, "accepted": 3}
        ds.ShardManifest(shards=[], counters=counters, created_at="t").write(
            tmp_path / "manifest.json")
        report = ds.stats(tmp_path / "manifest.json")["counters"]
        drops = (report["too_static"] + report["too_dynamic"] +
                 report["background_changed"] + report["rejected"])
        assert report["candidates"] == report["accepted"] + drops
