"""Sharded persistence for accepted triplets, plus corpus statistics.

A shard is one line-delimited JSON file of records; source/target images
are either referenced by path or copied into a sibling directory keyed by
record id. The manifest carries per-shard content hashes and the filter
verdict tallies so a corpus can be verified and summarized without
rescanning inputs.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .flow_engine import FlowStats
from .instruction_gen import Instruction
from .pair_sampler import FramePairCandidate

SHARD_CAPACITY = 1000

_COUNTER_KEYS = (
    "candidates", "too_static", "too_dynamic", "background_changed",
    "rejected", "accepted", "sequence_too_short", "videos_blocked",
)


class IoError(RuntimeError):
    """Filesystem failure while writing or reading a shard."""


class CapacityExceeded(ValueError):
    """More records than the shard capacity allows."""


class HashMismatch(ValueError):
    """Shard bytes do not match the manifest hash."""


class CorruptRecord(ValueError):
    """Shard content cannot be parsed back into records."""


@dataclass(frozen=True)
class Provenance:
    pipeline_version: str
    template_version: str
    provider_id: str


@dataclass
class TripletRecord:
    """One (source image, target image, instruction) example with provenance."""

    pair: FramePairCandidate
    instruction: Instruction
    src_caption: str
    tgt_caption: str
    flow_stats: FlowStats
    occl_ratio: float
    provenance: Provenance
    src_image: str
    tgt_image: str

    def __post_init__(self):
        if not 0.0 <= self.occl_ratio <= 1.0:
            raise ValueError(f"occl_ratio must be in [0, 1], got {self.occl_ratio}")

    def to_dict(self) -> dict:
        return {
            "pair": asdict(self.pair),
            "instruction": asdict(self.instruction),
            "src_caption": self.src_caption,
            "tgt_caption": self.tgt_caption,
            "flow_stats": asdict(self.flow_stats),
            "occl_ratio": self.occl_ratio,
            "provenance": asdict(self.provenance),
            "src_image": self.src_image,
            "tgt_image": self.tgt_image,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TripletRecord":
        try:
            return cls(
                pair=FramePairCandidate(**data["pair"]),
                instruction=Instruction(**data["instruction"]),
                src_caption=data["src_caption"],
                tgt_caption=data["tgt_caption"],
                flow_stats=FlowStats(**data["flow_stats"]),
                occl_ratio=data["occl_ratio"],
                provenance=Provenance(**data["provenance"]),
                src_image=data["src_image"],
                tgt_image=data["tgt_image"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptRecord(f"bad record fields: {exc}") from exc


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def shard_filename(shard_id: int) -> str:
    return f"shard-{shard_id:05d}.jsonl"


def write_shard(records: list, shard_id: int, out_dir,
                capacity: int = SHARD_CAPACITY, copy_images: bool = False) -> dict:
    """Serialize records in input order; returns the manifest entry.

    With ``copy_images`` the referenced frames are copied next to the shard
    under zero-padded record ids and the stored paths point at the copies.
    """
    if not records:
        raise ValueError("write_shard requires at least one record")
    if len(records) > capacity:
        raise CapacityExceeded(f"{len(records)} records exceed capacity {capacity}")
    out_dir = Path(out_dir)
    name = shard_filename(shard_id)
    path = out_dir / name
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        image_dir = out_dir / f"shard-{shard_id:05d}.images"
        lines = []
        for i, record in enumerate(records):
            data = record.to_dict()
            if copy_images:
                image_dir.mkdir(exist_ok=True)
                rec_id = f"{i:06d}"
                for key, suffix in (("src_image", "src"), ("tgt_image", "tgt")):
                    src_path = Path(data[key])
                    dest = image_dir / f"{rec_id}-{suffix}{src_path.suffix}"
                    shutil.copyfile(src_path, dest)
                    data[key] = str(dest.relative_to(out_dir))
            data["record_id"] = f"{i:06d}"
            lines.append(json.dumps(data, sort_keys=True, separators=(",", ":")))
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"writing shard {name}: {exc}") from exc
    return {"file": name, "count": len(records), "sha256": _sha256_file(path)}


def read_shard(path, expected_sha256: str | None = None) -> list:
    """Exact inverse of write_shard; verifies the manifest hash when given."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"reading shard {path}: {exc}") from exc
    if expected_sha256 is not None:
        actual = hashlib.sha256(raw).hexdigest()
        if actual != expected_sha256:
            raise HashMismatch(f"{path}: sha256 {actual} != manifest {expected_sha256}")
    text = raw.decode("utf-8")
    if not text.strip():
        raise CorruptRecord(f"{path}: empty shard")
    records = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptRecord(f"{path}:{line_no}: invalid JSON ({exc})") from exc
        records.append(TripletRecord.from_dict(data))
    return records


@dataclass
class ShardManifest:
    """Shard inventory with hashes, verdict tallies, and creation stamp."""

    shards: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    created_at: str = ""

    @property
    def total_records(self) -> int:
        return sum(entry["count"] for entry in self.shards)

    def to_json(self) -> str:
        body = {
            "created_at": self.created_at,
            "counters": {k: self.counters.get(k, 0) for k in sorted(set(self.counters) | set(_COUNTER_KEYS))},
            "shards": self.shards,
            "total_records": self.total_records,
        }
        return json.dumps(body, sort_keys=True, indent=2) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ShardManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        manifest = cls(shards=data["shards"], counters=data["counters"],
                       created_at=data.get("created_at", ""))
        if manifest.total_records != data.get("total_records", manifest.total_records):
            raise CorruptRecord(f"{path}: shard counts disagree with total_records")
        return manifest


def verify_manifest(manifest: ShardManifest, root) -> None:
    """Recompute every shard hash; raises HashMismatch on any difference."""
    root = Path(root)
    for entry in manifest.shards:
        actual = _sha256_file(root / entry["file"])
        if actual != entry["sha256"]:
            raise HashMismatch(f"{entry['file']}: sha256 {actual} != {entry['sha256']}")


# ---------------------------------------------------------------------------
# corpus statistics
# ---------------------------------------------------------------------------

MAGNITUDE_BINS = [0, 1, 2, 5, 10, 20, 40, 80, float("inf")]
OCCLUSION_BINS = [i / 10 for i in range(11)]


def _histogram(values, edges) -> dict:
    counts = {}
    for lo, hi in zip(edges, edges[1:]):
        label = f"[{lo:g},{hi:g})"
        counts[label] = sum(1 for v in values if lo <= v < hi)
    return counts


def stats(manifest_paths) -> dict:
    """Aggregate report over one or more shard manifests.

    Totals per stage, the instruction verb histogram, and magnitude /
    occlusion histograms over the accepted records.
    """
    if isinstance(manifest_paths, (str, Path)):
        manifest_paths = [manifest_paths]
    counters = {k: 0 for k in _COUNTER_KEYS}
    verbs = {}
    magnitudes = []
    occlusions = []
    for mpath in manifest_paths:
        manifest = ShardManifest.load(mpath)
        for key, value in manifest.counters.items():
            counters[key] = counters.get(key, 0) + value
        root = Path(mpath).parent
        for entry in manifest.shards:
            for record in read_shard(root / entry["file"], entry["sha256"]):
                verbs[record.instruction.verb] = verbs.get(record.instruction.verb, 0) + 1
                magnitudes.append(record.flow_stats.mean_mag)
                occlusions.append(record.occl_ratio)
    return {
        "counters": counters,
        "verb_histogram": dict(sorted(verbs.items())),
        "magnitude_histogram": _histogram(magnitudes, MAGNITUDE_BINS),
        "occlusion_histogram": _histogram(occlusions, OCCLUSION_BINS),
    }


def format_stats(report: dict) -> str:
    """Aligned-text rendering of a stats report."""
    lines = ["counters:"]
    for key, value in sorted(report["counters"].items()):
        lines.append(f"  {key:<22}{value:>10}")
    for section in ("verb_histogram", "magnitude_histogram", "occlusion_histogram"):
        lines.append(f"{section.replace('_', ' ')}:")
        entries = report[section]
        if not entries:
            lines.append("  (empty)")
        for key, value in entries.items():
            lines.append(f"  {key:<22}{value:>10}")
    return "\n".join(lines) + "\n"
