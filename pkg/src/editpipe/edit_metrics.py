"""Editing-evaluation arithmetic over pluggable embedding vectors.

Three scores: instruction adherence as agreement between the image change
and the caption change (directional cosine of the two deltas), instruction
agreement as cosine between original and regenerated instruction
embeddings, and source fidelity as cosine between input and output image
embeddings. The embedding models live outside this package; vectors
arrive via a file provider (JSONL) or an HTTP embeddings service.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

KIND_IMAGE = "image"
KIND_TEXT = "text"


class ZeroVector(ValueError):
    """Cosine against an all-zero vector is undefined."""


class DimMismatch(ValueError):
    """Embedding dimensions differ."""


class KindMismatch(ValueError):
    """An image slot received a text embedding or vice versa."""


@dataclass(frozen=True)
class EmbeddingVector:
    """A real vector tagged as an image or text embedding."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ValueError(f"embedding must be a non-empty 1-D vector, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("embedding contains non-finite values")
        if self.kind not in (KIND_IMAGE, KIND_TEXT):
            raise ValueError(f"kind must be image or text, got {self.kind!r}")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass
class MetricReport:
    clip_d: float
    clip_inst: float
    clip_i: float
    n: int

    def to_json(self) -> str:
        return json.dumps({"clip_d": self.clip_d, "clip_inst": self.clip_inst,
                           "clip_i": self.clip_i, "n": self.n},
                          sort_keys=True, indent=2) + "\n"


def _cosine_arrays(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise DimMismatch(f"dims differ: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine of a zero vector is undefined")
    return float(np.dot(a, b) / (na * nb))


def _require_kind(vec: EmbeddingVector, kind: str, name: str) -> EmbeddingVector:
    if vec.kind != kind:
        raise KindMismatch(f"{name} must be a {kind} embedding, got {vec.kind}")
    return vec


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """dot(a, b) / (|a| |b|), in [-1, 1] up to float rounding."""
    return _cosine_arrays(a.values, b.values)


def clip_i(img_src: EmbeddingVector, img_out: EmbeddingVector) -> float:
    """Source fidelity: cosine between input and output image embeddings."""
    _require_kind(img_src, KIND_IMAGE, "img_src")
    _require_kind(img_out, KIND_IMAGE, "img_out")
    return cosine(img_src, img_out)


def clip_d(img_src: EmbeddingVector, img_out: EmbeddingVector,
           cap_src: EmbeddingVector, cap_tgt: EmbeddingVector) -> float:
    """Directional agreement between the image delta and the caption delta."""
    _require_kind(img_src, KIND_IMAGE, "img_src")
    _require_kind(img_out, KIND_IMAGE, "img_out")
    _require_kind(cap_src, KIND_TEXT, "cap_src")
    _require_kind(cap_tgt, KIND_TEXT, "cap_tgt")
    return _cosine_arrays(img_out.values - img_src.values,
                          cap_tgt.values - cap_src.values)


def clip_inst(inst_orig: EmbeddingVector, inst_regen: EmbeddingVector) -> float:
    """Cosine between the original and the regenerated instruction embeddings."""
    _require_kind(inst_orig, KIND_TEXT, "inst_orig")
    _require_kind(inst_regen, KIND_TEXT, "inst_regen")
    return cosine(inst_orig, inst_regen)


# ---------------------------------------------------------------------------
# embedding providers and batch evaluation
# ---------------------------------------------------------------------------

class FileEmbeddingProvider:
    """Embeddings from a JSONL file of ``{id, kind, dim, values}`` rows."""

    def __init__(self, path):
        self._vectors = {}
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                vec = EmbeddingVector(values=np.array(row["values"], dtype=np.float64),
                                      kind=row["kind"])
                if "dim" in row and int(row["dim"]) != vec.dim:
                    raise ValueError(f"{path}:{line_no}: dim {row['dim']} != {vec.dim}")
                self._vectors[str(row["id"])] = vec

    def get(self, embedding_id: str) -> EmbeddingVector:
        try:
            return self._vectors[str(embedding_id)]
        except KeyError:
            raise KeyError(f"no embedding with id {embedding_id!r}") from None

    def __len__(self) -> int:
        return len(self._vectors)


class HttpEmbeddingProvider:
    """OpenAI-compatible embeddings endpoint: POST {base_url}/embeddings."""

    def __init__(self, base_url: str, model: str, kind: str = KIND_TEXT,
                 api_key: str = "", timeout_s: float = 60.0, session=None):
        import requests

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.kind = kind
        self.api_key = api_key
        self.timeout_s = timeout_s
        self._session = session or requests.Session()

    def embed(self, text: str) -> EmbeddingVector:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        resp = self._session.post(f"{self.base_url}/embeddings",
                                  json={"model": self.model, "input": text},
                                  headers=headers, timeout=self.timeout_s)
        resp.raise_for_status()
        values = resp.json()["data"][0]["embedding"]
        return EmbeddingVector(values=np.array(values, dtype=np.float64), kind=self.kind)


def write_embeddings_jsonl(path, entries) -> None:
    """Persist ``{id: EmbeddingVector}`` pairs in the provider's file layout."""
    with open(path, "w", encoding="utf-8") as f:
        for embedding_id, vec in entries.items():
            row = {"id": embedding_id, "kind": vec.kind, "dim": vec.dim,
                   "values": vec.values.tolist()}
            f.write(json.dumps(row, sort_keys=True) + "\n")


@dataclass(frozen=True)
class BenchmarkExample:
    """Embedding ids for one evaluated edit."""

    example_id: str
    img_src: str
    img_out: str
    cap_src: str
    cap_tgt: str
    inst_orig: str
    inst_regen: str


def load_benchmark(path) -> list:
    examples = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            examples.append(BenchmarkExample(
                example_id=str(row["id"]),
                img_src=row["img_src"], img_out=row["img_out"],
                cap_src=row["cap_src"], cap_tgt=row["cap_tgt"],
                inst_orig=row["inst_orig"], inst_regen=row["inst_regen"],
            ))
    return examples


def evaluate_batch(examples, provider) -> MetricReport:
    """Mean metric values over the examples; n is the count consumed."""
    examples = list(examples)
    if not examples:
        raise ValueError("evaluate_batch needs at least one example")
    d_values, inst_values, i_values = [], [], []
    for ex in examples:
        img_src = provider.get(ex.img_src)
        img_out = provider.get(ex.img_out)
        d_values.append(clip_d(img_src, img_out,
                               provider.get(ex.cap_src), provider.get(ex.cap_tgt)))
        inst_values.append(clip_inst(provider.get(ex.inst_orig),
                                     provider.get(ex.inst_regen)))
        i_values.append(clip_i(img_src, img_out))
    return MetricReport(
        clip_d=float(np.mean(d_values)),
        clip_inst=float(np.mean(inst_values)),
        clip_i=float(np.mean(i_values)),
        n=len(examples),
    )
