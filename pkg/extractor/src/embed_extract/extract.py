"""Batch embedding extraction: dataset JSONL in, SVEC cache plus a JSON
sidecar report out."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .backends import (DEFAULT_CLIP_MODEL, DEFAULT_TEXT_MODEL,
                       EncoderBackend, get_backend)
from .cache import CacheRecord, atomic_write, write_svec
from .errors import FormatError, ValidationError


@dataclass
class ExtractConfig:
    dataset_path: str
    image_root: str
    output_path: str
    clip_model_id: str = DEFAULT_CLIP_MODEL
    text_model_id: str = DEFAULT_TEXT_MODEL
    backend: str = "auto"
    batch_size: int = 16
    device: str = "cpu"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


@dataclass
class ExtractReport:
    cache_path: str
    sidecar_path: str
    record_count: int
    skipped: list[dict] = field(default_factory=list)


def load_samples(path: str | os.PathLike) -> list[dict]:
    samples = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: invalid JSON: {exc}")
            for key in ("id", "image_ref", "candidate", "references"):
                if key not in row:
                    raise ValidationError(
                        f"{path}: line {lineno}: missing field {key!r}")
            if not row["references"]:
                raise ValidationError(
                    f"{path}: line {lineno}: references must be non-empty")
            if row["id"] in seen:
                raise ValidationError(
                    f"{path}: line {lineno}: duplicate id {row['id']!r}")
            seen.add(row["id"])
            samples.append(row)
    return samples


def _batched(encode, items, batch_size):
    if not items:
        return np.empty((0, 0), dtype=np.float32)
    chunks = [encode(items[i:i + batch_size])
              for i in range(0, len(items), batch_size)]
    return np.concatenate(chunks, axis=0)


def extract(config: ExtractConfig,
            backend: Optional[EncoderBackend] = None) -> ExtractReport:
    """Encode every resolvable sample and write the cache plus sidecar.

    Samples whose image file is missing are skipped and listed (with a
    reason) in the sidecar; everything else is a hard error.
    """
    samples = load_samples(config.dataset_path)
    if backend is None:
        backend = get_backend(config.backend, config.clip_model_id,
                              config.text_model_id, config.device)

    kept, skipped = [], []
    for s in samples:
        image_path = os.path.join(config.image_root, s["image_ref"])
        if not os.path.isfile(image_path):
            skipped.append({"id": s["id"],
                            "reason": f"missing image {s['image_ref']!r}"})
            continue
        kept.append((s, image_path))
    if not kept:
        raise ValidationError("no sample has a resolvable image")

    bs = config.batch_size
    image_vecs = _batched(backend.encode_images,
                          [p for _, p in kept], bs)
    cand_clip = _batched(backend.encode_texts_clip,
                         [s["candidate"] for s, _ in kept], bs)
    cand_rb = _batched(backend.encode_texts_cls,
                       [s["candidate"] for s, _ in kept], bs)
    flat_refs = [r for s, _ in kept for r in s["references"]]
    ref_clip = _batched(backend.encode_texts_clip, flat_refs, bs)
    ref_rb = _batched(backend.encode_texts_cls, flat_refs, bs)

    records: dict[str, CacheRecord] = {}
    offset = 0
    for i, (s, _) in enumerate(kept):
        n = len(s["references"])
        records[s["id"]] = CacheRecord(
            v=image_vecs[i], c_clip=cand_clip[i],
            r_clip=ref_clip[offset:offset + n],
            c_rb=cand_rb[i], r_rb=ref_rb[offset:offset + n])
        offset += n

    write_svec(config.output_path, records, backend.d_clip, backend.d_rb)
    sidecar_path = config.output_path + ".json"
    sidecar = {
        "clip_model_id": backend.clip_model_id,
        "text_model_id": backend.text_model_id,
        "d_clip": backend.d_clip,
        "d_rb": backend.d_rb,
        "record_count": len(records),
        "skipped": skipped,
    }
    atomic_write(sidecar_path,
                 (json.dumps(sidecar, indent=2) + "\n").encode("utf-8"))
    return ExtractReport(cache_path=config.output_path,
                         sidecar_path=sidecar_path,
                         record_count=len(records), skipped=skipped)


def sanity_win_rate(cache_path: str | os.PathLike) -> float:
    """Fraction of records whose own caption beats the next record's caption
    on cosine(v, c_clip); the rotation by one makes every record both a
    matching and a mismatched case."""
    from .cache import read_svec
    _, _, records = read_svec(cache_path)
    if len(records) < 2:
        raise ValidationError("need at least two records for a sanity check")
    ids = list(records)

    def cos(a, b):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

    wins = 0
    for i, sid in enumerate(ids):
        own = records[sid]
        other = records[ids[(i + 1) % len(ids)]]
        if cos(own.v, own.c_clip) > cos(own.v, other.c_clip):
            wins += 1
    return wins / len(ids)
