"""Synthetic dataset generator for desk-scale runs.

Latent rule: each image gets a unit latent direction per encoder side. A
candidate of quality q in (0, 1) is embedded at q*latent + (1-q)*noise with
the noise orthogonalized against the latent, so cosine(c_clip, v) =
q / sqrt(q^2 + (1-q)^2) is strictly increasing in q. The human score is an
affine sigmoid of that cosine. Correct/foil pairs draw q from disjoint
ranges, so the latent rule ranks correct above foil in every pair.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .data import (CaptionSample, EmbeddingSet, _atomic_write, save_dataset,
                   stub_embed, write_cache)
from .errors import ValidationError

Q_CORRECT = (0.65, 0.95)
Q_FOIL = (0.05, 0.35)
REF_QUALITY = 0.9

_COS_MID = 1.0 / math.sqrt(2.0)  # cosine at q = 0.5
_SLOPE = 8.0


def latent_score(cos: float) -> float:
    """Human-score surrogate: affine sigmoid of the candidate-image cosine."""
    return 1.0 / (1.0 + math.exp(-_SLOPE * (cos - _COS_MID)))


def quality_to_cos(q: float) -> float:
    return q / math.hypot(q, 1.0 - q)


@dataclass
class SyntheticSet:
    samples: list[CaptionSample]
    records: dict[str, EmbeddingSet]
    foil_pairs: list[dict]
    pascal_items: list[dict]


def _unit(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a)


def _orth_noise(key: str, against: np.ndarray, dim: int, seed: int) -> np.ndarray:
    n = stub_embed(key, dim, seed).astype(np.float64)
    n = n - (n @ against) * against
    return _unit(n)


def _blend(latent: np.ndarray, q: float, noise: np.ndarray) -> np.ndarray:
    return _unit(q * latent + (1.0 - q) * noise).astype(np.float32)


def generate_synthetic(count: int, seed: int, n_refs: int = 4,
                       d_clip: int = 512, d_rb: int = 768) -> SyntheticSet:
    """Build `count` samples (paired correct/foil per image) with embeddings,
    judgments from the latent rule, and foil/pascal protocol files."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    rng = np.random.default_rng(seed)
    samples: list[CaptionSample] = []
    records: dict[str, EmbeddingSet] = {}
    foil_pairs: list[dict] = []
    pascal_items: list[dict] = []

    n_images = (count + 1) // 2
    for i in range(n_images):
        img = f"img{i:06d}"
        v = stub_embed(img, d_clip, seed).astype(np.float64)
        t_rb = stub_embed(img + "#rb", d_rb, seed).astype(np.float64)

        ref_texts = tuple(f"reference {j} describing {img}"
                          for j in range(n_refs))
        r_clip = np.vstack([
            _blend(v, REF_QUALITY, _orth_noise(f"{img}#refc{j}", v, d_clip, seed))
            for j in range(n_refs)])
        r_rb = np.vstack([
            _blend(t_rb, REF_QUALITY,
                   _orth_noise(f"{img}#refr{j}", t_rb, d_rb, seed))
            for j in range(n_refs)])

        roles = [("a", True)]
        if 2 * i + 1 < count:
            roles.append(("b", False))
        pair_ids = {}
        pair_scores = {}
        for suffix, is_correct in roles:
            sid = f"s{i:06d}{suffix}"
            lo, hi = Q_CORRECT if is_correct else Q_FOIL
            q = float(rng.uniform(lo, hi))
            c_clip = _blend(v, q, _orth_noise(f"{sid}#nc", v, d_clip, seed))
            c_rb = _blend(t_rb, q, _orth_noise(f"{sid}#nr", t_rb, d_rb, seed))
            y = latent_score(quality_to_cos(q))
            kind = "faithful" if is_correct else "hallucinated"
            samples.append(CaptionSample(
                id=sid, image_ref=img,
                candidate=f"a synthetic {kind} caption of {img} (q={q:.4f})",
                references=ref_texts, human_score=y))
            records[sid] = EmbeddingSet(
                v=v.astype(np.float32), c_clip=c_clip, r_clip=r_clip,
                c_rb=c_rb, r_rb=r_rb)
            pair_ids[suffix] = sid
            pair_scores[suffix] = y
        if len(roles) == 2:
            # generator's own oracle pass over the latent rule
            assert pair_scores["a"] > pair_scores["b"], "latent rule violated"
            foil_pairs.append({"id": f"p{i:06d}",
                               "correct_id": pair_ids["a"],
                               "foil_id": pair_ids["b"]})
            swap = i % 2 == 1
            a_id, b_id = ((pair_ids["b"], pair_ids["a"]) if swap
                          else (pair_ids["a"], pair_ids["b"]))
            pascal_items.append({
                "id": f"q{i:06d}", "a_id": a_id, "b_id": b_id,
                "category": ("HC", "HI", "HM", "MM")[i % 4],
                "majority_label": "B" if swap else "A",
            })
    return SyntheticSet(samples, records, foil_pairs, pascal_items)


def write_synthetic(out_dir: str | os.PathLike, synth: SyntheticSet) -> dict[str, str]:
    """Write dataset.jsonl, cache.svec, foil_pairs.jsonl, pascal.jsonl."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "dataset": os.path.join(out_dir, "dataset.jsonl"),
        "cache": os.path.join(out_dir, "cache.svec"),
        "foil_pairs": os.path.join(out_dir, "foil_pairs.jsonl"),
        "pascal": os.path.join(out_dir, "pascal.jsonl"),
    }
    save_dataset(paths["dataset"], synth.samples)
    write_cache(paths["cache"], synth.records)
    _atomic_write(paths["foil_pairs"],
                  _jsonl(synth.foil_pairs).encode("utf-8"))
    _atomic_write(paths["pascal"], _jsonl(synth.pascal_items).encode("utf-8"))
    return paths


def _jsonl(rows: list[dict]) -> str:
    return "".join(json.dumps(r) + "\n" for r in rows)
