"""Dataset and embedding data model, file formats, and deterministic stubs.

Datasets are JSON Lines, one caption sample per line. Embedding caches are a
little-endian binary format (magic ``SVEC``) holding one float32 embedding
group per sample id; see `write_cache` for the exact layout.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import FormatError, ShapeError, ValidationError

CACHE_MAGIC = b"SVEC"
CACHE_VERSION = 1

DEFAULT_D_CLIP = 512
DEFAULT_D_RB = 768


@dataclass(frozen=True)
class CaptionSample:
    """One evaluation unit: image ref, candidate text, references, judgment."""

    id: str
    image_ref: str
    candidate: str
    references: tuple[str, ...]
    human_score: Optional[float] = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("sample id must be non-empty")
        if not self.candidate:
            raise ValidationError(f"sample {self.id!r}: candidate must be non-empty")
        if len(self.references) == 0:
            raise ValidationError(f"sample {self.id!r}: references must be non-empty")
        if any(not r for r in self.references):
            raise ValidationError(f"sample {self.id!r}: empty reference text")
        if self.human_score is not None:
            y = float(self.human_score)
            if not (0.0 <= y <= 1.0):
                raise ValidationError(
                    f"sample {self.id!r}: human_score {y} outside [0, 1]"
                )

    @property
    def n_refs(self) -> int:
        return len(self.references)


@dataclass
class EmbeddingSet:
    """The five embedding groups for one sample.

    ``v`` and ``c_clip`` have width d_clip, ``c_rb`` width d_rb; ``r_clip`` is
    an (N, d_clip) array and ``r_rb`` an (N, d_rb) array with the same N.
    """

    v: np.ndarray
    c_clip: np.ndarray
    r_clip: np.ndarray
    c_rb: np.ndarray
    r_rb: np.ndarray

    def __post_init__(self):
        self.v = np.asarray(self.v)
        self.c_clip = np.asarray(self.c_clip)
        self.r_clip = np.atleast_2d(np.asarray(self.r_clip))
        self.c_rb = np.asarray(self.c_rb)
        self.r_rb = np.atleast_2d(np.asarray(self.r_rb))
        d_clip = self.v.shape[-1]
        d_rb = self.c_rb.shape[-1]
        if self.c_clip.shape != (d_clip,):
            raise ShapeError("c_clip width differs from v")
        if self.r_clip.ndim != 2 or self.r_clip.shape[1] != d_clip:
            raise ShapeError("r_clip width differs from v")
        if self.r_rb.ndim != 2 or self.r_rb.shape[1] != d_rb:
            raise ShapeError("r_rb width differs from c_rb")
        if self.r_clip.shape[0] != self.r_rb.shape[0]:
            raise ShapeError("r_clip and r_rb reference counts differ")
        if self.r_clip.shape[0] == 0:
            raise ValidationError("embedding set needs at least one reference")

    @property
    def n_refs(self) -> int:
        return self.r_clip.shape[0]

    @property
    def d_clip(self) -> int:
        return self.v.shape[-1]

    @property
    def d_rb(self) -> int:
        return self.c_rb.shape[-1]

    def normalized(self) -> "EmbeddingSet":
        """Return a copy with every vector scaled to unit L2 norm."""
        def unit(a):
            a = np.asarray(a, dtype=np.float64)
            n = np.linalg.norm(a, axis=-1, keepdims=True)
            if np.any(n == 0):
                raise ValidationError("cannot normalize a zero embedding")
            return a / n

        return EmbeddingSet(
            v=unit(self.v), c_clip=unit(self.c_clip), r_clip=unit(self.r_clip),
            c_rb=unit(self.c_rb), r_rb=unit(self.r_rb),
        )

    def first_refs(self, n: int) -> "EmbeddingSet":
        """Keep only the first n references (deterministic n-ref protocols)."""
        if n < 1 or n > self.n_refs:
            raise ValidationError(f"cannot take {n} of {self.n_refs} references")
        return EmbeddingSet(self.v, self.c_clip, self.r_clip[:n],
                            self.c_rb, self.r_rb[:n])

    def single_ref(self, i: int) -> "EmbeddingSet":
        return EmbeddingSet(self.v, self.c_clip, self.r_clip[i:i + 1],
                            self.c_rb, self.r_rb[i:i + 1])

    def permuted_refs(self, perm: Sequence[int]) -> "EmbeddingSet":
        perm = list(perm)
        if sorted(perm) != list(range(self.n_refs)):
            raise ValidationError("perm must be a permutation of the references")
        return EmbeddingSet(self.v, self.c_clip, self.r_clip[perm],
                            self.c_rb, self.r_rb[perm])


@dataclass
class EmbeddingCache:
    """An id-keyed collection of EmbeddingSets with shared widths."""

    d_clip: int
    d_rb: int
    records: dict[str, EmbeddingSet] = field(default_factory=dict)


def load_dataset(path: str | os.PathLike) -> list[CaptionSample]:
    """Parse a JSON Lines dataset file; unknown fields are ignored."""
    samples: list[CaptionSample] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: line {lineno}: invalid JSON: {exc}")
            if not isinstance(obj, dict):
                raise ValidationError(f"{path}: line {lineno}: expected an object")
            try:
                sample = CaptionSample(
                    id=str(obj["id"]),
                    image_ref=str(obj["image_ref"]),
                    candidate=str(obj["candidate"]),
                    references=tuple(obj["references"]),
                    human_score=obj.get("human_score"),
                )
            except KeyError as exc:
                raise ValidationError(f"{path}: line {lineno}: missing field {exc}")
            except ValidationError as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc}")
            if sample.id in seen:
                raise ValidationError(f"{path}: line {lineno}: duplicate id {sample.id!r}")
            seen.add(sample.id)
            samples.append(sample)
    return samples


def save_dataset(path: str | os.PathLike, samples: Iterable[CaptionSample]) -> None:
    """Write samples as JSON Lines, atomically."""
    lines = []
    for s in samples:
        obj = {"id": s.id, "image_ref": s.image_ref, "candidate": s.candidate,
               "references": list(s.references)}
        if s.human_score is not None:
            obj["human_score"] = s.human_score
        lines.append(json.dumps(obj, ensure_ascii=False))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def normalize_judgment(raw: int) -> float:
    """Map a five-point judgment onto [0, 1] linearly: (raw - 1) / 4."""
    if raw not in (1, 2, 3, 4, 5):
        raise ValidationError(f"judgment {raw!r} outside 1..5")
    return (raw - 1) / 4


def stub_embed(key: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic unit vector standing in for a frozen encoder.

    The (key, seed) pair is hashed with SHA-256 into the key of a Philox
    counter-based generator, so identical inputs yield bit-identical float32
    vectors on any platform.
    """
    if dim < 1:
        raise ValidationError(f"embedding dim must be >= 1, got {dim}")
    digest = hashlib.sha256(
        seed.to_bytes(8, "little", signed=True) + key.encode("utf-8")
    ).digest()
    k0, k1 = struct.unpack("<QQ", digest[:16])
    rng = np.random.Generator(np.random.Philox(key=[k0, k1]))
    vec = rng.standard_normal(dim)
    vec /= np.linalg.norm(vec)
    return vec.astype(np.float32)


def write_cache(path: str | os.PathLike, records: Mapping[str, EmbeddingSet]) -> None:
    """Serialize embeddings: SVEC magic, u32 version / d_clip / d_rb header,
    then per record u32 id-length, id bytes, u32 N, and the float32 arrays
    v, c_clip, N x r_clip, c_rb, N x r_rb, all little-endian.
    """
    if not records:
        raise ValidationError("cannot write an empty cache")
    first = next(iter(records.values()))
    d_clip, d_rb = first.d_clip, first.d_rb
    out = bytearray()
    out += CACHE_MAGIC
    out += struct.pack("<III", CACHE_VERSION, d_clip, d_rb)
    for sid, e in records.items():
        if e.d_clip != d_clip or e.d_rb != d_rb:
            raise FormatError(
                f"record {sid!r} dims ({e.d_clip}, {e.d_rb}) differ from "
                f"header ({d_clip}, {d_rb})"
            )
        id_bytes = sid.encode("utf-8")
        out += struct.pack("<I", len(id_bytes))
        out += id_bytes
        out += struct.pack("<I", e.n_refs)
        for arr in (e.v, e.c_clip, e.r_clip, e.c_rb, e.r_rb):
            out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    _atomic_write(path, bytes(out))


def read_cache(path: str | os.PathLike, normalize: bool = True) -> EmbeddingCache:
    """Read a cache file, validating magic, version, and per-record dims.

    Embeddings are L2-normalized on load unless ``normalize=False``; pass
    False to get the stored floats bit-exactly.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 16 or buf[:4] != CACHE_MAGIC:
        raise FormatError(f"{path}: not an embedding cache (bad magic)")
    version, d_clip, d_rb = struct.unpack_from("<III", buf, 4)
    if version != CACHE_VERSION:
        raise FormatError(f"{path}: unsupported cache version {version}")
    cache = EmbeddingCache(d_clip=d_clip, d_rb=d_rb)
    pos = 16

    def take(nbytes: int) -> memoryview:
        nonlocal pos
        if pos + nbytes > len(buf):
            raise FormatError(f"{path}: truncated cache file at byte {pos}")
        view = memoryview(buf)[pos:pos + nbytes]
        pos += nbytes
        return view

    def take_f32(count: int) -> np.ndarray:
        return np.frombuffer(take(4 * count), dtype="<f4").copy()

    while pos < len(buf):
        (id_len,) = struct.unpack("<I", take(4))
        sid = bytes(take(id_len)).decode("utf-8")
        (n,) = struct.unpack("<I", take(4))
        if n == 0:
            raise FormatError(f"{path}: record {sid!r} has zero references")
        e = EmbeddingSet(
            v=take_f32(d_clip),
            c_clip=take_f32(d_clip),
            r_clip=take_f32(n * d_clip).reshape(n, d_clip),
            c_rb=take_f32(d_rb),
            r_rb=take_f32(n * d_rb).reshape(n, d_rb),
        )
        if sid in cache.records:
            raise FormatError(f"{path}: duplicate record id {sid!r}")
        cache.records[sid] = e.normalized() if normalize else e
    return cache


def split_dataset(samples: Sequence, ratios: tuple[float, float, float],
                  seed: int) -> tuple[list, list, list]:
    """Seeded shuffle, then partition at cumulative floor boundaries.

    Boundaries are floor(r1*n) and floor((r1+r2)*n), which reproduces the
    usual published split counts (e.g. 32,978 at 0.8/0.1/0.1 gives
    26,382 / 3,298 / 3,298).
    """
    if len(samples) == 0:
        raise ValidationError("cannot split an empty dataset")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"split ratios {ratios} do not sum to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    shuffled = [samples[i] for i in order]
    n = len(samples)
    b1 = math.floor(ratios[0] * n)
    b2 = math.floor((ratios[0] + ratios[1]) * n)
    return shuffled[:b1], shuffled[b1:b2], shuffled[b2:]


def _atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Write to a sibling temp file then rename, so readers never see a
    partial file."""
    path = os.fspath(path)
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
