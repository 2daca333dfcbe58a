"""Similarity-vector feature extraction and token assembly.

From one sample's embeddings we build four feature groups via Hadamard
products and absolute element-wise differences (the raw candidate and
reference embeddings are deliberately excluded), then project everything to
a common model width and prepend a learned CLS vector.

Naming note: the embedding widths are d_clip / d_rb, while the difference
feature groups are called dd_clip / dd_rb to keep the two apart.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import EmbeddingSet
from .errors import ConfigError, ShapeError, ValidationError

MODE_FULL = "full"
MODE_RAW = "raw_features"
MODE_SINGLE_REF = "single_ref"
MODES = (MODE_FULL, MODE_RAW, MODE_SINGLE_REF)

# width tags used to pick the projection for each token source
CLIP = "clip"
RB = "rb"


@dataclass(frozen=True)
class SimVecConfig:
    d_clip: int = 512
    d_rb: int = 768
    d_model: int = 64
    max_refs: int = 8
    mode: str = MODE_FULL

    def __post_init__(self):
        if self.d_model < 1 or self.max_refs < 1:
            raise ConfigError("d_model and max_refs must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"unknown feature mode {self.mode!r}")


@dataclass
class SimVecFeatures:
    """Feature groups: Hadamard (h_*) and absolute differences (dd_*).

    h_clip[0] pairs the candidate with the image; h_clip[1..N] pair it with
    each reference. The rb-side groups only pair candidate with references.
    """

    h_clip: np.ndarray   # (N+1, d_clip)
    dd_clip: np.ndarray  # (N+1, d_clip)
    h_rb: np.ndarray     # (N, d_rb)
    dd_rb: np.ndarray    # (N, d_rb)

    @property
    def n_refs(self) -> int:
        return self.h_rb.shape[0]


@dataclass
class SimVecTokens:
    """Projected token sequence: CLS at position 0, then the feature groups
    in the order (h_clip, dd_clip, h_rb, dd_rb).

    `rows` keeps the pre-projection source vectors with their width tags so
    the projection gradients can be assembled in `tokenize_backward`.
    """

    tokens: np.ndarray            # (T, d_model)
    source_tags: list[str]
    rows: list[tuple[str, np.ndarray]] = field(default_factory=list)

    def __len__(self) -> int:
        return self.tokens.shape[0]


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two equal-length vectors."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return a * b


def abs_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise absolute difference; symmetric in its arguments."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"abs_diff: shapes {a.shape} and {b.shape} differ")
    return np.abs(a - b)


def extract_sim_vec(e: EmbeddingSet) -> SimVecFeatures:
    """Build the four similarity groups from one sample's embeddings."""
    if e.n_refs < 1:
        raise ValidationError("extract_sim_vec needs at least one reference")
    h_clip = np.vstack([hadamard(e.c_clip, e.v)]
                       + [hadamard(e.c_clip, r) for r in e.r_clip])
    dd_clip = np.vstack([abs_diff(e.c_clip, e.v)]
                        + [abs_diff(e.c_clip, r) for r in e.r_clip])
    h_rb = np.vstack([hadamard(e.c_rb, r) for r in e.r_rb])
    dd_rb = np.vstack([abs_diff(e.c_rb, r) for r in e.r_rb])
    return SimVecFeatures(h_clip=h_clip, dd_clip=dd_clip, h_rb=h_rb, dd_rb=dd_rb)


def feature_rows(e: EmbeddingSet, mode: str) -> list[tuple[str, str, np.ndarray]]:
    """Flatten a sample into (group_tag, width_tag, vector) token sources.

    mode=full uses the similarity groups; mode=raw_features tokenizes the
    input embeddings directly (c_clip, r_clip, c_rb, r_rb, v), bypassing the
    similarity extraction.
    """
    rows: list[tuple[str, str, np.ndarray]] = []
    if mode in (MODE_FULL, MODE_SINGLE_REF):
        f = extract_sim_vec(e)
        rows.append(("h_clip:img", CLIP, f.h_clip[0]))
        for i in range(1, f.h_clip.shape[0]):
            rows.append((f"h_clip:ref{i - 1}", CLIP, f.h_clip[i]))
        rows.append(("dd_clip:img", CLIP, f.dd_clip[0]))
        for i in range(1, f.dd_clip.shape[0]):
            rows.append((f"dd_clip:ref{i - 1}", CLIP, f.dd_clip[i]))
        for i in range(f.h_rb.shape[0]):
            rows.append((f"h_rb:ref{i}", RB, f.h_rb[i]))
        for i in range(f.dd_rb.shape[0]):
            rows.append((f"dd_rb:ref{i}", RB, f.dd_rb[i]))
    elif mode == MODE_RAW:
        rows.append(("raw:c_clip", CLIP, np.asarray(e.c_clip)))
        for i, r in enumerate(e.r_clip):
            rows.append((f"raw:r_clip{i}", CLIP, np.asarray(r)))
        rows.append(("raw:c_rb", RB, np.asarray(e.c_rb)))
        for i, r in enumerate(e.r_rb):
            rows.append((f"raw:r_rb{i}", RB, np.asarray(r)))
        rows.append(("raw:v", CLIP, np.asarray(e.v)))
    else:
        raise ConfigError(f"unknown feature mode {mode!r}")
    return rows


def tokenize(e: EmbeddingSet, projections: dict[str, tuple[np.ndarray, np.ndarray]],
             cls: np.ndarray, config: SimVecConfig) -> SimVecTokens:
    """Project a sample's feature rows to d_model and prepend CLS.

    `projections` maps a width tag ("clip" / "rb") to an (W, b) affine map.
    No positional encodings are added, which makes downstream attention
    invariant to reference permutation.
    """
    if e.n_refs > config.max_refs:
        raise ValidationError(
            f"sample has {e.n_refs} references, config allows {config.max_refs}"
        )
    rows = feature_rows(e, config.mode)
    dtype = cls.dtype
    toks = np.empty((len(rows) + 1, config.d_model), dtype=dtype)
    toks[0] = cls
    tags = ["cls"]
    kept_rows: list[tuple[str, np.ndarray]] = []
    for k, (tag, width, x) in enumerate(rows):
        if width not in projections:
            raise ConfigError(f"no projection for source width {width!r}")
        w, b = projections[width]
        if w.shape[0] != x.shape[0]:
            raise ShapeError(
                f"token {tag!r}: width {x.shape[0]} does not match projection "
                f"input {w.shape[0]}"
            )
        x = x.astype(dtype, copy=False)
        toks[k + 1] = x @ w.astype(dtype, copy=False) + b.astype(dtype, copy=False)
        tags.append(tag)
        kept_rows.append((width, x))
    return SimVecTokens(tokens=toks, source_tags=tags, rows=kept_rows)


def tokenize_backward(d_tokens: np.ndarray, tok: SimVecTokens,
                      projections: dict[str, tuple[np.ndarray, np.ndarray]],
                      ) -> tuple[dict[str, tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Accumulate projection gradients from token gradients.

    Returns ({width_tag: (dW, db)}, d_cls).
    """
    grads = {tag: (np.zeros_like(w), np.zeros_like(b))
             for tag, (w, b) in projections.items()}
    d_cls = np.array(d_tokens[0], dtype=np.float64, copy=True)
    for k, (width, x) in enumerate(tok.rows):
        g = d_tokens[k + 1]
        dw, db = grads[width]
        dw += np.outer(x, g)
        db += g
    return grads, d_cls


def token_count(n_refs: int, mode: str) -> int:
    """Expected sequence length including CLS: 4N+3 full, 2N+4 raw."""
    if mode in (MODE_FULL, MODE_SINGLE_REF):
        return 4 * n_refs + 3
    if mode == MODE_RAW:
        return 2 * n_refs + 4
    raise ConfigError(f"unknown feature mode {mode!r}")
