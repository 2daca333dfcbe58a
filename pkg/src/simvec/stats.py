"""Evaluation protocols: Kendall rank correlation, pairwise hallucination
accuracy, pairwise caption-preference accuracy, and inference timing.

Both tau variants run in O(n log n) via sorted tie counting plus merge-sort
inversion counting; the test suite checks them against O(n^2) all-pairs
oracles.
"""

from __future__ import annotations

import json
import math
import os
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import EmbeddingSet, _atomic_write
from .errors import ValidationError

PASCAL_CATEGORIES = ("HC", "HI", "HM", "MM")


def _pair_counts(x, y):
    """Return (C, D, n0, n1, n2) for two equal-length sequences, where n1/n2
    are the tied-pair counts within x/y and C/D the concordant/discordant
    counts among pairs untied in both."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("inputs must be equal-length 1-D sequences")
    n = x.shape[0]
    if n < 2:
        raise ValidationError("need at least two observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("inputs must be finite")

    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]

    def tied_pairs(sorted_vals):
        _, counts = np.unique(sorted_vals, return_counts=True)
        return int((counts * (counts - 1) // 2).sum())

    n0 = n * (n - 1) // 2
    n1 = tied_pairs(xs)
    n2 = tied_pairs(np.sort(y))
    # pairs tied in both x and y
    pair_view = np.stack([xs, ys], axis=1)
    _, joint_counts = np.unique(pair_view, axis=0, return_counts=True)
    n3 = int((joint_counts * (joint_counts - 1) // 2).sum())

    from .kendall_kernel import count_inversions
    _, y_ranks = np.unique(ys, return_inverse=True)
    dis = count_inversions(y_ranks.astype(np.int64))

    d = dis
    c = n0 - n1 - n2 + n3 - d
    return c, d, n0, n1, n2


def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> float:
    """Tau-b: (C - D) / sqrt((C + D + Tx)(C + D + Ty)), with Tx/Ty the pairs
    tied only in x / only in y."""
    c, d, n0, n1, n2 = _pair_counts(x, y)
    denom_sq = (n0 - n1) * (n0 - n2)
    if denom_sq == 0:
        raise ValidationError("tau-b undefined: a variable is all ties")
    return (c - d) / math.sqrt(denom_sq)


def kendall_tau_c(x: Sequence[float], y: Sequence[float]) -> float:
    """Tau-c: 2m(C - D) / (n^2 (m - 1)), m = min distinct-value counts."""
    x_arr = np.asarray(x, dtype=np.float64)
    y_arr = np.asarray(y, dtype=np.float64)
    c, d, *_ = _pair_counts(x_arr, y_arr)
    m = min(np.unique(x_arr).size, np.unique(y_arr).size)
    if m < 2:
        raise ValidationError("tau-c undefined: fewer than two distinct values")
    n = x_arr.shape[0]
    return 2 * m * (c - d) / (n * n * (m - 1))


# ---------------------------------------------------------------------------
# pairwise protocols

@dataclass
class FoilItem:
    """A correct/hallucinated candidate pair sharing image and references."""

    id: str
    correct: EmbeddingSet
    foil: EmbeddingSet

    def __post_init__(self):
        if self.correct.n_refs != self.foil.n_refs:
            raise ValidationError(
                f"foil item {self.id!r}: reference counts differ")


@dataclass
class ScoredPair:
    id: str
    correct_score: float
    foil_score: float

    def __post_init__(self):
        if not (math.isfinite(self.correct_score)
                and math.isfinite(self.foil_score)):
            raise ValidationError(f"pair {self.id!r}: non-finite score")


def foil_accuracy(scorer: Callable[[EmbeddingSet], float],
                  items: Sequence[FoilItem], n_refs: int) -> float:
    """Percentage of pairs where the correct caption strictly outscores its
    hallucinated twin; ties count as failures. Both candidates are scored
    against the same first n_refs references."""
    if not items:
        raise ValidationError("foil_accuracy needs at least one pair")
    wins = 0
    for item in items:
        if item.correct.n_refs < n_refs:
            raise ValidationError(
                f"foil item {item.id!r} has {item.correct.n_refs} references, "
                f"protocol needs {n_refs}")
        pair = ScoredPair(item.id,
                          scorer(item.correct.first_refs(n_refs)),
                          scorer(item.foil.first_refs(n_refs)))
        if pair.correct_score > pair.foil_score:
            wins += 1
    return 100.0 * wins / len(items)


@dataclass
class Pascal50sItem:
    """One caption pair with its human majority preference."""

    image_ref: str
    caption_a: str
    caption_b: str
    references: tuple[str, ...]
    category: str
    majority_label: str

    def __post_init__(self):
        if self.category not in PASCAL_CATEGORIES:
            raise ValidationError(f"unknown category {self.category!r}")
        if self.majority_label not in ("A", "B"):
            raise ValidationError(f"majority_label must be A or B")
        if len(self.references) == 0:
            raise ValidationError("references must be non-empty")


def pascal50s_accuracy(scorer: Callable[[str, str, Sequence[str]], float],
                       items: Sequence[Pascal50sItem], refs_per_item: int = 5,
                       seed: int = 0) -> dict[str, float]:
    """Per-category accuracy plus their unweighted mean.

    For each item a seeded RNG samples refs_per_item references (without
    replacement); both captions are scored against the same sampled set via
    scorer(image_ref, caption, references). Ties count as failures.
    """
    if not items:
        raise ValidationError("pascal50s_accuracy needs at least one item")
    rng = np.random.default_rng(seed)
    hits = {c: 0 for c in PASCAL_CATEGORIES}
    totals = {c: 0 for c in PASCAL_CATEGORIES}
    for item in items:
        if refs_per_item > len(item.references):
            raise ValidationError(
                f"item needs {refs_per_item} references, has "
                f"{len(item.references)}")
        idx = rng.choice(len(item.references), size=refs_per_item,
                         replace=False)
        refs = [item.references[i] for i in idx]
        sa = scorer(item.image_ref, item.caption_a, refs)
        sb = scorer(item.image_ref, item.caption_b, refs)
        if sa > sb:
            predicted: Optional[str] = "A"
        elif sb > sa:
            predicted = "B"
        else:
            predicted = None  # tie counts as failure
        totals[item.category] += 1
        if predicted == item.majority_label:
            hits[item.category] += 1
    result: dict[str, float] = {}
    for c in PASCAL_CATEGORIES:
        result[c] = 100.0 * hits[c] / totals[c] if totals[c] else float("nan")
    present = [result[c] for c in PASCAL_CATEGORIES if totals[c]]
    result["mean"] = float(np.mean(present))
    return result


# ---------------------------------------------------------------------------
# timing and reports

@dataclass
class TimingStats:
    count: int
    repetitions: int
    mean_ms: float
    median_ms: float
    p95_ms: float


def bench_inference(scorer: Callable, samples: Sequence,
                    repetitions: int = 3) -> TimingStats:
    """Wall-clock per-sample timing; one untimed warm-up pass first."""
    if not samples:
        raise ValidationError("bench_inference needs at least one sample")
    if repetitions < 1:
        raise ValidationError("repetitions must be >= 1")
    for s in samples:
        scorer(s)
    times_ms: list[float] = []
    for _ in range(repetitions):
        for s in samples:
            t0 = time.perf_counter()
            scorer(s)
            times_ms.append((time.perf_counter() - t0) * 1e3)
    return TimingStats(
        count=len(samples),
        repetitions=repetitions,
        mean_ms=float(np.mean(times_ms)),
        median_ms=float(statistics.median(times_ms)),
        p95_ms=float(np.percentile(times_ms, 95)),
    )


@dataclass
class EvalReport:
    """Serializable result record for one protocol run."""

    protocol: str
    values: dict[str, float]
    sample_count: int
    config: dict = field(default_factory=dict)
    timing: Optional[TimingStats] = None

    def __post_init__(self):
        if self.sample_count <= 0:
            raise ValidationError("sample_count must be positive")

    def to_json(self) -> str:
        obj = {"protocol": self.protocol, "values": self.values,
               "sample_count": self.sample_count, "config": self.config}
        if self.timing is not None:
            obj["timing"] = vars(self.timing)
        return json.dumps(obj, indent=2)

    def write(self, path: str | os.PathLike) -> None:
        _atomic_write(path, (self.to_json() + "\n").encode("utf-8"))

    def summary(self) -> str:
        lines = [f"{'protocol':<16}{self.protocol}",
                 f"{'samples':<16}{self.sample_count}"]
        for k, v in self.values.items():
            lines.append(f"{k:<16}{v:.4f}")
        if self.timing is not None:
            lines.append(f"{'mean_ms':<16}{self.timing.mean_ms:.3f}")
            lines.append(f"{'median_ms':<16}{self.timing.median_ms:.3f}")
            lines.append(f"{'p95_ms':<16}{self.timing.p95_ms:.3f}")
        return "\n".join(lines)
