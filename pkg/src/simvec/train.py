"""Huber-regression training loop with Adam and early stopping on the
validation Kendall tau-c.

Training examples are (EmbeddingSet, human_score) pairs; the caller joins
dataset and embedding cache beforehand.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import EmbeddingSet, _atomic_write
from .errors import ConsistencyError, NumericError, ValidationError
from .model import (MetricConfig, ModelParams, init_params, pipeline_backward,
                    pipeline_forward, score_sample)
from .stats import kendall_tau_c

TrainExample = tuple[EmbeddingSet, float]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 16
    huber_delta: float = 0.5
    max_epochs: int = 50
    patience_epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValidationError("beta1 and beta2 must lie in (0, 1)")
        if self.huber_delta <= 0 or self.learning_rate <= 0:
            raise ValidationError("huber_delta and learning_rate must be > 0")
        if self.batch_size < 1 or self.patience_epochs < 1:
            raise ValidationError("batch_size and patience must be >= 1")
        if self.max_epochs < 0:
            raise ValidationError("max_epochs must be >= 0")


@dataclass
class TrainState:
    params: ModelParams
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    best_tau: float = -math.inf
    epochs_since_improve: int = 0

    @classmethod
    def fresh(cls, params: ModelParams) -> "TrainState":
        return cls(params=params,
                   m={k: np.zeros_like(a) for k, a in params.tensors.items()},
                   v={k: np.zeros_like(a) for k, a in params.tensors.items()})


def huber_loss(y_hat: float, y: float, delta: float) -> tuple[float, float]:
    """Huber loss and its derivative w.r.t. y_hat: quadratic inside
    |e| < delta, linear outside."""
    if not (math.isfinite(y_hat) and math.isfinite(y) and math.isfinite(delta)):
        raise NumericError("huber_loss requires finite inputs")
    if delta <= 0:
        raise ValidationError("huber delta must be > 0")
    e = y_hat - y
    if abs(e) < delta:
        return 0.5 * e * e, e
    return delta * (abs(e) - 0.5 * delta), delta * math.copysign(1.0, e)


def adam_step(state: TrainState, grads: dict[str, np.ndarray],
              cfg: TrainConfig) -> TrainState:
    """Standard bias-corrected Adam update, in place on state.params."""
    if set(grads) != set(state.params.tensors):
        raise ConsistencyError("gradient keys do not match parameter keys")
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in state.params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConsistencyError(f"gradient {name!r} shape {g.shape} != "
                                   f"param shape {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2)
                                              + cfg.adam_epsilon)
    return state


def _check_examples(examples: Sequence[TrainExample], what: str) -> None:
    if not examples:
        raise ValidationError(f"{what} set is empty")
    for _, y in examples:
        if y is None:
            raise ValidationError(f"{what} sample is missing human_score")
        if not (0.0 <= y <= 1.0):
            raise ValidationError(f"{what} human_score {y} outside [0, 1]")


def validation_tau(examples: Sequence[TrainExample],
                   params: ModelParams) -> float:
    scores = [score_sample(e, params) for e, _ in examples]
    targets = [y for _, y in examples]
    return kendall_tau_c(scores, targets)


def train(train_set: Sequence[TrainExample], val_set: Sequence[TrainExample],
          metric_cfg: MetricConfig, cfg: TrainConfig,
          initial: Optional[ModelParams] = None,
          ) -> tuple[ModelParams, list[dict]]:
    """Run seeded mini-batch training; returns (best-tau params, history).

    Per epoch: shuffle, step Adam over batches (last short batch kept, loss
    reduced by mean), then compute tau-c on the validation set. Stops when
    tau-c has not strictly improved for `patience_epochs` epochs.
    """
    _check_examples(train_set, "training")
    if cfg.max_epochs > 0:
        _check_examples(val_set, "validation")
    params = initial.copy() if initial is not None else init_params(
        metric_cfg, cfg.seed)
    state = TrainState.fresh(params)
    best_params = params.copy()
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_set))
        losses: list[float] = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            accum = None
            for e, y in batch:
                y_hat, ptrace = pipeline_forward(e, state.params)
                loss, dloss = huber_loss(y_hat, y, cfg.huber_delta)
                losses.append(loss)
                grads = pipeline_backward(ptrace, dloss / len(batch),
                                          state.params)
                if accum is None:
                    accum = grads
                else:
                    for k, g in grads.items():
                        accum[k] += g
            adam_step(state, accum, cfg)
        tau = validation_tau(val_set, state.params)
        history.append({
            "epoch": epoch,
            "mean_loss": float(np.mean(losses)),
            "val_tau_c": tau,
            "wall_ms": (time.perf_counter() - t0) * 1e3,
        })
        if tau > state.best_tau:
            state.best_tau = tau
            state.epochs_since_improve = 0
            best_params = state.params.copy()
        else:
            state.epochs_since_improve += 1
            if state.epochs_since_improve >= cfg.patience_epochs:
                break
    return best_params, history


def write_history(path: str | os.PathLike, history: list[dict]) -> None:
    _atomic_write(path, (json.dumps(history, indent=2) + "\n").encode("utf-8"))
