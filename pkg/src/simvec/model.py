"""Transformer encoder scorer with exact manual backpropagation.

Architecture: pre-norm encoder layers (layer norm before attention and FFN),
GELU activations, CLS pooling, a small MLP head, and a final sigmoid. Two
additional scorer variants exist for ablation runs: an MLP over mean-pooled
tokens (``mlp_ablation``) and per-reference scoring folded with max/mean
(``aggregate``).

Training math runs in float64; inference also works in float32 (cast the
params with `ModelParams.astype`).
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf

from .data import EmbeddingSet, _atomic_write
from .errors import (ConfigError, ConsistencyError, FormatError, NumericError,
                     ShapeError, ValidationError)
from .features import (MODE_FULL, SimVecConfig, SimVecTokens, tokenize,
                       tokenize_backward)

CHECKPOINT_MAGIC = b"SVTM"
CHECKPOINT_VERSION = 1

LN_EPS = 1e-5

ARCH_TRANSFORMER = "transformer"
ARCH_MLP = "mlp_ablation"
AGG_NONE = "none"
AGG_MAX = "max"
AGG_MEAN = "mean"


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_layers: int = 3
    n_heads: int = 4
    ffn_mult: int = 4
    head_hidden: int = 64
    arch: str = ARCH_TRANSFORMER
    aggregate: str = AGG_NONE

    def __post_init__(self):
        if min(self.d_model, self.n_layers, self.n_heads,
               self.ffn_mult, self.head_hidden) < 1:
            raise ConfigError("all model dimensions must be positive")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.arch not in (ARCH_TRANSFORMER, ARCH_MLP):
            raise ConfigError(f"unknown arch {self.arch!r}")
        if self.aggregate not in (AGG_NONE, AGG_MAX, AGG_MEAN):
            raise ConfigError(f"unknown aggregate {self.aggregate!r}")


@dataclass(frozen=True)
class MetricConfig:
    """Full scoring configuration: feature side plus model side."""

    simvec: SimVecConfig = field(default_factory=SimVecConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.simvec.d_model != self.model.d_model:
            raise ConfigError("simvec.d_model and model.d_model disagree")


@dataclass
class ModelParams:
    """All trainable tensors, keyed by name in a fixed canonical order."""

    cfg: MetricConfig
    tensors: dict[str, np.ndarray]

    @property
    def projections(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        t = self.tensors
        return {"clip": (t["proj_clip_w"], t["proj_clip_b"]),
                "rb": (t["proj_rb_w"], t["proj_rb_b"])}

    @property
    def cls(self) -> np.ndarray:
        return self.tensors["cls"]

    def param_count(self) -> int:
        return sum(int(a.size) for a in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.cfg,
                           {k: v.astype(dtype) for k, v in self.tensors.items()})


def param_shapes(cfg: MetricConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Canonical (name, shape, kind) list; kind drives initialization."""
    d = cfg.model.d_model
    sv = cfg.simvec
    out: list[tuple[str, tuple[int, ...], str]] = [
        ("proj_clip_w", (sv.d_clip, d), "weight"),
        ("proj_clip_b", (d,), "bias"),
        ("proj_rb_w", (sv.d_rb, d), "weight"),
        ("proj_rb_b", (d,), "bias"),
        ("cls", (d,), "cls"),
    ]
    if cfg.model.arch == ARCH_TRANSFORMER:
        f = cfg.model.ffn_mult * d
        for l in range(cfg.model.n_layers):
            p = f"L{l}."
            out += [
                (p + "ln1_g", (d,), "gamma"), (p + "ln1_b", (d,), "bias"),
                (p + "wq", (d, d), "weight"), (p + "bq", (d,), "bias"),
                (p + "wk", (d, d), "weight"), (p + "bk", (d,), "bias"),
                (p + "wv", (d, d), "weight"), (p + "bv", (d,), "bias"),
                (p + "wo", (d, d), "weight"), (p + "bo", (d,), "bias"),
                (p + "ln2_g", (d,), "gamma"), (p + "ln2_b", (d,), "bias"),
                (p + "ffn_w1", (d, f), "weight"), (p + "ffn_b1", (f,), "bias"),
                (p + "ffn_w2", (f, d), "weight"), (p + "ffn_b2", (d,), "bias"),
            ]
    hh = cfg.model.head_hidden
    out += [("head_w1", (d, hh), "weight"), ("head_b1", (hh,), "bias")]
    if cfg.model.arch == ARCH_MLP:
        # ablation head gets a second hidden layer
        out += [("head_wm", (hh, hh), "weight"), ("head_bm", (hh,), "bias")]
    out += [("head_w2", (hh, 1), "weight"), ("head_b2", (1,), "bias")]
    return out


def param_count(cfg: MetricConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in param_shapes(cfg))


def init_params(cfg: MetricConfig, seed: int) -> ModelParams:
    """Seeded initialization: weights ~ N(0, 1/fan_in), biases zero,
    layer-norm scale one, CLS ~ N(0, 0.02^2)."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape, kind in param_shapes(cfg):
        if kind == "weight":
            fan_in = shape[0]
            tensors[name] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape)
        elif kind == "cls":
            tensors[name] = rng.normal(0.0, 0.02, shape)
        elif kind == "gamma":
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(cfg, tensors)


# ---------------------------------------------------------------------------
# primitives

def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    return (0.5 * (1.0 + erf(x / math.sqrt(2.0)))
            + x * np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(LN_EPS, dtype=x.dtype))
    xhat = (x - mu) * inv_std
    return xhat * g + b, xhat, inv_std


def _layer_norm_backward(dy, xhat, inv_std, g):
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - m1 - xhat * m2)
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    return dx, dg, db


def _softmax(s: np.ndarray) -> np.ndarray:
    # max-subtraction for stability
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# forward / backward

@dataclass
class ForwardTrace:
    """Intermediate activations from one forward pass, kept for backward."""

    params: ModelParams
    x0: np.ndarray
    layers: list[dict]
    head: dict
    score: float

    @property
    def attention_probs(self) -> list[np.ndarray]:
        return [layer["P"] for layer in self.layers]


def forward(tokens, params: ModelParams) -> tuple[float, ForwardTrace]:
    """Score a token sequence; returns (score in (0,1), trace)."""
    x = tokens.tokens if isinstance(tokens, SimVecTokens) else np.asarray(tokens)
    cfg = params.cfg.model
    if x.ndim != 2 or x.shape[1] != cfg.d_model:
        raise ShapeError(f"tokens shape {x.shape} incompatible with "
                         f"d_model={cfg.d_model}")
    if x.shape[0] < 2:
        raise ValidationError("token sequence must have length >= 2")
    t = params.tensors
    if cfg.arch == ARCH_MLP:
        return _forward_mlp(x, params)

    nh, d = cfg.n_heads, cfg.d_model
    dh = d // nh
    scale = 1.0 / math.sqrt(dh)
    x0 = x
    layers: list[dict] = []
    for l in range(cfg.n_layers):
        p = f"L{l}."
        a, xhat1, inv1 = _layer_norm(x, t[p + "ln1_g"], t[p + "ln1_b"])
        q = a @ t[p + "wq"] + t[p + "bq"]
        k = a @ t[p + "wk"] + t[p + "bk"]
        v = a @ t[p + "wv"] + t[p + "bv"]
        T = x.shape[0]
        q2 = q.reshape(T, nh, dh).transpose(1, 0, 2)
        k2 = k.reshape(T, nh, dh).transpose(1, 0, 2)
        v2 = v.reshape(T, nh, dh).transpose(1, 0, 2)
        s = (q2 @ k2.transpose(0, 2, 1)) * scale
        prob = _softmax(s)
        o2 = prob @ v2
        o = o2.transpose(1, 0, 2).reshape(T, d)
        attn_out = o @ t[p + "wo"] + t[p + "bo"]
        x1 = x + attn_out
        b_in, xhat2, inv2 = _layer_norm(x1, t[p + "ln2_g"], t[p + "ln2_b"])
        z1 = b_in @ t[p + "ffn_w1"] + t[p + "ffn_b1"]
        h = _gelu(z1)
        ffn_out = h @ t[p + "ffn_w2"] + t[p + "ffn_b2"]
        x2 = x1 + ffn_out
        if not np.all(np.isfinite(x2)):
            raise NumericError(f"non-finite activation in encoder layer {l}")
        layers.append(dict(x_in=x, a=a, xhat1=xhat1, inv1=inv1,
                           q2=q2, k2=k2, v2=v2, P=prob, o=o,
                           x1=x1, xhat2=xhat2, inv2=inv2, b_in=b_in,
                           z1=z1, h=h))
        x = x2

    c = x[0]
    z1 = c @ t["head_w1"] + t["head_b1"]
    a1 = _gelu(z1)
    z2 = float(a1 @ t["head_w2"][:, 0] + t["head_b2"][0])
    if not math.isfinite(z2):
        raise NumericError("non-finite activation in head")
    score = _sigmoid(z2)
    head = dict(c=c, z1=z1, a1=a1, z2=z2, x_final=x)
    return score, ForwardTrace(params=params, x0=x0, layers=layers,
                               head=head, score=score)


def _forward_mlp(x: np.ndarray, params: ModelParams):
    """Ablation scorer: mean-pool the non-CLS tokens, then a 2-hidden-layer
    MLP head. Token order is irrelevant by construction."""
    t = params.tensors
    pool = x[1:].mean(axis=0)
    z1 = pool @ t["head_w1"] + t["head_b1"]
    a1 = _gelu(z1)
    zm = a1 @ t["head_wm"] + t["head_bm"]
    am = _gelu(zm)
    z2 = float(am @ t["head_w2"][:, 0] + t["head_b2"][0])
    if not math.isfinite(z2):
        raise NumericError("non-finite activation in head")
    score = _sigmoid(z2)
    head = dict(pool=pool, z1=z1, a1=a1, zm=zm, am=am, z2=z2)
    return score, ForwardTrace(params=params, x0=x, layers=[], head=head,
                               score=score)


def backward(trace: ForwardTrace, dscore: float, params: ModelParams
             ) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact reverse-mode gradients of (dscore * score) w.r.t. the encoder
    and head tensors plus the input tokens.

    Returns (grads keyed like params.tensors minus the projection/cls
    entries, d_tokens). Projection and CLS gradients are assembled by the
    caller from d_tokens (see `features.tokenize_backward`).
    """
    if trace.params is not params:
        raise ConsistencyError("trace was produced with different params")
    t = params.tensors
    cfg = params.cfg.model
    grads: dict[str, np.ndarray] = {}

    s = trace.score
    dz2 = dscore * s * (1.0 - s)

    if cfg.arch == ARCH_MLP:
        h = trace.head
        grads["head_b2"] = np.array([dz2])
        grads["head_w2"] = (h["am"] * dz2)[:, None]
        dam = dz2 * t["head_w2"][:, 0]
        dzm = dam * _gelu_grad(h["zm"])
        grads["head_bm"] = dzm
        grads["head_wm"] = np.outer(h["a1"], dzm)
        da1 = dzm @ t["head_wm"].T
        dz1 = da1 * _gelu_grad(h["z1"])
        grads["head_b1"] = dz1
        grads["head_w1"] = np.outer(h["pool"], dz1)
        dpool = dz1 @ t["head_w1"].T
        d_tokens = np.zeros_like(trace.x0)
        d_tokens[1:] = dpool / (trace.x0.shape[0] - 1)
        return grads, d_tokens

    hd = trace.head
    grads["head_b2"] = np.array([dz2])
    grads["head_w2"] = (hd["a1"] * dz2)[:, None]
    da1 = dz2 * t["head_w2"][:, 0]
    dz1 = da1 * _gelu_grad(hd["z1"])
    grads["head_b1"] = dz1
    grads["head_w1"] = np.outer(hd["c"], dz1)
    dc = dz1 @ t["head_w1"].T

    dx = np.zeros_like(hd["x_final"])
    dx[0] = dc

    nh, d = cfg.n_heads, cfg.d_model
    dh = d // nh
    scale = 1.0 / math.sqrt(dh)
    for l in range(cfg.n_layers - 1, -1, -1):
        p = f"L{l}."
        tr = trace.layers[l]
        T = tr["x_in"].shape[0]
        # FFN block: x2 = x1 + gelu(LN2(x1) @ w1 + b1) @ w2 + b2
        dffn_out = dx
        grads[p + "ffn_b2"] = dffn_out.sum(axis=0)
        grads[p + "ffn_w2"] = tr["h"].T @ dffn_out
        dhid = dffn_out @ t[p + "ffn_w2"].T
        dz1l = dhid * _gelu_grad(tr["z1"])
        grads[p + "ffn_b1"] = dz1l.sum(axis=0)
        grads[p + "ffn_w1"] = tr["b_in"].T @ dz1l
        db_in = dz1l @ t[p + "ffn_w1"].T
        dx1_ln, dg2, db2 = _layer_norm_backward(db_in, tr["xhat2"], tr["inv2"],
                                                t[p + "ln2_g"])
        grads[p + "ln2_g"] = dg2
        grads[p + "ln2_b"] = db2
        dx1 = dx + dx1_ln
        # attention block: x1 = x_in + Attn(LN1(x_in)) @ wo + bo
        dattn_out = dx1
        grads[p + "bo"] = dattn_out.sum(axis=0)
        grads[p + "wo"] = tr["o"].T @ dattn_out
        do = dattn_out @ t[p + "wo"].T
        do2 = do.reshape(T, nh, dh).transpose(1, 0, 2)
        dprob = do2 @ tr["v2"].transpose(0, 2, 1)
        dv2 = tr["P"].transpose(0, 2, 1) @ do2
        ds = tr["P"] * (dprob - (dprob * tr["P"]).sum(axis=-1, keepdims=True))
        dq2 = (ds @ tr["k2"]) * scale
        dk2 = (ds.transpose(0, 2, 1) @ tr["q2"]) * scale
        dq = dq2.transpose(1, 0, 2).reshape(T, d)
        dk = dk2.transpose(1, 0, 2).reshape(T, d)
        dv = dv2.transpose(1, 0, 2).reshape(T, d)
        a = tr["a"]
        grads[p + "bq"] = dq.sum(axis=0)
        grads[p + "wq"] = a.T @ dq
        grads[p + "bk"] = dk.sum(axis=0)
        grads[p + "wk"] = a.T @ dk
        grads[p + "bv"] = dv.sum(axis=0)
        grads[p + "wv"] = a.T @ dv
        da = dq @ t[p + "wq"].T + dk @ t[p + "wk"].T + dv @ t[p + "wv"].T
        dx_ln, dg1, db1 = _layer_norm_backward(da, tr["xhat1"], tr["inv1"],
                                               t[p + "ln1_g"])
        grads[p + "ln1_g"] = dg1
        grads[p + "ln1_b"] = db1
        dx = dx1 + dx_ln

    return grads, dx


# ---------------------------------------------------------------------------
# sample-level scoring pipeline

@dataclass
class PipelineTrace:
    """Traces for one scored sample, covering the aggregate variants."""

    toks: list[SimVecTokens]
    traces: list[ForwardTrace]
    ref_scores: list[float]
    score: float


def pipeline_forward(e: EmbeddingSet, params: ModelParams) -> tuple[float, PipelineTrace]:
    """Tokenize a sample and run the configured scorer over it."""
    cfg = params.cfg
    proj = params.projections
    if cfg.model.aggregate == AGG_NONE:
        tok = tokenize(e, proj, params.cls, cfg.simvec)
        score, trace = forward(tok, params)
        return score, PipelineTrace([tok], [trace], [score], score)
    toks, traces, scores = [], [], []
    for i in range(e.n_refs):
        tok = tokenize(e.single_ref(i), proj, params.cls, cfg.simvec)
        s, trace = forward(tok, params)
        toks.append(tok)
        traces.append(trace)
        scores.append(s)
    if cfg.model.aggregate == AGG_MAX:
        score = float(np.max(scores))
    else:
        score = float(np.mean(scores))
    return score, PipelineTrace(toks, traces, scores, score)


def pipeline_backward(ptrace: PipelineTrace, dscore: float,
                      params: ModelParams) -> dict[str, np.ndarray]:
    """Gradients of (dscore * sample score) w.r.t. every tensor in params."""
    cfg = params.cfg
    total: dict[str, np.ndarray] = {name: np.zeros(shape)
                                    for name, shape, _ in param_shapes(cfg)}
    n = len(ptrace.traces)
    if cfg.model.aggregate == AGG_NONE:
        weights = [dscore]
    elif cfg.model.aggregate == AGG_MAX:
        weights = [0.0] * n
        weights[int(np.argmax(ptrace.ref_scores))] = dscore
    else:
        weights = [dscore / n] * n
    for tok, trace, w in zip(ptrace.toks, ptrace.traces, weights):
        if w == 0.0:
            continue
        grads, d_tokens = backward(trace, w, params)
        proj_grads, d_cls = tokenize_backward(d_tokens, tok, params.projections)
        for name, g in grads.items():
            total[name] += g
        total["cls"] += d_cls
        total["proj_clip_w"] += proj_grads["clip"][0]
        total["proj_clip_b"] += proj_grads["clip"][1]
        total["proj_rb_w"] += proj_grads["rb"][0]
        total["proj_rb_b"] += proj_grads["rb"][1]
    return total


def score_sample(e: EmbeddingSet, params: ModelParams) -> float:
    """Score one sample under the params' configuration."""
    score, _ = pipeline_forward(e, params)
    return score


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(params: ModelParams, path: str | os.PathLike) -> None:
    """Write magic, version, a length-prefixed JSON config blob, then every
    tensor as little-endian float32 in canonical order."""
    shapes = param_shapes(params.cfg)
    blob = json.dumps({
        "simvec": asdict(params.cfg.simvec),
        "model": asdict(params.cfg.model),
        "tensors": [{"name": n, "shape": list(s)} for n, s, _ in shapes],
    }).encode("utf-8")
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<II", CHECKPOINT_VERSION, len(blob))
    out += blob
    for name, shape, _ in shapes:
        arr = params.tensors[name]
        if arr.shape != shape:
            raise FormatError(f"tensor {name!r} has shape {arr.shape}, "
                              f"config implies {shape}")
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    _atomic_write(path, bytes(out))


def load_checkpoint(path: str | os.PathLike) -> ModelParams:
    """Read a checkpoint; tensors come back as float64."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12 or buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a model checkpoint (bad magic)")
    version, blob_len = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if len(buf) < 12 + blob_len:
        raise FormatError(f"{path}: truncated config blob")
    try:
        meta = json.loads(buf[12:12 + blob_len].decode("utf-8"))
        cfg = MetricConfig(simvec=SimVecConfig(**meta["simvec"]),
                           model=ModelConfig(**meta["model"]))
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad config blob: {exc}")
    shapes = param_shapes(cfg)
    listed = [(t["name"], tuple(t["shape"])) for t in meta["tensors"]]
    if listed != [(n, s) for n, s, _ in shapes]:
        raise FormatError(f"{path}: tensor list disagrees with config")
    pos = 12 + blob_len
    tensors: dict[str, np.ndarray] = {}
    for name, shape, _ in shapes:
        count = int(np.prod(shape))
        end = pos + 4 * count
        if end > len(buf):
            raise FormatError(f"{path}: truncated tensor data at {name!r}")
        tensors[name] = (np.frombuffer(buf, dtype="<f4", count=count, offset=pos)
                         .astype(np.float64).reshape(shape))
        pos = end
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return ModelParams(cfg, tensors)
