"""Command-line surface: synthetic data generation, training, scoring,
evaluation protocols, and benchmarking.

Option precedence is CLI flag > JSON config file (--config) > built-in
default. All randomness funnels through --seed. Output files are written
atomically; any validation error exits nonzero without partial output.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor

from .data import (EmbeddingCache, load_dataset, read_cache, split_dataset,
                   _atomic_write)
from .errors import (ConfigError, FormatError, NumericError, ValidationError)
from .features import MODE_FULL, MODE_RAW, SimVecConfig
from .model import (ARCH_MLP, ARCH_TRANSFORMER, AGG_MAX, AGG_MEAN, AGG_NONE,
                    MetricConfig, ModelConfig, load_checkpoint,
                    save_checkpoint, score_sample)
from .stats import (EvalReport, FoilItem, Pascal50sItem, bench_inference,
                    foil_accuracy, kendall_tau_b, kendall_tau_c,
                    pascal50s_accuracy)
from .synth import generate_synthetic, write_synthetic
from .train import TrainConfig, train, write_history

MODES = ("full", "raw_features", "mlp_ablation", "aggregate:max",
         "aggregate:mean")

PROFILES = {
    "desk": dict(d_model=64, n_layers=3, n_heads=4, ffn_mult=4,
                 head_hidden=64),
    "full": dict(d_model=512, n_layers=3, n_heads=8, ffn_mult=4,
                 head_hidden=512),
}


def build_metric_config(mode: str, profile: str, d_clip: int, d_rb: int,
                        max_refs: int) -> MetricConfig:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {MODES}")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    p = PROFILES[profile]
    feature_mode = MODE_RAW if mode == "raw_features" else MODE_FULL
    arch = ARCH_MLP if mode == "mlp_ablation" else ARCH_TRANSFORMER
    if mode == "aggregate:max":
        aggregate = AGG_MAX
    elif mode == "aggregate:mean":
        aggregate = AGG_MEAN
    else:
        aggregate = AGG_NONE
    return MetricConfig(
        simvec=SimVecConfig(d_clip=d_clip, d_rb=d_rb, d_model=p["d_model"],
                            max_refs=max_refs, mode=feature_mode),
        model=ModelConfig(arch=arch, aggregate=aggregate,
                          **{k: p[k] for k in ("d_model", "n_layers",
                                               "n_heads", "ffn_mult",
                                               "head_hidden")}),
    )


def join_dataset_cache(samples, cache: EmbeddingCache):
    """Pair each sample with its cached embeddings; name the first missing
    id on mismatch."""
    joined = []
    for s in samples:
        if s.id not in cache.records:
            raise ValidationError(f"sample id {s.id!r} missing from cache")
        joined.append((s, cache.records[s.id]))
    return joined


class _Options:
    """Flag > config-file > default resolution for one invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file_cfg = {}
        cfg_path = getattr(args, "config", None)
        if cfg_path:
            try:
                with open(cfg_path, "r", encoding="utf-8") as fh:
                    self.file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{cfg_path}: invalid JSON: {exc}")
            if not isinstance(self.file_cfg, dict):
                raise ValidationError(f"{cfg_path}: config must be an object")

    def get(self, name: str, default):
        flag = getattr(self.args, name.replace("-", "_"), None)
        if flag is not None:
            return flag
        if name in self.file_cfg:
            return self.file_cfg[name]
        return default


def cmd_gen_synth(args) -> int:
    opt = _Options(args)
    synth = generate_synthetic(
        count=opt.get("count", 1000),
        seed=opt.get("seed", 0),
        n_refs=opt.get("n-refs", 4),
        d_clip=opt.get("d-clip", 512),
        d_rb=opt.get("d-rb", 768),
    )
    paths = write_synthetic(opt.get("out", "."), synth)
    print(f"wrote {len(synth.samples)} samples, {len(synth.foil_pairs)} foil "
          f"pairs, {len(synth.pascal_items)} pascal items")
    for kind, path in paths.items():
        print(f"  {kind}: {path}")
    return 0


def cmd_train(args) -> int:
    opt = _Options(args)
    samples = load_dataset(args.dataset)
    cache = read_cache(args.cache, normalize=not opt.get("raw-embeddings", False))
    seed = opt.get("seed", 0)
    joined = join_dataset_cache(samples, cache)
    max_refs = max(s.n_refs for s, _ in joined)
    metric_cfg = build_metric_config(opt.get("mode", "full"),
                                     opt.get("profile", "desk"),
                                     cache.d_clip, cache.d_rb, max_refs)
    train_part, val_part, _ = split_dataset(joined, (0.8, 0.1, 0.1), seed)
    examples = lambda part: [(e, s.human_score) for s, e in part]
    tcfg = TrainConfig(
        learning_rate=opt.get("lr", 5e-6),
        batch_size=opt.get("batch-size", 16),
        huber_delta=opt.get("huber-delta", 0.5),
        max_epochs=opt.get("epochs", 50),
        patience_epochs=opt.get("patience", 1),
        seed=seed,
    )
    best, history = train(examples(train_part), examples(val_part),
                          metric_cfg, tcfg)
    save_checkpoint(best, args.checkpoint)
    if args.history:
        write_history(args.history, history)
    best_tau = max((h["val_tau_c"] for h in history), default=float("nan"))
    print(f"trained {len(history)} epochs, best val tau_c {best_tau:.4f}")
    print(f"checkpoint: {args.checkpoint}")
    return 0


def _load_scoring_inputs(args, opt):
    params = load_checkpoint(args.checkpoint)
    samples = load_dataset(args.dataset)
    cache = read_cache(args.cache, normalize=not opt.get("raw-embeddings", False))
    if (cache.d_clip, cache.d_rb) != (params.cfg.simvec.d_clip,
                                      params.cfg.simvec.d_rb):
        raise ConfigError(
            f"cache dims ({cache.d_clip}, {cache.d_rb}) do not match "
            f"checkpoint ({params.cfg.simvec.d_clip}, {params.cfg.simvec.d_rb})")
    return params, samples, cache


def cmd_score(args) -> int:
    opt = _Options(args)
    params, samples, cache = _load_scoring_inputs(args, opt)
    joined = join_dataset_cache(samples, cache)
    jobs = opt.get("jobs", 1)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(lambda se: score_sample(se[1], params),
                                   joined))
    else:
        scores = [score_sample(e, params) for _, e in joined]
    lines = "".join(json.dumps({"id": s.id, "score": sc}) + "\n"
                    for (s, _), sc in zip(joined, scores))
    if args.out:
        _atomic_write(args.out, lines.encode("utf-8"))
    else:
        sys.stdout.write(lines)
    return 0


def cmd_eval_corr(args) -> int:
    opt = _Options(args)
    params, samples, cache = _load_scoring_inputs(args, opt)
    joined = [(s, e) for s, e in join_dataset_cache(samples, cache)
              if s.human_score is not None]
    if not joined:
        raise ValidationError("no samples carry a human_score")
    scores = [score_sample(e, params) for _, e in joined]
    judgments = [s.human_score for s, _ in joined]
    report = EvalReport(
        protocol="corr",
        values={"tau_c": kendall_tau_c(scores, judgments),
                "tau_b": kendall_tau_b(scores, judgments)},
        sample_count=len(joined),
        config={"checkpoint": args.checkpoint},
    )
    _emit_report(report, args.out)
    return 0


def cmd_eval_foil(args) -> int:
    opt = _Options(args)
    params, samples, cache = _load_scoring_inputs(args, opt)
    by_id = {s.id: s for s in samples}
    items = []
    for lineno, row in enumerate(_read_jsonl(args.pairs), start=1):
        try:
            correct_id, foil_id = row["correct_id"], row["foil_id"]
        except KeyError as exc:
            raise ValidationError(f"{args.pairs}: line {lineno}: missing {exc}")
        for sid in (correct_id, foil_id):
            if sid not in by_id:
                raise ValidationError(f"{args.pairs}: line {lineno}: unknown "
                                      f"sample id {sid!r}")
            if sid not in cache.records:
                raise ValidationError(f"sample id {sid!r} missing from cache")
        items.append(FoilItem(id=row.get("id", str(lineno)),
                              correct=cache.records[correct_id],
                              foil=cache.records[foil_id]))
    n_refs = opt.get("n-refs", 1)
    acc = foil_accuracy(lambda e: score_sample(e, params), items, n_refs)
    report = EvalReport(protocol="foil", values={"accuracy": acc},
                        sample_count=len(items),
                        config={"n_refs": n_refs, "checkpoint": args.checkpoint})
    _emit_report(report, args.out)
    return 0


def cmd_eval_pascal(args) -> int:
    opt = _Options(args)
    params, samples, cache = _load_scoring_inputs(args, opt)
    by_id = {s.id: s for s in samples}
    items = []
    for lineno, row in enumerate(_read_jsonl(args.pascal), start=1):
        try:
            a_id, b_id = row["a_id"], row["b_id"]
            category, majority = row["category"], row["majority_label"]
        except KeyError as exc:
            raise ValidationError(f"{args.pascal}: line {lineno}: missing {exc}")
        for sid in (a_id, b_id):
            if sid not in by_id or sid not in cache.records:
                raise ValidationError(f"{args.pascal}: line {lineno}: unknown "
                                      f"sample id {sid!r}")
        n = cache.records[a_id].n_refs
        items.append(Pascal50sItem(
            image_ref=by_id[a_id].image_ref, caption_a=a_id, caption_b=b_id,
            references=tuple(str(i) for i in range(n)),
            category=category, majority_label=majority))

    def scorer(image_ref, caption_key, refs):
        e = cache.records[caption_key]
        idx = [int(r) for r in refs]
        sub = e.permuted_refs(idx) if sorted(idx) == list(range(e.n_refs)) \
            else _subset_refs(e, idx)
        return score_sample(sub, params)

    seed = opt.get("seed", 0)
    refs_per_item = opt.get("refs-per-item", 5)
    result = pascal50s_accuracy(scorer, items, refs_per_item, seed)
    report = EvalReport(protocol="pascal50s", values=result,
                        sample_count=len(items),
                        config={"refs_per_item": refs_per_item, "seed": seed,
                                "checkpoint": args.checkpoint})
    _emit_report(report, args.out)
    return 0


def _subset_refs(e, idx):
    from .data import EmbeddingSet
    return EmbeddingSet(e.v, e.c_clip, e.r_clip[idx], e.c_rb, e.r_rb[idx])


def cmd_bench(args) -> int:
    opt = _Options(args)
    params, samples, cache = _load_scoring_inputs(args, opt)
    joined = join_dataset_cache(samples, cache)
    timing = bench_inference(lambda e: score_sample(e, params),
                             [e for _, e in joined],
                             repetitions=opt.get("repetitions", 3))
    report = EvalReport(protocol="bench", values={}, sample_count=len(joined),
                        config={"checkpoint": args.checkpoint}, timing=timing)
    _emit_report(report, args.out)
    return 0


def _read_jsonl(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: line {lineno}: invalid JSON: "
                                      f"{exc}")
    return rows


def _emit_report(report: EvalReport, out_path) -> None:
    if out_path:
        report.write(out_path)
    print(report.summary())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simvec",
        description="similarity-vector transformer captioning metric")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, dataset=True, cache=True, checkpoint=True):
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--seed", type=int)
        if dataset:
            p.add_argument("--dataset", required=True)
        if cache:
            p.add_argument("--cache", required=True)
            p.add_argument("--raw-embeddings", action="store_true",
                           default=None,
                           help="skip L2 normalization of cached embeddings")
        if checkpoint:
            p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--n-refs", type=int)
    p.add_argument("--d-clip", type=int)
    p.add_argument("--d-rb", type=int)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train a scoring model")
    common(p)
    p.add_argument("--history", help="per-epoch history JSON output")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--huber-delta", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score samples with a checkpoint")
    common(p)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval-corr", help="rank correlation with judgments")
    common(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_corr)

    p = sub.add_parser("eval-foil", help="pairwise hallucination accuracy")
    common(p)
    p.add_argument("--pairs", required=True)
    p.add_argument("--n-refs", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_foil)

    p = sub.add_parser("eval-pascal", help="pairwise preference accuracy")
    common(p)
    p.add_argument("--pascal", required=True)
    p.add_argument("--refs-per-item", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_pascal)

    p = sub.add_parser("bench", help="per-sample inference timing")
    common(p)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
