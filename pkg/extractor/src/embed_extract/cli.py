"""Command line: sanity-set generation, extraction, and the cosine sanity
check. Exit codes: 0 success, 2 validation error, 3 format/IO error."""

from __future__ import annotations

import argparse
import sys

from .errors import FormatError, ValidationError
from .extract import ExtractConfig, extract, sanity_win_rate
from .scenes import build_sanity_set


def cmd_gen_sanity(args) -> int:
    paths = build_sanity_set(args.out, n_pairs=args.pairs, seed=args.seed)
    print(f"wrote {args.pairs} scene images")
    for kind, path in paths.items():
        print(f"  {kind}: {path}")
    return 0


def cmd_run(args) -> int:
    config = ExtractConfig(
        dataset_path=args.dataset, image_root=args.image_root,
        output_path=args.out, backend=args.backend,
        clip_model_id=args.clip_model, text_model_id=args.text_model,
        batch_size=args.batch_size, device=args.device)
    report = extract(config)
    print(f"wrote {report.record_count} records to {report.cache_path}")
    print(f"sidecar: {report.sidecar_path}")
    if report.skipped:
        print(f"skipped {len(report.skipped)} samples (see sidecar)")
    return 0


def cmd_sanity_check(args) -> int:
    rate = sanity_win_rate(args.cache)
    print(f"matching pairs win on cosine(v, c_clip): {100 * rate:.1f}%")
    return 0 if rate >= args.threshold else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="embed-extract",
        description="embedding-cache extraction for the simvec metric")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-sanity", help="generate the scene sanity set")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_sanity)

    p = sub.add_parser("run", help="extract embeddings into a cache")
    p.add_argument("--dataset", required=True)
    p.add_argument("--image-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=("auto", "offline", "hf"),
                   default="auto")
    p.add_argument("--clip-model",
                   default="openai/clip-vit-base-patch32")
    p.add_argument("--text-model",
                   default="princeton-nlp/sup-simcse-roberta-base")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sanity-check",
                       help="matching vs mismatched cosine win rate")
    p.add_argument("--cache", required=True)
    p.add_argument("--threshold", type=float, default=0.9)
    p.set_defaults(func=cmd_sanity_check)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
