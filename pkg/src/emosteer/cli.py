"""Command-line entry point: ``emosteer <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from .corpus import CorpusFormatError, LabelMapping, MissingLabelError, fixture_path, load_corpus
from .evaluation import judge_comprehensibility, score_emotions, text_features
from .harness.analysis import analyze, format_analysis
from .harness.ratings import RatingsSchemaError, format_descriptive_table, ingest_ratings, summarize
from .harness.report import REPORT_KINDS, emit_report
from .harness.sweep import (
    SweepConfig,
    SweepConfigError,
    build_judge,
    build_scorer,
    feature_means,
    load_config,
    read_results,
    resolve_model,
    resolve_vectors,
    run_sweep,
    write_run,
)
from .stats import IncompleteDesignError, UnimputableCellError
from .steering import build_all_targets, save_style_vectors, steer_generate
from .transformer import ConfigError, ContextOverflowError, DecodeParams

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

DATA_ERRORS = (
    OSError, ValueError, KeyError, ConfigError, ContextOverflowError, CorpusFormatError, MissingLabelError,
    RatingsSchemaError, SweepConfigError, IncompleteDesignError, UnimputableCellError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--config", help="YAML/JSON config file; flags override its values")
    g.add_argument("--weights", help="flat binary weight file (dimensions taken from its header)")
    g.add_argument("--layers", type=int, dest="num_layers")
    g.add_argument("--hidden", type=int, dest="hidden_dim")
    g.add_argument("--heads", type=int, dest="num_heads")
    g.add_argument("--model-seed", type=int, dest="model_seed")
    g.add_argument("--vectors", help="style-vector file; otherwise built from the corpus")
    g.add_argument("--corpus", help="labeled corpus TSV (default: shipped fixture)")
    g.add_argument("--mapping", help="label mapping JSON (default: shipped Ekman mapping)")
    g.add_argument("--pooling", choices=("mean", "last"))
    g.add_argument("--token-limit", type=int, dest="token_limit")


def _decode_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("decoding")
    g.add_argument("--temperature", type=float)
    g.add_argument("--top-k", type=int, dest="top_k")
    g.add_argument("--max-new-tokens", type=int, dest="max_new_tokens")
    g.add_argument("--seed", type=int)
    g.add_argument("--layer-mask", type=lambda s: [int(x) for x in s.split(",") if x], dest="layer_mask",
                   help="comma-separated layer indices (default: all)")


def _config(args: argparse.Namespace, extra: Sequence[str] = ()) -> SweepConfig:
    keys = ("weights", "vectors", "corpus", "mapping", "pooling", "token_limit", "temperature", "top_k",
            "max_new_tokens", "seed", "layer_mask") + tuple(extra)
    overrides = {k: getattr(args, k, None) for k in keys}
    model_over = {k: getattr(args, a) for k, a in (("num_layers", "num_layers"), ("hidden_dim", "hidden_dim"),
                                                    ("num_heads", "num_heads"), ("seed", "model_seed"))
                  if getattr(args, a, None) is not None}
    if args.config:
        cfg = load_config(args.config, overrides)
    else:
        cfg = SweepConfig.from_dict({k: v for k, v in overrides.items() if v is not None})
    if model_over:
        merged = {**asdict(cfg.model), **model_over}
        cfg = SweepConfig.from_dict({**cfg.to_dict(), "model": merged})
    return cfg


def cmd_build_vectors(args) -> int:
    cfg = _config(args)
    model = resolve_model(cfg)
    mapping = LabelMapping.load(cfg.mapping) if cfg.mapping else LabelMapping.default()
    corpus = load_corpus(cfg.corpus or fixture_path("fixture_corpus.tsv"), mapping)
    for err in corpus.errors:
        logging.warning("corpus line %d: %s", err.line, err.message)
    sets = build_all_targets(model, corpus, targets=cfg.targets, pooling=cfg.pooling, token_limit=cfg.token_limit)
    save_style_vectors(sets, args.out)
    print(f"wrote {len(sets)} style-vector sets to {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _config(args)
    model = resolve_model(cfg)
    vectors = resolve_vectors(cfg, model)
    if args.target not in vectors:
        raise SweepConfigError(f"no style vectors for target {args.target!r}")
    decode = DecodeParams(cfg.temperature, cfg.top_k, cfg.max_new_tokens, cfg.seed)
    res = steer_generate(model, args.prompt, vectors[args.target], args.lam, cfg.layer_mask, decode)
    if args.json:
        print(json.dumps({"text": res.text, "lambda": res.lam, "target": res.target, "decode": res.decode,
                          "warnings": list(res.warnings)}, ensure_ascii=False))
    else:
        print(res.text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args, extra=("workers",))
    if args.out_dir:
        cfg.output_dir = args.out_dir
    if not cfg.output_dir:
        raise UsageError("an output directory is required (--out-dir or output_dir in the config)")
    rows = run_sweep(cfg)
    path = write_run(rows, cfg, cfg.output_dir)
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


def cmd_score(args) -> int:
    spec_scorer = {"command": args.scorer_cmd.split()} if args.scorer_cmd else "lexicon"
    spec_judge = {"command": args.judge_cmd.split()} if args.judge_cmd else "heuristic"
    scorer, judge = build_scorer(spec_scorer), build_judge(spec_judge)
    if args.text is not None:
        texts = [args.text]
    else:
        src = sys.stdin if args.input == "-" else open(args.input, encoding="utf-8")
        with src:
            texts = [line.rstrip("\n") for line in src]
    for text in texts:
        emo = score_emotions(text, scorer)
        comp = judge_comprehensibility(text, judge)
        feats = text_features(text)
        print(json.dumps({
            "text": text, "scores": dict(emo.per_emotion), "comprehensibility_raw": comp.raw,
            "comprehensibility_normalized": comp.normalized, "lexical_density": feats.lexical_density,
            "mean_word_length": feats.mean_word_length, "entropy_bits": feats.entropy_bits,
            "flags": list(emo.flags) + list(comp.flags) + list(feats.flags),
        }, ensure_ascii=False, sort_keys=True))
    return EXIT_OK


def cmd_stats(args) -> int:
    data = ingest_ratings(args.ratings)
    for err in data.errors:
        print(f"{args.ratings}:{err.line}: {err.message}", file=sys.stderr)
    if not data.records:
        raise ValueError(f"{args.ratings}: no valid rating rows")
    print(format_descriptive_table(summarize(data.records)))
    if not args.descriptives_only:
        result = analyze(data.records)
        print(format_analysis(result))
        if args.json:
            Path(args.json).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_report(args) -> int:
    features = lams = None
    if args.results:
        rows = read_results(args.results)
        if not rows:
            warnings.warn(f"{args.results} has no rows")
            return EXIT_OK
        table = summarize(rows)
        lams, features = feature_means(rows)
    else:
        data = ingest_ratings(args.ratings)
        for err in data.errors:
            print(f"{args.ratings}:{err.line}: {err.message}", file=sys.stderr)
        if not data.records:
            warnings.warn(f"{args.ratings} has no valid rows; nothing to report")
            return EXIT_OK
        table = summarize(data.records)
    written = emit_report(table, args.out_dir, args.kind, args.heatmap_lambda, features, lams)
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emosteer", description="Emotion steering toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-vectors", help="build style vectors from a labeled corpus")
    _model_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vectors)

    p = sub.add_parser("generate", help="steered generation for one prompt")
    _model_flags(p)
    _decode_flags(p)
    p.add_argument("--prompt", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--lambda", type=float, dest="lam", default=0.0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sweep", help="prompts x targets x strengths sweep")
    _model_flags(p)
    _decode_flags(p)
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("score", help="score texts (one per line) with the emotion scorer and judge")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--input", help="file with one text per line, or - for stdin")
    p.add_argument("--scorer-cmd", help="external scorer command (JSON lines over stdio)")
    p.add_argument("--judge-cmd", help="external judge command (JSON lines over stdio)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("stats", help="descriptives, ANOVA and ICC for a ratings file")
    p.add_argument("ratings")
    p.add_argument("--json", help="also write the full results as JSON")
    p.add_argument("--descriptives-only", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("report", help="figures and tables from ratings or sweep results")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--ratings")
    src.add_argument("--results")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--kind", choices=REPORT_KINDS, default="all")
    p.add_argument("--heatmap-lambda", type=float, default=0.20)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - top-level guard
        logging.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
