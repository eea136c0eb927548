"""Command-line entry point.

Subcommands map one-to-one onto the pipeline stages:

    synth    generate a synthetic world and its train/test manifests
    pool     build the imputation pool for the text-only utterances
    augment  build the LLM-augmented candidate set
    train    one training run into a run directory
    eval     evaluate a checkpoint under a test missing ratio q
    grid     run a full experiment grid from a config file
    report   render reports from a results journal

Flags override config-file values. Exit codes: 0 success, 1 run failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .augment import (CannedRephraser, CommandRephraser, TokenResampleRephraser,
                      build_aug_set, save_aug_set)
from .corpus import (apply_missing, apply_test_missing, load_manifest, save_manifest,
                     save_plan, split_partition)
from .grid import GridConfig, run_grid
from .model import load_checkpoint
from .pool import (CommandExpert, FixtureExpert, build_pool, impute_dataset,
                   save_pool, synthetic_experts)
from .report import emit_report
from .results import load_journal
from .synth import load_world, make_world, sample_corpus, save_world
from .seeding import derive_seed
from .training import (DROPOUT_METHODS, METHOD_POLICY, METHODS, TrainConfig,
                       default_encoders, evaluate, predictions_to_csv,
                       score_predictions, train, write_run_dir)

log = logging.getLogger("tiasu")


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    raw = Path(path).read_text(encoding="utf-8")
    return json.loads(os.path.expandvars(raw))


def _resolve_experts(spec: str, world=None):
    """'synthetic:K', 'fixture:<dir>', or 'command:<shell words json>'."""
    kind, _, arg = spec.partition(":")
    if kind == "synthetic":
        if world is None:
            raise ValueError("synthetic experts need --world")
        bank = synthetic_experts(world)
        k = int(arg) if arg else len(bank)
        if k > len(bank):
            raise ValueError(f"world has {len(bank)} experts, asked for {k}")
        return bank[:k]
    if kind == "fixture":
        return [FixtureExpert(arg)]
    if kind == "command":
        return [CommandExpert(json.loads(arg))]
    raise ValueError(f"unknown expert spec {spec!r}")


def _resolve_rephraser(spec: str, world=None, seed: int = 0):
    kind, _, arg = spec.partition(":")
    if kind == "resample":
        if world is None:
            raise ValueError("resample rephraser needs --world")
        return TokenResampleRephraser(world, seed=seed)
    if kind == "canned":
        return CannedRephraser.from_json(arg)
    if kind == "command":
        return CommandRephraser(json.loads(arg))
    raise ValueError(f"unknown rephraser spec {spec!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    world = make_world(args.profile, args.seed, n_classes=args.classes,
                       n_experts=args.experts)
    save_world(world, out / "world.json")
    train_corpus = sample_corpus(world, args.n_train, args.seed, id_prefix="train")
    test_corpus = sample_corpus(world, args.n_test,
                                derive_seed("test_corpus", args.seed),
                                id_prefix="test", split="test")
    save_manifest(train_corpus, out / "train.jsonl")
    save_manifest(test_corpus, out / "test.jsonl")
    print(f"world + manifests written to {out} "
          f"(train={len(train_corpus)}, test={len(test_corpus)})")
    return 0


def cmd_pool(args: argparse.Namespace) -> int:
    world = load_world(args.world) if args.world else None
    corpus = load_manifest(args.manifest)
    partition = apply_missing(corpus, args.p, args.seed)
    adapters = _resolve_experts(args.experts, world)
    pool = build_pool(partition.text_only, adapters, style_policy=args.style,
                      seed=args.seed, cache_dir=args.cache_dir)
    out = Path(args.out)
    save_pool(pool, out)
    save_plan(partition, out / "partition.json")
    print(f"pool written to {out}: {len(pool.entries)} utterances, "
          f"{pool.n_candidates} candidates, {len(pool.unimputable)} unimputable")
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    world = load_world(args.world) if args.world else None
    corpus = load_manifest(args.manifest)
    partition = apply_missing(corpus, args.p, args.seed)
    adapter = _resolve_rephraser(args.adapter, world, seed=args.seed)
    experts = _resolve_experts(args.experts, world)
    out = Path(args.out)
    aug = build_aug_set(partition.text_only, adapter, experts,
                        style_policy=args.style, seed=args.seed,
                        raw_dir=out / "raw_responses")
    save_aug_set(aug, out)
    print(f"augmented set written to {out}: {len(aug)} entries")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    cfg.setdefault("world", {})
    world_path = args.world or cfg.get("world_path")
    if world_path is None:
        raise ValueError("train needs --world (synthetic desk-scale run)")
    world = load_world(world_path)
    train_corpus = load_manifest(args.train_manifest or cfg["train_manifest"])
    test_corpus = load_manifest(args.test_manifest or cfg["test_manifest"])
    method = args.method or cfg.get("method", "tiasu_mm")
    p = args.p if args.p is not None else cfg.get("p", 0.0)
    q = args.q if args.q is not None else cfg.get("q", 0.0)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    metric = cfg.get("metric", "uar")

    partition = apply_missing(train_corpus, p, seed)
    train_part, val_part = split_partition(partition, cfg.get("val_fraction", 0.2), seed)
    policy = METHOD_POLICY[method]
    pool = None
    if policy == "tts":
        pool = build_pool(partition.text_only, synthetic_experts(world),
                          style_policy=cfg.get("style_policy", "none"), seed=seed)
    view = impute_dataset(train_part, pool, policy)
    val_view = impute_dataset(val_part, pool, policy)
    rate = cfg.get("dropout_rate", q if method in DROPOUT_METHODS else 0.0)
    config = TrainConfig(method=method, seed=seed, p=p, dropout_rate=rate,
                         metric=metric, lr=cfg.get("lr"),
                         max_epochs=cfg.get("epochs"),
                         batch_size=cfg.get("batch_size", 64))
    enc = default_encoders(speech_input_dim=world.frame_dim,
                           vocab_size=world.vocab_size,
                           seed=cfg.get("encoder_seed", 0))
    result = train(view, val_view, config, enc)
    plan = apply_test_missing(test_corpus, q, seed)
    preds = evaluate(result.model, test_corpus, plan, enc,
                     nominal_frames=view.nominal_frames, dim=view.dim)
    out = Path(args.out)
    write_run_dir(out, result, preds)
    value = score_predictions(preds, metric)
    print(f"run written to {out}: {metric}={value:.4f} "
          f"(best epoch {result.history.best_epoch})")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    test_corpus = load_manifest(args.manifest)
    world = load_world(args.world) if args.world else None
    enc = default_encoders(
        speech_input_dim=world.frame_dim if world else 16,
        vocab_size=world.vocab_size if world else 64,
        seed=args.encoder_seed)
    plan = apply_test_missing(test_corpus, args.q, args.seed)
    preds = evaluate(model, test_corpus, plan, enc,
                     nominal_frames=args.nominal_frames)
    predictions_to_csv(preds, args.out)
    value = score_predictions(preds, args.metric)
    print(f"predictions written to {args.out}: {args.metric}={value:.4f}")
    return 0


def cmd_grid(args: argparse.Namespace) -> int:
    cfg = GridConfig.from_json(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.method is not None:
        cfg.methods = [args.method]
    if args.p is not None:
        cfg.p_values = [args.p]
    if args.q is not None:
        cfg.q_values = [args.q]
    out = Path(args.out)
    table, stats = run_grid(cfg, out)
    files = emit_report(table, out / "report", cfg.metric,
                        title=f"Grid: {cfg.name}")
    print(f"grid complete: {stats['completed']} cells "
          f"({stats['trained']} trained, {stats['skipped']} skipped, "
          f"{stats['failed']} failed); report: {len(files)} files in {out / 'report'}")
    return 1 if stats["failed"] else 0


def cmd_report(args: argparse.Namespace) -> int:
    table = load_journal(args.journal)
    if len(table) == 0:
        raise ValueError(f"journal {args.journal} has no rows")
    files = emit_report(table, args.out, args.metric,
                        formats=tuple(args.formats.split(",")))
    print(f"report written: {len(files)} files in {args.out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tiasu",
        description="Speech-modality imputation experiments (library CLI)")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic world + manifests")
    sp.add_argument("--profile", default="content_dominant")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--classes", type=int, default=4)
    sp.add_argument("--experts", type=int, default=3)
    sp.add_argument("--n-train", type=int, default=1200)
    sp.add_argument("--n-test", type=int, default=400)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("pool", help="build the imputation pool")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--world")
    sp.add_argument("--experts", default="synthetic:3")
    sp.add_argument("--style", default="none", choices=("none", "label_style"))
    sp.add_argument("--p", type=float, default=0.95)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--cache-dir")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_pool)

    sp = sub.add_parser("augment", help="build the LLM-augmented set")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--world")
    sp.add_argument("--adapter", default="resample")
    sp.add_argument("--experts", default="synthetic:3")
    sp.add_argument("--style", default="none", choices=("none", "label_style"))
    sp.add_argument("--p", type=float, default=0.95)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("train", help="one training run")
    sp.add_argument("--config")
    sp.add_argument("--world")
    sp.add_argument("--train-manifest")
    sp.add_argument("--test-manifest")
    sp.add_argument("--method", choices=METHODS)
    sp.add_argument("--p", type=float)
    sp.add_argument("--q", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--world")
    sp.add_argument("--q", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--metric", default="uar")
    sp.add_argument("--nominal-frames", type=int, default=32)
    sp.add_argument("--encoder-seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("grid", help="run an experiment grid")
    sp.add_argument("--config", required=True)
    sp.add_argument("--method", choices=METHODS)
    sp.add_argument("--p", type=float)
    sp.add_argument("--q", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("report", help="render reports from a journal")
    sp.add_argument("--journal", required=True)
    sp.add_argument("--metric", default="uar")
    sp.add_argument("--formats", default="csv,json,md,png")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
