"""Command-line entry points.

Subcommands: generate, pretrain, adapt, baseline, ablate, eval, dump.
Every run writes a resolved-config copy and a manifest of produced files
into its output directory. Exit codes: 0 success, 1 usage error, 2
runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .dataset import (
    ManifestError,
    generate_paired_set,
    load_manifest,
    save_manifest,
    split_pairs,
)
from .encoder import pretext_pretrain
from .evaluation import dump_embeddings, eval_downstream, eval_retrieval
from .rng import RngState
from .trainer import (
    ModelCheckpoint,
    TrainConfig,
    format_config,
    load_config,
    run_ablation_grid,
    train_baseline_cls,
    train_baseline_pret,
    train_hr_align,
)

USAGE_ERROR = 1
RUNTIME_ERROR = 2


def _write_run_outputs(out_dir: str, config_text: str, produced: list[str]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.txt"), "w", encoding="utf-8") as fh:
        fh.write(config_text)
    with open(os.path.join(out_dir, "files.json"), "w", encoding="utf-8") as fh:
        json.dump({"produced": sorted(produced + ["resolved_config.txt", "files.json"])}, fh, indent=2)


def _flat_args_text(args: argparse.Namespace, keys: list[str]) -> str:
    return "\n".join(f"{key} = {getattr(args, key)}" for key in keys) + "\n"


def _load_train_config(args: argparse.Namespace) -> TrainConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.config is not None:
        if not os.path.exists(args.config):
            raise FileNotFoundError(args.config)
        config = load_config(args.config, overrides)
    else:
        config = TrainConfig.from_mapping(overrides)
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    return config.validate()


def _load_backbone(path: str):
    checkpoint = ModelCheckpoint.load(path)
    return checkpoint.backbone


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    rng = RngState(args.seed)
    pairs = generate_paired_set(rng, args.tasks, args.pairs_per_task, args.gap)
    manifest = os.path.join(args.out, "manifest.json")
    save_manifest(pairs, manifest)
    _write_run_outputs(
        args.out,
        _flat_args_text(args, ["tasks", "pairs_per_task", "gap", "seed"]),
        ["manifest.json", "clips"],
    )
    print(f"generated {len(pairs)} pairs -> {manifest}")
    return 0


def cmd_pretrain(args) -> int:
    pairs = load_manifest(args.data)
    train, _ = split_pairs(pairs, args.heldout_frac)
    clips = [p.human for p in train]
    rng = RngState(args.seed)
    backbone, history = pretext_pretrain(rng, clips, epochs=args.epochs, lr=args.lr)
    os.makedirs(args.out, exist_ok=True)
    config = TrainConfig(method="hr_align", seed=args.seed, steps=0, out_dir=args.out)
    checkpoint = ModelCheckpoint(config=config, backbone=backbone, rng=rng, step=0)
    ckpt_path = os.path.join(args.out, "backbone.ckpt")
    checkpoint.save(ckpt_path)
    loss_path = os.path.join(args.out, "pretext_loss.csv")
    with open(loss_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, value in enumerate(history):
            writer.writerow([i + 1, repr(value)])
    _write_run_outputs(
        args.out,
        _flat_args_text(args, ["epochs", "lr", "seed", "heldout_frac"]),
        ["backbone.ckpt", "pretext_loss.csv"],
    )
    print(f"pretrained backbone over {args.epochs} epochs -> {ckpt_path}")
    return 0


def _finish_training(out_dir, config, checkpoint, metrics, label) -> int:
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "model.ckpt")
    checkpoint.save(ckpt_path)
    metrics.save(os.path.join(out_dir, "metrics.csv"))
    _write_run_outputs(out_dir, format_config(config), ["model.ckpt", "metrics.csv"])
    final = metrics.losses[-1] if metrics.rows else float("nan")
    print(f"{label}: {config.steps} steps, final loss {final:.4f} -> {ckpt_path}")
    return 0


def cmd_adapt(args) -> int:
    config = _load_train_config(args)
    if config.method != "hr_align":
        config = replace(config, method="hr_align")
    pairs = load_manifest(args.data)
    train, _ = split_pairs(pairs, args.heldout_frac)
    backbone = _load_backbone(args.backbone)
    if not backbone.frozen:
        backbone.freeze()
    resume = ModelCheckpoint.load(args.resume) if args.resume else None
    checkpoint, metrics = train_hr_align(config, train, backbone, resume=resume)
    return _finish_training(config.out_dir, config, checkpoint, metrics, "adapt")


def cmd_baseline(args) -> int:
    config = _load_train_config(args)
    method = "pret_baseline" if args.kind == "pret" else "cls_baseline"
    config = replace(config, method=method)
    pairs = load_manifest(args.data)
    train, _ = split_pairs(pairs, args.heldout_frac)
    backbone = _load_backbone(args.backbone)
    if not config.baseline_adapter_only:
        backbone.unfreeze()
    trainer = train_baseline_pret if args.kind == "pret" else train_baseline_cls
    checkpoint, metrics = trainer(config, train, backbone)
    return _finish_training(config.out_dir, config, checkpoint, metrics, f"baseline {args.kind}")


def cmd_ablate(args) -> int:
    config = _load_train_config(args)
    pairs = load_manifest(args.data)
    train, heldout = split_pairs(pairs, args.heldout_frac)
    backbone = _load_backbone(args.backbone)
    if not backbone.frozen:
        backbone.freeze()
    runs = run_ablation_grid(config, train, backbone, heldout=heldout, evaluate=True)
    os.makedirs(config.out_dir, exist_ok=True)
    produced = []
    rows = [run.row for run in runs]
    with open(os.path.join(config.out_dir, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
    keys = list(rows[0].keys())
    with open(os.path.join(config.out_dir, "ablation.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
    produced.extend(["ablation.json", "ablation.csv"])
    for run in runs:
        run_dir = os.path.join(config.out_dir, run.name)
        os.makedirs(run_dir, exist_ok=True)
        run.checkpoint.save(os.path.join(run_dir, "model.ckpt"))
        run.metrics.save(os.path.join(run_dir, "metrics.csv"))
        produced.append(run.name)
    _write_run_outputs(config.out_dir, format_config(config), produced)
    for row in rows:
        print(
            f"{row['name']:>9}: params {row['adapter_params']:>6}  "
            f"r2h@1 {row.get('r2h_recall1', float('nan')):.3f}"
        )
    return 0


def cmd_eval(args) -> int:
    checkpoint = ModelCheckpoint.load(args.checkpoint)
    before = open(args.checkpoint, "rb").read()
    pairs = load_manifest(args.data)
    _, heldout = split_pairs(pairs, args.heldout_frac)
    adapted = not args.frozen
    retrieval = eval_retrieval(checkpoint, heldout, adapted=adapted, seed=args.seed)
    robot_clips = [p.robot for p in pairs]
    downstream = eval_downstream(checkpoint, robot_clips, adapted=adapted, seed=args.seed)
    after = open(args.checkpoint, "rb").read()
    if before != after:
        raise RuntimeError("evaluation mutated the checkpoint file")
    os.makedirs(args.out, exist_ok=True)
    report = {"retrieval": retrieval.to_dict(), "downstream": downstream.to_dict()}
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    text = retrieval.to_text() + downstream.to_text()
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    _write_run_outputs(
        args.out,
        _flat_args_text(args, ["checkpoint", "data", "frozen", "heldout_frac", "seed"]),
        ["report.json", "report.txt"],
    )
    print(text, end="")
    return 0


def cmd_dump(args) -> int:
    checkpoint = ModelCheckpoint.load(args.checkpoint)
    pairs = load_manifest(args.data)
    if args.split == "heldout":
        _, selected = split_pairs(pairs, args.heldout_frac)
    else:
        selected = pairs
    clips = [p.human for p in selected] + [p.robot for p in selected]
    descriptions = {p.pair_id: p.description.text for p in selected}
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    dump_embeddings(
        checkpoint,
        clips,
        args.out,
        descriptions=descriptions,
        adapted=not args.frozen,
        seed=args.seed,
    )
    print(f"wrote {len(clips)} embeddings -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hralign",
        description="Adapter-based cross-domain alignment of a frozen video encoder.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a paired human/robot dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--tasks", type=int, default=8)
    p.add_argument("--pairs-per-task", type=int, default=32)
    p.add_argument("--gap", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pretrain", help="time-contrastive pretext on human clips")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=3e-6)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--heldout-frac", type=float, default=0.25)
    p.set_defaults(func=cmd_pretrain)

    def add_train_args(p):
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
        p.add_argument("--data", required=True)
        p.add_argument("--backbone", required=True)
        p.add_argument("--out", default=None, help="override out_dir")
        p.add_argument("--heldout-frac", type=float, default=0.25)

    p = sub.add_parser("adapt", help="adapter alignment training")
    add_train_args(p)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("baseline", help="full fine-tune baselines")
    p.add_argument("kind", choices=("pret", "cls"))
    add_train_args(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("ablate", help="adapter-position and language ablation grid")
    add_train_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="retrieval and downstream evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frozen", action="store_true", help="evaluate the unadapted model")
    p.add_argument("--heldout-frac", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=311)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump", help="write pooled clip embeddings as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frozen", action="store_true")
    p.add_argument("--split", choices=("all", "heldout"), default="all")
    p.add_argument("--heldout-frac", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=311)
    p.set_defaults(func=cmd_dump)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse: 0 for --help, 2 for usage problems; map the latter to 1
        return 0 if exc.code == 0 else USAGE_ERROR
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return USAGE_ERROR
    except (ValueError, ManifestError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    raise SystemExit(cli_main())
