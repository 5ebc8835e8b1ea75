"""Command-line surface.

Commands:
    synth-gen  -- generate the synthetic desk-scale dataset
    train      -- run training from a TOML config (plus --set overrides)
    eval       -- evaluate a checkpoint on a manifest's eval split
    audit      -- replay a probability trace through the gate logic

Every command exits 0 on success and 2 on validation/runtime failure,
printing the reason to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from .audit import AuditError, run_audit
from .config import ConfigError, RunConfig, load_config
from .datamodel import DataModelError, DatasetManifest
from .model import build_model
from .synth import SynthError, SynthSpec, generate_synthetic_dataset, labeled_preset
from .trainer import Trainer, TrainerError, evaluate


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="TOML config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config entry (repeatable)",
    )
    parser.add_argument("--seed", type=int, default=None, help="override train.seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semisup")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("synth-gen", help="generate a synthetic dataset")
    p_gen.add_argument("--out", type=str, required=True, help="output directory")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--image-size", type=int, default=64)
    p_gen.add_argument(
        "--labeled-preset",
        type=int,
        default=None,
        choices=(100, 400, 2000, 4000),
        help="per-class labeled counts mirroring the shipped low-label presets",
    )
    p_gen.add_argument(
        "--labeled-per-class",
        type=str,
        default=None,
        help="comma-separated per-class labeled counts (overrides the preset)",
    )
    p_gen.add_argument("--unlabeled-per-class", type=int, default=128)
    p_gen.add_argument("--eval-per-class", type=int, default=430)
    p_gen.add_argument("--noise-sigma", type=float, default=0.10)
    p_gen.add_argument("--jitter", type=float, default=0.14)

    p_train = sub.add_parser("train", help="run training")
    _add_config_args(p_train)
    p_train.add_argument("--out", type=str, required=True, help="run directory")
    p_train.add_argument("--resume", type=str, default=None, help="checkpoint to resume from")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", type=str, required=True)
    p_eval.add_argument("--manifest", type=str, required=True)
    p_eval.add_argument("--out", type=str, default="eval-metrics.json")

    p_audit = sub.add_parser("audit", help="replay a probability trace")
    _add_config_args(p_audit)
    p_audit.add_argument("--trace", type=str, required=True)
    p_audit.add_argument("--manifest", type=str, required=True)
    p_audit.add_argument("--out", type=str, default="audit.jsonl")

    return parser


def cmd_synth_gen(args: argparse.Namespace) -> int:
    if args.labeled_per_class:
        labeled = [int(x) for x in args.labeled_per_class.split(",")]
    elif args.labeled_preset:
        labeled = labeled_preset(args.labeled_preset)
    else:
        labeled = labeled_preset(100)
    spec = SynthSpec(
        image_size=args.image_size,
        labeled_per_class=labeled,
        unlabeled_per_class=[args.unlabeled_per_class] * 7,
        eval_per_class=[args.eval_per_class] * 7,
        noise_sigma=args.noise_sigma,
        jitter=args.jitter,
        seed=args.seed,
    )
    manifest = generate_synthetic_dataset(spec, args.out)
    counts = {
        split: len(manifest.split_records(split)) for split in ("labeled", "unlabeled", "eval")
    }
    print(f"wrote {sum(counts.values())} images to {args.out} {json.dumps(counts)}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, overrides=args.overrides, seed=args.seed)
    manifest = DatasetManifest.load(cfg.data.manifest)
    trainer = Trainer(cfg, manifest, args.out, resume_from=args.resume)
    final = trainer.run()
    print(f"run complete: {args.out} final={json.dumps(final)}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    if not Path(args.checkpoint).is_file():
        raise TrainerError(f"checkpoint not found: {args.checkpoint}")
    state = torch.load(args.checkpoint, weights_only=False)
    cfg = RunConfig()
    for section, values in state["config"].items():
        section_obj = getattr(cfg, section)
        for key, value in values.items():
            setattr(section_obj, key, value)
    manifest = DatasetManifest.load(args.manifest)
    if manifest.label_space.num_classes != state["num_classes"]:
        raise TrainerError(
            f"checkpoint has {state['num_classes']} classes, manifest has "
            f"{manifest.label_space.num_classes}"
        )
    model = build_model(cfg.model, cfg.attention, state["num_classes"], seed=0)
    model.load_state_dict(state["model"])
    metrics = evaluate(model, manifest, cfg)
    Path(args.out).write_text(json.dumps(metrics, indent=2), encoding="utf-8")
    print(json.dumps(metrics))
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, overrides=args.overrides, seed=args.seed)
    manifest = DatasetManifest.load(args.manifest)
    reports = run_audit(args.trace, manifest, cfg.dta, cfg.snl, out_path=args.out)
    print(f"audited {len(reports)} epochs -> {args.out}")
    return 0


_COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "audit": cmd_audit,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DataModelError, TrainerError, AuditError, SynthError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
