"""Command-line interface: dataset generation, training, evaluation,
ablation grids and run aggregation."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .benchmark import BenchmarkConfig, VOCAB_SIZE, generate, load_dataset, save_scene
from .config import TrainConfig
from .model import MotionSegModel, load_model_weights
from .trainer import Trainer, ablate, write_ablation_csv


def _parse_seed_range(text: str) -> range:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return range(int(lo), int(hi) + 1)
    value = int(text)
    return range(value, value + 1)


def cmd_gen(args) -> int:
    cfg = BenchmarkConfig(probe=args.probe)
    seeds = _parse_seed_range(args.seeds)
    for seed in seeds:
        save_scene(generate(seed, cfg), args.out)
    print(f"wrote {len(seeds)} scenes to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig.from_json(args.config)
    train_dir = args.data or cfg.train_dir
    val_dir = args.val_data or cfg.val_dir
    if not train_dir or not val_dir:
        print("training needs train/val data directories (config or flags)", file=sys.stderr)
        return 2
    train_scenes = load_dataset(train_dir)
    val_scenes = load_dataset(val_dir)
    result = Trainer(cfg, train_scenes, val_scenes).run(out_dir=args.out, quiet=False)
    final = result.final
    print(f"final: J={final.j:.4f} F={final.f:.4f} J&F={final.jf:.4f} "
          f"ident={final.ident_acc:.4f} margin={result.margin:.4f}")
    return 0


def cmd_eval(args) -> int:
    config_path = Path(args.config) if args.config else Path(args.model).parent / "config.json"
    cfg = TrainConfig.from_json(config_path)
    scenes = load_dataset(args.data)
    trainer = Trainer(cfg, train_scenes=[], val_scenes=scenes)
    load_model_weights(trainer.model, args.model)
    metrics = trainer.evaluate()
    print(f"J={metrics.j:.4f} F={metrics.f:.4f} J&F={metrics.jf:.4f} "
          f"ident={metrics.ident_acc:.4f} probe={metrics.probe_acc:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    if args.steps:
        cfg = cfg.replace(steps=args.steps)
    train_dir = args.data or cfg.train_dir
    val_dir = args.val_data or cfg.val_dir
    if not train_dir or not val_dir:
        print("ablation needs train/val data directories (config or flags)", file=sys.stderr)
        return 2
    train_scenes = load_dataset(train_dir)
    val_scenes = load_dataset(val_dir)
    rows = ablate(cfg, args.axis, args.seeds, train_scenes, val_scenes, quiet=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"ablate_{args.axis.replace('-', '_')}.csv"
    write_ablation_csv(rows, path)
    print(f"wrote {path}")
    return 0


def cmd_report(args) -> int:
    runs = Path(args.runs)
    rows = []
    for summary in sorted(runs.glob("*/summary.json")):
        with open(summary) as fh:
            data = json.load(fh)
        data["run"] = summary.parent.name
        rows.append(data)
    if not rows:
        print(f"no run summaries under {runs}", file=sys.stderr)
        return 1
    columns = ["run", "j", "f", "jf", "ident_acc", "probe_acc", "separation_margin"]
    with open(args.csv, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(str(row.get(c, "")) for c in columns) + "\n")
    print(f"wrote {args.csv} ({len(rows)} runs)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motionscope",
                                     description="grid-motion referring segmentation engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate benchmark scenes")
    p.add_argument("--seeds", required=True, help="seed range, e.g. 0..199")
    p.add_argument("--out", required=True)
    p.add_argument("--probe", action="store_true",
                   help="emit long-horizon probe scenes (for the temporal ablation subset)")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="TrainConfig JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="training scene directory (overrides config)")
    p.add_argument("--val-data", help="validation scene directory (overrides config)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model")
    p.add_argument("--model", required=True, help="model.bin path")
    p.add_argument("--data", required=True, help="scene directory")
    p.add_argument("--config", help="config JSON (default: next to the model)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation axis")
    p.add_argument("--axis", required=True,
                   choices=["components", "input-query", "nh", "nn", "hungarian"])
    p.add_argument("--seeds", type=int, default=5, help="number of run seeds")
    p.add_argument("--config", help="base TrainConfig JSON")
    p.add_argument("--data", help="training scene directory")
    p.add_argument("--val-data", help="validation scene directory")
    p.add_argument("--steps", type=int, help="override training steps")
    p.add_argument("--out", default="ablations")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("report", help="aggregate run summaries into one CSV")
    p.add_argument("--runs", required=True, help="directory containing run subdirectories")
    p.add_argument("--csv", required=True, help="output CSV path")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
