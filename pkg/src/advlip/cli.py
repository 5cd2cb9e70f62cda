"""Command-line entry point: dataset generation, training, evaluation,
gradient checking, and grid experiments, all reproducible from a seed.

Exit codes: 0 success, 2 usage or config error, 3 data integrity error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from .data import dataset_hash, normalize_per_speaker, read_dataset, strip_labels, write_dataset
from .errors import AdvlipError, ConfigError, DataIntegrityError, NumericalError
from .evaluate import evaluate
from .experiment import MODES, run_experiment_grid
from .gradcheck import run_all
from .model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .synth import SHIFT_LEVELS, SynthConfig, generate_synthetic
from .tensor import Rng
from .training import TrainConfig, TrainData, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

log = logging.getLogger(__name__)


def resolve_seed(flag: Optional[int], config_seed: Optional[int] = None) -> int:
    """Seed precedence: CLI flag, then config file, then ADVLIP_SEED, then 0."""
    if flag is not None:
        return flag
    if config_seed is not None:
        return config_seed
    env = os.environ.get("ADVLIP_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"ADVLIP_SEED must be an integer, got {env!r}") from exc
    return 0


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def _parse_sources(text: str) -> List[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"--sources must be comma-separated integers, got {text!r}") from exc


def cmd_gen_synth(args) -> int:
    if args.config:
        fields = _load_json(args.config)
        if args.seed is not None:
            fields["seed"] = args.seed
        fields.setdefault("seed", resolve_seed(None))
        config = SynthConfig.from_dict(fields)
    else:
        config = SynthConfig.for_shift_level(args.shift_level, seed=resolve_seed(args.seed))
    dataset = generate_synthetic(config)
    write_dataset(dataset, args.out)
    with open(os.path.join(args.out, "synth_config.json"), "w") as fh:
        json.dump(config.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    counts = {split: len(dataset.select(split=split)) for split in ("train", "val", "test")}
    print(f"wrote {len(dataset.sequences)} sequences to {args.out}")
    print(f"speakers={dataset.speakers()} classes={dataset.word_classes()} splits={counts}")
    print(f"dataset hash {dataset_hash(args.out)}")
    return EXIT_OK


def _resolved_model_config(args, dataset, n_sources: int) -> ModelConfig:
    fields = _load_json(args.model_config) if args.model_config else {}
    fields["height"] = dataset.height
    fields["width"] = dataset.width
    fields.setdefault("word_classes", dataset.word_classes())
    fields["adv_domains"] = n_sources + 1
    return ModelConfig.from_dict(fields)


def _resolved_train_config(args) -> TrainConfig:
    base = TrainConfig.from_dict(_load_json(args.config)) if args.config else TrainConfig()
    overrides = dict(
        learning_rate=args.lr,
        max_epochs=args.max_epochs,
        patience=args.patience,
        target_pool_limit=args.target_pool,
    )
    cfg = base.with_overrides(**overrides)
    return cfg.with_overrides(seed=resolve_seed(args.seed, cfg.seed if args.config else None))


def _run_training(manifest: dict, out_dir: str) -> int:
    dataset = read_dataset(manifest["dataset_path"])
    found = dataset_hash(manifest["dataset_path"])
    if found != manifest["dataset_hash"]:
        raise DataIntegrityError(
            f"dataset hash mismatch: manifest says {manifest['dataset_hash']}, found {found}"
        )
    dataset = normalize_per_speaker(dataset)

    model_config = ModelConfig.from_dict(manifest["model_config"])
    train_config = TrainConfig.from_dict(manifest["train_config"])
    sources = manifest["sources"]
    target = manifest["target"]
    adversarial = manifest["mode"] == "adversarial"

    source_train = [s for sid in sources for s in dataset.select(speaker_id=sid, split="train")]
    source_val = [s for sid in sources for s in dataset.select(speaker_id=sid, split="val")]
    target_pool = None
    target_val = None
    if target is not None:
        target_val = dataset.select(speaker_id=target, split="val") or None
    if adversarial:
        if target is None:
            raise ConfigError("adversarial mode requires --target")
        pool_seqs = dataset.select(speaker_id=target, split="train")
        limit = train_config.target_pool_limit
        if limit is not None and limit < len(pool_seqs):
            from .tensor import derive_seed

            order = Rng(derive_seed(train_config.seed, 1), "shuffle").permutation(len(pool_seqs))
            pool_seqs = [pool_seqs[i] for i in order[:limit]]
        target_pool, _ = strip_labels(pool_seqs)

    model = build_model(model_config, Rng(train_config.seed, "init"))
    result = train(model, TrainData(source_train, source_val, target_pool, target_val), train_config)

    result.metrics.write_csv(os.path.join(out_dir, "metrics.csv"))
    save_checkpoint(result.model, os.path.join(out_dir, "model.ckpt"))
    print(
        f"trained {result.epochs_run} epochs; best src val acc {result.best_val_acc:.4f} "
        f"at epoch {result.best_epoch}"
    )
    print(f"artifacts in {out_dir}: manifest.json, metrics.csv, model.ckpt")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.from_manifest:
        manifest = _load_json(args.from_manifest)
        out_dir = args.out or os.path.dirname(os.path.abspath(args.from_manifest))
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return _run_training(manifest, out_dir)

    if not args.data or not args.out or not args.sources:
        raise ConfigError("train requires --data, --out, and --sources")
    if args.mode == "adversarial" and args.target is None:
        raise ConfigError("adversarial mode requires --target")
    sources = _parse_sources(args.sources)
    dataset = read_dataset(args.data)
    speakers = set(dataset.speakers())
    for sid in sources:
        if sid not in speakers:
            raise ConfigError(f"source speaker {sid} not in dataset speakers {sorted(speakers)}")
    if args.target is not None:
        if args.target not in speakers:
            raise ConfigError(f"target speaker {args.target} not in dataset")
        if args.target in sources:
            raise ConfigError(f"target speaker {args.target} is also a source")

    train_config = _resolved_train_config(args)
    model_config = _resolved_model_config(args, dataset, len(sources))
    manifest = {
        "tool_version": __version__,
        "dataset_path": os.path.abspath(args.data),
        "dataset_hash": dataset_hash(args.data),
        "mode": args.mode,
        "sources": sources,
        "target": args.target,
        "model_config": model_config.to_dict(),
        "train_config": train_config.to_dict(),
        "seed": train_config.seed,
        "artifacts": ["manifest.json", "metrics.csv", "model.ckpt"],
    }
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return _run_training(manifest, args.out)


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = normalize_per_speaker(read_dataset(args.data))
    seqs = dataset.select(speaker_id=args.speaker, split=args.split)
    if not seqs:
        raise ConfigError(f"no sequences for speaker {args.speaker} split {args.split!r}")
    report = evaluate(model, seqs, speaker_id=args.speaker, split=args.split)
    if args.json:
        print(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    else:
        print(f"speaker {args.speaker} {args.split}: accuracy {report.accuracy:.4f} (n={report.n})")
        for cls in sorted(report.per_class_accuracy):
            print(f"  class {cls}: {report.per_class_accuracy[cls]:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rows = run_all(seeds=range(args.seeds), inject_sign_bug=args.inject_sign_bug)
    worst: dict = {}
    for row in rows:
        if row.name not in worst or row.rel_err > worst[row.name].rel_err:
            worst[row.name] = row
    all_pass = True
    for name, row in worst.items():
        status = "PASS" if all(r.passed for r in rows if r.name == name) else "FAIL"
        all_pass &= status == "PASS"
        print(f"{name:14s} worst rel err {row.rel_err:.3e} (seed {row.seed})  tol {row.tolerance:g}  {status}")
    if not all_pass:
        print("gradient check FAILED", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(worst)} checks passed over {args.seeds} seeds")
    return EXIT_OK


def cmd_experiment(args) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}; choose from {MODES}")
    dataset = read_dataset(args.data)
    model_fields = _load_json(args.model_config) if args.model_config else {}
    model_fields["height"] = dataset.height
    model_fields["width"] = dataset.width
    model_fields.setdefault("word_classes", dataset.word_classes())
    model_config = ModelConfig.from_dict(model_fields)

    base = TrainConfig.from_dict(_load_json(args.train_config)) if args.train_config else TrainConfig()
    train_config = base.with_overrides(
        max_epochs=args.max_epochs, patience=args.patience, target_pool_limit=args.target_pool
    )
    seed = resolve_seed(args.seed, base.seed if args.train_config else None)

    result = run_experiment_grid(
        dataset,
        n_source=args.n_sources,
        modes=modes,
        model_config=model_config,
        train_config=train_config,
        base_seed=seed,
        out_dir=args.out,
        workers=args.workers,
    )
    print(result.grid_csv(), end="")
    print(result.summary_text())
    if args.json_report and args.out:
        with open(os.path.join(args.out, "report.json"), "w") as fh:
            json.dump(
                [dataclasses.asdict(r) for r in result.rows], fh, indent=1, sort_keys=True,
                default=lambda o: o.tolist() if isinstance(o, np.ndarray) else o,
            )
            fh.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advlip",
        description="Speaker-independent lipreading with domain-adversarial training.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate the synthetic domain-shift corpus")
    p.add_argument("--config", help="synthetic config JSON (overrides --shift-level)")
    p.add_argument("--shift-level", default="high", choices=sorted(SHIFT_LEVELS))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--config", help="train config JSON")
    p.add_argument("--model-config", help="model config JSON")
    p.add_argument("--sources", help="comma-separated source speaker ids")
    p.add_argument("--target", type=int, default=None, help="target speaker id")
    p.add_argument("--mode", choices=MODES, default="baseline")
    p.add_argument("--target-pool", type=int, default=None, help="limit target pool size")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output directory")
    p.add_argument("--from-manifest", help="rerun a recorded run manifest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--speaker", type=int, required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--json", action="store_true", help="full JSON report with confusion")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all backward passes")
    p.add_argument("--seeds", type=int, default=10, help="number of random seeds")
    p.add_argument("--inject-sign-bug", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("experiment", help="run the cyclic source->target grid")
    p.add_argument("--data", required=True)
    p.add_argument("--n-sources", type=int, default=1)
    p.add_argument("--modes", default="baseline,adversarial")
    p.add_argument("--target-pool", type=int, default=None)
    p.add_argument("--model-config", help="model config JSON")
    p.add_argument("--train-config", help="train config JSON")
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="output directory for grid.csv and summary.json")
    p.add_argument("--json-report", action="store_true", help="also write report.json")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataIntegrityError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AdvlipError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
