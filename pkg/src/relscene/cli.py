"""Command-line entry point: dataset generation, training, evaluation,
ablations, gradient checking, and report conversion.

Progress goes to stderr; machine-readable results go to stdout or files.
Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import DatasetConfig, canonical_json, generate_dataset, load_dataset
from .encoders import QuestionDict
from .neural import grad_check
from .relnet import AnswerVocab, RelNetConfig, init_relnet_params, loss_and_grads_encoded, encode_sample
from .scene import Scene, SceneObject
from .synth import AmbiguousQueryError, GenerationError, QuestionGenConfig, SceneGenConfig
from .train import (
    CSV_HEADER,
    NumericError,
    TrainConfig,
    ablate_aggregation,
    ablate_positions,
    emit_report,
    evaluate,
    load_reports,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DEFAULT_POSITION_SCHEMES = "onehot,bucket:15,bucket:20,bucket:30,enum"
DEFAULT_AGGREGATION_MODES = "sum,mean"


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relscene",
        description="Relational question answering over symbolic scene descriptions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a scenes+questions dataset")
    p.add_argument("--scenes", type=int, required=True, help="training scenes")
    p.add_argument("--val-scenes", type=int, default=None)
    p.add_argument("--test-scenes", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--questions-per-scene", type=int, default=5)
    p.add_argument("--min-objects", type=int, default=3)
    p.add_argument("--max-objects", type=int, default=6)
    p.add_argument("--relation-prob", type=float, default=0.3)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--data", default=None, help="override data_dir from the config")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out", default=None)
    p.add_argument(
        "--oracle", action="store_true", help="score ground truth against itself"
    )

    p = sub.add_parser("ablate", help="train one model per ablation cell")
    p.add_argument("--axis", choices=("position", "aggregation"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--data", default=None)
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--schemes", default=DEFAULT_POSITION_SCHEMES)
    p.add_argument("--modes", default=DEFAULT_AGGREGATION_MODES)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--coords", type=int, default=200, help="coordinates per group")
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scheme", default="bucket:20")
    p.add_argument("--mode", default="sum")

    p = sub.add_parser("report", help="convert / merge report files")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--format", choices=("csv", "json"), required=True)
    p.add_argument("--out", required=True)

    return parser


def _load_train_config(args) -> TrainConfig:
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for item in args.set:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        try:
            raw[key] = json.loads(value)
        except json.JSONDecodeError:
            raw[key] = value
    cfg = TrainConfig.from_dict(raw)
    if args.data is not None:
        cfg = replace(cfg, data_dir=args.data)
    if not cfg.data_dir:
        raise ValueError("no data_dir configured; pass --data or set it in the config")
    return cfg


def cmd_gen(args) -> int:
    val = args.val_scenes if args.val_scenes is not None else max(1, args.scenes // 4)
    cfg = DatasetConfig(
        train_scenes=args.scenes,
        val_scenes=val,
        test_scenes=args.test_scenes,
        questions_per_scene=args.questions_per_scene,
        seed=args.seed,
        scene=SceneGenConfig(
            min_objects=args.min_objects, max_objects=args.max_objects
        ),
        question=QuestionGenConfig(relation_prob=args.relation_prob),
    )
    _log(f"generating dataset into {args.out}")
    dataset = generate_dataset(cfg, args.out)
    summary = {
        "out": str(args.out),
        "seed": dataset.seed,
        "config_hash": dataset.config_hash,
        "splits": {
            name: {"scenes": len(s.scenes), "questions": len(s.samples)}
            for name, s in dataset.splits.items()
        },
        "dictionary_size": len(dataset.qdict),
    }
    print(canonical_json(summary))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_train_config(args)
    dataset = load_dataset(cfg.data_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(dataset, cfg)

    ckpt_path = out / "checkpoint.rsc"
    save_checkpoint(ckpt_path, result.checkpoint)
    history_path = out / "history.jsonl"
    lines = [canonical_json({"config_hash": cfg.hash(), "seed": cfg.seed})]
    lines += [canonical_json(rec) for rec in result.history]
    history_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    config_path = out / "train_config.json"
    config_path.write_text(
        canonical_json({"config_hash": cfg.hash(), **cfg.to_dict()}) + "\n",
        encoding="utf-8",
    )
    final = result.history[-1] if result.history else {}
    print(
        canonical_json(
            {
                "checkpoint": str(ckpt_path),
                "history": str(history_path),
                "final": final,
                "config_hash": cfg.hash(),
            }
        )
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    if args.split not in dataset.splits:
        raise ValueError(
            f"split {args.split!r} not in dataset (has {sorted(dataset.splits)})"
        )
    report = evaluate(
        ckpt, dataset.splits[args.split], dataset.qdict, oracle_mode=args.oracle
    )
    print(canonical_json(report.to_dict()))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        emit_report([report], "json", out / "report.json")
        emit_report([report], "csv", out / "report.csv")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_train_config(args)
    dataset = load_dataset(cfg.data_dir)
    seeds = [int(s) for s in args.seeds.split(",") if s]
    if args.axis == "position":
        schemes = [s for s in args.schemes.split(",") if s]
        reports = ablate_positions(cfg, schemes, seeds, dataset)
    else:
        modes = [m for m in args.modes.split(",") if m]
        reports = ablate_aggregation(cfg, modes, seeds, dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(reports, "csv", out / "ablation.csv")
    emit_report(reports, "json", out / "ablation.json")
    print((out / "ablation.csv").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def _gradcheck_scenario(scheme: str, mode: str, seed: int):
    """Tiny but full-width model on a 2-object scene and 3-word question."""
    scene = Scene(
        id="gradcheck",
        objects=[
            SceneObject(1, 0, 0, 0, 120, 100, (-1.5, 0.6, 11.0), 45.0),
            SceneObject(4, 1, 1, 2, 300, 220, (0.8, -1.1, 13.0), 120.0),
        ],
    )
    tokens = ["is", "there", "?"]
    qdict = QuestionDict(["?", "is", "there"])
    vocab = AnswerVocab.default()
    config = RelNetConfig(scheme=scheme, mode=mode)
    params = init_relnet_params(np.random.default_rng([seed, 0]), len(qdict), config)
    sample = encode_sample(
        scene, tokens, config.position_scheme(), qdict, vocab, "yes", config.n_max
    )
    return params, sample, config


def cmd_gradcheck(args) -> int:
    params, sample, config = _gradcheck_scenario(args.scheme, args.mode, args.seed)
    named = params.named_arrays()
    _, grads = loss_and_grads_encoded(
        [sample], params, config.mode, config.n_max, train=False
    )

    def loss_fn():
        loss, _ = loss_and_grads_encoded(
            [sample], params, config.mode, config.n_max, train=False
        )
        return loss

    err = grad_check(
        loss_fn,
        named,
        eps=args.eps,
        grads=grads,
        coords_per_group=args.coords,
        rng=np.random.default_rng(args.seed),
    )
    print(canonical_json({"max_relative_error": err, "threshold": args.threshold}))
    if not err < args.threshold:
        _log(f"gradient check FAILED: {err} >= {args.threshold}")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_report(args) -> int:
    reports = []
    for path in args.inputs:
        reports.extend(load_reports(path))
    emit_report(reports, args.format, args.out)
    _log(f"wrote {len(reports)} report rows to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        _log(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except (
        GenerationError,
        AmbiguousQueryError,
        ValueError,
        KeyError,
        OSError,
        json.JSONDecodeError,
    ) as exc:
        _log(f"error: {exc}")
        return EXIT_DATA


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
