"""Training loop, per-family evaluation, ablation drivers, and report IO."""

from __future__ import annotations

import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .data import Dataset, SplitData, canonical_json, config_hash_of, load_dataset
from .encoders import PositionScheme, QuestionDict
from .neural import adam_update, init_adam_state
from .relnet import (
    AnswerVocab,
    EncodedSample,
    RelNetConfig,
    encode_sample,
    init_relnet_params,
    loss_and_grads_encoded,
    predict_batch,
)
from .synth import FAMILIES


class NumericError(RuntimeError):
    """Training produced a non-finite value."""


@dataclass(frozen=True)
class TrainConfig:
    data_dir: str = ""
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    scheme: str = "bucket:20"
    mode: str = "sum"
    embed_dim: int = 64
    hidden_dim: int = 128
    g_width: int = 512
    g_layers: int = 4
    decoder_hidden: tuple[int, int] = (512, 1024)
    n_answers: int = 28
    n_max: int = 10
    dropout_rate: float = 0.02
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 0  # steps between validation points; 0 = once per epoch
    train_split: str = "train"
    val_split: str = "val"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    def model_config(self) -> RelNetConfig:
        return RelNetConfig(
            scheme=self.scheme,
            mode=self.mode,
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            g_width=self.g_width,
            g_layers=self.g_layers,
            decoder_hidden=tuple(self.decoder_hidden),
            n_answers=self.n_answers,
            n_max=self.n_max,
            dropout_rate=self.dropout_rate,
        )

    def hash(self) -> str:
        return config_hash_of(self.to_dict())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "decoder_hidden" in data:
            data = {**data, "decoder_hidden": tuple(data["decoder_hidden"])}
        return cls(**data)


@dataclass
class EvalReport:
    overall: float
    families: dict[str, dict]  # name -> {"accuracy", "correct", "total"}
    n_total: int
    encoding: str
    bucket_size: int | None
    aggregation: str
    seed: int
    config_hash: str

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "families": self.families,
            "n_total": self.n_total,
            "encoding": self.encoding,
            "bucket_size": self.bucket_size,
            "aggregation": self.aggregation,
            "seed": self.seed,
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(
            overall=data["overall"],
            families=data["families"],
            n_total=data["n_total"],
            encoding=data["encoding"],
            bucket_size=data["bucket_size"],
            aggregation=data["aggregation"],
            seed=data["seed"],
            config_hash=data["config_hash"],
        )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _encode_split(
    split: SplitData,
    scheme: PositionScheme,
    qdict: QuestionDict,
    answer_vocab: AnswerVocab,
    n_max: int,
) -> list[EncodedSample]:
    return [
        encode_sample(
            split.scenes[s.scene_id],
            s.question_tokens,
            scheme,
            qdict,
            answer_vocab,
            s.answer,
            n_max,
        )
        for s in split.samples
    ]


def check_vocab_coverage(dataset: Dataset, answer_vocab: AnswerVocab) -> None:
    missing = {
        s.answer
        for split in dataset.splits.values()
        for s in split.samples
        if s.answer not in answer_vocab.index
    }
    if missing:
        raise ValueError(f"answers not covered by the vocabulary: {sorted(missing)}")


def constant_answer_baseline(split: SplitData) -> tuple[str, float]:
    """Most frequent answer and its share: the best constant predictor."""
    counts: dict[str, int] = {}
    for s in split.samples:
        counts[s.answer] = counts.get(s.answer, 0) + 1
    token = max(counts, key=lambda k: (counts[k], k))
    return token, counts[token] / len(split.samples)


def train(
    dataset: Dataset,
    cfg: TrainConfig,
    answer_vocab: AnswerVocab | None = None,
    quiet: bool = False,
) -> TrainResult:
    """Run the full training loop; deterministic given (seed, config)."""
    if answer_vocab is None:
        answer_vocab = AnswerVocab.default()
    if len(answer_vocab) != cfg.n_answers:
        raise ValueError(
            f"answer vocab has {len(answer_vocab)} tokens but config expects "
            f"{cfg.n_answers} classes"
        )
    check_vocab_coverage(dataset, answer_vocab)
    model_cfg = cfg.model_config()
    scheme = model_cfg.position_scheme()
    qdict = dataset.qdict
    chash = cfg.hash()

    train_samples = _encode_split(
        dataset.splits[cfg.train_split], scheme, qdict, answer_vocab, cfg.n_max
    )
    val_samples = _encode_split(
        dataset.splits[cfg.val_split], scheme, qdict, answer_vocab, cfg.n_max
    )
    if not train_samples:
        raise ValueError("training split is empty")

    params = init_relnet_params(
        np.random.default_rng([cfg.seed, 0]), len(qdict), model_cfg
    )
    named = params.named_arrays()
    adam = init_adam_state(named)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])

    history: list[dict] = []
    step = 0
    loss_window: list[float] = []
    n = len(train_samples)
    started = time.monotonic()

    def record(epoch: int) -> None:
        correct = _count_correct(val_samples, params, cfg.mode, cfg.n_max)
        val_acc = correct / len(val_samples) if val_samples else float("nan")
        mean_loss = float(np.mean(loss_window)) if loss_window else float("nan")
        history.append(
            {
                "step": step,
                "epoch": epoch,
                "train_loss": mean_loss,
                "val_accuracy": val_acc,
            }
        )
        loss_window.clear()
        if not quiet:
            _log(
                f"step {step} epoch {epoch} loss {mean_loss:.4f} "
                f"val {val_acc:.4f} ({time.monotonic() - started:.0f}s)"
            )

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = [train_samples[i] for i in order[start : start + cfg.batch_size]]
            loss, grads = loss_and_grads_encoded(
                batch,
                params,
                cfg.mode,
                cfg.n_max,
                cfg.dropout_rate,
                dropout_rng,
                train=True,
            )
            if not np.isfinite(loss):
                ids = [int(i) for i in order[start : start + cfg.batch_size]]
                raise NumericError(
                    f"non-finite loss {loss} at step {step} (sample indices {ids})"
                )
            adam_update(
                named,
                grads,
                adam,
                cfg.learning_rate,
                betas=(cfg.adam_beta1, cfg.adam_beta2),
                eps=cfg.adam_eps,
            )
            step += 1
            loss_window.append(loss)
            if cfg.eval_every and step % cfg.eval_every == 0:
                record(epoch)
        if not cfg.eval_every:
            record(epoch)
    if cfg.eval_every and (not history or history[-1]["step"] != step):
        record(cfg.epochs - 1)

    ckpt = Checkpoint(
        config=model_cfg,
        params=params,
        answer_vocab=answer_vocab,
        vocab_size=len(qdict),
        seed=cfg.seed,
        config_hash=chash,
        dictionary_hash=qdict.content_hash(),
    )
    return TrainResult(checkpoint=ckpt, history=history)


def _count_correct(
    samples: list[EncodedSample],
    params,
    mode: str,
    n_max: int,
    batch_size: int = 256,
) -> int:
    correct = 0
    for start in range(0, len(samples), batch_size):
        batch = samples[start : start + batch_size]
        preds = predict_batch(batch, params, mode, n_max)
        targets = np.array([s.target for s in batch])
        correct += int((preds == targets).sum())
    return correct


def evaluate(
    ckpt: Checkpoint,
    split: SplitData,
    qdict: QuestionDict,
    oracle_mode: bool = False,
    batch_size: int = 256,
) -> EvalReport:
    """Exact-match accuracy per task family and overall, dropout off.

    oracle_mode substitutes the ground-truth answer for every prediction,
    which pins the upper bound of the harness at accuracy 1.0.
    """
    if qdict.content_hash() != ckpt.dictionary_hash:
        raise ValueError(
            "dictionary does not match the one this checkpoint was trained with "
            f"(checkpoint {ckpt.dictionary_hash[:12]}, "
            f"dataset {qdict.content_hash()[:12]})"
        )
    scheme = ckpt.config.position_scheme()
    samples = _encode_split(split, scheme, qdict, ckpt.answer_vocab, ckpt.config.n_max)
    tallies = {f: {"correct": 0, "total": 0} for f in FAMILIES}
    for start in range(0, len(samples), batch_size):
        batch = samples[start : start + batch_size]
        if oracle_mode:
            preds = np.array([s.target for s in batch])
        else:
            preds = predict_batch(batch, ckpt.params, ckpt.config.mode, ckpt.config.n_max)
        for offset, sample in enumerate(batch):
            family = split.samples[start + offset].query.family
            tallies[family]["total"] += 1
            tallies[family]["correct"] += int(preds[offset] == sample.target)

    families = {}
    for fam, t in tallies.items():
        acc = t["correct"] / t["total"] if t["total"] else 0.0
        families[fam] = {"accuracy": acc, "correct": t["correct"], "total": t["total"]}
    total = sum(t["total"] for t in tallies.values())
    correct = sum(t["correct"] for t in tallies.values())
    scheme_obj = ckpt.config.position_scheme()
    return EvalReport(
        overall=correct / total if total else 0.0,
        families=families,
        n_total=total,
        encoding=scheme_obj.label(),
        bucket_size=scheme_obj.bucket_size,
        aggregation=ckpt.config.mode,
        seed=ckpt.seed,
        config_hash=ckpt.config_hash,
    )


# ---------------------------------------------------------------------------
# ablations


def _worker_count() -> int:
    env = os.environ.get("RELSCENE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_cell(args: tuple[dict, str]) -> dict:
    cfg_dict, data_dir = args
    cfg = TrainConfig.from_dict(cfg_dict)
    dataset = load_dataset(data_dir)
    result = train(dataset, cfg, quiet=True)
    report = evaluate(result.checkpoint, dataset.splits[cfg.val_split], dataset.qdict)
    return report.to_dict()


def _run_cells(cfgs: list[TrainConfig], dataset: Dataset) -> list[EvalReport]:
    workers = min(_worker_count(), len(cfgs))
    if workers <= 1:
        reports = []
        for i, cfg in enumerate(cfgs):
            _log(
                f"ablation cell {i + 1}/{len(cfgs)}: scheme={cfg.scheme} "
                f"mode={cfg.mode} seed={cfg.seed}"
            )
            result = train(dataset, cfg, quiet=True)
            reports.append(
                evaluate(result.checkpoint, dataset.splits[cfg.val_split], dataset.qdict)
            )
        return reports
    args = [(cfg.to_dict(), cfg.data_dir) for cfg in cfgs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        dicts = list(pool.map(_run_cell, args))
    return [EvalReport.from_dict(d) for d in dicts]


def ablate_positions(
    base_cfg: TrainConfig, schemes: list[str], seeds: list[int], dataset: Dataset
) -> list[EvalReport]:
    """One train+evaluate per (scheme, seed) with everything else fixed."""
    if not schemes:
        raise ValueError("at least one scheme required")
    cfgs = [
        replace(base_cfg, scheme=s, seed=seed) for s in schemes for seed in seeds
    ]
    return _run_cells(cfgs, dataset)


def ablate_aggregation(
    base_cfg: TrainConfig, modes: list[str], seeds: list[int], dataset: Dataset
) -> list[EvalReport]:
    """One train+evaluate per (aggregation mode, seed). The ablation axis is
    written into the report's encoding column so the fixed table layout holds."""
    if not modes:
        raise ValueError("at least one mode required")
    cfgs = [replace(base_cfg, mode=m, seed=seed) for m in modes for seed in seeds]
    reports = _run_cells(cfgs, dataset)
    for r in reports:
        r.encoding = r.aggregation
        r.bucket_size = None
    return reports


# ---------------------------------------------------------------------------
# report emission

CSV_HEADER = (
    "encoding,bucket_size,overall,count,exist,compare_numbers,"
    "query_attribute,compare_attribute,seed"
)

_CSV_FAMILY_ORDER = (
    "count",
    "exist",
    "compare_integer",
    "query_attribute",
    "compare_attribute",
)


def report_rows_csv(reports: list[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    for r in reports:
        row = [
            r.encoding,
            "" if r.bucket_size is None else r.bucket_size,
            f"{r.overall:.4f}",
        ]
        row += [f"{r.families[f]['accuracy']:.4f}" for f in _CSV_FAMILY_ORDER]
        row.append(r.seed)
        writer.writerow(row)
    return buf.getvalue()


def emit_report(reports: list[EvalReport], fmt: str, path: str | Path) -> None:
    """Write reports as CSV (fixed column order) or JSON; deterministic bytes."""
    path = Path(path)
    if fmt == "csv":
        path.write_text(report_rows_csv(reports), encoding="utf-8")
    elif fmt == "json":
        payload = {"reports": [r.to_dict() for r in reports]}
        path.write_text(canonical_json(payload) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def load_reports(path: str | Path) -> list[EvalReport]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [EvalReport.from_dict(d) for d in payload["reports"]]
