"""Binary checkpoint format.

Layout: magic bytes, an 8-byte little-endian header length, a JSON header
(format version, hyperparameters, answer vocabulary, seed, hashes, and the
ordered list of parameter names and shapes), then the raw float64
little-endian parameter arrays concatenated in header order. Round-trips
are bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .neural import DenseParams, LstmParams
from .relnet import AnswerVocab, RelNetConfig, RelNetParams

MAGIC = b"RSCKPT01"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: RelNetConfig
    params: RelNetParams
    answer_vocab: AnswerVocab
    vocab_size: int
    seed: int
    config_hash: str
    dictionary_hash: str


def _config_to_dict(config: RelNetConfig) -> dict:
    return {
        "scheme": config.scheme,
        "mode": config.mode,
        "embed_dim": config.embed_dim,
        "hidden_dim": config.hidden_dim,
        "g_width": config.g_width,
        "g_layers": config.g_layers,
        "decoder_hidden": list(config.decoder_hidden),
        "n_answers": config.n_answers,
        "n_max": config.n_max,
        "dropout_rate": config.dropout_rate,
    }


def _config_from_dict(data: dict) -> RelNetConfig:
    return RelNetConfig(
        scheme=data["scheme"],
        mode=data["mode"],
        embed_dim=data["embed_dim"],
        hidden_dim=data["hidden_dim"],
        g_width=data["g_width"],
        g_layers=data["g_layers"],
        decoder_hidden=tuple(data["decoder_hidden"]),
        n_answers=data["n_answers"],
        n_max=data["n_max"],
        dropout_rate=data["dropout_rate"],
    )


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    named = ckpt.params.named_arrays()
    header = {
        "format_version": FORMAT_VERSION,
        "seed": ckpt.seed,
        "config_hash": ckpt.config_hash,
        "dictionary_hash": ckpt.dictionary_hash,
        "vocab_size": ckpt.vocab_size,
        "answer_vocab": ckpt.answer_vocab.tokens,
        "hyperparameters": _config_to_dict(ckpt.config),
        "params": [{"name": k, "shape": list(a.shape)} for k, a in named.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for arr in named.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    header_len = int.from_bytes(raw[len(MAGIC) : len(MAGIC) + 8], "little")
    offset = len(MAGIC) + 8
    header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    if header["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['format_version']}")
    offset += header_len

    arrays: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes after parameter data")

    config = _config_from_dict(header["hyperparameters"])
    params = _params_from_arrays(arrays, config)
    return Checkpoint(
        config=config,
        params=params,
        answer_vocab=AnswerVocab(header["answer_vocab"]),
        vocab_size=header["vocab_size"],
        seed=header["seed"],
        config_hash=header["config_hash"],
        dictionary_hash=header["dictionary_hash"],
    )


def _params_from_arrays(arrays: dict[str, np.ndarray], config: RelNetConfig) -> RelNetParams:
    lstm = LstmParams(
        input_dim=config.embed_dim,
        hidden_dim=config.hidden_dim,
        **{k: arrays[f"lstm.{k}"] for k in ("w_i", "w_f", "w_g", "w_o", "b_i", "b_f", "b_g", "b_o")},
    )
    g_mlp = [
        DenseParams(weight=arrays[f"g{i}.weight"], bias=arrays[f"g{i}.bias"])
        for i in range(1, config.g_layers + 1)
    ]
    decoder = [
        DenseParams(weight=arrays[f"dec{i}.weight"], bias=arrays[f"dec{i}.bias"])
        for i in range(1, 4)
    ]
    return RelNetParams(
        embedding=arrays["embedding"], lstm=lstm, g_mlp=g_mlp, decoder=decoder
    )
