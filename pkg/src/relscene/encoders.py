"""Object-to-vector and question-to-vector encoders.

Objects become a 15-dim attribute one-hot block followed by a position
block whose layout depends on the chosen scheme: per-pixel one-hot,
fixed-width bucketing, or per-axis rank enumeration. Questions become the
final hidden state of an LSTM run over trainable word embeddings.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .neural import LstmParams, embedding_lookup, lstm_forward
from .scene import (
    ATTRIBUTE_NAMES,
    ATTRIBUTE_VALUES,
    DEFAULT_N_MAX,
    IMAGE_HEIGHT,
    IMAGE_WIDTH,
    Scene,
    SceneObject,
)

ATTRIBUTE_DIM = sum(len(ATTRIBUTE_VALUES[a]) for a in ATTRIBUTE_NAMES)  # 15


@dataclass(frozen=True)
class PositionScheme:
    """Position encoding selector: onehot, bucket:<size>, or enum."""

    kind: str
    bucket_size: int | None = None

    def __post_init__(self):
        if self.kind not in ("onehot", "bucket", "enum"):
            raise ValueError(f"unknown position scheme kind: {self.kind!r}")
        if self.kind == "bucket":
            if self.bucket_size is None or not 1 <= self.bucket_size <= IMAGE_WIDTH:
                raise ValueError(
                    f"bucket size must be in 1..{IMAGE_WIDTH}, got {self.bucket_size}"
                )
        elif self.bucket_size is not None:
            raise ValueError(f"{self.kind} scheme takes no bucket size")

    @staticmethod
    def parse(text: str) -> "PositionScheme":
        """Parse a config string: 'onehot', 'bucket:<size>', or 'enum'."""
        if text == "onehot":
            return PositionScheme("onehot")
        if text == "enum":
            return PositionScheme("enum")
        if text.startswith("bucket:"):
            return PositionScheme("bucket", int(text.split(":", 1)[1]))
        raise ValueError(f"unknown position scheme: {text!r}")

    def label(self) -> str:
        if self.kind == "bucket":
            return f"bucket:{self.bucket_size}"
        return self.kind

    def position_dims(self, n_max: int = DEFAULT_N_MAX) -> int:
        if self.kind == "onehot":
            return IMAGE_WIDTH + IMAGE_HEIGHT
        if self.kind == "bucket":
            s = self.bucket_size
            return math.ceil(IMAGE_WIDTH / s) + math.ceil(IMAGE_HEIGHT / s)
        return 2 * n_max

    def object_dims(self, n_max: int = DEFAULT_N_MAX) -> int:
        return ATTRIBUTE_DIM + self.position_dims(n_max)


def encode_attributes(obj: SceneObject) -> np.ndarray:
    """Concatenated one-hot blocks: color(8) | material(2) | size(2) | shape(3)."""
    out = np.zeros(ATTRIBUTE_DIM)
    offset = 0
    for attr in ATTRIBUTE_NAMES:
        out[offset + obj.attribute_index(attr)] = 1.0
        offset += len(ATTRIBUTE_VALUES[attr])
    return out


def _check_coords(x: int, y: int) -> None:
    if not (0 <= x < IMAGE_WIDTH and 0 <= y < IMAGE_HEIGHT):
        raise ValueError(
            f"pixel ({x}, {y}) outside [0, {IMAGE_WIDTH}) x [0, {IMAGE_HEIGHT})"
        )


def encode_position_onehot(x: int, y: int) -> np.ndarray:
    """One 1 at index x and one at IMAGE_WIDTH + y; length 800."""
    _check_coords(x, y)
    out = np.zeros(IMAGE_WIDTH + IMAGE_HEIGHT)
    out[x] = 1.0
    out[IMAGE_WIDTH + y] = 1.0
    return out


def encode_position_bucketing(x: int, y: int, bucket_size: int) -> np.ndarray:
    """Per-axis one-hot over floor(coord / bucket_size); bucket counts are
    ceil(480/s) and ceil(320/s) so trailing partial buckets are kept."""
    _check_coords(x, y)
    if bucket_size < 1:
        raise ValueError(f"bucket size must be >= 1, got {bucket_size}")
    nx = math.ceil(IMAGE_WIDTH / bucket_size)
    ny = math.ceil(IMAGE_HEIGHT / bucket_size)
    out = np.zeros(nx + ny)
    out[x // bucket_size] = 1.0
    out[nx + y // bucket_size] = 1.0
    return out


def _axis_rank(values: list[int], index: int) -> int:
    """1-based ascending rank of values[index]; ties broken by list order."""
    v = values[index]
    rank = 1
    for j, other in enumerate(values):
        if other < v or (other == v and j < index):
            rank += 1
    return rank


def encode_position_enumeration(
    scene: Scene, object_index: int, n_max: int = DEFAULT_N_MAX
) -> np.ndarray:
    """Rank of the object's x among all scene x's, one-hot in the first n_max
    slots, and likewise for y in the last n_max slots."""
    xs = [o.x for o in scene.objects]
    ys = [o.y for o in scene.objects]
    out = np.zeros(2 * n_max)
    out[_axis_rank(xs, object_index) - 1] = 1.0
    out[n_max + _axis_rank(ys, object_index) - 1] = 1.0
    return out


def encode_object(
    obj: SceneObject,
    scene: Scene,
    scheme: PositionScheme,
    n_max: int = DEFAULT_N_MAX,
) -> np.ndarray:
    """Attribute block followed by the scheme's position block."""
    if scheme.kind == "onehot":
        pos = encode_position_onehot(obj.x, obj.y)
    elif scheme.kind == "bucket":
        pos = encode_position_bucketing(obj.x, obj.y, scheme.bucket_size)
    else:
        index = next(
            (i for i, o in enumerate(scene.objects) if o is obj),
            None,
        )
        if index is None:
            index = scene.objects.index(obj)
        pos = encode_position_enumeration(scene, index, n_max)
    return np.concatenate([encode_attributes(obj), pos])


def encode_scene(
    scene: Scene, scheme: PositionScheme, n_max: int = DEFAULT_N_MAX
) -> np.ndarray:
    """All objects encoded, stacked to (N, object_dims)."""
    return np.stack([encode_object(o, scene, scheme, n_max) for o in scene.objects])


# ---------------------------------------------------------------------------
# question dictionary and encoder


class QuestionDict:
    """Ordered word-to-id map; id 0 is the reserved padding/unknown slot.

    Unknown words encode to id 0 and bump unknown_count instead of raising,
    so evaluation on unseen phrasings degrades gracefully.
    """

    RESERVED = "<pad>"

    def __init__(self, words: list[str]):
        if QuestionDict.RESERVED in words:
            raise ValueError(f"{QuestionDict.RESERVED!r} is reserved")
        if len(set(words)) != len(words):
            raise ValueError("duplicate words in dictionary")
        self.words = [QuestionDict.RESERVED] + list(words)
        self.ids = {w: i for i, w in enumerate(self.words)}
        self.unknown_count = 0

    def __len__(self) -> int:
        return len(self.words)

    @classmethod
    def from_corpus(cls, token_lists) -> "QuestionDict":
        vocab = sorted({tok for tokens in token_lists for tok in tokens})
        return cls(vocab)

    def encode(self, tokens: list[str]) -> list[int]:
        out = []
        for tok in tokens:
            idx = self.ids.get(tok)
            if idx is None:
                self.unknown_count += 1
                idx = 0
            out.append(idx)
        return out

    def decode(self, idx: int) -> str:
        return self.words[idx]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.words) + "\n")

    @classmethod
    def load(cls, path) -> "QuestionDict":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != cls.RESERVED:
            raise ValueError(f"dictionary file must start with {cls.RESERVED!r}")
        return cls(lines[1:])

    def content_hash(self) -> str:
        data = "\n".join(self.words).encode("utf-8")
        return hashlib.sha256(data).hexdigest()


def encode_question(
    token_ids: list[int],
    embedding_table: np.ndarray,
    lstm_params: LstmParams,
) -> np.ndarray:
    """Embed the token ids and run the LSTM left to right from zero state;
    the encoding is the final hidden state."""
    if len(token_ids) == 0:
        raise ValueError("cannot encode an empty question")
    xs = embedding_lookup(embedding_table, token_ids)[None, :, :]
    h_last, _ = lstm_forward(lstm_params, xs)
    return h_last[0]
