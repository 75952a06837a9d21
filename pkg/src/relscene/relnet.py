"""Relational reasoning core: pairwise object triplets, the shared relation
MLP, aggregation, and the answer decoder, with a full hand-written backward
pass (including BPTT into the question encoder and embedding table).

The batch paths stack all object pairs of a mini-batch into one matrix so
the heavy matmuls run over hundreds of rows at once; per-sample results are
recovered through segment offsets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import PositionScheme, QuestionDict, encode_scene
from .neural import (
    DenseParams,
    LstmParams,
    dense_backward_batch,
    dense_forward,
    dense_forward_batch,
    dropout,
    dropout_mask,
    embedding_backward,
    init_dense,
    init_lstm,
    lstm_backward,
    lstm_forward,
    relu,
    softmax_xent_batch,
)
from .scene import COLORS, DEFAULT_N_MAX, MATERIALS, SHAPES, SIZES, Scene

AGGREGATION_MODES = ("sum", "mean", "concat")


class AnswerVocab:
    """Ordered answer tokens; index = decoder class index."""

    def __init__(self, tokens: list[str]):
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate answer tokens")
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, AnswerVocab) and self.tokens == other.tokens

    def token_index(self, token: str) -> int:
        idx = self.index.get(token)
        if idx is None:
            raise KeyError(f"answer token {token!r} not in vocabulary")
        return idx

    @classmethod
    def default(cls) -> "AnswerVocab":
        tokens = [str(i) for i in range(11)]
        tokens += ["yes", "no"]
        tokens += list(COLORS) + list(SIZES) + list(MATERIALS) + list(SHAPES)
        return cls(tokens)


@dataclass(frozen=True)
class RelNetConfig:
    """Architecture hyperparameters plus the encoding/aggregation choices."""

    scheme: str = "bucket:20"
    mode: str = "sum"
    embed_dim: int = 64
    hidden_dim: int = 128
    g_width: int = 512
    g_layers: int = 4
    decoder_hidden: tuple[int, int] = (512, 1024)
    n_answers: int = 28
    n_max: int = DEFAULT_N_MAX
    dropout_rate: float = 0.02

    def position_scheme(self) -> PositionScheme:
        return PositionScheme.parse(self.scheme)

    def object_dim(self) -> int:
        return self.position_scheme().object_dims(self.n_max)

    def g_input_dim(self) -> int:
        return 2 * self.object_dim() + self.hidden_dim

    def decoder_input_dim(self) -> int:
        # concat keeps every padded pair slot, so the decoder head widens
        if self.mode == "concat":
            return self.g_width * self.n_max * self.n_max
        return self.g_width


@dataclass
class RelNetParams:
    embedding: np.ndarray  # (vocab, embed_dim)
    lstm: LstmParams
    g_mlp: list[DenseParams]
    decoder: list[DenseParams]

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Ordered name -> array view over every trainable tensor."""
        out: dict[str, np.ndarray] = {"embedding": self.embedding}
        for name in ("w_i", "w_f", "w_g", "w_o", "b_i", "b_f", "b_g", "b_o"):
            out[f"lstm.{name}"] = getattr(self.lstm, name)
        for i, layer in enumerate(self.g_mlp, start=1):
            out[f"g{i}.weight"] = layer.weight
            out[f"g{i}.bias"] = layer.bias
        for i, layer in enumerate(self.decoder, start=1):
            out[f"dec{i}.weight"] = layer.weight
            out[f"dec{i}.bias"] = layer.bias
        return out

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(a) for k, a in self.named_arrays().items()}


def init_relnet_params(
    rng: np.random.Generator, vocab_size: int, config: RelNetConfig
) -> RelNetParams:
    embedding = rng.uniform(-0.1, 0.1, size=(vocab_size, config.embed_dim))
    lstm = init_lstm(rng, config.embed_dim, config.hidden_dim)
    g_mlp = []
    in_dim = config.g_input_dim()
    for _ in range(config.g_layers):
        g_mlp.append(init_dense(rng, in_dim, config.g_width))
        in_dim = config.g_width
    decoder = []
    in_dim = config.decoder_input_dim()
    for width in (*config.decoder_hidden, config.n_answers):
        decoder.append(init_dense(rng, in_dim, width))
        in_dim = width
    return RelNetParams(embedding=embedding, lstm=lstm, g_mlp=g_mlp, decoder=decoder)


# ---------------------------------------------------------------------------
# forward pieces


def form_triplets(objects, q: np.ndarray) -> np.ndarray:
    """All ordered object pairs (i, j), including i == j, each concatenated
    with the question encoding: row i*N + j is o_i ++ o_j ++ q."""
    objs = np.asarray(objects, dtype=np.float64)
    if objs.ndim != 2 or objs.shape[0] == 0:
        raise ValueError("form_triplets needs at least one encoded object")
    n = objs.shape[0]
    left = np.repeat(objs, n, axis=0)
    right = np.tile(objs, (n, 1))
    qs = np.broadcast_to(q, (n * n, q.shape[0]))
    return np.concatenate([left, right, qs], axis=1)


def g_forward(triplet: np.ndarray, g_mlp: list[DenseParams]) -> np.ndarray:
    """Relation vector for one triplet: dense + ReLU through every layer."""
    h = triplet
    for layer in g_mlp:
        h = relu(dense_forward(layer, h))
    return h


def g_forward_batch(
    triplets: np.ndarray, g_mlp: list[DenseParams]
) -> list[np.ndarray]:
    """Activations [input, layer1, ..., layerK] for a stack of triplets."""
    acts = [triplets]
    for layer in g_mlp:
        acts.append(relu(dense_forward_batch(layer, acts[-1])))
    return acts


def aggregate(relations, mode: str, expected_count: int | None = None) -> np.ndarray:
    """Collapse relation vectors into one: sum, mean, or row-major concat."""
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    if isinstance(relations, list):
        if not relations:
            raise ValueError("aggregate needs a non-empty relation list")
        dims = {np.shape(r) for r in relations}
        if len(dims) > 1:
            raise ValueError(f"ragged relation dims: {sorted(dims)}")
        rel = np.stack([np.asarray(r, dtype=np.float64) for r in relations])
    else:
        rel = np.asarray(relations, dtype=np.float64)
    if rel.ndim != 2 or rel.shape[0] == 0:
        raise ValueError("aggregate needs a non-empty (count, dim) stack")
    if mode == "sum":
        return rel.sum(axis=0)
    if mode == "mean":
        return rel.mean(axis=0)
    if expected_count is not None and rel.shape[0] != expected_count:
        raise ValueError(
            f"concat aggregation expects {expected_count} relations, got {rel.shape[0]}"
        )
    return rel.reshape(-1)


def decode_answer(
    agg: np.ndarray,
    decoder: list[DenseParams],
    dropout_rng: np.random.Generator | None,
    train: bool,
    dropout_rate: float = 0.02,
) -> np.ndarray:
    """Two ReLU layers, dropout before the last dense layer, raw logits out."""
    h = relu(dense_forward(decoder[0], agg))
    h = relu(dense_forward(decoder[1], h))
    h = dropout(h, dropout_rate, dropout_rng, train)
    return dense_forward(decoder[2], h)


# ---------------------------------------------------------------------------
# batched forward / backward over encoded samples


@dataclass
class EncodedSample:
    objects: np.ndarray  # (N, object_dim)
    token_ids: list[int]
    target: int = -1  # answer index; -1 when only predicting


@dataclass
class _BatchCache:
    lstm_groups: list  # (sample_idxs, ids, LstmCache)
    counts: np.ndarray
    offsets: np.ndarray
    mask: np.ndarray | None
    g_acts: list[np.ndarray]
    agg: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    a2_dropped: np.ndarray
    drop_mask: np.ndarray | None


def forward_batch(
    samples: list[EncodedSample],
    params: RelNetParams,
    mode: str,
    n_max: int = DEFAULT_N_MAX,
    dropout_rate: float = 0.02,
    rng: np.random.Generator | None = None,
    train: bool = False,
) -> tuple[np.ndarray, _BatchCache]:
    """Logits (batch, n_answers) for encoded samples, plus backward caches."""
    if not samples:
        raise ValueError("empty batch")
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    n_batch = len(samples)
    hidden = params.lstm.hidden_dim

    # question encoder, batched per question length
    groups: dict[int, list[int]] = {}
    for b, s in enumerate(samples):
        if len(s.token_ids) == 0:
            raise ValueError("cannot encode an empty question")
        groups.setdefault(len(s.token_ids), []).append(b)
    q_enc = np.empty((n_batch, hidden))
    lstm_groups = []
    for length in sorted(groups):
        idxs = groups[length]
        ids = np.array([samples[b].token_ids for b in idxs], dtype=np.int64)
        xs = params.embedding[ids]
        h_last, cache = lstm_forward(params.lstm, xs)
        q_enc[idxs] = h_last
        lstm_groups.append((idxs, ids, cache))

    # one triplet matrix for the whole batch
    parts = []
    masks = [] if mode == "concat" else None
    for b, s in enumerate(samples):
        objs = s.objects
        if mode == "concat":
            n = objs.shape[0]
            if n > n_max:
                raise ValueError(f"sample has {n} objects, n_max is {n_max}")
            padded = np.zeros((n_max, objs.shape[1]))
            padded[:n] = objs
            parts.append(form_triplets(padded, q_enc[b]))
            real = np.zeros(n_max)
            real[:n] = 1.0
            masks.append(np.outer(real, real).reshape(-1))
        else:
            parts.append(form_triplets(objs, q_enc[b]))
    counts = np.array([p.shape[0] for p in parts])
    offsets = np.concatenate([[0], np.cumsum(counts)])
    triplets = np.concatenate(parts, axis=0)

    g_acts = g_forward_batch(triplets, params.g_mlp)
    relations = g_acts[-1]
    mask = None
    if mode == "concat":
        mask = np.concatenate(masks)
        relations = relations * mask[:, None]

    if mode == "sum":
        agg = np.add.reduceat(relations, offsets[:-1], axis=0)
    elif mode == "mean":
        agg = np.add.reduceat(relations, offsets[:-1], axis=0) / counts[:, None]
    else:
        agg = relations.reshape(n_batch, -1)

    a1 = relu(dense_forward_batch(params.decoder[0], agg))
    a2 = relu(dense_forward_batch(params.decoder[1], a1))
    drop_mask = None
    a2_dropped = a2
    if train and dropout_rate > 0:
        if rng is None:
            raise ValueError("training forward needs a dropout rng")
        drop_mask = dropout_mask(a2.shape, dropout_rate, rng)
        a2_dropped = a2 * drop_mask
    logits = dense_forward_batch(params.decoder[2], a2_dropped)

    cache = _BatchCache(
        lstm_groups=lstm_groups,
        counts=counts,
        offsets=offsets,
        mask=mask,
        g_acts=g_acts,
        agg=agg,
        a1=a1,
        a2=a2,
        a2_dropped=a2_dropped,
        drop_mask=drop_mask,
    )
    return logits, cache


def loss_and_grads_encoded(
    samples: list[EncodedSample],
    params: RelNetParams,
    mode: str,
    n_max: int = DEFAULT_N_MAX,
    dropout_rate: float = 0.02,
    rng: np.random.Generator | None = None,
    train: bool = True,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy over the batch and gradients for every
    parameter. With train=False the dropout layer is the identity, which
    makes the loss deterministic (used by the gradient checker)."""
    logits, cache = forward_batch(
        samples, params, mode, n_max, dropout_rate, rng, train
    )
    targets = np.array([s.target for s in samples], dtype=np.int64)
    losses, probs = softmax_xent_batch(logits, targets)
    loss = float(losses.mean())

    n_batch = len(samples)
    dlogits = probs.copy()
    dlogits[np.arange(n_batch), targets] -= 1.0
    dlogits /= n_batch

    grads = params.zero_grads()

    # decoder
    dx, dw, db = dense_backward_batch(params.decoder[2], cache.a2_dropped, dlogits)
    grads["dec3.weight"] += dw
    grads["dec3.bias"] += db
    if cache.drop_mask is not None:
        dx = dx * cache.drop_mask
    dz2 = dx * (cache.a2 > 0)
    dx, dw, db = dense_backward_batch(params.decoder[1], cache.a1, dz2)
    grads["dec2.weight"] += dw
    grads["dec2.bias"] += db
    dz1 = dx * (cache.a1 > 0)
    d_agg, dw, db = dense_backward_batch(params.decoder[0], cache.agg, dz1)
    grads["dec1.weight"] += dw
    grads["dec1.bias"] += db

    # undo the aggregation
    if mode == "sum":
        d_rel = np.repeat(d_agg, cache.counts, axis=0)
    elif mode == "mean":
        d_rel = np.repeat(d_agg / cache.counts[:, None], cache.counts, axis=0)
    else:
        d_rel = d_agg.reshape(-1, params.g_mlp[-1].out_dim)
    if cache.mask is not None:
        d_rel = d_rel * cache.mask[:, None]

    # relation MLP
    dy = d_rel
    for k in range(len(params.g_mlp) - 1, -1, -1):
        dz = dy * (cache.g_acts[k + 1] > 0)
        dy, dw, db = dense_backward_batch(params.g_mlp[k], cache.g_acts[k], dz)
        grads[f"g{k + 1}.weight"] += dw
        grads[f"g{k + 1}.bias"] += db

    # question part of each triplet feeds back into the LSTM; the object
    # encodings are fixed inputs so their slice of dy is dropped
    obj_dim = samples[0].objects.shape[1]
    dq_rows = dy[:, 2 * obj_dim :]
    dq = np.add.reduceat(dq_rows, cache.offsets[:-1], axis=0)

    embed_dim = params.embedding.shape[1]
    for idxs, ids, lstm_cache in cache.lstm_groups:
        dxs, lstm_grads = lstm_backward(params.lstm, lstm_cache, dq[idxs])
        for name, g in lstm_grads.items():
            grads[f"lstm.{name}"] += g
        embedding_backward(
            grads["embedding"], ids.reshape(-1), dxs.reshape(-1, embed_dim)
        )

    return loss, grads


def predict_batch(
    samples: list[EncodedSample],
    params: RelNetParams,
    mode: str,
    n_max: int = DEFAULT_N_MAX,
) -> np.ndarray:
    """Argmax answer indices in eval mode; ties resolve to the lowest index."""
    logits, _ = forward_batch(samples, params, mode, n_max, train=False)
    return logits.argmax(axis=1)


def encode_sample(
    scene: Scene,
    question_tokens: list[str],
    scheme: PositionScheme,
    qdict: QuestionDict,
    answer_vocab: AnswerVocab,
    answer: str | None = None,
    n_max: int = DEFAULT_N_MAX,
) -> EncodedSample:
    target = -1 if answer is None else answer_vocab.token_index(answer)
    return EncodedSample(
        objects=encode_scene(scene, scheme, n_max),
        token_ids=qdict.encode(question_tokens),
        target=target,
    )


def predict(
    scene: Scene,
    question_tokens: list[str],
    params: RelNetParams,
    scheme: PositionScheme,
    mode: str,
    qdict: QuestionDict,
    answer_vocab: AnswerVocab,
    n_max: int = DEFAULT_N_MAX,
) -> str:
    """Full pipeline answer for one scene/question pair (dropout off)."""
    sample = encode_sample(scene, question_tokens, scheme, qdict, answer_vocab, None, n_max)
    idx = predict_batch([sample], params, mode, n_max)[0]
    return answer_vocab.tokens[int(idx)]


def loss_and_grads(
    batch: list,
    params: RelNetParams,
    scheme: PositionScheme,
    mode: str,
    qdict: QuestionDict,
    answer_vocab: AnswerVocab,
    rng: np.random.Generator | None = None,
    n_max: int = DEFAULT_N_MAX,
    dropout_rate: float = 0.02,
    train: bool = True,
) -> tuple[float, dict[str, np.ndarray]]:
    """Convenience wrapper: batch is a list of (Scene, QASample) pairs."""
    samples = [
        encode_sample(
            scene, qa.question_tokens, scheme, qdict, answer_vocab, qa.answer, n_max
        )
        for scene, qa in batch
    ]
    return loss_and_grads_encoded(
        samples, params, mode, n_max, dropout_rate, rng, train
    )
