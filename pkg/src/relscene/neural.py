"""Minimal neural-network substrate: dense layers, an LSTM cell, embedding
lookup, dropout, softmax cross-entropy, Adam, and a finite-difference
gradient checker.

Everything runs in float64. Forward functions are pure; backward functions
consume the caches their forward counterparts produced; all randomness comes
from explicitly passed numpy Generators, so results are reproducible bit for
bit given a seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operand shape does not match the parameter contract."""


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# dense layers


@dataclass
class DenseParams:
    """Fully connected layer: y = weight @ x + bias."""

    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


def init_dense(rng: np.random.Generator, in_dim: int, out_dim: int) -> DenseParams:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero bias."""
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    weight = rng.uniform(-limit, limit, size=(out_dim, in_dim))
    return DenseParams(weight=weight, bias=np.zeros(out_dim))


def dense_forward(params: DenseParams, x: np.ndarray) -> np.ndarray:
    if x.ndim != 1 or x.shape[0] != params.in_dim:
        raise ShapeError(
            f"dense_forward: weight is {params.weight.shape}, input is {x.shape}"
        )
    return dense_forward_batch(params, x[None, :])[0]


def dense_forward_batch(params: DenseParams, xs: np.ndarray) -> np.ndarray:
    """Forward for a stack of inputs, xs (n, in_dim) -> (n, out_dim)."""
    if xs.ndim != 2 or xs.shape[1] != params.in_dim:
        raise ShapeError(
            f"dense_forward: weight is {params.weight.shape}, input is {xs.shape}"
        )
    return xs @ params.weight.T + params.bias


def dense_backward_batch(
    params: DenseParams, xs: np.ndarray, dys: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dxs, dweight, dbias) for upstream gradient dys (n, out_dim)."""
    dweight = dys.T @ xs
    dbias = dys.sum(axis=0)
    dxs = dys @ params.weight
    return dxs, dweight, dbias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # subgradient 0 at x == 0
    return dy * (x > 0)


# ---------------------------------------------------------------------------
# softmax cross-entropy


def softmax_xent(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Stable softmax + cross-entropy for one sample.

    Returns (loss, probs) where loss = -log probs[target], computed in
    log-sum-exp form so extreme logits neither overflow nor produce inf.
    """
    if not 0 <= target < logits.shape[0]:
        raise IndexError(f"target {target} out of range for {logits.shape[0]} logits")
    losses, probs = softmax_xent_batch(logits[None, :], np.array([target]))
    return float(losses[0]), probs[0]


def softmax_xent_batch(
    logits: np.ndarray, targets: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise softmax cross-entropy: logits (n, k), targets (n,) ints."""
    if np.any(targets < 0) or np.any(targets >= logits.shape[1]):
        raise IndexError(
            f"targets out of range for {logits.shape[1]} classes: {targets}"
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    sums = exps.sum(axis=1, keepdims=True)
    probs = exps / sums
    rows = np.arange(logits.shape[0])
    losses = np.log(sums[:, 0]) - shifted[rows, targets]
    return losses, probs


def softmax_xent_backward(probs: np.ndarray, target: int) -> np.ndarray:
    """d loss / d logits = probs - one_hot(target)."""
    dlogits = probs.copy()
    dlogits[target] -= 1.0
    return dlogits


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LstmParams:
    """Gate parameters for a standard LSTM cell.

    Each gate weight is (hidden_dim, input_dim + hidden_dim) and acts on the
    concatenation [x_t, h_prev]. Gates: i = input, f = forget, g = cell
    candidate, o = output.
    """

    input_dim: int
    hidden_dim: int
    w_i: np.ndarray
    w_f: np.ndarray
    w_g: np.ndarray
    w_o: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All gate weights stacked to (4*hidden, input+hidden) for one matmul."""
        w = np.concatenate([self.w_i, self.w_f, self.w_g, self.w_o], axis=0)
        b = np.concatenate([self.b_i, self.b_f, self.b_g, self.b_o])
        return w, b


def init_lstm(rng: np.random.Generator, input_dim: int, hidden_dim: int) -> LstmParams:
    """Glorot-uniform gate weights; forget-gate bias starts at 1.0."""
    z_dim = input_dim + hidden_dim
    limit = np.sqrt(6.0 / (z_dim + hidden_dim))

    def w() -> np.ndarray:
        return rng.uniform(-limit, limit, size=(hidden_dim, z_dim))

    return LstmParams(
        input_dim=input_dim,
        hidden_dim=hidden_dim,
        w_i=w(),
        w_f=w(),
        w_g=w(),
        w_o=w(),
        b_i=np.zeros(hidden_dim),
        b_f=np.ones(hidden_dim),
        b_g=np.zeros(hidden_dim),
        b_o=np.zeros(hidden_dim),
    )


@dataclass
class LstmCache:
    """Per-step activations saved by lstm_forward for the backward pass."""

    zs: np.ndarray  # (T, n, input+hidden)
    gi: np.ndarray  # (T, n, hidden)
    gf: np.ndarray
    gg: np.ndarray
    go: np.ndarray
    cs: np.ndarray  # cell states after each step
    c_prevs: np.ndarray  # cell states before each step
    tanh_cs: np.ndarray


def lstm_step(
    params: LstmParams, x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM step on vectors: returns (h_t, c_t)."""
    if x_t.shape != (params.input_dim,) or h_prev.shape != (params.hidden_dim,):
        raise ShapeError(
            f"lstm_step: expected input {(params.input_dim,)} and hidden "
            f"{(params.hidden_dim,)}, got {x_t.shape} and {h_prev.shape}"
        )
    h, cache = lstm_forward(params, x_t[None, None, :], h0=h_prev[None], c0=c_prev[None])
    return h[0], cache.cs[-1][0]


def lstm_forward(
    params: LstmParams,
    xs: np.ndarray,
    h0: np.ndarray | None = None,
    c0: np.ndarray | None = None,
) -> tuple[np.ndarray, LstmCache]:
    """Run the cell over xs (n, T, input_dim); returns (h_last, cache).

    All n sequences must share the same length T. State starts at zero
    unless h0/c0 (n, hidden) are given.
    """
    if xs.ndim != 3 or xs.shape[2] != params.input_dim:
        raise ShapeError(
            f"lstm_forward: expected (n, T, {params.input_dim}), got {xs.shape}"
        )
    n, steps, _ = xs.shape
    hd = params.hidden_dim
    w_all, b_all = params.stacked()
    h = np.zeros((n, hd)) if h0 is None else h0
    c = np.zeros((n, hd)) if c0 is None else c0

    zs = np.empty((steps, n, params.input_dim + hd))
    gi = np.empty((steps, n, hd))
    gf = np.empty((steps, n, hd))
    gg = np.empty((steps, n, hd))
    go = np.empty((steps, n, hd))
    cs = np.empty((steps, n, hd))
    c_prevs = np.empty((steps, n, hd))
    tanh_cs = np.empty((steps, n, hd))

    for t in range(steps):
        z = np.concatenate([xs[:, t, :], h], axis=1)
        gates = z @ w_all.T + b_all
        i = sigmoid(gates[:, :hd])
        f = sigmoid(gates[:, hd : 2 * hd])
        g = np.tanh(gates[:, 2 * hd : 3 * hd])
        o = sigmoid(gates[:, 3 * hd :])
        c_prevs[t] = c
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        zs[t], gi[t], gf[t], gg[t], go[t] = z, i, f, g, o
        cs[t], tanh_cs[t] = c, tc

    cache = LstmCache(zs, gi, gf, gg, go, cs, c_prevs, tanh_cs)
    return h, cache


def lstm_backward(
    params: LstmParams, cache: LstmCache, dh_last: np.ndarray
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Backprop through time from the gradient of the final hidden state.

    Returns (dxs, grads) where dxs has the shape of the forward input and
    grads holds d loss / d param under the LstmParams field names.
    """
    steps, n, _ = cache.zs.shape
    ed, hd = params.input_dim, params.hidden_dim
    w_all, _ = params.stacked()

    dxs = np.empty((n, steps, ed))
    dw_all = np.zeros_like(w_all)
    db_all = np.zeros(4 * hd)
    dh = dh_last
    dc = np.zeros_like(dh_last)

    for t in range(steps - 1, -1, -1):
        i, f, g, o = cache.gi[t], cache.gf[t], cache.gg[t], cache.go[t]
        tc = cache.tanh_cs[t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dzi = (dc * g) * i * (1.0 - i)
        dzf = (dc * cache.c_prevs[t]) * f * (1.0 - f)
        dzg = (dc * i) * (1.0 - g * g)
        dzo = (dh * tc) * o * (1.0 - o)
        dgates = np.concatenate([dzi, dzf, dzg, dzo], axis=1)  # (n, 4*hidden)
        dw_all += dgates.T @ cache.zs[t]
        db_all += dgates.sum(axis=0)
        dz = dgates @ w_all
        dxs[:, t, :] = dz[:, :ed]
        dh = dz[:, ed:]
        dc = dc * f

    grads = {
        "w_i": dw_all[:hd],
        "w_f": dw_all[hd : 2 * hd],
        "w_g": dw_all[2 * hd : 3 * hd],
        "w_o": dw_all[3 * hd :],
        "b_i": db_all[:hd],
        "b_f": db_all[hd : 2 * hd],
        "b_g": db_all[2 * hd : 3 * hd],
        "b_o": db_all[3 * hd :],
    }
    return dxs, grads


# ---------------------------------------------------------------------------
# embedding


def embedding_lookup(table: np.ndarray, token_ids) -> np.ndarray:
    """Gather rows of table (vocab, dim) for token_ids; output (len(ids), dim)."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"token id out of range for table with {table.shape[0]} rows: {ids}"
        )
    return table[ids]


def embedding_backward(
    grad_table: np.ndarray, token_ids, upstream: np.ndarray
) -> None:
    """Scatter-add upstream (len(ids), dim) into grad_table rows in place.

    Repeated ids accumulate, matching the true Jacobian of the lookup.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    np.add.at(grad_table, ids, upstream)


# ---------------------------------------------------------------------------
# dropout


def dropout_mask(
    shape, rate: float, rng: np.random.Generator
) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 or 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(
    x: np.ndarray, rate: float, rng: np.random.Generator, train: bool
) -> np.ndarray:
    """Inverted dropout: scales survivors by 1/(1-rate); identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    return x * dropout_mask(x.shape, rate, rng)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second-moment accumulators, keyed like the parameter dict."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def init_adam_state(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(a) for k, a in params.items()},
        v={k: np.zeros_like(a) for k, a in params.items()},
        t=0,
    )


def adam_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam step, updating params and state in place."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(
                f"adam_update: grad for {name} is {g.shape}, param is {p.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(
    loss_fn,
    params: dict[str, np.ndarray],
    eps: float = 1e-5,
    grads: dict[str, np.ndarray] | None = None,
    coords_per_group: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients against central finite differences.

    loss_fn() is evaluated at the current parameter values, which this
    function perturbs in place and restores exactly. It must be
    deterministic (dropout off). Two calling modes:

    - grads given: loss_fn() returns a float, grads holds the analytic
      gradient for each parameter name.
    - grads omitted: loss_fn() returns (loss, grads); the analytic gradient
      is taken from one initial call and subsequent probe values use the
      loss component only.

    coords_per_group caps how many coordinates are probed per parameter
    array (sampled without replacement by rng); by default every coordinate
    is probed. Returns the worst relative error
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-6); the floor keeps
    finite-difference noise on near-zero gradients from dominating.
    """
    probe = loss_fn
    if grads is None:
        _, grads = loss_fn()
        probe = lambda: loss_fn()[0]
    if rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        n = flat.shape[0]
        if coords_per_group is None or coords_per_group >= n:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=coords_per_group, replace=False)
        gflat = grads[name].reshape(-1)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = probe()
            flat[idx] = orig - eps
            f_minus = probe()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            analytic = gflat[idx]
            denom = max(abs(analytic), abs(numeric), 1e-6)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
