"""Trainable sequence encoder over bridged sequences: one pre-norm-free
self-attention block (single head, rotary positions on queries/keys),
a GELU feed-forward, mean pooling that skips separators, and a linear
classifier head.

The forward/backward passes are written by hand in numpy so every gradient
is finite-difference checkable. Training is plain mini-batch gradient
descent with a seed-derived batch order.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import check_finite, cross_entropy_rows, gelu, gelu_grad, rng_stream, softmax
from .sequence import SEP_PROVENANCE, BridgeSequence
from .text import EmbeddingTable

PARAM_ORDER = ("emb", "Wq", "Wk", "Wv", "Wo", "W1", "W2", "W_c", "b_c")


@dataclass
class MiniLmParams:
    emb: np.ndarray            # V x d_lm, trainable
    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray
    Wo: np.ndarray
    W1: np.ndarray             # d_lm x d_ff
    W2: np.ndarray             # d_ff x d_lm
    W_c: np.ndarray            # d_lm x C
    b_c: np.ndarray
    rotary_base: float = 10000.0
    use_rotary: bool = True
    lr: float = 0.1
    epochs: int = 6
    batch_size: int = 32

    @property
    def vocab_size(self) -> int:
        return self.emb.shape[0]

    @property
    def d_lm(self) -> int:
        return self.emb.shape[1]

    @property
    def d_ff(self) -> int:
        return self.W1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.W_c.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_ORDER}

    def copy_weights(self) -> "MiniLmParams":
        return replace(self, **{k: v.copy() for k, v in self.arrays().items()})

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in PARAM_ORDER:
            h.update(np.ascontiguousarray(getattr(self, name)).tobytes())
        return h.hexdigest()


def init_lm_params(
    table: EmbeddingTable,
    num_classes: int,
    seed: int,
    d_lm: int | None = None,
    d_ff: int | None = None,
    **hyper,
) -> MiniLmParams:
    """Initialize; the token embedding starts from the frozen table when the
    widths agree, otherwise from a seeded Gaussian of the same scale."""
    d_lm = table.dim if d_lm is None else d_lm
    d_ff = 4 * d_lm if d_ff is None else d_ff
    rng = rng_stream(seed, "lm-init")
    if d_lm == table.dim:
        emb = table.table.copy()
    else:
        emb = rng.normal(0.0, (1.0 / np.sqrt(d_lm)) ** 0.5, size=(table.vocab_size, d_lm))

    def glorot(n_in, n_out):
        return rng.normal(0.0, np.sqrt(2.0 / (n_in + n_out)), size=(n_in, n_out))

    return MiniLmParams(
        emb=emb,
        Wq=glorot(d_lm, d_lm), Wk=glorot(d_lm, d_lm),
        Wv=glorot(d_lm, d_lm), Wo=glorot(d_lm, d_lm),
        W1=glorot(d_lm, d_ff), W2=glorot(d_ff, d_lm),
        W_c=glorot(d_lm, num_classes), b_c=np.zeros(num_classes),
        **hyper,
    )


# ---------------------------------------------------------------------------
# Rotary positions: pairwise rotation of (even, odd) feature pairs by
# position-dependent angles. The backward pass is the inverse rotation.
# ---------------------------------------------------------------------------

def _rotary_tables(length: int, dim: int, base: float) -> tuple[np.ndarray, np.ndarray]:
    if dim % 2:
        raise ValueError("rotary positions require an even dimension")
    freqs = base ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = np.arange(length, dtype=np.float64)[:, None] * freqs[None, :]
    return np.cos(angles), np.sin(angles)


def apply_rotary(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    xe, xo = x[:, ::2], x[:, 1::2]
    out[:, ::2] = xe * cos - xo * sin
    out[:, 1::2] = xe * sin + xo * cos
    return out


def rotary_backward(d_out: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    dx = np.empty_like(d_out)
    de, do = d_out[:, ::2], d_out[:, 1::2]
    dx[:, ::2] = de * cos + do * sin
    dx[:, 1::2] = -de * sin + do * cos
    return dx


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def lm_forward(
    seq: BridgeSequence,
    params: MiniLmParams,
    want_cache: bool = False,
):
    """Pooled embedding and class logits for one sequence.

    Returns (pooled, logits) or (pooled, logits, cache) with `want_cache`.
    """
    ids = np.asarray(seq.token_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("lm_forward: empty sequence")
    if ids.min() < 0 or ids.max() >= params.vocab_size:
        raise ValueError("lm_forward: token id out of range")
    x = params.emb[ids]                              # L x d
    L, d = x.shape
    q = x @ params.Wq
    k = x @ params.Wk
    v = x @ params.Wv
    if params.use_rotary:
        cos, sin = _rotary_tables(L, d, params.rotary_base)
        qr = apply_rotary(q, cos, sin)
        kr = apply_rotary(k, cos, sin)
    else:
        cos = sin = None
        qr, kr = q, k
    scores = (qr @ kr.T) / np.sqrt(d)
    attn = softmax(scores, axis=1)
    ctx = attn @ v
    o = ctx @ params.Wo
    x1 = x + o
    h1 = x1 @ params.W1
    g = gelu(h1)
    x2 = x1 + g @ params.W2
    keep = seq.provenance != SEP_PROVENANCE
    pooled = x2[keep].mean(axis=0)
    logits = pooled @ params.W_c + params.b_c
    if not want_cache:
        return pooled, logits
    cache = {"ids": ids, "x": x, "qr": qr, "kr": kr, "v": v, "cos": cos, "sin": sin,
             "attn": attn, "ctx": ctx, "x1": x1, "h1": h1, "g": g, "x2": x2, "keep": keep,
             "pooled": pooled}
    return pooled, logits, cache


def lm_backward(
    d_logits: np.ndarray,
    cache: dict,
    params: MiniLmParams,
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate parameter gradients for one sequence into `grads`."""
    d = params.d_lm
    keep = cache["keep"]
    m = int(np.count_nonzero(keep))

    grads["W_c"] += np.outer(cache["pooled"], d_logits)
    grads["b_c"] += d_logits
    d_pooled = params.W_c @ d_logits

    d_x2 = np.zeros_like(cache["x2"])
    d_x2[keep] = d_pooled / m

    # feed-forward
    d_g = d_x2 @ params.W2.T
    grads["W2"] += cache["g"].T @ d_x2
    d_h1 = d_g * gelu_grad(cache["h1"])
    grads["W1"] += cache["x1"].T @ d_h1
    d_x1 = d_x2 + d_h1 @ params.W1.T

    # attention
    grads["Wo"] += cache["ctx"].T @ d_x1
    d_ctx = d_x1 @ params.Wo.T
    attn = cache["attn"]
    d_attn = d_ctx @ cache["v"].T
    d_v = attn.T @ d_ctx
    d_scores = attn * (d_attn - np.sum(d_attn * attn, axis=1, keepdims=True))
    d_scores /= np.sqrt(d)
    d_qr = d_scores @ cache["kr"]
    d_kr = d_scores.T @ cache["qr"]
    if params.use_rotary:
        d_q = rotary_backward(d_qr, cache["cos"], cache["sin"])
        d_k = rotary_backward(d_kr, cache["cos"], cache["sin"])
    else:
        d_q, d_k = d_qr, d_kr

    x = cache["x"]
    grads["Wq"] += x.T @ d_q
    grads["Wk"] += x.T @ d_k
    grads["Wv"] += x.T @ d_v
    d_x = d_x1 + d_q @ params.Wq.T + d_k @ params.Wk.T + d_v @ params.Wv.T
    np.add.at(grads["emb"], cache["ids"], d_x)


def lm_batch_loss(
    params: MiniLmParams,
    seqs: list[BridgeSequence],
    labels: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean CE over a batch of sequences with gradients for every parameter."""
    labels = np.asarray(labels, dtype=np.intp)
    logits = np.zeros((len(seqs), params.num_classes))
    caches = []
    for row, seq in enumerate(seqs):
        _, lg, cache = lm_forward(seq, params, want_cache=True)
        logits[row] = lg
        caches.append(cache)
    loss, d_rows = cross_entropy_rows(logits, labels)
    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    for row, cache in enumerate(caches):
        lm_backward(d_rows[row], cache, params, grads)
    return loss, grads


# ---------------------------------------------------------------------------
# Training and node-embedding extraction
# ---------------------------------------------------------------------------

@dataclass
class LmTrainLog:
    epochs: list[dict] = field(default_factory=list)

    def final(self) -> dict:
        return self.epochs[-1] if self.epochs else {}


def train_lm(
    seqs: list[BridgeSequence],
    labels: np.ndarray,
    params: MiniLmParams,
    seed: int,
) -> tuple[MiniLmParams, LmTrainLog]:
    """Mini-batch gradient descent on mean CE over the labeled sequences;
    batch order is a fixed per-epoch permutation derived from the seed."""
    labels = np.asarray(labels, dtype=np.intp)
    cur = params.copy_weights()
    log = LmTrainLog()
    n = len(seqs)
    for epoch in range(params.epochs):
        order = rng_stream(seed, "lm-batch", epoch).permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, params.batch_size):
            idx = order[start:start + params.batch_size]
            loss, grads = lm_batch_loss(cur, [seqs[i] for i in idx], labels[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(f"encoder training diverged at epoch {epoch}")
            for name, g in grads.items():
                arr = getattr(cur, name)
                arr -= params.lr * g
            epoch_loss += loss
            batches += 1
        for name in PARAM_ORDER:
            check_finite(getattr(cur, name), f"encoder {name} (epoch {epoch})")
        log.epochs.append({"epoch": epoch, "train_ce": epoch_loss / max(batches, 1)})
    return cur, log


@dataclass
class NodeEmbeddingMatrix:
    H: np.ndarray
    checkpoint_id: str

    @property
    def n(self) -> int:
        return self.H.shape[0]


def embed_all(seqs: list[BridgeSequence], params: MiniLmParams) -> NodeEmbeddingMatrix:
    """Pooled embedding for every node's sequence, in node-id order."""
    ordered = sorted(seqs, key=lambda s: s.root)
    H = np.zeros((len(ordered), params.d_lm))
    for row, seq in enumerate(ordered):
        pooled, _ = lm_forward(seq, params)
        H[row] = pooled
    check_finite(H, "node embedding matrix")
    return NodeEmbeddingMatrix(H, params.checksum())


def lm_accuracy(seqs: list[BridgeSequence], labels: np.ndarray, params: MiniLmParams) -> float:
    """Argmax accuracy of the classifier head over the given sequences."""
    correct = 0
    for seq, y in zip(seqs, labels):
        _, logits = lm_forward(seq, params)
        correct += int(np.argmax(logits) == y)
    return correct / max(len(seqs), 1)


# ---------------------------------------------------------------------------
# Checkpoint format: little-endian header (V, d_lm, d_ff, C as int32), the
# parameter tensors in declared order as float64, then the rotary base.
# ---------------------------------------------------------------------------

def save_lm(params: MiniLmParams, path: str | Path) -> None:
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<iiii", params.vocab_size, params.d_lm,
                             params.d_ff, params.num_classes))
        for name in PARAM_ORDER:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())
        fh.write(struct.pack("<d", params.rotary_base))


def load_lm(path: str | Path, **hyper) -> MiniLmParams:
    with Path(path).open("rb") as fh:
        V, d_lm, d_ff, C = struct.unpack("<iiii", fh.read(16))
        shapes = {"emb": (V, d_lm), "Wq": (d_lm, d_lm), "Wk": (d_lm, d_lm),
                  "Wv": (d_lm, d_lm), "Wo": (d_lm, d_lm), "W1": (d_lm, d_ff),
                  "W2": (d_ff, d_lm), "W_c": (d_lm, C), "b_c": (C,)}
        arrays = {}
        for name in PARAM_ORDER:
            shape = shapes[name]
            count = int(np.prod(shape))
            arrays[name] = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape).astype(np.float64)
        (base,) = struct.unpack("<d", fh.read(8))
    return MiniLmParams(**arrays, rotary_base=base, **hyper)
