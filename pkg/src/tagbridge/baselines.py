"""Ablation token reducers (random, TF-IDF, truncation) and the reference
bag-of-words GCN / MLP models used for comparison runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .data import TextAttributedGraph
from .numerics import check_finite, cross_entropy_rows, rng_stream
from .reduction import ReducedText, select_topk
from .text import TokenMatrix, Vocabulary

REDUCER_KINDS = ("graph", "random", "tfidf", "truncate")


# ---------------------------------------------------------------------------
# Reducers. Each returns retained token positions, sorted ascending, so the
# reduced text keeps its original order; kept ids are token_ids[positions].
# ---------------------------------------------------------------------------

def random_reduce(token_ids: np.ndarray, k_prime: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of min(k', k) positions without replacement."""
    if k_prime < 1:
        raise ValueError("k_prime must be >= 1")
    k = len(token_ids)
    if k <= k_prime:
        return np.arange(k)
    return np.sort(rng.choice(k, size=k_prime, replace=False))


@dataclass
class CorpusStats:
    """Document frequencies over the token-id corpus."""

    doc_freq: np.ndarray
    n_docs: int

    def idf(self, token_id: int) -> float:
        return float(np.log((1.0 + self.n_docs) / (1.0 + self.doc_freq[token_id])))


def corpus_stats(docs: list[np.ndarray], vocab_size: int) -> CorpusStats:
    df = np.zeros(vocab_size, dtype=np.int64)
    for ids in docs:
        df[np.unique(ids)] += 1
    return CorpusStats(df, len(docs))


def tfidf_reduce(token_ids: np.ndarray, stats: CorpusStats, k_prime: int) -> np.ndarray:
    """Top-k' positions by tf(t, doc) * ln((1+N)/(1+df(t))), ties to the
    earlier position. Deterministic."""
    token_ids = np.asarray(token_ids, dtype=np.int64)
    tf = np.bincount(token_ids, minlength=len(stats.doc_freq))
    idf = np.log((1.0 + stats.n_docs) / (1.0 + stats.doc_freq.astype(np.float64)))
    position_scores = tf[token_ids] * idf[token_ids]
    return select_topk(position_scores, k_prime)


def truncate_reduce(token_ids: np.ndarray, k_prime: int) -> np.ndarray:
    """First min(k', k) positions."""
    if k_prime < 1:
        raise ValueError("k_prime must be >= 1")
    return np.arange(min(k_prime, len(token_ids)))


def apply_baseline_reducer(
    kind: str,
    token_matrices: list[TokenMatrix],
    k_prime: int,
    seed: int = 0,
) -> list[ReducedText]:
    """Run one of the parameter-free reducers over every node."""
    if kind not in ("random", "tfidf", "truncate"):
        raise ValueError(f"unknown baseline reducer {kind!r}")
    docs = [tm.token_ids for tm in token_matrices]
    stats = corpus_stats(docs, int(max(ids.max() for ids in docs)) + 1) if kind == "tfidf" else None
    out = []
    for i, tm in enumerate(token_matrices):
        if kind == "random":
            keep = random_reduce(tm.token_ids, k_prime, rng_stream(seed, "random-reduce", i))
        elif kind == "tfidf":
            keep = tfidf_reduce(tm.token_ids, stats, k_prime)
        elif kind == "truncate":
            keep = truncate_reduce(tm.token_ids, k_prime)
        else:
            raise ValueError(f"unknown baseline reducer {kind!r}")
        k = len(tm.token_ids)
        scores = np.full(k, 1.0 / k)
        out.append(ReducedText(i, tm.token_ids[keep], keep, scores))
    return out


# ---------------------------------------------------------------------------
# Bag-of-words features
# ---------------------------------------------------------------------------

def bow_features(docs: list[np.ndarray], vocab: Vocabulary) -> sp.csr_matrix:
    """n x V sparse token-count matrix."""
    rows, cols, vals = [], [], []
    for i, ids in enumerate(docs):
        uniq, counts = np.unique(ids, return_counts=True)
        rows.extend([i] * len(uniq))
        cols.extend(int(t) for t in uniq)
        vals.extend(int(c) for c in counts)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(docs), vocab.size), dtype=np.float64)


# ---------------------------------------------------------------------------
# Reference GCN and MLP. The GCN uses symmetric normalization with self
# loops; the MLP is the same two-layer stack with identity propagation.
# ---------------------------------------------------------------------------

@dataclass
class TwoLayerParams:
    W1: np.ndarray
    W2: np.ndarray
    lr: float = 0.05
    epochs: int = 200
    patience: int = 20

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "W2": self.W2}

    def copy_weights(self) -> "TwoLayerParams":
        return replace(self, W1=self.W1.copy(), W2=self.W2.copy())


def init_two_layer(d_in: int, d_out: int, seed: int, hidden: int = 64, **hyper) -> TwoLayerParams:
    rng = rng_stream(seed, "baseline-init")
    return TwoLayerParams(
        W1=rng.normal(0.0, np.sqrt(2.0 / (d_in + hidden)), size=(d_in, hidden)),
        W2=rng.normal(0.0, np.sqrt(2.0 / (hidden + d_out)), size=(hidden, d_out)),
        **hyper,
    )


def gcn_propagation_matrix(graph: TextAttributedGraph) -> sp.csr_matrix:
    """Symmetric-normalized adjacency with self-loops."""
    n = graph.n
    rows = [u for u, v in graph.edges] + [v for u, v in graph.edges] + list(range(n))
    cols = [v for u, v in graph.edges] + [u for u, v in graph.edges] + list(range(n))
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    deg = np.asarray(a.sum(axis=1)).ravel()
    d_inv_sqrt = 1.0 / np.sqrt(deg)
    D = sp.diags(d_inv_sqrt)
    return (D @ a @ D).tocsr()


def two_layer_forward(X: np.ndarray, P: sp.csr_matrix | None, params: TwoLayerParams,
                      want_cache: bool = False):
    """logits = P relu(P X W1) W2, with P = identity for the MLP."""
    PX = P @ X if P is not None else X
    Z1 = PX @ params.W1
    H1 = np.maximum(Z1, 0.0)
    PH = P @ H1 if P is not None else H1
    logits = PH @ params.W2
    if not want_cache:
        return logits
    return logits, {"PX": PX, "Z1": Z1, "H1": H1, "PH": PH}


def two_layer_loss(
    params: TwoLayerParams,
    X: np.ndarray,
    P: sp.csr_matrix | None,
    labels: np.ndarray,
    node_ids: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    node_ids = np.asarray(node_ids, dtype=np.intp)
    logits, cache = two_layer_forward(X, P, params, want_cache=True)
    loss, d_rows = cross_entropy_rows(logits[node_ids], labels[node_ids])
    d_logits = np.zeros_like(logits)
    d_logits[node_ids] = d_rows
    gW2 = cache["PH"].T @ d_logits
    d_PH = d_logits @ params.W2.T
    d_H1 = P.T @ d_PH if P is not None else d_PH
    d_Z1 = d_H1 * (cache["Z1"] > 0)
    gW1 = cache["PX"].T @ d_Z1
    return loss, {"W1": gW1, "W2": gW2}


@dataclass
class BaselineResult:
    accuracy: dict[str, float]
    log: list[dict] = field(default_factory=list)


def train_reference(
    X: np.ndarray,
    graph: TextAttributedGraph,
    labels: np.ndarray,
    split,
    params: TwoLayerParams,
    model: str = "gcn",
) -> tuple[TwoLayerParams, BaselineResult]:
    """Train the reference GCN (or MLP with model="mlp") like the main GNN:
    full batch, early stopping on validation accuracy."""
    if model not in ("gcn", "mlp"):
        raise ValueError(f"unknown reference model {model!r}")
    P = gcn_propagation_matrix(graph) if model == "gcn" else None
    cur = params.copy_weights()
    best = cur.copy_weights()
    best_val = -1.0
    stall = 0
    log = []
    for epoch in range(params.epochs):
        loss, grads = two_layer_loss(cur, X, P, labels, split.train)
        if not np.isfinite(loss):
            raise FloatingPointError(f"{model} training diverged at epoch {epoch}")
        cur.W1 -= params.lr * grads["W1"]
        cur.W2 -= params.lr * grads["W2"]
        check_finite(cur.W1, f"{model} W1 (epoch {epoch})")
        check_finite(cur.W2, f"{model} W2 (epoch {epoch})")
        logits = two_layer_forward(X, P, cur)
        val_ids = np.asarray(split.val, dtype=np.intp)
        val_acc = float(np.mean(np.argmax(logits[val_ids], axis=1) == labels[val_ids])) if len(val_ids) else -loss
        log.append({"epoch": epoch, "train_ce": loss, "val_acc": val_acc})
        if val_acc > best_val:
            best_val = val_acc
            best = cur.copy_weights()
            stall = 0
        else:
            stall += 1
            if stall >= params.patience:
                break
    logits = two_layer_forward(X, P, best)
    acc = {}
    for name, ids in (("train", split.train), ("val", split.val), ("test", split.test)):
        ids = np.asarray(ids, dtype=np.intp)
        acc[name] = round(float(np.mean(np.argmax(logits[ids], axis=1) == labels[ids])), 4) if len(ids) else 0.0
    return best, BaselineResult(accuracy=acc, log=log)
