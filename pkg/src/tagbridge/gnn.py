"""Two-layer mean-aggregator GNN over (adjacency, node features) for node
classification, plus an inner-product link-prediction head evaluated by AUC.

Layer rule: h' = ReLU(W_self h + W_neigh mean_{j in N(i)} h_j); the second
layer drops the nonlinearity and produces class logits, so the hidden layer
is the network's node representation (used for link scoring). Isolated
nodes get a zero neighbor mean.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.stats import rankdata

from .data import TextAttributedGraph
from .numerics import check_finite, cross_entropy_rows, rng_stream, sigmoid

SAGE_PARAM_ORDER = ("W_self1", "W_neigh1", "W_self2", "W_neigh2")


@dataclass
class SageParams:
    W_self1: np.ndarray
    W_neigh1: np.ndarray
    W_self2: np.ndarray
    W_neigh2: np.ndarray
    lr: float = 0.05
    epochs: int = 200
    patience: int = 20

    @property
    def hidden(self) -> int:
        return self.W_self1.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in SAGE_PARAM_ORDER}

    def copy_weights(self) -> "SageParams":
        return replace(self, **{k: v.copy() for k, v in self.arrays().items()})


def init_sage_params(d_in: int, d_out: int, seed: int, hidden: int = 64, **hyper) -> SageParams:
    rng = rng_stream(seed, "gnn-init")

    def glorot(n_in, n_out):
        return rng.normal(0.0, np.sqrt(2.0 / (n_in + n_out)), size=(n_in, n_out))

    return SageParams(
        W_self1=glorot(d_in, hidden), W_neigh1=glorot(d_in, hidden),
        W_self2=glorot(hidden, d_out), W_neigh2=glorot(hidden, d_out),
        **hyper,
    )


def neighbor_mean_matrix(graph: TextAttributedGraph) -> sp.csr_matrix:
    """Sparse row-normalized adjacency (zero rows for isolated nodes)."""
    rows, cols, vals = [], [], []
    for i in range(graph.n):
        nbrs = graph.neighbors[i]
        if len(nbrs) == 0:
            continue
        w = 1.0 / len(nbrs)
        rows.extend([i] * len(nbrs))
        cols.extend(int(j) for j in nbrs)
        vals.extend([w] * len(nbrs))
    return sp.csr_matrix((vals, (rows, cols)), shape=(graph.n, graph.n))


def sage_forward(
    H: np.ndarray,
    graph: TextAttributedGraph,
    params: SageParams,
    P: sp.csr_matrix | None = None,
    want_cache: bool = False,
):
    """Per-node logits and the hidden (penultimate) embeddings."""
    if H.shape[0] != graph.n:
        raise ValueError(f"feature rows {H.shape[0]} != node count {graph.n}")
    if H.shape[1] != params.W_self1.shape[0]:
        raise ValueError("feature width does not match W_self1")
    P = neighbor_mean_matrix(graph) if P is None else P
    M1 = P @ H
    Z1 = H @ params.W_self1 + M1 @ params.W_neigh1
    H1 = np.maximum(Z1, 0.0)
    M2 = P @ H1
    logits = H1 @ params.W_self2 + M2 @ params.W_neigh2
    if not want_cache:
        return logits, H1
    return logits, H1, {"P": P, "M1": M1, "Z1": Z1, "H1": H1, "M2": M2}


def _layer1_backward(d_H1, H, cache, grads):
    d_Z1 = d_H1 * (cache["Z1"] > 0)
    grads["W_self1"] += H.T @ d_Z1
    grads["W_neigh1"] += cache["M1"].T @ d_Z1


def sage_node_loss(
    params: SageParams,
    H: np.ndarray,
    graph: TextAttributedGraph,
    labels: np.ndarray,
    node_ids: np.ndarray,
    P: sp.csr_matrix | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean CE over `node_ids` with analytic gradients for all four weights."""
    node_ids = np.asarray(node_ids, dtype=np.intp)
    logits, _, cache = sage_forward(H, graph, params, P=P, want_cache=True)
    loss, d_rows = cross_entropy_rows(logits[node_ids], labels[node_ids])
    d_logits = np.zeros_like(logits)
    d_logits[node_ids] = d_rows
    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    grads["W_self2"] += cache["H1"].T @ d_logits
    grads["W_neigh2"] += cache["M2"].T @ d_logits
    d_H1 = d_logits @ params.W_self2.T + cache["P"].T @ (d_logits @ params.W_neigh2.T)
    _layer1_backward(d_H1, H, cache, grads)
    return loss, grads


@dataclass
class GnnTrainLog:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = -1.0
    stopped_early: bool = False

    def final(self) -> dict:
        return self.epochs[-1] if self.epochs else {}


def _accuracy(logits: np.ndarray, labels: np.ndarray, ids: np.ndarray) -> float:
    ids = np.asarray(ids, dtype=np.intp)
    if len(ids) == 0:
        return 0.0
    return float(np.mean(np.argmax(logits[ids], axis=1) == labels[ids]))


def train_gnn(
    H: np.ndarray,
    graph: TextAttributedGraph,
    labels: np.ndarray,
    train_ids: np.ndarray,
    val_ids: np.ndarray,
    params: SageParams,
) -> tuple[SageParams, GnnTrainLog]:
    """Full-batch descent on train-node CE, early stopping on validation
    accuracy (best-validation parameters returned)."""
    P = neighbor_mean_matrix(graph)
    cur = params.copy_weights()
    best = cur.copy_weights()
    log = GnnTrainLog()
    stall = 0
    for epoch in range(params.epochs):
        loss, grads = sage_node_loss(cur, H, graph, labels, train_ids, P=P)
        if not np.isfinite(loss):
            raise FloatingPointError(f"gnn training diverged at epoch {epoch}")
        for name, g in grads.items():
            arr = getattr(cur, name)
            arr -= params.lr * g
            check_finite(arr, f"gnn {name} (epoch {epoch})")
        logits, _ = sage_forward(H, graph, cur, P=P)
        val_acc = _accuracy(logits, labels, val_ids) if len(val_ids) else -loss
        log.epochs.append({"epoch": epoch, "train_ce": loss, "val_acc": val_acc})
        if val_acc > log.best_val:
            log.best_val = val_acc
            log.best_epoch = epoch
            best = cur.copy_weights()
            stall = 0
        else:
            stall += 1
            if stall >= params.patience:
                log.stopped_early = True
                break
    return best, log


def evaluate_nodes(
    params: SageParams,
    H: np.ndarray,
    graph: TextAttributedGraph,
    labels: np.ndarray,
    split,
) -> dict[str, float]:
    """Argmax accuracy on each split, rounded to 4 decimals."""
    logits, _ = sage_forward(H, graph, params)
    return {name: round(_accuracy(logits, labels, ids), 4)
            for name, ids in (("train", split.train), ("val", split.val), ("test", split.test))}


# ---------------------------------------------------------------------------
# Link prediction
# ---------------------------------------------------------------------------

@dataclass
class LinkPredSplit:
    train_pos: np.ndarray  # (k, 2) arrays of node pairs
    val_pos: np.ndarray
    test_pos: np.ndarray
    train_neg: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    seed: int = 0

    def pairs(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        return getattr(self, f"{which}_pos"), getattr(self, f"{which}_neg")


def split_links(graph: TextAttributedGraph, seed: int) -> LinkPredSplit:
    """Uniform 0.6/0.2/0.2 partition of the existing edges, with an equal
    count of uniformly sampled non-edges per split (all disjoint)."""
    edges = np.array(graph.edges, dtype=np.int64)
    m = len(edges)
    if m < 5:
        raise ValueError("link split needs at least 5 edges")
    rng = rng_stream(seed, "linksplit")
    perm = rng.permutation(m)
    n_tr, n_va = int(0.6 * m), int(0.2 * m)
    pos = {"train": edges[perm[:n_tr]], "val": edges[perm[n_tr:n_tr + n_va]],
           "test": edges[perm[n_tr + n_va:]]}

    n = graph.n
    possible = n * (n - 1) // 2 - m
    if possible < m:
        raise ValueError(f"graph too dense to sample {m} negatives ({possible} non-edges available)")
    edge_set = {(int(u), int(v)) for u, v in edges}
    neg_rng = rng_stream(seed, "negatives")
    chosen: set[tuple[int, int]] = set()
    negatives = []
    while len(negatives) < m:
        u = int(neg_rng.integers(0, n))
        v = int(neg_rng.integers(0, n))
        if u == v:
            continue
        if u > v:
            u, v = v, u
        if (u, v) in edge_set or (u, v) in chosen:
            continue
        chosen.add((u, v))
        negatives.append((u, v))
    negatives = np.array(negatives, dtype=np.int64)
    neg = {"train": negatives[:n_tr], "val": negatives[n_tr:n_tr + n_va],
           "test": negatives[n_tr + n_va:]}
    return LinkPredSplit(pos["train"], pos["val"], pos["test"],
                         neg["train"], neg["val"], neg["test"], seed)


def _edge_logits(H1: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    if len(pairs) == 0:
        return np.zeros(0)
    return np.einsum("ed,ed->e", H1[pairs[:, 0]], H1[pairs[:, 1]])


def auc_score(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """Rank-statistic AUC with ties contributing one half."""
    p, n = len(pos_scores), len(neg_scores)
    if p == 0 or n == 0:
        return 0.5
    ranks = rankdata(np.concatenate([pos_scores, neg_scores]), method="average")
    return float((ranks[:p].sum() - p * (p + 1) / 2.0) / (p * n))


def link_loss(
    params: SageParams,
    H: np.ndarray,
    graph: TextAttributedGraph,
    pos: np.ndarray,
    neg: np.ndarray,
    P: sp.csr_matrix | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Binary CE of logistic(h_u . h_v) over positive/negative pairs, scored
    on the hidden embeddings; gradients flow into the first layer."""
    _, H1, cache = sage_forward(H, graph, params, P=P, want_cache=True)
    pairs = np.concatenate([pos, neg], axis=0)
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    z = _edge_logits(H1, pairs)
    # stable BCE-with-logits: mean(softplus(z) - y z)
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    dz = (sigmoid(z) - y) / len(pairs)
    d_H1 = np.zeros_like(H1)
    np.add.at(d_H1, pairs[:, 0], dz[:, None] * H1[pairs[:, 1]])
    np.add.at(d_H1, pairs[:, 1], dz[:, None] * H1[pairs[:, 0]])
    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    _layer1_backward(d_H1, H, cache, grads)
    return loss, grads


def train_link_gnn(
    H: np.ndarray,
    graph: TextAttributedGraph,
    split: LinkPredSplit,
    params: SageParams,
) -> tuple[SageParams, GnnTrainLog]:
    """Full-batch descent on train-edge binary CE, early stopping on
    validation AUC."""
    P = neighbor_mean_matrix(graph)
    cur = params.copy_weights()
    best = cur.copy_weights()
    log = GnnTrainLog()
    stall = 0
    for epoch in range(params.epochs):
        loss, grads = link_loss(cur, H, graph, split.train_pos, split.train_neg, P=P)
        if not np.isfinite(loss):
            raise FloatingPointError(f"link gnn training diverged at epoch {epoch}")
        for name, g in grads.items():
            arr = getattr(cur, name)
            arr -= params.lr * g
            check_finite(arr, f"link gnn {name} (epoch {epoch})")
        _, H1 = sage_forward(H, graph, cur, P=P)
        val_auc = auc_score(_edge_logits(H1, split.val_pos), _edge_logits(H1, split.val_neg))
        log.epochs.append({"epoch": epoch, "train_bce": loss, "val_auc": val_auc})
        if val_auc > log.best_val:
            log.best_val = val_auc
            log.best_epoch = epoch
            best = cur.copy_weights()
            stall = 0
        else:
            stall += 1
            if stall >= params.patience:
                log.stopped_early = True
                break
    return best, log


def evaluate_links(
    params: SageParams,
    H: np.ndarray,
    graph_train_edges: TextAttributedGraph,
    split: LinkPredSplit,
) -> dict[str, float]:
    """AUC per split; message passing sees only the train-edge graph."""
    _, H1 = sage_forward(H, graph_train_edges, params)
    out = {}
    for which in ("train", "val", "test"):
        pos, neg = split.pairs(which)
        scores_pos = sigmoid(_edge_logits(H1, pos))
        scores_neg = sigmoid(_edge_logits(H1, neg))
        out[which] = round(auc_score(scores_pos, scores_neg), 4)
    return out


# ---------------------------------------------------------------------------
# Checkpoint: header (d_in, hidden, d_out as int32) + tensors in order.
# ---------------------------------------------------------------------------

def save_sage(params: SageParams, path: str | Path) -> None:
    d_in, hidden = params.W_self1.shape
    d_out = params.W_self2.shape[1]
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("<iii", d_in, hidden, d_out))
        for name in SAGE_PARAM_ORDER:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())


def load_sage(path: str | Path, **hyper) -> SageParams:
    with Path(path).open("rb") as fh:
        d_in, hidden, d_out = struct.unpack("<iii", fh.read(12))
        shapes = {"W_self1": (d_in, hidden), "W_neigh1": (d_in, hidden),
                  "W_self2": (hidden, d_out), "W_neigh2": (hidden, d_out)}
        arrays = {}
        for name in SAGE_PARAM_ORDER:
            count = int(np.prod(shapes[name]))
            arrays[name] = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shapes[name]).astype(np.float64)
    return SageParams(**arrays, **hyper)
