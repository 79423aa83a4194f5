"""Randomized small fixtures through every hand-written backward pass in the
package, checked against central finite differences.
"""

from __future__ import annotations

import numpy as np

from . import baselines as bl
from .data import build_graph
from .encoder import MiniLmParams, lm_batch_loss
from .gnn import init_sage_params, link_loss, sage_node_loss
from .numerics import GradCheckReport, grad_check, rng_stream
from .reduction import ReductionParams, build_context, reduction_loss
from .sequence import BridgeSequence
from .text import EmbeddingTable, embed_tokens


def _random_graph(rng: np.random.Generator, n: int, num_classes: int, edge_prob: float = 0.5):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < edge_prob]
    labels = rng.integers(0, num_classes, size=n)
    texts = [""] * n
    return build_graph(texts, edges, labels, num_classes)


def reduction_fixture(seed: int):
    rng = rng_stream(seed, "fixture-reduction")
    n = int(rng.integers(3, 6))
    d = int(rng.integers(3, 9))
    c = int(rng.integers(2, 5))
    graph = _random_graph(rng, n, c)
    table = EmbeddingTable(rng.normal(0.0, 0.6, size=(10, d)), seed)
    mats = [embed_tokens(i, rng.integers(0, 10, size=int(rng.integers(1, 9))), table)
            for i in range(n)]
    params = ReductionParams(
        W_q=rng.normal(0.0, 0.5, size=(d, d)),
        W_k=rng.normal(0.0, 0.5, size=(d, d)),
        W_c=rng.normal(0.0, 0.5, size=(d, c)),
        b_c=rng.normal(0.0, 0.5, size=c),
        beta=0.1, hops=1,
    )
    ctx = build_context(mats, graph, params.hops)
    labels = graph.labels

    def loss_fn(_):
        loss, grads, _aux = reduction_loss(ctx, params, labels)
        return loss, grads

    return loss_fn, {"W_q": params.W_q, "W_k": params.W_k, "W_c": params.W_c, "b_c": params.b_c}


def lm_fixture(seed: int):
    rng = rng_stream(seed, "fixture-lm")
    v, d, c = 12, 8, 3
    d_ff = 16
    params = MiniLmParams(
        emb=rng.normal(0.0, 0.5, size=(v, d)),
        Wq=rng.normal(0.0, 0.5, size=(d, d)), Wk=rng.normal(0.0, 0.5, size=(d, d)),
        Wv=rng.normal(0.0, 0.5, size=(d, d)), Wo=rng.normal(0.0, 0.5, size=(d, d)),
        W1=rng.normal(0.0, 0.5, size=(d, d_ff)), W2=rng.normal(0.0, 0.5, size=(d_ff, d)),
        W_c=rng.normal(0.0, 0.5, size=(d, c)), b_c=rng.normal(0.0, 0.5, size=c),
    )
    seqs = []
    for root in range(2):
        own = rng.integers(2, v, size=int(rng.integers(1, 4)))
        nbr = rng.integers(2, v, size=int(rng.integers(1, 4)))
        ids = np.concatenate([own, [1], nbr])
        prov = np.concatenate([np.full(len(own), root), [-1], np.full(len(nbr), root + 7)])
        seqs.append(BridgeSequence(root, ids.astype(np.int64), prov.astype(np.int64)))
    labels = rng.integers(0, c, size=2)

    def loss_fn(_):
        return lm_batch_loss(params, seqs, labels)

    return loss_fn, params.arrays()


def sage_fixture(seed: int):
    rng = rng_stream(seed, "fixture-sage")
    n = int(rng.integers(4, 8))
    d_in = int(rng.integers(3, 7))
    c = int(rng.integers(2, 5))
    graph = _random_graph(rng, n, c)
    H = rng.normal(0.0, 1.0, size=(n, d_in))
    params = init_sage_params(d_in, c, seed, hidden=4)
    ids = np.arange(n)[rng.random(n) < 0.7]
    if len(ids) == 0:
        ids = np.array([0])

    def loss_fn(_):
        return sage_node_loss(params, H, graph, graph.labels, ids)

    return loss_fn, params.arrays()


def link_fixture(seed: int):
    rng = rng_stream(seed, "fixture-link")
    n = 6
    d_in = 4
    graph = _random_graph(rng, n, 2, edge_prob=0.6)
    if len(graph.edges) < 2:
        graph = build_graph([""] * n, [(0, 1), (1, 2), (2, 3)], np.zeros(n, dtype=int), 2)
    H = rng.normal(0.0, 1.0, size=(n, d_in))
    params = init_sage_params(d_in, 4, seed, hidden=4)
    pos = np.array(graph.edges[:2], dtype=np.int64)
    neg = np.array([(0, n - 1), (1, n - 2)], dtype=np.int64)

    def loss_fn(_):
        return link_loss(params, H, graph, pos, neg)

    # layer-2 weights take no part in the link score; check layer 1 only
    return loss_fn, {"W_self1": params.W_self1, "W_neigh1": params.W_neigh1}


def reference_fixture(seed: int, model: str = "gcn"):
    rng = rng_stream(seed, "fixture-ref")
    n = int(rng.integers(4, 8))
    d_in = int(rng.integers(3, 7))
    c = int(rng.integers(2, 4))
    graph = _random_graph(rng, n, c)
    X = rng.normal(0.0, 1.0, size=(n, d_in))
    params = bl.init_two_layer(d_in, c, seed, hidden=4)
    P = bl.gcn_propagation_matrix(graph) if model == "gcn" else None
    ids = np.arange(n)

    def loss_fn(_):
        return bl.two_layer_loss(params, X, P, graph.labels, ids)

    return loss_fn, params.arrays()


FIXTURES = {
    "reduction": reduction_fixture,
    "encoder": lm_fixture,
    "sage": sage_fixture,
    "link": link_fixture,
    "gcn": lambda seed: reference_fixture(seed, "gcn"),
    "mlp": lambda seed: reference_fixture(seed, "mlp"),
}


def run_suite(n_fixtures: int = 20, seed: int = 0, h: float = 1e-5, tol: float = 1e-4,
              families: list[str] | None = None) -> dict[str, list[GradCheckReport]]:
    """Run `n_fixtures` randomized gradient checks per model family."""
    out: dict[str, list[GradCheckReport]] = {}
    for family in families or list(FIXTURES):
        reports = []
        for k in range(n_fixtures):
            loss_fn, params = FIXTURES[family](seed * 10_000 + k)
            reports.append(grad_check(loss_fn, params, h=h, tol=tol))
        out[family] = reports
    return out


def suite_summary(results: dict[str, list[GradCheckReport]]) -> str:
    lines = []
    for family, reports in results.items():
        worst = max(r.max_rel_err for r in reports)
        ok = all(r.passed for r in reports)
        lines.append(f"{'PASS' if ok else 'FAIL'} {family:10s} fixtures={len(reports)} worst_rel_err={worst:.3e}")
    return "\n".join(lines)
