import numpy as np
import pytest

from tagbridge.data import SplitMask, build_graph, generate_synthetic, SyntheticSpec
from tagbridge.gnn import (
    LinkPredSplit,
    SageParams,
    auc_score,
    evaluate_links,
    evaluate_nodes,
    init_sage_params,
    link_loss,
    load_sage,
    neighbor_mean_matrix,
    sage_forward,
    sage_node_loss,
    save_sage,
    split_links,
    train_gnn,
    train_link_gnn,
)
from tagbridge.gradsuite import link_fixture, sage_fixture
from tagbridge.numerics import grad_check, rng_stream, sigmoid


def random_graph(rng, n, num_classes=2, p=0.4):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return build_graph([""] * n, edges, rng.integers(0, num_classes, size=n), num_classes)


def dense_forward(H, graph, params):
    n = graph.n
    P = np.zeros((n, n))
    for i in range(n):
        nbrs = graph.neighbors[i]
        if len(nbrs):
            P[i, nbrs] = 1.0 / len(nbrs)
    H1 = np.maximum(H @ params.W_self1 + (P @ H) @ params.W_neigh1, 0.0)
    logits = H1 @ params.W_self2 + (P @ H1) @ params.W_neigh2
    return logits, H1


class TestSageForward:
    def test_zero_weights_zero_logits(self):
        rng = rng_stream(0, "sage")
        graph = random_graph(rng, 5)
        params = SageParams(np.zeros((3, 4)), np.zeros((3, 4)), np.zeros((4, 2)), np.zeros((4, 2)))
        logits, _ = sage_forward(rng.normal(size=(5, 3)), graph, params)
        np.testing.assert_array_equal(logits, np.zeros((5, 2)))

    def test_isolated_node_uses_self_path_only(self):
        rng = rng_stream(1, "sage")
        graph = build_graph(["", "", ""], [(0, 1)], np.zeros(3, dtype=int), 1)
        params = init_sage_params(3, 2, seed=0, hidden=4)
        H = rng.normal(size=(3, 3))
        logits, hidden = sage_forward(H, graph, params)
        h2 = np.maximum(H[2] @ params.W_self1, 0.0)
        np.testing.assert_allclose(hidden[2], h2, atol=1e-12)
        np.testing.assert_allclose(logits[2], h2 @ params.W_self2 + np.zeros(2), atol=1e-12)

    def test_dense_oracle_many_graphs(self):
        rng = rng_stream(2, "sage-oracle")
        for _ in range(50):
            n = int(rng.integers(2, 21))
            graph = random_graph(rng, n, p=float(rng.uniform(0, 0.5)))
            params = init_sage_params(4, 3, seed=int(rng.integers(1000)), hidden=5)
            H = rng.normal(size=(n, 4))
            logits, hidden = sage_forward(H, graph, params)
            ref_logits, ref_hidden = dense_forward(H, graph, params)
            np.testing.assert_allclose(logits, ref_logits, atol=1e-12)
            np.testing.assert_allclose(hidden, ref_hidden, atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        graph = random_graph(rng_stream(3, "x"), 4)
        params = init_sage_params(5, 2, seed=0)
        with pytest.raises(ValueError):
            sage_forward(np.zeros((4, 3)), graph, params)
        with pytest.raises(ValueError):
            sage_forward(np.zeros((3, 5)), graph, params)


class TestGradients:
    def test_node_loss_finite_difference(self):
        for k in range(10):
            loss_fn, params = sage_fixture(200 + k)
            assert grad_check(loss_fn, params, h=1e-5, tol=1e-4).passed

    def test_link_loss_finite_difference(self):
        for k in range(10):
            loss_fn, params = link_fixture(300 + k)
            assert grad_check(loss_fn, params, h=1e-5, tol=1e-4).passed


class TestTrainGnn:
    def make_task(self, seed=0):
        rng = rng_stream(seed, "task")
        graph = random_graph(rng, 30, num_classes=3, p=0.2)
        centers = rng.normal(0, 2, size=(3, 6))
        H = centers[graph.labels] + rng.normal(0, 0.5, size=(30, 6))
        ids = rng.permutation(30)
        split = SplitMask(np.sort(ids[:18]), np.sort(ids[18:24]), np.sort(ids[24:]))
        return graph, H, split

    def test_zero_lr_unchanged(self):
        graph, H, split = self.make_task()
        params = init_sage_params(6, 3, seed=0, lr=0.0, epochs=5)
        trained, _ = train_gnn(H, graph, graph.labels, split.train, split.val, params)
        np.testing.assert_array_equal(trained.W_self1, params.W_self1)

    def test_training_reduces_ce(self):
        graph, H, split = self.make_task()
        params = init_sage_params(6, 3, seed=0, lr=0.05, epochs=40)
        _, log = train_gnn(H, graph, graph.labels, split.train, split.val, params)
        assert log.epochs[-1]["train_ce"] < log.epochs[0]["train_ce"]

    def test_early_stopping_on_validation(self):
        graph, H, split = self.make_task()
        params = init_sage_params(6, 3, seed=0, lr=0.05, epochs=500, patience=5)
        _, log = train_gnn(H, graph, graph.labels, split.train, split.val, params)
        assert len(log.epochs) < 500
        assert log.stopped_early

    def test_non_finite_aborts(self):
        graph, H, split = self.make_task()
        params = init_sage_params(6, 3, seed=0, lr=0.05, epochs=5)
        params.W_self1[0, 0] = np.nan
        with pytest.raises(FloatingPointError):
            train_gnn(H, graph, graph.labels, split.train, split.val, params)


class TestEvaluateNodes:
    def test_perfect_and_anti_logits(self):
        graph = build_graph(["", "", "", ""], [(0, 1)], np.array([0, 1, 0, 1]), 2)
        split = SplitMask(np.array([0, 1]), np.array([2]), np.array([3]))
        H = np.eye(4)[:, :2]  # placeholder features
        perfect = SageParams(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
        # craft logits through evaluate by monkey-free direct accuracy check
        logits = np.eye(2)[graph.labels]
        acc = {name: float(np.mean(np.argmax(logits[ids], axis=1) == graph.labels[ids]))
               for name, ids in (("train", split.train), ("val", split.val), ("test", split.test))}
        assert acc == {"train": 1.0, "val": 1.0, "test": 1.0}
        anti = np.eye(2)[1 - graph.labels]
        acc0 = float(np.mean(np.argmax(anti[split.test], axis=1) == graph.labels[split.test]))
        assert acc0 == 0.0

    def test_uniform_random_logits_quarter_accuracy(self):
        rng = rng_stream(5, "rand-logits")
        n = 10_000
        labels = np.tile(np.arange(4), n // 4)
        logits = rng.normal(size=(n, 4))
        acc = float(np.mean(np.argmax(logits, axis=1) == labels))
        assert abs(acc - 0.25) < 0.02

    def test_evaluate_nodes_rounds_to_four_decimals(self):
        rng = rng_stream(6, "eval")
        graph = random_graph(rng, 12, num_classes=2)
        split = SplitMask(np.arange(6), np.arange(6, 9), np.arange(9, 12))
        params = init_sage_params(3, 2, seed=0)
        acc = evaluate_nodes(params, rng.normal(size=(12, 3)), graph, graph.labels, split)
        for v in acc.values():
            assert v == round(v, 4)


class TestSplitLinks:
    def test_sizes_forced_by_ratio(self):
        graph = build_graph([""] * 8, [(i, j) for i in range(8) for j in range(i + 1, 8)][:10],
                            np.zeros(8, dtype=int), 1)
        split = split_links(graph, seed=0)
        assert len(split.train_pos) == 6 and len(split.val_pos) == 2 and len(split.test_pos) == 2
        assert len(split.train_neg) == 6 and len(split.val_neg) == 2 and len(split.test_neg) == 2

    def test_negatives_are_non_edges_and_disjoint(self):
        rng = rng_stream(7, "links")
        graph = random_graph(rng, 15, p=0.25)
        split = split_links(graph, seed=3)
        edge_set = set(graph.edges)
        seen = set()
        for part in ("train", "val", "test"):
            for u, v in getattr(split, f"{part}_neg"):
                key = (min(u, v), max(u, v))
                assert key not in edge_set
                assert key not in seen
                seen.add(key)

    def test_positives_partition_edges(self):
        rng = rng_stream(8, "links2")
        graph = random_graph(rng, 12, p=0.4)
        split = split_links(graph, seed=1)
        all_pos = [tuple(e) for part in ("train", "val", "test")
                   for e in getattr(split, f"{part}_pos").tolist()]
        assert sorted(all_pos) == sorted(graph.edges)

    def test_two_seeds_differ(self):
        rng = rng_stream(9, "links3")
        graph = random_graph(rng, 12, p=0.4)
        a = split_links(graph, seed=0)
        b = split_links(graph, seed=1)
        assert sorted(map(tuple, a.train_pos.tolist())) != sorted(map(tuple, b.train_pos.tolist()))

    def test_too_few_edges_rejected(self):
        graph = build_graph([""] * 4, [(0, 1), (1, 2)], np.zeros(4, dtype=int), 1)
        with pytest.raises(ValueError):
            split_links(graph, seed=0)

    def test_too_dense_graph_rejected(self):
        n = 5
        graph = build_graph([""] * n, [(i, j) for i in range(n) for j in range(i + 1, n)],
                            np.zeros(n, dtype=int), 1)
        with pytest.raises(ValueError, match="dense"):
            split_links(graph, seed=0)


class TestAuc:
    def test_perfect_separation(self):
        assert auc_score(np.array([0.9, 0.8]), np.array([0.1, 0.2])) == 1.0

    def test_all_ties_half(self):
        assert auc_score(np.full(3, 0.5), np.full(4, 0.5)) == 0.5

    def test_six_pair_fixture_matches_brute_force(self):
        pos = np.array([0.9, 0.5, 0.5])
        neg = np.array([0.5, 0.3, 0.9])
        brute = 0.0
        for p in pos:
            for q in neg:
                brute += 1.0 if p > q else (0.5 if p == q else 0.0)
        brute /= pos.size * neg.size
        assert auc_score(pos, neg) == pytest.approx(brute, abs=1e-12)

    def test_random_fixtures_match_brute_force(self):
        rng = rng_stream(10, "auc")
        for _ in range(50):
            pos = rng.integers(0, 5, size=int(rng.integers(1, 12))) / 4.0
            neg = rng.integers(0, 5, size=int(rng.integers(1, 12))) / 4.0
            brute = np.mean([[1.0 if p > q else (0.5 if p == q else 0.0) for q in neg] for p in pos])
            assert auc_score(pos, neg) == pytest.approx(float(brute), abs=1e-12)


class TestLinkPrediction:
    def make_link_task(self, seed=0):
        spec = SyntheticSpec(classes=2, nodes_per_class=20, p_in=0.35, p_out=0.02, seed=seed)
        graph, _ = generate_synthetic(spec)
        split = split_links(graph, seed)
        train_graph = graph.with_edges([tuple(e) for e in split.train_pos])
        rng = rng_stream(seed, "feat")
        centers = rng.normal(0, 1.5, size=(2, 6))
        H = centers[graph.labels] + rng.normal(0, 0.4, size=(graph.n, 6))
        return graph, train_graph, split, H

    def test_message_passing_restricted_to_train_edges(self):
        graph, train_graph, split, H = self.make_link_task()
        held_out = {tuple(e) for e in split.val_pos.tolist()} | {tuple(e) for e in split.test_pos.tolist()}
        assert held_out
        assert not (set(train_graph.edges) & held_out)
        assert set(train_graph.edges) == {tuple(e) for e in split.train_pos.tolist()}

    def test_training_improves_val_auc(self):
        graph, train_graph, split, H = self.make_link_task()
        params = init_sage_params(6, 4, seed=0, hidden=8, lr=0.05, epochs=120, patience=120)
        trained, log = train_link_gnn(H, train_graph, split, params)
        assert log.best_val >= log.epochs[0]["val_auc"]
        aucs = evaluate_links(trained, H, train_graph, split)
        assert set(aucs) == {"train", "val", "test"}
        assert aucs["test"] > 0.5

    def test_scores_are_logistic_of_hidden_dot(self):
        graph, train_graph, split, H = self.make_link_task()
        params = init_sage_params(6, 4, seed=1, hidden=8)
        _, hidden = sage_forward(H, train_graph, params)
        u, v = split.test_pos[0]
        expected = sigmoid(np.array([hidden[u] @ hidden[v]]))[0]
        assert 0.0 <= expected <= 1.0  # scoring head shape sanity

    def test_zero_lr_leaves_params(self):
        graph, train_graph, split, H = self.make_link_task()
        params = init_sage_params(6, 4, seed=0, hidden=8, lr=0.0, epochs=3)
        trained, _ = train_link_gnn(H, train_graph, split, params)
        np.testing.assert_array_equal(trained.W_self1, params.W_self1)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = init_sage_params(5, 3, seed=4, hidden=6)
        save_sage(params, tmp_path / "gnn.ckpt")
        loaded = load_sage(tmp_path / "gnn.ckpt")
        for name, arr in params.arrays().items():
            np.testing.assert_array_equal(getattr(loaded, name), arr)
