import math

import numpy as np
import pytest

from tagbridge.encoder import (
    MiniLmParams,
    embed_all,
    init_lm_params,
    lm_accuracy,
    lm_batch_loss,
    lm_forward,
    load_lm,
    save_lm,
    train_lm,
)
from tagbridge.gradsuite import lm_fixture
from tagbridge.numerics import grad_check, rng_stream
from tagbridge.sequence import BridgeSequence
from tagbridge.text import EmbeddingTable, make_embedding_table


def make_params(seed=0, v=10, d=6, d_ff=12, c=3, **hyper):
    rng = rng_stream(seed, "test-lm")
    return MiniLmParams(
        emb=rng.normal(0, 0.6, size=(v, d)),
        Wq=rng.normal(0, 0.6, size=(d, d)), Wk=rng.normal(0, 0.6, size=(d, d)),
        Wv=rng.normal(0, 0.6, size=(d, d)), Wo=rng.normal(0, 0.6, size=(d, d)),
        W1=rng.normal(0, 0.6, size=(d, d_ff)), W2=rng.normal(0, 0.6, size=(d_ff, d)),
        W_c=rng.normal(0, 0.6, size=(d, c)), b_c=rng.normal(0, 0.6, size=c),
        **hyper,
    )


def seq_of(ids, provenance=None):
    ids = np.asarray(ids, dtype=np.int64)
    if provenance is None:
        provenance = np.zeros(len(ids), dtype=np.int64)
    return BridgeSequence(0, ids, np.asarray(provenance, dtype=np.int64))


# Straightforward reference implementation: explicit loops, explicit 2x2
# rotation blocks, no shared code with the package forward pass.
def reference_forward(seq, params):
    ids = seq.token_ids
    L = len(ids)
    d = params.d_lm
    x = np.array([params.emb[t] for t in ids])
    q = x @ params.Wq
    k = x @ params.Wk
    v = x @ params.Wv
    if params.use_rotary:
        qr = np.zeros_like(q)
        kr = np.zeros_like(k)
        for pos in range(L):
            for pair in range(d // 2):
                theta = pos * params.rotary_base ** (-2.0 * pair / d)
                R = np.array([[math.cos(theta), -math.sin(theta)],
                              [math.sin(theta), math.cos(theta)]])
                qr[pos, 2 * pair:2 * pair + 2] = R @ q[pos, 2 * pair:2 * pair + 2]
                kr[pos, 2 * pair:2 * pair + 2] = R @ k[pos, 2 * pair:2 * pair + 2]
    else:
        qr, kr = q, k
    attn_out = np.zeros((L, d))
    for i in range(L):
        logits = np.array([qr[i] @ kr[j] / math.sqrt(d) for j in range(L)])
        w = np.exp(logits - logits.max())
        w = w / w.sum()
        attn_out[i] = sum(w[j] * v[j] for j in range(L))
    x1 = x + attn_out @ params.Wo
    h = x1 @ params.W1
    g = np.array([[0.5 * val * (1.0 + math.erf(val / math.sqrt(2.0))) for val in row] for row in h])
    x2 = x1 + g @ params.W2
    rows = [i for i in range(L) if seq.provenance[i] != -1]
    pooled = x2[rows].mean(axis=0)
    return pooled, pooled @ params.W_c + params.b_c


class TestLmForward:
    def test_single_token_closed_form(self):
        params = make_params()
        seq = seq_of([4])
        pooled, logits = lm_forward(seq, params)
        x = params.emb[4]
        x1 = x + (x @ params.Wv) @ params.Wo
        x2 = x1 + (0.5 * (x1 @ params.W1) * (1 + np.vectorize(math.erf)((x1 @ params.W1) / np.sqrt(2)))) @ params.W2
        np.testing.assert_allclose(pooled, x2, atol=1e-12)
        np.testing.assert_allclose(logits, x2 @ params.W_c + params.b_c, atol=1e-12)

    def test_permutation_sensitivity_with_rotary(self):
        params = make_params()
        a, _ = lm_forward(seq_of([2, 3, 4]), params)
        b, _ = lm_forward(seq_of([3, 2, 4]), params)
        assert np.max(np.abs(a - b)) > 1e-8

    def test_permutation_invariance_without_positions(self):
        params = make_params(use_rotary=False)
        a, _ = lm_forward(seq_of([2, 3, 4]), params)
        b, _ = lm_forward(seq_of([3, 2, 4]), params)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_reference_implementation_oracle(self):
        rng = rng_stream(3, "oracle")
        for trial in range(10):
            params = make_params(seed=trial)
            L = int(rng.integers(1, 9))
            ids = rng.integers(0, 10, size=L)
            prov = np.zeros(L, dtype=np.int64)
            if L >= 3:
                prov[int(rng.integers(1, L))] = -1
            seq = seq_of(ids, prov)
            if np.all(prov == -1):
                continue
            pooled, logits = lm_forward(seq, params)
            ref_pooled, ref_logits = reference_forward(seq, params)
            np.testing.assert_allclose(pooled, ref_pooled, atol=1e-10)
            np.testing.assert_allclose(logits, ref_logits, atol=1e-10)

    def test_sep_excluded_from_pooling(self):
        params = make_params()
        with_sep = seq_of([2, 1, 3], [0, -1, 5])
        pooled_sep, _ = lm_forward(with_sep, params)
        cache = lm_forward(with_sep, params, want_cache=True)[2]
        np.testing.assert_allclose(pooled_sep, cache["x2"][[0, 2]].mean(axis=0), atol=1e-12)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            lm_forward(seq_of([]), make_params())

    def test_attention_rows_are_simplex(self):
        params = make_params()
        cache = lm_forward(seq_of([2, 3, 4, 5]), params, want_cache=True)[2]
        sums = cache["attn"].sum(axis=1)
        np.testing.assert_allclose(sums, np.ones(4), atol=1e-9)

    def test_forward_determinism(self):
        params = make_params()
        seq = seq_of([5, 2, 7, 1], [0, 0, -1, 3])
        a, la = lm_forward(seq, params)
        b, lb = lm_forward(seq, params)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(la, lb)


class TestLmGradients:
    def test_finite_difference_over_fixtures(self):
        for k in range(8):
            loss_fn, params = lm_fixture(500 + k)
            report = grad_check(loss_fn, params, h=1e-5, tol=1e-4)
            assert report.passed, report.summary()

    def test_all_parameters_receive_gradients(self):
        loss_fn, params = lm_fixture(0)
        _, grads = loss_fn(params)
        for name, g in grads.items():
            assert np.max(np.abs(g)) > 0, name


class TestTrainLm:
    def make_data(self, n=12, v=10, c=2, seed=0):
        rng = rng_stream(seed, "lmdata")
        seqs = []
        labels = rng.integers(0, c, size=n)
        for i in range(n):
            base = 2 + labels[i] * 4
            own = base + rng.integers(0, 4, size=4)
            seqs.append(seq_of(own % v))
        return seqs, labels

    def test_zero_learning_rate_leaves_params(self):
        seqs, labels = self.make_data()
        params = make_params(v=10, c=2, lr=0.0, epochs=2)
        trained, _ = train_lm(seqs, labels, params, seed=0)
        for name, arr in params.arrays().items():
            np.testing.assert_array_equal(getattr(trained, name), arr)

    def test_training_reduces_ce(self):
        seqs, labels = self.make_data()
        params = make_params(v=10, c=2, lr=0.2, epochs=6)
        trained, log = train_lm(seqs, labels, params, seed=0)
        assert log.epochs[-1]["train_ce"] < log.epochs[0]["train_ce"]

    def test_non_finite_loss_aborts(self):
        seqs, labels = self.make_data()
        params = make_params(v=10, c=2, lr=0.1, epochs=2)
        params.b_c[0] = np.inf
        with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError, match="epoch"):
            train_lm(seqs, labels, params, seed=0)

    def test_deterministic_given_seed(self):
        seqs, labels = self.make_data()
        params = make_params(v=10, c=2, lr=0.1, epochs=3, batch_size=5)
        t1, _ = train_lm(seqs, labels, params, seed=4)
        t2, _ = train_lm(seqs, labels, params, seed=4)
        np.testing.assert_array_equal(t1.Wq, t2.Wq)
        np.testing.assert_array_equal(t1.emb, t2.emb)

    def test_batch_order_derived_from_seed(self):
        seqs, labels = self.make_data()
        params = make_params(v=10, c=2, lr=0.1, epochs=3, batch_size=5)
        t1, _ = train_lm(seqs, labels, params, seed=4)
        t2, _ = train_lm(seqs, labels, params, seed=5)
        assert np.max(np.abs(t1.Wq - t2.Wq)) > 0


class TestEmbedAll:
    def test_identical_sequences_identical_rows(self):
        params = make_params()
        seqs = [BridgeSequence(0, np.array([2, 3]), np.array([0, 0])),
                BridgeSequence(1, np.array([2, 3]), np.array([1, 1]))]
        emb = embed_all(seqs, params)
        np.testing.assert_array_equal(emb.H[0], emb.H[1])

    def test_row_count_and_ordering(self):
        params = make_params()
        seqs = [BridgeSequence(i, np.array([2 + i]), np.array([i])) for i in range(5)]
        emb = embed_all(list(reversed(seqs)), params)
        assert emb.n == 5
        for i, seq in enumerate(seqs):
            pooled, _ = lm_forward(seq, params)
            np.testing.assert_array_equal(emb.H[i], pooled)

    def test_checkpoint_id_matches_params_checksum(self):
        params = make_params()
        emb = embed_all([seq_of([2])], params)
        assert emb.checkpoint_id == params.checksum()


class TestContextSensitivity:
    def test_neighbor_tokens_change_root_embedding(self):
        rng = rng_stream(9, "ctx")
        for trial in range(5):
            params = make_params(seed=100 + trial)
            own = rng.integers(2, 10, size=3)
            n1 = rng.integers(2, 10, size=3)
            n2 = (n1 + 1) % 8 + 2
            a = seq_of(np.concatenate([own, [1], n1]), [0, 0, 0, -1, 7, 7, 7])
            b = seq_of(np.concatenate([own, [1], n2]), [0, 0, 0, -1, 7, 7, 7])
            pa, _ = lm_forward(a, params)
            pb, _ = lm_forward(b, params)
            assert np.max(np.abs(pa - pb)) > 1e-10


class TestCheckpoint:
    def test_save_load_round_trip(self, tmp_path):
        params = make_params(v=7, d=4, d_ff=8, c=3)
        save_lm(params, tmp_path / "lm.ckpt")
        loaded = load_lm(tmp_path / "lm.ckpt")
        for name, arr in params.arrays().items():
            np.testing.assert_array_equal(getattr(loaded, name), arr)
        assert loaded.rotary_base == params.rotary_base
        assert loaded.checksum() == params.checksum()

    def test_init_from_frozen_table_when_widths_match(self):
        table = make_embedding_table(9, 6, seed=2)
        params = init_lm_params(table, num_classes=3, seed=2, d_lm=6)
        np.testing.assert_array_equal(params.emb, table.table)
        params2 = init_lm_params(table, num_classes=3, seed=2, d_lm=4)
        assert params2.emb.shape == (9, 4)

    def test_lm_accuracy_counts_argmax(self):
        params = make_params(v=10, c=2)
        seqs, labels = TestTrainLm().make_data()
        acc = lm_accuracy(seqs, labels, params)
        assert 0.0 <= acc <= 1.0
