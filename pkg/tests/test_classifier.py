import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from robustemb.classifier import (
    CheckpointError,
    ModelParams,
    backward,
    backward_batch,
    cross_entropy,
    cross_entropy_batch,
    forward,
    forward_batch,
    init_params,
    load_checkpoint,
    predict,
    predict_batch,
    save_checkpoint,
    softmax,
)

import oracles


def random_params(seed, v=7, d=4, h=3, c=2, bias=True):
    r = np.random.default_rng(seed)
    p = init_params(r.normal(size=(v, d)), c, r, hidden_dim=h)
    if bias:
        p.b1 = r.normal(size=h)
        p.b2 = r.normal(size=c)
    return p


def zero_params(v=5, d=3, h=4, c=3):
    return ModelParams(np.zeros((v, d)), np.zeros((h, d)), np.zeros(h), np.zeros((c, h)), np.zeros(c))


class TestForward:
    def test_zero_weights_uniform(self):
        probs, _ = forward(zero_params(c=3), [1, 2, 3])
        assert np.allclose(probs, 1 / 3, atol=1e-15)

    def test_single_token_pooled(self):
        p = random_params(0)
        _, cache = forward(p, [4])
        assert np.array_equal(cache.pooled, p.embedding[4])

    def test_matches_straight_line(self):
        r = np.random.default_rng(1)
        for seed in range(20):
            p = random_params(seed, v=9, d=5, h=6, c=3)
            tokens = r.integers(0, 9, size=int(r.integers(1, 12))).tolist()
            probs, _ = forward(p, tokens)
            ref = oracles.forward_straight(p.embedding, p.W1, p.b1, p.W2, p.b2, tokens)
            assert np.allclose(probs, ref, rtol=0, atol=1e-12)

    def test_batch_matches_single(self):
        p = random_params(2, v=9)
        sents = [np.array([1, 2, 3]), np.array([4]), np.array([8, 8, 0, 5])]
        cache = forward_batch(p, sents)
        for i, s in enumerate(sents):
            probs, _ = forward(p, s)
            assert np.allclose(cache.probs[i], probs, atol=1e-15)

    def test_errors(self):
        p = random_params(0)
        with pytest.raises(ValueError):
            forward(p, [])
        with pytest.raises(IndexError):
            forward(p, [7])
        with pytest.raises(IndexError):
            forward(p, [-1])

    def test_truncation(self):
        p = random_params(0)
        p.max_len = 3
        a, _ = forward(p, [1, 2, 3, 4, 5, 6])
        b, _ = forward(p, [1, 2, 3])
        assert np.array_equal(a, b)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.lists(st.integers(0, 6), min_size=1, max_size=15))
    def test_order_invariant(self, seed, tokens):
        p = random_params(seed % 1000)
        perm = np.random.default_rng(seed).permutation(len(tokens))
        a, _ = forward(p, tokens)
        b, _ = forward(p, [tokens[i] for i in perm])
        assert np.allclose(a, b, atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.lists(st.integers(0, 6), min_size=1, max_size=15))
    def test_probabilities_valid(self, seed, tokens):
        probs, cache = forward(random_params(seed % 1000), tokens)
        assert np.all(probs >= 0) and abs(probs.sum() - 1) <= 1e-9
        assert np.array_equal(probs, cache.probs)


class TestSoftmax:
    @given(hnp.arrays(np.float64, st.integers(2, 8), elements=st.floats(-50, 50)))
    def test_sums_to_one(self, logits):
        assert abs(softmax(logits).sum() - 1) <= 1e-9

    @given(hnp.arrays(np.float64, st.integers(2, 8), elements=st.floats(-50, 50)), st.floats(-100, 100))
    def test_shift_invariant(self, logits, c):
        assert np.allclose(softmax(logits), softmax(logits + c), rtol=0, atol=1e-12)


class TestCrossEntropy:
    def test_uniform_two_classes(self):
        assert cross_entropy(np.zeros(2), 0) == pytest.approx(np.log(2), abs=1e-15)

    def test_confident_limit(self):
        assert cross_entropy(np.array([60.0, 0.0]), 0) < 1e-25
        assert cross_entropy(np.array([800.0, 0.0]), 1) == pytest.approx(800.0)

    def test_matches_naive(self):
        r = np.random.default_rng(3)
        for _ in range(200):
            logits = r.uniform(-10, 10, size=4)
            y = int(r.integers(0, 4))
            naive = -np.log(np.exp(logits[y]) / np.exp(logits).sum())
            assert cross_entropy(logits, y) == pytest.approx(naive, abs=1e-10)

    def test_batch(self):
        r = np.random.default_rng(4)
        logits = r.normal(size=(5, 3))
        labels = np.array([0, 2, 1, 1, 0])
        assert np.allclose(cross_entropy_batch(logits, labels), [cross_entropy(l, y) for l, y in zip(logits, labels)])

    def test_bad_label(self):
        with pytest.raises(ValueError):
            cross_entropy(np.zeros(2), 2)


def loss_of(params, tokens, label):
    return cross_entropy(forward(params, tokens)[1].logits, label)


class TestBackward:
    def test_logit_gradient(self):
        p = random_params(5)
        probs, cache = forward(p, [1, 2])
        g = backward(p, cache, 1)
        expect = probs.copy()
        expect[1] -= 1
        assert np.allclose(g.b2, expect, atol=1e-15)

    def test_frozen_has_no_embedding_grads(self):
        p = random_params(5)
        _, cache = forward(p, [1, 2])
        g = backward(p, cache, 0, frozen_embedding=True)
        assert g.emb_rows is None and g.embedding_dict() == {}

    @pytest.mark.parametrize("seed", range(100))
    def test_finite_differences(self, seed):
        p = random_params(seed, v=7, d=4, h=3, c=2)
        r = np.random.default_rng(seed)
        while True:
            # keep away from the ReLU kink so central differences are valid
            tokens = r.integers(0, 7, size=5)
            _, cache = forward(p, tokens)
            if np.abs(cache.h_pre).min() >= 1e-4:
                break
        label = int(r.integers(0, 2))
        g = backward(p, cache, label)

        def f_group(name):
            def f(x):
                q = p.copy()
                setattr(q, name, x)
                return loss_of(q, tokens, label)
            return f

        for name in ("W1", "b1", "W2", "b2"):
            num = oracles.central_diff(f_group(name), getattr(p, name))
            assert oracles.rel_error(getattr(g, name), num) <= 1e-4, name
        num = oracles.central_diff(f_group("embedding"), p.embedding)
        dense = np.zeros_like(p.embedding)
        dense[g.emb_rows] = g.emb_grads
        assert oracles.rel_error(dense, num) <= 1e-4

    def test_batch_equals_mean_of_singles(self):
        p = random_params(6, v=9)
        sents = [np.array([1, 2, 3]), np.array([4, 4]), np.array([8, 1])]
        labels = np.array([0, 1, 1])
        gb = backward_batch(p, forward_batch(p, sents), labels)
        singles = [backward(p, forward(p, s)[1], y) for s, y in zip(sents, labels)]
        for name in ("W1", "b1", "W2", "b2"):
            assert np.allclose(getattr(gb, name), sum(getattr(s, name) for s in singles) / 3, atol=1e-15)
        dense = np.zeros_like(p.embedding)
        for s in singles:
            dense[s.emb_rows] += s.emb_grads / 3
        batch_dense = np.zeros_like(p.embedding)
        batch_dense[gb.emb_rows] = gb.emb_grads
        assert np.allclose(batch_dense, dense, atol=1e-15)

    def test_cache_mismatch(self):
        p = random_params(0, c=2)
        _, cache = forward(random_params(0, c=3), [1])
        with pytest.raises(ValueError):
            backward(p, cache, 0)


class TestPredict:
    def test_argmax(self):
        p = zero_params(c=2)
        p.b2 = np.array([2.0, 1.0])
        assert predict(p, [1]) == 0
        p.b2 = np.array([1.0, 2.0])
        assert predict(p, [1]) == 1

    def test_ties_to_lowest(self):
        assert predict(zero_params(c=3), [1, 2]) == 0

    def test_consistent_with_forward(self):
        r = np.random.default_rng(7)
        p = random_params(7, v=20, c=3)
        sents = [r.integers(0, 20, size=int(r.integers(1, 10))) for _ in range(1000)]
        batch = predict_batch(p, sents)
        for s, b in zip(sents, batch):
            probs, _ = forward(p, s)
            assert predict(p, s) == int(np.argmax(probs)) == b


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = random_params(8)
        p.max_len = 77
        save_checkpoint(p, tmp_path / "m.ckpt", "abc", {"mode": "ftml"})
        q, digest, meta = load_checkpoint(tmp_path / "m.ckpt")
        assert digest == "abc" and meta == {"mode": "ftml"} and q.max_len == 77
        for g in ModelParams.GROUPS:
            assert getattr(q, g).tobytes() == getattr(p, g).tobytes()

    def test_corruption(self, tmp_path):
        save_checkpoint(random_params(8), tmp_path / "m.ckpt", "abc")
        data = (tmp_path / "m.ckpt").read_bytes()
        for cut in (0, 5, 20, 60, len(data) - 1):
            (tmp_path / "t.ckpt").write_bytes(data[:cut])
            with pytest.raises(CheckpointError):
                load_checkpoint(tmp_path / "t.ckpt")
        (tmp_path / "t.ckpt").write_bytes(data + b"x")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "t.ckpt")

    def test_init_shapes(self):
        r = np.random.default_rng(0)
        p = init_params(None, 4, r, hidden_dim=5, vocab_size=11, dim=3)
        assert p.embedding.shape == (11, 3) and np.abs(p.embedding).max() <= 0.1
        assert p.W1.shape == (5, 3) and p.W2.shape == (4, 5)
        assert not p.b1.any() and not p.b2.any()
        assert np.abs(p.W1).max() <= np.sqrt(6 / 8)
