import numpy as np
import pytest

from gmrlab import classifier as clf
from gmrlab.errors import ConfigError, ControlError, ShapeError


def random_setup(seed, n=6, f=8, classes=4):
    rng = np.random.default_rng(seed)
    gamma = rng.random((n, f))
    gamma /= gamma.sum(axis=1, keepdims=True)
    p = clf.ClassifierParams(W=rng.normal(0, 1, (f, classes)), b=rng.normal(0, 1, classes))
    targets = rng.integers(0, classes, n)
    return gamma, targets, p


class TestPredict:
    def test_identity_readout_is_argmax_gamma(self):
        k = 5
        p = clf.ClassifierParams(W=np.eye(k), b=np.zeros(k))
        rng = np.random.default_rng(0)
        gamma = rng.random((7, 1, 1, k))
        pred = clf.predict_classes(gamma, p)
        assert np.array_equal(pred, gamma.reshape(7, k).argmax(axis=1))

    def test_dominant_bias_wins(self):
        p = clf.ClassifierParams(W=np.ones((3, 4)) * 0.01, b=np.array([0.0, 0.0, 100.0, 0.0]))
        gamma = np.random.default_rng(1).random((5, 3))
        assert np.array_equal(clf.predict_classes(gamma, p), np.full(5, 2))

    def test_against_triple_loop(self):
        gamma, _, p = random_setup(2)
        logits = clf.predict(gamma, p)
        n, f = gamma.shape
        ref = np.zeros((n, p.num_classes))
        for i in range(n):
            for j in range(p.num_classes):
                acc = p.b[j]
                for q in range(f):
                    acc += gamma[i, q] * p.W[q, j]
                ref[i, j] = acc
        assert np.allclose(logits, ref, atol=1e-12)

    def test_linearity(self):
        _, _, p = random_setup(3)
        rng = np.random.default_rng(4)
        g1, g2 = rng.random((2, 5, 8))
        a, b = 0.3, 1.7
        lhs = clf.predict(a * g1 + b * g2, p)
        rhs = a * clf.predict(g1, p) + b * clf.predict(g2, p) - (a + b - 1) * p.b
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_shape_mismatch(self):
        _, _, p = random_setup(5)
        with pytest.raises(ShapeError):
            clf.predict(np.zeros((3, 9)), p)


class TestLoss:
    def test_perfect_one_hot_mse_zero(self):
        p = clf.ClassifierParams(W=np.eye(3), b=np.zeros(3))
        gamma = np.eye(3)  # logits == one-hot targets
        loss, _, _ = clf.loss_and_grads(gamma, np.arange(3), p, kind="mse")
        assert loss == pytest.approx(0.0, abs=1e-15)

    def test_uniform_logits_ce_is_log_classes(self):
        p = clf.ClassifierParams(W=np.zeros((4, 10)), b=np.zeros(10))
        gamma = np.random.default_rng(6).random((5, 4))
        loss, _, _ = clf.loss_and_grads(gamma, np.zeros(5, dtype=int), p, kind="ce")
        assert loss == pytest.approx(np.log(10.0), abs=1e-12)

    @pytest.mark.parametrize("kind", ["mse", "ce"])
    def test_gradients_match_finite_differences(self, kind):
        gamma, targets, p = random_setup(7)
        loss, d_w, d_b = clf.loss_and_grads(gamma, targets, p, kind=kind)
        h = 1e-6

        def loss_only():
            return clf.loss_and_grads(gamma, targets, p, kind=kind)[0]

        for array, grad in ((p.W, d_w), (p.b, d_b)):
            fd = np.zeros_like(array)
            for idx in np.ndindex(array.shape):
                orig = array[idx]
                array[idx] = orig + h
                up = loss_only()
                array[idx] = orig - h
                dn = loss_only()
                array[idx] = orig
                fd[idx] = (up - dn) / (2 * h)
            rel = np.abs(grad - fd) / np.maximum(np.maximum(np.abs(grad), np.abs(fd)), 1e-7)
            assert rel.max() <= 1e-5

    @pytest.mark.parametrize("kind", ["mse", "ce"])
    def test_gamma_gradient_matches_finite_differences(self, kind):
        gamma, targets, p = random_setup(8)
        _, _, _, d_gamma = clf.loss_and_grads(gamma, targets, p, kind=kind, with_gamma_grad=True)
        h = 1e-6
        fd = np.zeros_like(gamma)
        for idx in np.ndindex(gamma.shape):
            orig = gamma[idx]
            gamma[idx] = orig + h
            up = clf.loss_and_grads(gamma, targets, p, kind=kind)[0]
            gamma[idx] = orig - h
            dn = clf.loss_and_grads(gamma, targets, p, kind=kind)[0]
            gamma[idx] = orig
            fd[idx] = (up - dn) / (2 * h)
        rel = np.abs(d_gamma - fd) / np.maximum(np.maximum(np.abs(d_gamma), np.abs(fd)), 1e-7)
        assert rel.max() <= 1e-5

    def test_softmax_argmax_equals_logit_argmax(self):
        gamma, _, p = random_setup(9)
        logits = clf.predict(gamma, p)
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs = shifted / shifted.sum(axis=1, keepdims=True)
        assert np.array_equal(probs.argmax(axis=1), logits.argmax(axis=1))

    def test_unknown_kind(self):
        gamma, targets, p = random_setup(10)
        with pytest.raises(ConfigError):
            clf.loss_and_grads(gamma, targets, p, kind="hinge")

    def test_train_step_descends(self):
        gamma, targets, p = random_setup(11, n=64)
        losses = [clf.train_step(gamma, targets, p, lr=0.5, kind="mse") for _ in range(60)]
        assert losses[-1] < losses[0]


class TestControlSignal:
    def test_identity_readout_gives_one_hot(self):
        p = clf.ClassifierParams(W=np.eye(4), b=np.zeros(4))
        t = clf.control_signal(2, p)
        assert np.array_equal(t, np.array([0.0, 0.0, 1.0, 0.0]))

    def test_degenerate_raises(self):
        p = clf.ClassifierParams(W=np.eye(3), b=np.zeros(3))
        p.b[:] = 0.0
        p.b[1] = 1.0  # (onehot(1) - b) == 0 -> constant zero signal
        with pytest.raises(ControlError):
            clf.control_signal(1, p)

    def test_range_zero_to_one(self):
        rng = np.random.default_rng(12)
        p = clf.ClassifierParams(W=rng.normal(0, 1, (10, 5)), b=rng.normal(0, 1, 5))
        for c in range(5):
            t = clf.control_signal(c, p)
            assert t.min() == pytest.approx(0.0, abs=1e-15)
            assert t.max() == pytest.approx(1.0, abs=1e-15)
            assert ((t >= 0) & (t <= 1)).all()

    def test_invalid_class(self):
        p = clf.ClassifierParams(W=np.eye(3), b=np.zeros(3))
        with pytest.raises(ShapeError):
            clf.control_signal(7, p)
