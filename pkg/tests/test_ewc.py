import numpy as np
import pytest

from gmrlab import ewc
from gmrlab.datasets import LabeledDataset
from gmrlab.errors import ConfigError, ConsistencyError

from conftest import make_blobs_dataset


def small_net(seed=0, sizes=(6, 8, 8, 8, 4)):
    return ewc.init_dnn(sizes, seed_or_rng=seed)


def small_data(seed=0, n=40, dim=6, classes=4):
    rng = np.random.default_rng(seed)
    images = rng.random((n, dim))
    labels = rng.integers(0, classes, n)
    return images, labels


class TestForward:
    def test_zero_weights_uniform_softmax(self):
        p = small_net()
        for a in p.params:
            a[:] = 0.0
        images, _ = small_data()
        logits = ewc.dnn_forward(images, p)
        assert np.allclose(logits, 0.0)
        loss, _ = ewc.ce_loss_and_grads(p, images, np.zeros(len(images), dtype=int))
        assert loss == pytest.approx(np.log(4.0), abs=1e-12)

    def test_single_layer_reduces_to_matmul(self):
        rng = np.random.default_rng(1)
        p = ewc.DnnParams(params=[rng.normal(0, 1, (5, 3)), rng.normal(0, 1, 3)])
        x = rng.random((7, 5))
        ref = x @ p.params[0] + p.params[1]
        assert np.allclose(ewc.dnn_forward(x, p), ref, atol=1e-12)

    def test_flattens_image_tensors(self):
        p = small_net(sizes=(4, 5, 2))
        x = np.random.default_rng(2).random((3, 2, 2, 1))
        out = ewc.dnn_forward(x, p)
        assert out.shape == (3, 2)

    def test_gradients_match_finite_differences(self):
        p = small_net(seed=3)
        images, labels = small_data(seed=4, n=12)
        _, grads = ewc.ce_loss_and_grads(p, images, labels)
        h = 1e-6
        for a, g in zip(p.params, grads):
            fd = np.zeros_like(a)
            for idx in np.ndindex(a.shape):
                orig = a[idx]
                a[idx] = orig + h
                up = ewc.ce_loss_and_grads(p, images, labels)[0]
                a[idx] = orig - h
                dn = ewc.ce_loss_and_grads(p, images, labels)[0]
                a[idx] = orig
                fd[idx] = (up - dn) / (2 * h)
            rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-6)
            assert rel.max() <= 1e-4


class TestFisher:
    def test_zero_model_output_bias_closed_form(self):
        """Uniform 10-way softmax: E[(onehot - p)^2] = 0.1*0.81 + 0.9*0.01."""
        p = ewc.init_dnn((6, 8, 8, 8, 10), seed_or_rng=0)
        for a in p.params:
            a[:] = 0.0
        images = np.random.default_rng(5).random((500, 6))
        ds = LabeledDataset(
            images=images.reshape(-1, 1, 6, 1),
            labels=np.zeros(500, dtype=np.int64),
            num_classes=10,
        )
        fisher = ewc.fisher_diag(p, ds, sample_count=2000, rng=7)
        out_bias = fisher[-1]
        assert np.abs(out_bias - 0.09).max() <= 0.02
        # every other parameter sees zero activations or zero deltas
        for f in fisher[:-1]:
            assert np.abs(f).max() <= 1e-12

    def test_estimator_stability_under_doubling(self):
        images, labels = small_data(seed=8, n=200)
        ds = LabeledDataset(
            images=images.reshape(-1, 1, 6, 1), labels=labels.astype(np.int64), num_classes=4
        )
        p = small_net(seed=9)
        rng = np.random.default_rng(10)
        anchors = ewc.EwcAnchors(lam=1.0)
        ewc.train_task_ewc(p, anchors, ds, epochs=60, eps=1e-3, rng=rng, batch_size=50,
                           fisher_samples=100)
        f1 = ewc.fisher_diag(p, ds, sample_count=4000, rng=11)
        f2 = ewc.fisher_diag(p, ds, sample_count=8000, rng=12)
        total1 = sum(float(a.sum()) for a in f1)
        total2 = sum(float(a.sum()) for a in f2)
        assert abs(total1 - total2) / max(total1, total2) < 0.05

    def test_degenerate_single_class_zero_fisher(self):
        p = ewc.init_dnn((4, 6, 1), seed_or_rng=13)
        images, _ = small_data(seed=14, n=30, dim=4, classes=1)
        ds = LabeledDataset(
            images=images.reshape(-1, 1, 4, 1), labels=np.zeros(30, dtype=np.int64),
            num_classes=1,
        )
        fisher = ewc.fisher_diag(p, ds, sample_count=200, rng=15)
        for f in fisher:
            assert np.abs(f).max() <= 1e-20

    def test_sample_order_invariance(self):
        p = small_net(seed=16)
        images, labels = small_data(seed=17, n=64)
        f1 = ewc.fisher_from_samples(p, images, labels)
        perm = np.random.default_rng(18).permutation(64)
        f2 = ewc.fisher_from_samples(p, images[perm], labels[perm])
        for a, b in zip(f1, f2):
            assert np.allclose(a, b, rtol=1e-10, atol=1e-12)

    def test_entries_nonnegative(self):
        p = small_net(seed=19)
        images, labels = small_data(seed=20, n=32)
        for f in ewc.fisher_from_samples(p, images, labels):
            assert f.min() >= 0.0


class TestEwcLoss:
    def test_no_anchors_is_plain_ce(self):
        p = small_net(seed=21)
        images, labels = small_data(seed=22)
        anchors = ewc.EwcAnchors(lam=123.0)
        total, ce, _ = ewc.ewc_loss_and_grads(p, images, labels, anchors)
        assert total == pytest.approx(ce)

    def test_zero_lambda_is_plain_ce(self):
        p = small_net(seed=23)
        images, labels = small_data(seed=24)
        anchors = ewc.EwcAnchors(lam=0.0)
        anchors.append([a.copy() + 1.0 for a in p.params], [np.ones_like(a) for a in p.params])
        total, ce, _ = ewc.ewc_loss_and_grads(p, images, labels, anchors)
        assert total == pytest.approx(ce)

    def test_scalar_penalty_value(self):
        """F=2, theta*=1, theta=3, lambda=1 -> (1/2)*1*2*(3-1)^2 = 4."""
        p = ewc.DnnParams(params=[np.array([[3.0]]), np.array([0.0])])
        anchors = ewc.EwcAnchors(lam=1.0)
        anchors.append(
            [np.array([[1.0]]), np.array([0.0])],
            [np.array([[2.0]]), np.array([0.0])],
        )
        penalty, _ = ewc.penalty_and_grads(p, anchors)
        assert penalty == pytest.approx(4.0)

    def test_penalty_zero_iff_at_anchor(self):
        p = small_net(seed=25)
        anchors = ewc.EwcAnchors(lam=2.0)
        anchors.append([a.copy() for a in p.params], [np.abs(a) + 0.1 for a in p.params])
        penalty, grads = ewc.penalty_and_grads(p, anchors)
        assert penalty == 0.0
        p.params[0][0, 0] += 0.5
        penalty2, _ = ewc.penalty_and_grads(p, anchors)
        assert penalty2 > 0.0

    def test_penalty_gradient_exact(self):
        p = small_net(seed=26)
        rng = np.random.default_rng(27)
        snapshot = [a + rng.normal(0, 0.3, a.shape) for a in p.params]
        fisher = [np.abs(rng.normal(0, 1, a.shape)) for a in p.params]
        anchors = ewc.EwcAnchors(lam=3.5)
        anchors.append(snapshot, fisher)
        _, grads = ewc.penalty_and_grads(p, anchors)
        for a, star, f, g in zip(p.params, snapshot, fisher, grads):
            assert np.allclose(g, 3.5 * f * (a - star), rtol=1e-12, atol=1e-14)

    def test_anchor_shape_mismatch(self):
        p = small_net(seed=28)
        anchors = ewc.EwcAnchors(lam=1.0)
        anchors.append([np.zeros((2, 2))], [np.zeros((2, 2))])
        images, labels = small_data(seed=29)
        with pytest.raises(ConsistencyError):
            ewc.ewc_loss_and_grads(p, images, labels, anchors)


class TestTrainTaskEwc:
    def make_ds(self, seed=0, n=300):
        ds = make_blobs_dataset(n=n, num_classes=3, seed=seed, spread=0.05)
        return ds

    def test_anchors_appended_per_task(self):
        ds = self.make_ds()
        p = ewc.init_dnn((2, 16, 16, 16, 3), seed_or_rng=30)
        anchors = ewc.EwcAnchors()
        rng = np.random.default_rng(31)
        for t in range(3):
            ewc.train_task_ewc(p, anchors, ds, epochs=2, eps=1e-3, rng=rng,
                               batch_size=50, fisher_samples=100)
        assert len(anchors) == 3
        assert anchors.lam == pytest.approx(1000.0)

    def test_learns_blobs(self):
        ds = self.make_ds(seed=1, n=600)
        p = ewc.init_dnn((2, 16, 16, 16, 3), seed_or_rng=32)
        anchors = ewc.EwcAnchors()
        ewc.train_task_ewc(p, anchors, ds, epochs=30, eps=1e-3,
                           rng=np.random.default_rng(33), batch_size=50,
                           fisher_samples=100)
        assert ewc.ewc_accuracy(p, ds) >= 0.95

    def test_bad_eps_rejected(self):
        ds = self.make_ds()
        p = ewc.init_dnn((2, 8, 3), seed_or_rng=34)
        with pytest.raises(ConfigError):
            ewc.train_task_ewc(p, ewc.EwcAnchors(), ds, 1, eps=0.0,
                               rng=np.random.default_rng(0))

    def test_anchor_memory_grows_linearly(self):
        ds = self.make_ds()
        p = ewc.init_dnn((2, 8, 8, 8, 3), seed_or_rng=35)
        anchors = ewc.EwcAnchors()
        rng = np.random.default_rng(36)
        counts = []
        for t in range(3):
            ewc.train_task_ewc(p, anchors, ds, epochs=1, eps=1e-3, rng=rng,
                               batch_size=100, fisher_samples=50)
            counts.append(anchors.stored_value_count())
        per_task = 2 * p.param_count()
        assert counts == [per_task, 2 * per_task, 3 * per_task]
