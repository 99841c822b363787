import numpy as np
import pytest

from gmrlab import checkpoint, ewc, gmm
from gmrlab.errors import FormatError
from gmrlab.folding import fold
from gmrlab.model import TrainConfig, build_gmr, classify, train_task

from conftest import make_blobs_dataset


class TestGmrCheckpoint:
    def test_round_trip_reproduces_forward_outputs(self, tmp_path):
        ds = make_blobs_dataset(n=200, num_classes=3, seed=0)
        model = build_gmr(ds.image_shape, ds.num_classes, 4,
                          config=TrainConfig(batch_size=50), seed=1, sigma2_min=1e-4)
        train_task(model, ds, 10, rng=0)
        path = tmp_path / "model.npz"
        checkpoint.save_gmr(model, path)
        loaded = checkpoint.load_gmr(path)
        x = ds.images[:32]
        assert np.array_equal(classify(model, x), classify(loaded, x))
        cols = fold(x, model.fold_spec)
        assert np.array_equal(
            gmm.column_log_densities(cols, model.gmm),
            gmm.column_log_densities(cols, loaded.gmm),
        )
        assert loaded.seed == model.seed
        assert loaded.anneal.radius == model.anneal.radius

    def test_wrong_format_rejected(self, tmp_path):
        ds = make_blobs_dataset(n=50, num_classes=2, seed=2)
        model = build_gmr(ds.image_shape, ds.num_classes, 4, seed=0)
        p = ewc.init_dnn((2, 4, 2), seed_or_rng=0)
        path = tmp_path / "e.npz"
        checkpoint.save_ewc(p, ewc.EwcAnchors(), path)
        with pytest.raises(FormatError):
            checkpoint.load_gmr(path)


class TestEwcCheckpoint:
    def test_round_trip_with_anchors(self, tmp_path):
        ds = make_blobs_dataset(n=200, num_classes=3, seed=3)
        p = ewc.init_dnn((2, 8, 8, 8, 3), seed_or_rng=4)
        anchors = ewc.EwcAnchors()
        rng = np.random.default_rng(5)
        for _ in range(2):
            ewc.train_task_ewc(p, anchors, ds, epochs=1, eps=1e-3, rng=rng,
                               batch_size=50, fisher_samples=50)
        path = tmp_path / "ewc.npz"
        checkpoint.save_ewc(p, anchors, path)
        p2, anchors2 = checkpoint.load_ewc(path)
        x = ds.images[:16]
        assert np.array_equal(ewc.dnn_forward(x, p), ewc.dnn_forward(x, p2))
        assert len(anchors2) == 2
        assert anchors2.lam == anchors.lam
        images, labels = ds.images[:20], ds.labels[:20]
        l1, _, _ = ewc.ewc_loss_and_grads(p, images, labels, anchors)
        l2, _, _ = ewc.ewc_loss_and_grads(p2, images, labels, anchors2)
        assert l1 == pytest.approx(l2, rel=1e-15)
