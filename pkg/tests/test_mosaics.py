import numpy as np
import pytest
from PIL import Image

from gmrlab import mosaics
from gmrlab.model import build_gmr

from conftest import make_blobs_dataset


@pytest.fixture
def image_model():
    return build_gmr((6, 6, 1), num_classes=3, n_components=9, seed=0)


def test_mosaic_layout(image_model):
    img = mosaics.prototype_mosaic(image_model, kind="means", pad=1)
    # 3x3 grid of 6x6 patches with 1px separators
    assert img.shape == (3 * 6 + 4, 3 * 6 + 4)
    assert img.dtype == np.uint8


def test_variance_mosaic_normalized(image_model):
    img = mosaics.prototype_mosaic(image_model, kind="variances")
    assert img.max() == 255


def test_pgm_header_and_payload(image_model, tmp_path):
    img = mosaics.prototype_mosaic(image_model)
    path = tmp_path / "m.pgm"
    mosaics.save_mosaic(img, path)
    data = path.read_bytes()
    assert data.startswith(b"P5\n22 22\n255\n")
    assert len(data) == len(b"P5\n22 22\n255\n") + img.size


def test_png_loadable(image_model, tmp_path):
    img = mosaics.prototype_mosaic(image_model)
    path = tmp_path / "m.png"
    mosaics.save_mosaic(img, path)
    loaded = np.asarray(Image.open(path))
    assert np.array_equal(loaded, img)
