import numpy as np
import pytest
from PIL import Image

from atpnet.model import TrainConfig


def smooth_image(rng, h, w):
    """Low-frequency random texture in 0..255 (sums of a few random cosines)."""
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    img = np.zeros((h, w))
    for _ in range(4):
        fy, fx, phase = rng.uniform(0.5, 4, 2).tolist() + [rng.uniform(0, 6.3)]
        img += np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
    img = (img - img.min()) / (np.ptp(img) + 1e-9)
    return (img * 255).astype(np.uint8)


def write_images(directory, n, h, w, seed):
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        Image.fromarray(smooth_image(rng, h, w), mode="L").save(directory / f"img{i:02d}.png")
    return directory


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    return write_images(root / "train", 6, 24, 28, 0), write_images(root / "val", 2, 16, 24, 1)


@pytest.fixture
def tiny_cfg():
    return TrainConfig(
        mr=0.25, block_size=8, crop=16, batch=2, lr=1e-3, epochs=4, features=4,
        dilation_rates=(1, 2), calib_batch=4, calib_steps=5, seed=11,
    )
