import math

import numpy as np

from .errors import ShapeError


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB between two 8-bit images; ``inf`` when identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def block_dc(image: np.ndarray, block_size: int) -> np.ndarray:
    """Replace every ``block_size`` square with its mean (rounded to 8 bits)."""
    h, w = image.shape
    if h % block_size or w % block_size:
        raise ShapeError(f"image {h}x{w} not divisible by block size {block_size}")
    blocks = np.asarray(image, dtype=np.float64).reshape(h // block_size, block_size, w // block_size, block_size)
    means = blocks.mean(axis=(1, 3), keepdims=True)
    filled = np.broadcast_to(means, blocks.shape).reshape(h, w)
    return np.floor(filled + 0.5).astype(np.uint8)
