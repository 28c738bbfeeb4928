"""Image loading, size validation and training-time augmentation.

Images are handled as 2-D ``uint8`` arrays; :func:`to_tensor_array` gives the
normalised ``(1, 1, H, W)`` form in ``[0, 1]``.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from .errors import DataError, InputSizeError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".pgm")


def luma_bt601(rgb: np.ndarray) -> np.ndarray:
    """``0.299 R + 0.587 G + 0.114 B`` rounded half up, in integer arithmetic."""
    rgb = rgb.astype(np.int64)
    return ((299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000).astype(np.uint8)


def load_grayscale(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise DataError(f"{path}: unsupported image type (expected PNG or PGM)")
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "L":
                return np.array(im, dtype=np.uint8)
            if mode == "1":
                return np.array(im.convert("L"), dtype=np.uint8)
            if mode in ("RGB", "RGBA", "P", "LA"):
                if mode == "LA":
                    return np.array(im.getchannel(0), dtype=np.uint8)
                return luma_bt601(np.array(im.convert("RGB"), dtype=np.uint8))
            raise DataError(f"{path}: unsupported pixel mode {mode!r} (need 8-bit grayscale or RGB)")
    except (OSError, UnidentifiedImageError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: cannot read image ({exc})") from exc


def save_png(image: np.ndarray, path) -> None:
    PILImage.fromarray(np.asarray(image, dtype=np.uint8), mode="L").save(Path(path), format="PNG")


def list_images(directory) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def to_tensor_array(image: np.ndarray, dtype=np.float32) -> np.ndarray:
    dtype = np.dtype(dtype)
    return (np.asarray(image, dtype=dtype) / dtype.type(255.0))[None, None]


def to_uint8(x: np.ndarray) -> np.ndarray:
    """Clamp a ``[0, 1]`` image to range and quantise to 8 bits (round half up)."""
    return np.floor(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def validate_input_size(image: np.ndarray, block_size: int) -> np.ndarray:
    """Centre-crop to the largest multiple of ``block_size``; reject images smaller than one block."""
    h, w = image.shape[:2]
    if h < block_size or w < block_size:
        raise InputSizeError(
            f"image {h}x{w} is smaller than the {block_size}-pixel block; no output can be produced"
        )
    nh, nw = h - h % block_size, w - w % block_size
    if (nh, nw) == (h, w):
        return image
    top, left = (h - nh) // 2, (w - nw) // 2
    return image[top : top + nh, left : left + nw]


def random_crop(image: np.ndarray, crop: int, rng: np.random.Generator) -> np.ndarray:
    h, w = image.shape[:2]
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    return image[top : top + crop, left : left + crop]


def augment(image: np.ndarray, crop: int, flip_prob: float, rng: np.random.Generator, dtype=np.float32) -> Optional[np.ndarray]:
    """Random ``crop x crop`` window with independent horizontal/vertical flips.

    Returns a ``(crop, crop)`` float array in ``[0, 1]``, or ``None`` (with a
    warning) when the image is smaller than the crop. The rng draws are the
    same whatever ``flip_prob`` is, so the crop position does not depend on it.
    """
    h, w = image.shape[:2]
    if h < crop or w < crop:
        log.warning("skipping %dx%d image smaller than the %d-pixel crop", h, w, crop)
        return None
    patch = random_crop(image, crop, rng)
    flip_h, flip_v = rng.random(2) < flip_prob
    if flip_h:
        patch = patch[:, ::-1]
    if flip_v:
        patch = patch[::-1, :]
    dtype = np.dtype(dtype)
    return np.ascontiguousarray(patch, dtype=dtype) / dtype.type(255.0)
