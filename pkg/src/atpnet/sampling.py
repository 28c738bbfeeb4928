"""Block-based learned sampling layer with binary and ternary weight modes."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import functional as F
from .errors import ConfigError, InputSizeError, ShapeError
from .tensor import Module, Parameter, Tensor, _result, mul

MODES = ("float", "binary", "ternary")


@dataclass(frozen=True)
class SamplerConfig:
    block_size: int = 32
    subrate: float = 0.25
    in_channels: int = 1

    def __post_init__(self):
        if int(self.block_size) != self.block_size or self.block_size < 1:
            raise ConfigError(f"block_size must be a positive int, got {self.block_size}")
        if not 0 < self.subrate <= 1:
            raise ConfigError(f"subrate must lie in (0, 1], got {self.subrate}")
        if int(self.in_channels) != self.in_channels or self.in_channels < 1:
            raise ConfigError(f"in_channels must be a positive int, got {self.in_channels}")
        out_channels(self)

    @property
    def out_channels(self) -> int:
        return out_channels(self)

    @property
    def block_pixels(self) -> int:
        return self.in_channels * self.block_size * self.block_size


def out_channels(cfg: SamplerConfig) -> int:
    """Number of measurements per block: ``floor(bs * bs * subrate * in_channels)``."""
    # the epsilon keeps exact products such as 1024 * 0.29 from flooring one short
    n = math.floor(cfg.block_size * cfg.block_size * cfg.subrate * cfg.in_channels + 1e-9)
    if n < 1:
        raise ConfigError(
            f"block_size={cfg.block_size}, subrate={cfg.subrate} gives {n} measurements per block; need at least 1"
        )
    return n


def binarize(latent: np.ndarray) -> np.ndarray:
    """+1 where ``latent >= 0``, -1 elsewhere (zero maps to +1)."""
    latent = np.asarray(latent)
    return np.where(latent >= 0, 1, -1).astype(latent.dtype if latent.dtype.kind == "f" else np.float32)


def ste_sign(t: Tensor) -> Tensor:
    """Binarize in the forward pass; pass the gradient straight through."""
    return _result(binarize(t.data), (t,), lambda g: (g,))


class SamplingLayer(Module):
    """Strided convolution with no bias and no activation.

    ``latent`` holds the float weights the optimizer updates. The effective
    weight depends on ``mode``: the latent itself, its sign, or
    ``alpha * sign(latent) * mask``.
    """

    def __init__(self, cfg: SamplerConfig, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(cfg.block_pixels)
        shape = (cfg.out_channels, cfg.in_channels, cfg.block_size, cfg.block_size)
        self.latent = Parameter(rng.uniform(-bound, bound, size=shape), dtype=dtype)
        self.alpha = Parameter(np.asarray(1.0), dtype=dtype)
        self.mode = "float"
        self.mask: Optional[np.ndarray] = None

    @property
    def block_size(self) -> int:
        return self.cfg.block_size

    def set_mode(self, mode: str) -> None:
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        if mode == "ternary" and self.mask is None:
            raise ConfigError("ternary mode needs a mask; call ternarize()")
        self.mode = mode

    def effective_weight(self) -> Tensor:
        if self.mode == "float":
            return self.latent
        signs = ste_sign(self.latent)
        if self.mode == "binary":
            return signs
        return mul(mul(signs, Tensor(self.mask)), self.alpha)

    def effective_weight_array(self) -> np.ndarray:
        return self.effective_weight().data.copy()

    def trainable(self) -> dict:
        """Parameters that influence the output in the current mode."""
        params = {"latent": self.latent}
        if self.mode == "ternary":
            params["alpha"] = self.alpha
        return params

    def clamp_latent(self, limit: float = 1.0) -> None:
        np.clip(self.latent.data, -limit, limit, out=self.latent.data)

    def __call__(self, image: Tensor) -> Tensor:
        return sample(self, image)


def check_image_extents(height: int, width: int, block_size: int) -> None:
    if height < block_size or width < block_size:
        raise InputSizeError(
            f"image {height}x{width} is smaller than the {block_size}-pixel block; no measurement can be produced"
        )
    if height % block_size or width % block_size:
        raise InputSizeError(
            f"image {height}x{width} is not divisible by block size {block_size}; "
            f"crop it to {height - height % block_size}x{width - width % block_size} first"
        )


def sample(layer: SamplingLayer, image: Tensor) -> Tensor:
    """Measure every non-overlapping block: ``(b, c, H, W) -> (b, m, H/bs, W/bs)``."""
    if image.ndim != 4:
        raise ShapeError(f"image must be rank 4 (batch, channel, height, width), got {image.shape}")
    if image.shape[1] != layer.cfg.in_channels:
        raise ShapeError(f"image has {image.shape[1]} channels, sampler expects {layer.cfg.in_channels}")
    check_image_extents(image.shape[2], image.shape[3], layer.block_size)
    return F.conv2d(image, layer.effective_weight(), None, stride=layer.block_size)


def ste_update(layer: SamplingLayer, upstream_grad: np.ndarray) -> None:
    """Route a gradient taken w.r.t. the effective weight onto the latent (and alpha).

    Matches what backpropagating through :meth:`SamplingLayer.effective_weight`
    does. In float mode the effective weight is the latent, so nothing extra
    is routed and the call is a no-op.
    """
    if layer.mode == "float":
        return
    upstream_grad = np.asarray(upstream_grad, dtype=layer.latent.dtype)
    if upstream_grad.shape != layer.latent.shape:
        raise ShapeError(f"gradient shape {upstream_grad.shape} != latent shape {layer.latent.shape}")
    if layer.mode == "binary":
        latent_grad = upstream_grad
    else:
        latent_grad = upstream_grad * layer.mask * layer.alpha.data
        alpha_grad = np.asarray((binarize(layer.latent.data) * layer.mask * upstream_grad).sum(), dtype=layer.alpha.dtype)
        layer.alpha.grad = alpha_grad if layer.alpha.grad is None else layer.alpha.grad + alpha_grad
    layer.latent.grad = latent_grad if layer.latent.grad is None else layer.latent.grad + latent_grad


def ternarize(layer: SamplingLayer, mask: np.ndarray) -> SamplingLayer:
    """Attach a pruning mask and switch the layer to ternary mode."""
    mask = np.asarray(mask)
    if mask.shape != layer.latent.shape:
        raise ShapeError(f"mask shape {mask.shape} != sampling weight shape {layer.latent.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ShapeError("mask entries must be 0 or 1")
    layer.mask = mask.astype(layer.latent.dtype)
    layer.mode = "ternary"
    return layer


def init_alpha(layer: SamplingLayer) -> float:
    value = float(np.mean(np.abs(layer.latent.data), dtype=np.float64))
    if value == 0.0:
        warnings.warn("latent sampling weights are all zero; alpha initialised to 0", RuntimeWarning, stacklevel=2)
    layer.alpha.data[...] = value
    return value
