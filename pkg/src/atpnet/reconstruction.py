"""Initial and deep reconstruction networks."""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from . import functional as F
from .errors import ConfigError, ShapeError
from .sampling import SamplerConfig
from .tensor import Module, Parameter, Tensor, scale


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class DSConv(Module):
    """Depthwise KxK convolution followed by a biased 1x1 projection."""

    def __init__(self, in_ch: int, out_ch: int, rng, dtype=np.float32, kernel: int = 3, zero_point: bool = False):
        self.depth = Parameter(_uniform(rng, kernel * kernel, (in_ch, 1, kernel, kernel)), dtype=dtype)
        point = np.zeros((out_ch, in_ch, 1, 1)) if zero_point else _uniform(rng, in_ch, (out_ch, in_ch, 1, 1))
        self.point = Parameter(point, dtype=dtype)
        self.bias = Parameter(np.zeros(out_ch), dtype=dtype)

    @property
    def in_channels(self) -> int:
        return self.depth.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return F.depthwise_separable_conv(x, self.depth, self.point, self.bias)


class InitialReconstructor(Module):
    """Measurements to a first image estimate.

    A 1x1 convolution expands each block's measurements to ``bs*bs`` pixel
    channels. A residual depthwise-separable stage then mixes neighbouring
    blocks on the block grid, and a pixel shuffle tiles the channels back into
    ``bs x bs`` pixel blocks.
    """

    def __init__(self, cfg: SamplerConfig, rng: Optional[np.random.Generator] = None, dtype=np.float32, refine: bool = True):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        pixels = cfg.block_pixels
        m = cfg.out_channels
        self.expand_weight = Parameter(_uniform(rng, m, (pixels, m, 1, 1)), dtype=dtype)
        self.expand_bias = Parameter(np.zeros(pixels), dtype=dtype)
        self.refine = DSConv(pixels, pixels, rng, dtype, zero_point=True)
        self.use_refine = refine

    def __call__(self, measurements: Tensor) -> Tensor:
        return init_reconstruct(self, measurements)


def init_reconstruct(r: InitialReconstructor, measurements: Tensor) -> Tensor:
    if measurements.ndim != 4 or measurements.shape[1] != r.cfg.out_channels:
        raise ShapeError(
            f"expected measurements with {r.cfg.out_channels} channels, got shape {measurements.shape}"
        )
    expanded = F.conv2d(measurements, r.expand_weight, r.expand_bias)
    if r.use_refine:
        expanded = expanded + r.refine(expanded)
    return F.pixel_shuffle(expanded, r.cfg.block_size)


def pinv_init(r: InitialReconstructor, sampler_weight: np.ndarray) -> None:
    """Set the expansion to the pseudo-inverse of the block sampling matrix (zero bias).

    With the refine stage at its identity start, the initial estimate is then
    the minimum-norm block reconstruction consistent with the measurements.
    """
    m = sampler_weight.shape[0]
    phi = np.asarray(sampler_weight, dtype=np.float64).reshape(m, -1)
    if phi.shape[1] != r.cfg.block_pixels or m != r.cfg.out_channels:
        raise ShapeError(f"sampler weight {sampler_weight.shape} does not match the reconstructor")
    inv = np.linalg.pinv(phi)  # (c*bs*bs, m), rows in (channel, u, v) order
    # pixel shuffle reads channel k*bs*bs + u*bs + v for output channel k
    r.expand_weight.data = inv.reshape(r.cfg.block_pixels, m, 1, 1).astype(r.expand_weight.dtype)
    r.expand_bias.data = np.zeros_like(r.expand_bias.data)


class BaseBlock(Module):
    """Three densely connected depthwise-separable layers with a scaled residual.

    Layer ``i`` (0-based) sees ``(i + 1) * channels`` inputs: its predecessors'
    outputs, newest first, followed by the block input.
    """

    def __init__(self, channels: int, rng, dtype=np.float32, beta: float = 0.2, slope: float = 0.2):
        self.channels = channels
        self.beta = beta
        self.slope = slope
        self.layers = [DSConv((i + 1) * channels, channels, rng, dtype) for i in range(3)]
        for i, layer in enumerate(self.layers):
            if layer.in_channels != (i + 1) * channels:
                raise ShapeError(f"dense layer {i} wired with {layer.in_channels} inputs")

    def __call__(self, x: Tensor) -> Tensor:
        return base_block_forward(self, x)


def base_block_forward(blk: BaseBlock, x: Tensor) -> Tensor:
    if x.ndim != 4 or x.shape[1] != blk.channels:
        raise ShapeError(f"base block expects {blk.channels} channels, got shape {x.shape}")
    features = [x]
    for layer in blk.layers:
        inp = features[0] if len(features) == 1 else F.concat_channels(*features)
        features.insert(0, F.leaky_relu(layer(inp), blk.slope))
    return features[0] + scale(x, blk.beta)


def check_dilation_schedule(rates: Sequence[int]) -> None:
    for r in rates:
        if int(r) != r or r < 1:
            raise ConfigError(f"dilation rates must be positive ints, got {list(rates)}")
    for a, b in zip(rates, rates[1:]):
        if math.gcd(int(a), int(b)) > 1:
            raise ConfigError(f"consecutive dilation rates {a} and {b} share a divisor > 1 (gridding artifacts)")


class DeepReconstructor(Module):
    """Residual refinement of the initial estimate.

    ``head`` lifts the image to feature space; each stage is a dilated 3x3
    convolution feeding a :class:`BaseBlock` whose output is added to the
    stage input; ``tail`` maps back to image channels and the result is added
    to the network input.
    """

    def __init__(
        self,
        in_channels: int = 1,
        features: int = 32,
        rates: Sequence[int] = (1, 2, 3),
        rng: Optional[np.random.Generator] = None,
        dtype=np.float32,
        beta: float = 0.2,
        slope: float = 0.2,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        check_dilation_schedule(rates)
        self.in_channels = in_channels
        self.features = features
        self.rates = tuple(int(r) for r in rates)
        self.slope = slope
        self.head_weight = Parameter(_uniform(rng, in_channels * 9, (features, in_channels, 3, 3)), dtype=dtype)
        self.head_bias = Parameter(np.zeros(features), dtype=dtype)
        self.dilated_weights = [
            Parameter(_uniform(rng, features * 9, (features, features, 3, 3)), dtype=dtype) for _ in self.rates
        ]
        self.dilated_biases = [Parameter(np.zeros(features), dtype=dtype) for _ in self.rates]
        self.blocks = [BaseBlock(features, rng, dtype, beta, slope) for _ in self.rates]
        # zero tail: the network starts as the identity on its input
        self.tail_weight = Parameter(np.zeros((in_channels, features, 3, 3)), dtype=dtype)
        self.tail_bias = Parameter(np.zeros(in_channels), dtype=dtype)

    def layer_spec(self) -> list:
        """``(kernel, dilation)`` for every spatial convolution on the main path, in order."""
        spec = [(3, 1)]
        for r in self.rates:
            spec.append((3, r))
            spec.extend([(3, 1)] * 3)
        spec.append((3, 1))
        return spec

    def __call__(self, x_hat: Tensor) -> Tensor:
        return deep_reconstruct(self, x_hat)


def deep_reconstruct(d: DeepReconstructor, x_hat: Tensor) -> Tensor:
    if x_hat.ndim != 4 or x_hat.shape[1] != d.in_channels:
        raise ShapeError(f"deep reconstructor expects {d.in_channels} channels, got shape {x_hat.shape}")
    state = F.leaky_relu(F.conv2d(x_hat, d.head_weight, d.head_bias, padding=1), d.slope)
    for rate, w, b, block in zip(d.rates, d.dilated_weights, d.dilated_biases, d.blocks):
        dilated = F.leaky_relu(F.conv2d(state, w, b, padding=rate, dilation=rate), d.slope)
        state = F.leaky_relu(block(dilated) + state, d.slope)
    return F.conv2d(state, d.tail_weight, d.tail_bias, padding=1) + x_hat


def receptive_field(config) -> int:
    """Receptive field of stacked stride-1 convolutions.

    ``config`` is a list of ``(kernel, dilation)`` pairs or an object with
    ``layer_spec()``; each layer widens the field by ``(kernel - 1) * dilation``.
    """
    layers = config.layer_spec() if hasattr(config, "layer_spec") else config
    return 1 + sum((int(k) - 1) * int(r) for k, r in layers)
