"""Attention-driven importance scores and the pruning mask built from them.

A self-attention head re-weights the sampler's measurements. An auxiliary
linear sampler is then fitted so that convolving it with the image reproduces
the attended measurements; its elementwise difference from the real sampling
weights scores each weight, and the weights with the smallest scores are
pruned.
"""
from __future__ import annotations

import logging
import math
from typing import Optional

import numpy as np

from . import functional as F
from .errors import ConfigError, ShapeError, TrainingError
from .optim import adam_step
from .sampling import SamplingLayer, check_image_extents
from .tensor import Module, Parameter, Tensor, matmul, mul, reshape, softmax, transpose

log = logging.getLogger(__name__)


class AttentionHead(Module):
    """Single-head spatial self-attention with a residual gate ``gamma``."""

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        inner = max(channels // 8, 1)
        self.channels = channels
        bound = 1.0 / math.sqrt(channels)

        def init(o):
            return rng.uniform(-bound, bound, size=(o, channels, 1, 1))

        self.query = Parameter(init(inner), dtype=dtype)
        self.key = Parameter(init(inner), dtype=dtype)
        self.value = Parameter(init(channels), dtype=dtype)
        self.gamma = Parameter(np.asarray(0.0), dtype=dtype)

    def affinity(self, x: Tensor) -> Tensor:
        """Softmax-normalised query/key affinities, shape ``(b, N, N)`` with rows summing to 1."""
        b, _, h, w = x.shape
        q = reshape(F.conv2d(x, self.query), (b, -1, h * w))
        k = reshape(F.conv2d(x, self.key), (b, -1, h * w))
        energy = matmul(transpose(q, (0, 2, 1)), k)
        return softmax(energy, axis=-1)

    def __call__(self, x: Tensor) -> Tensor:
        return attention_forward(self, x)


def attention_forward(head: AttentionHead, measurements: Tensor) -> Tensor:
    """``measurements + gamma * attention(measurements)``; exact identity at ``gamma == 0``."""
    if measurements.ndim != 4 or measurements.shape[1] != head.channels:
        raise ShapeError(f"attention head expects {head.channels} channels, got shape {measurements.shape}")
    b, c, h, w = measurements.shape
    attn = head.affinity(measurements)
    v = reshape(F.conv2d(measurements, head.value), (b, c, h * w))
    out = reshape(matmul(v, transpose(attn, (0, 2, 1))), (b, c, h, w))
    result = measurements + mul(out, head.gamma)
    if head.gamma.data == 0:
        # x + 0*a turns -0.0 into +0.0; keep the forward value bit-exact
        result.data = measurements.data.copy()
    return result


class AuxiliarySampler(Module):
    """Linear block sampler whose weights are fitted to reproduce attended measurements."""

    def __init__(self, weight: np.ndarray, dtype=np.float32):
        self.weight = Parameter(np.array(weight, copy=True), dtype=dtype)

    @classmethod
    def like(cls, sampler: SamplingLayer, rng: Optional[np.random.Generator] = None, warm_start: bool = True):
        """Auxiliary sampler congruent to ``sampler``; starts at its latent weights unless ``warm_start`` is off."""
        if warm_start:
            return cls(sampler.latent.data, dtype=sampler.latent.dtype)
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(sampler.cfg.block_pixels)
        return cls(rng.uniform(-bound, bound, size=sampler.latent.shape), dtype=sampler.latent.dtype)

    @property
    def block_size(self) -> int:
        return self.weight.shape[-1]

    def __call__(self, images: Tensor) -> Tensor:
        check_image_extents(images.shape[2], images.shape[3], self.block_size)
        return F.conv2d(images, self.weight, None, stride=self.block_size)


def fit_auxiliary(
    aux: AuxiliarySampler,
    images: Tensor,
    y_atten_targets: Tensor,
    steps: int = 500,
    lr: float = 1e-3,
    patience: int = 10,
) -> list:
    """Minimise the mean squared distance between ``aux(images)`` and the targets with Adam.

    Returns the objective trace (one value per step, plus the final value).
    Raises :class:`TrainingError` if the objective rises ``patience`` steps in a row.
    """
    images = Tensor(images.data) if images.requires_grad else images
    targets = Tensor(y_atten_targets.data)
    trace = []
    rising = 0
    for _ in range(steps):
        aux.weight.zero_grad()
        loss = F.mse_loss(aux(images), targets)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError("auxiliary fit produced a non-finite objective")
        if trace and value > trace[-1]:
            rising += 1
            if rising >= patience:
                raise TrainingError(f"auxiliary fit diverged: objective rose {patience} consecutive steps")
        else:
            rising = 0
        trace.append(value)
        loss.backward()
        adam_step({"aux.weight": aux.weight}, lr)
    trace.append(F.mse_loss(aux(images), targets).item())
    return trace


def importance(aux: AuxiliarySampler, sampler: SamplingLayer) -> np.ndarray:
    """Elementwise difference between the fitted auxiliary weights and the sampling weights."""
    return importance_from_arrays(aux.weight.data, sampler.latent.data)


def importance_from_arrays(fitted: np.ndarray, weights: np.ndarray) -> np.ndarray:
    if fitted.shape != weights.shape:
        raise ShapeError(f"auxiliary weights {fitted.shape} and sampling weights {weights.shape} differ")
    return fitted - weights


def build_mask(scores: np.ndarray, sparsity_rate: float) -> np.ndarray:
    """Zero the ``round(rate * N)`` entries with the smallest ``|score|``.

    Ties resolve toward the lowest flat index, so equal scores prune front to back.
    """
    if not 0 <= sparsity_rate < 1:
        raise ConfigError(f"sparsity_rate must lie in [0, 1), got {sparsity_rate}")
    scores = np.asarray(scores)
    if not np.isfinite(scores).all():
        raise ValueError("importance scores must be finite")
    n_prune = pruned_count(scores.size, sparsity_rate)
    order = np.argsort(np.abs(scores).ravel(), kind="stable")
    mask = np.ones(scores.size, dtype=np.uint8)
    mask[order[:n_prune]] = 0
    return mask.reshape(scores.shape)


def pruned_count(n: int, sparsity_rate: float) -> int:
    # round half away from zero; numpy/python round would send 0.5 to even
    return int(math.floor(sparsity_rate * n + 0.5))


def attention_mask(
    sampler: SamplingLayer,
    head: AttentionHead,
    images: Tensor,
    sparsity_rate: float,
    steps: int = 500,
    lr: float = 1e-3,
    degenerate_tol: float = 1e-3,
) -> tuple:
    """Full mask procedure on a calibration batch. Returns ``(mask, scores, trace)``.

    The attention head and sampler are treated as frozen. When the fitted
    weights barely move away from the sampling weights the scores carry no
    ranking information, and pruning falls back to ``|latent|``.
    """
    latent = Tensor(sampler.latent.data)
    measurements = F.conv2d(Tensor(images.data), latent, None, stride=sampler.block_size)
    targets = attention_forward(head, measurements)
    aux = AuxiliarySampler.like(sampler)
    trace = fit_auxiliary(aux, images, Tensor(targets.data), steps=steps, lr=lr)
    scores = importance(aux, sampler)
    scale = float(np.max(np.abs(sampler.latent.data))) or 1.0
    if float(np.max(np.abs(scores))) <= degenerate_tol * scale:
        log.warning("attention importance is degenerate (fitted weights match the sampler); pruning by |latent|")
        scores = sampler.latent.data.copy()
    return build_mask(scores, sparsity_rate), scores, trace
