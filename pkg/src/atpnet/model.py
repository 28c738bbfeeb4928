"""Configuration and the end-to-end sampling + reconstruction network."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .attention import AttentionHead
from .errors import ConfigError
from .reconstruction import DeepReconstructor, InitialReconstructor, check_dilation_schedule, pinv_init
from .sampling import SamplerConfig, SamplingLayer
from .tensor import Module, Tensor


@dataclass
class TrainConfig:
    """Training and architecture settings.

    The defaults are the full-scale reference configuration (96-pixel crops,
    batch 32, lr 1e-4 decayed 10x every 100 epochs). ``warmup_epochs=None``
    means half of ``epochs``.
    """

    mr: float = 0.25
    block_size: int = 32
    crop: int = 96
    batch: int = 32
    lr: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 100
    flip_prob: float = 0.5
    epochs: int = 200
    warmup_epochs: Optional[int] = None
    sparsity_rate: float = 1 / 3
    seed: int = 0
    in_channels: int = 1
    features: int = 32
    dilation_rates: tuple = (1, 2, 3)
    beta: float = 0.2
    slope: float = 0.2
    refine: bool = True
    dc_row: bool = True
    pinv_init: bool = True
    latent_clip: float = 1.0
    calib_batch: int = 32
    calib_steps: int = 500
    calib_lr: float = 1e-3

    def __post_init__(self):
        self.dilation_rates = tuple(int(r) for r in self.dilation_rates)
        if not 0 < self.mr <= 1:
            raise ConfigError(f"mr must lie in (0, 1], got {self.mr}")
        if not 0 <= self.sparsity_rate < 1:
            raise ConfigError(f"sparsity_rate must lie in [0, 1), got {self.sparsity_rate}")
        if self.crop % self.block_size:
            raise ConfigError(f"crop {self.crop} is not divisible by block_size {self.block_size}")
        for name in ("batch", "calib_batch", "lr_decay_every", "features"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.warmup_epochs is not None and self.warmup_epochs < 0:
            raise ConfigError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if not 0 <= self.flip_prob <= 1:
            raise ConfigError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        check_dilation_schedule(self.dilation_rates)
        self.sampler_config()

    @classmethod
    def desk(cls, mr: float = 0.25, **overrides) -> "TrainConfig":
        """Small-data preset: 20 epochs at batch 4 and lr 1e-3 on 96-pixel crops.

        With only ~20 training images the full-scale batch of 32 would give
        one optimizer step per epoch; the smaller batch and larger step make
        20 epochs enough to move well past the initial estimate.
        """
        return cls(**{**DESK_SETTINGS, "mr": mr, **overrides})

    @property
    def warmup(self) -> int:
        return self.epochs // 2 if self.warmup_epochs is None else self.warmup_epochs

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(self.block_size, self.mr, self.in_channels)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dilation_rates"] = list(self.dilation_rates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


DESK_SETTINGS = {"crop": 96, "batch": 4, "lr": 1e-3, "epochs": 20, "seed": 0}


class ATPNet(Module):
    """Sampler, attention head, initial and deep reconstructors.

    The attention head sits between sampler and decoder only while the
    sampler is in float mode; once quantised, measurements go straight to
    the initial reconstructor.
    """

    def __init__(self, cfg: TrainConfig, dtype=np.float32):
        self.cfg = cfg
        init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        scfg = cfg.sampler_config()
        self.sampler = SamplingLayer(scfg, init_rng, dtype)
        if cfg.dc_row:
            # first measurement starts as the block mean (same magnitude as the other rows' bound)
            self.sampler.latent.data[0] = 1.0 / np.sqrt(scfg.block_pixels)
        self.attention = AttentionHead(scfg.out_channels, init_rng, dtype)
        self.initial = InitialReconstructor(scfg, init_rng, dtype, refine=cfg.refine)
        if cfg.pinv_init:
            pinv_init(self.initial, self.sampler.latent.data)
        self.deep = DeepReconstructor(
            cfg.in_channels, cfg.features, cfg.dilation_rates, init_rng, dtype, cfg.beta, cfg.slope
        )

    @property
    def uses_attention(self) -> bool:
        return self.sampler.mode == "float"

    def measure(self, images: Tensor) -> Tensor:
        return self.sampler(images)

    def reconstruct(self, measurements: Tensor, with_initial: bool = False):
        if self.uses_attention:
            measurements = self.attention(measurements)
        x_hat = self.initial(measurements)
        out = self.deep(x_hat)
        return (out, x_hat) if with_initial else out

    def __call__(self, images: Tensor, with_initial: bool = False):
        return self.reconstruct(self.measure(images), with_initial)

    def trainable(self) -> dict:
        """Name -> Parameter for everything that affects the output in the current mode."""
        params = {f"sampler.{k}": v for k, v in self.sampler.trainable().items()}
        if self.uses_attention:
            params.update({f"attention.{k}": v for k, v in self.attention.named_parameters()})
        params.update({f"initial.{k}": v for k, v in self.initial.named_parameters() if self._initial_used(k)})
        params.update({f"deep.{k}": v for k, v in self.deep.named_parameters()})
        return params

    def _initial_used(self, name: str) -> bool:
        return self.initial.use_refine or not name.startswith("refine.")
