"""Adam and the step-decay learning-rate schedule."""
from __future__ import annotations

from typing import Iterable, Mapping, Union

import numpy as np

from .tensor import Parameter


def adam_step(
    params: Union[Mapping[str, Parameter], Iterable[Parameter]],
    lr: float,
    betas: tuple = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """Apply one bias-corrected Adam update in place.

    ``params`` may be a name->Parameter mapping (names appear in errors) or a
    plain iterable. Every parameter must carry a gradient.
    """
    named = params.items() if isinstance(params, Mapping) else ((f"#{i}", p) for i, p in enumerate(params))
    named = list(named)
    for name, p in named:
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    b1, b2 = betas
    for _, p in named:
        dt = p.dtype.type
        g = p.grad.astype(p.dtype, copy=False)
        p.step += 1
        p.exp_avg *= dt(b1)
        p.exp_avg += dt(1 - b1) * g
        p.exp_avg_sq *= dt(b2)
        p.exp_avg_sq += dt(1 - b2) * g * g
        bc1 = 1 - b1**p.step
        bc2 = 1 - b2**p.step
        denom = np.sqrt(p.exp_avg_sq / dt(bc2)) + dt(eps)
        p.data -= dt(lr / bc1) * p.exp_avg / denom


def step_decay_lr(base_lr: float, epoch: int, factor: float = 0.1, every: int = 100) -> float:
    """``base_lr * factor ** (epoch // every)``."""
    return base_lr * factor ** (epoch // every)
