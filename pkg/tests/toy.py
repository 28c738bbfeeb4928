"""A small fully-wired model shared by the gradient tests and the acceptance suite."""
import numpy as np

import gradcheck
from atpnet.model import ATPNet, TrainConfig
from atpnet.sampling import init_alpha, ternarize


def assign(module, dotted, value):
    """Replace the parameter at a dotted path (list indices included) with ``value``."""
    *path, last = dotted.split(".")
    obj = module
    for part in path:
        obj = obj[int(part)] if isinstance(obj, list) else getattr(obj, part)
    if isinstance(obj, list):
        obj[int(last)] = value
    else:
        setattr(obj, last, value)


def toy_model(mode):
    cfg = TrainConfig(mr=0.25, block_size=8, crop=32, features=4, dilation_rates=(1, 2), seed=3)
    model = ATPNet(cfg, dtype=np.float64)
    rng = np.random.default_rng(14)
    # move zero-initialised weights off zero so every path carries gradient
    model.deep.tail_weight.data = rng.standard_normal(model.deep.tail_weight.shape) * 0.3
    model.initial.refine.point.data = rng.standard_normal(model.initial.refine.point.shape) * 0.05
    model.attention.gamma.data[...] = 0.4
    if mode == "ternary":
        ternarize(model.sampler, (rng.random(model.sampler.latent.shape) > 1 / 3).astype(np.uint8))
        init_alpha(model.sampler)
    return model


def composed_gradient_error(mode, max_coords=12):
    """Worst relative error of sample -> (attention) -> initial -> deep on a 32x32 image.

    The image and every trainable tensor are checked. In ternary mode the
    latent sampling weight is excluded: its gradient is the straight-through
    one, not the derivative of the (piecewise-constant) forward pass.
    """
    model = toy_model(mode)
    params = model.trainable()
    names = list(params)
    x = np.random.default_rng(15).random((1, 1, 32, 32))

    def fn(img, *tensors):
        for name, t in zip(names, tensors):
            assign(model, name, t)
        return model(img)

    arrays = [x] + [params[n].data for n in names]
    wrt = [i for i, n in enumerate(["image"] + names) if n != "sampler.latent" or mode == "float"]
    return gradcheck.check(fn, arrays, wrt=wrt, max_coords=max_coords, guard_kinks=True)
