"""Training schedule, evaluation and reports.

Training runs float-mode warm-up epochs, then the phase boundary (binarize,
attention-based mask, ternarize, initialise alpha), then ternary fine-tuning
where gradients reach the latent weights straight through the quantiser.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import functional as F
from .attention import attention_mask
from .data import (
    augment,
    list_images,
    load_grayscale,
    save_png,
    to_tensor_array,
    to_uint8,
    validate_input_size,
)
from .errors import ConfigError, DataError, TrainingError
from .formats import Checkpoint
from .metrics import psnr
from .model import ATPNet, TrainConfig
from .optim import adam_step
from .sampling import init_alpha, ternarize
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


def data_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 2]))


def load_training_images(directory, crop: int) -> list:
    images = []
    for path in list_images(directory):
        img = load_grayscale(path)
        if min(img.shape) < crop:
            log.warning("skipping %s: %dx%d is smaller than the %d-pixel crop", path, *img.shape, crop)
            continue
        images.append(img)
    if not images:
        raise DataError(f"{directory}: no usable training images (need PNG/PGM at least {crop}x{crop})")
    return images


def load_eval_images(directory, block_size: int) -> list:
    """``(name, image)`` pairs, centre-cropped to block multiples, in filename order."""
    out = []
    for path in list_images(directory):
        out.append((path.name, validate_input_size(load_grayscale(path), block_size)))
    if not out:
        raise DataError(f"{directory}: no PNG/PGM images found")
    return out


def crops_batch(images: Sequence[np.ndarray], indices, cfg: TrainConfig, rng) -> np.ndarray:
    patches = [augment(images[i], cfg.crop, cfg.flip_prob, rng) for i in indices]
    return np.stack(patches)[:, None]


def phase_boundary(model: ATPNet, images: Sequence[np.ndarray], rng: np.random.Generator) -> dict:
    """Quantise the sampler: binarize, fit the auxiliary sampler, prune by importance, ternarize."""
    cfg = model.cfg
    model.sampler.set_mode("binary")
    idx = rng.integers(0, len(images), size=cfg.calib_batch)
    calib = Tensor(crops_batch(images, idx, cfg, rng).astype(model.sampler.latent.dtype))
    mask, scores, trace = attention_mask(
        model.sampler, model.attention, calib, cfg.sparsity_rate, steps=cfg.calib_steps, lr=cfg.calib_lr
    )
    ternarize(model.sampler, mask)
    alpha = init_alpha(model.sampler)
    info = {
        "alpha": alpha,
        "calib_objective_start": trace[0],
        "calib_objective_end": trace[-1],
        "pruned": int(mask.size - mask.sum()),
    }
    log.info("phase boundary: %s", info)
    return info


def train_step(model: ATPNet, batch: np.ndarray, lr: float) -> float:
    x = Tensor(batch.astype(model.sampler.latent.dtype, copy=False))
    model.zero_grad()
    loss = F.mse_loss(model(x), x)
    value = loss.item()
    if not math.isfinite(value):
        return value
    loss.backward()
    adam_step(model.trainable(), lr)
    model.sampler.clamp_latent(model.cfg.latent_clip)
    return value


def mean_mse(model: ATPNet, images: Sequence[np.ndarray]) -> float:
    total, count = 0.0, 0
    with no_grad():
        for img in images:
            x = to_tensor_array(img, model.sampler.latent.dtype)
            out = model(Tensor(x)).data
            total += float(np.sum((out.astype(np.float64) - x) ** 2))
            count += x.size
    return total / count


def train(
    cfg: TrainConfig,
    train_dir,
    val_dir=None,
    resume: Optional[Checkpoint] = None,
    until_epoch: Optional[int] = None,
    on_epoch: Optional[Callable] = None,
) -> Checkpoint:
    """Train from scratch (or from ``resume``) and return the final checkpoint.

    ``until_epoch`` stops early at that epoch count, which together with
    ``resume`` allows interrupted runs. A non-finite loss aborts with a
    :class:`TrainingError` carrying the last good checkpoint.
    """
    images = load_training_images(train_dir, cfg.crop)
    val_images = [img for _, img in load_eval_images(val_dir, cfg.block_size)] if val_dir else []
    if resume is not None:
        model, rng = resume.to_model(), resume.rng()
        start, history = resume.epoch, list(resume.history)
    else:
        model, rng = ATPNet(cfg), data_rng(cfg.seed)
        start, history = 0, []
    stop = cfg.epochs if until_epoch is None else min(until_epoch, cfg.epochs)
    last_good = Checkpoint.from_model(model, start, rng, history)

    for epoch in range(start, stop):
        if epoch == cfg.warmup and model.sampler.mode == "float":
            phase_boundary(model, images, rng)
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(images))
        losses, sizes = [], []
        for first in range(0, len(order), cfg.batch):
            chunk = order[first : first + cfg.batch]
            value = train_step(model, crops_batch(images, chunk, cfg, rng), lr)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite training loss at epoch {epoch}", checkpoint=last_good)
            losses.append(value)
            sizes.append(len(chunk))
        record = {
            "epoch": epoch,
            "lr": lr,
            "mode": model.sampler.mode,
            "train_mse": float(np.average(losses, weights=sizes)),
        }
        if val_images:
            record["val_mse"] = mean_mse(model, val_images)
        history.append(record)
        log.info("epoch %d: %s", epoch, record)
        last_good = Checkpoint.from_model(model, epoch + 1, rng, history)
        if on_epoch is not None:
            on_epoch(record)
    return last_good


@dataclass
class EvalReport:
    entries: list
    mr: float
    model_id: str
    wall_clock_s: float
    mean_psnr: float = field(init=False)

    def __post_init__(self):
        values = [e["psnr"] for e in self.entries]
        self.mean_psnr = float(np.mean(values)) if values else math.nan

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image", "height", "width", "psnr_db"])
            for e in self.entries:
                writer.writerow([e["image"], e["height"], e["width"], f"{e['psnr']:.4f}"])
            writer.writerow(["mean", "", "", f"{self.mean_psnr:.4f}"])


def reconstruct_image(model: ATPNet, image: np.ndarray) -> np.ndarray:
    """8-bit reconstruction of an 8-bit image (clamped to [0, 1] before quantising)."""
    with no_grad():
        x = Tensor(to_tensor_array(image, model.sampler.latent.dtype))
        return to_uint8(model(x).data[0, 0])


def eval_threads() -> int:
    raw = os.environ.get("ATPNET_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"ATPNET_THREADS must be an integer, got {raw!r}") from None


def evaluate(
    ckpt: Checkpoint,
    dataset_dir,
    mr: Optional[float] = None,
    save_dir=None,
    model_id: Optional[str] = None,
) -> EvalReport:
    """PSNR of every image in ``dataset_dir`` after sampling and reconstruction."""
    if mr is not None and not math.isclose(mr, ckpt.config.mr, rel_tol=0, abs_tol=1e-12):
        raise ConfigError(
            f"checkpoint was trained at mr={ckpt.config.mr}, not mr={mr}; use a checkpoint trained at mr={mr}"
        )
    started = time.perf_counter()
    model = ckpt.to_model()
    items = load_eval_images(dataset_dir, ckpt.config.block_size)

    def run(item):
        name, img = item
        rec = reconstruct_image(model, img)
        if save_dir is not None:
            save_png(rec, Path(save_dir) / (Path(name).stem + "_rec.png"))
        return {"image": name, "height": int(img.shape[0]), "width": int(img.shape[1]), "psnr": psnr(img, rec)}

    with no_grad(), ThreadPoolExecutor(max_workers=eval_threads()) as pool:
        entries = list(pool.map(run, items))
    return EvalReport(
        entries=entries,
        mr=ckpt.config.mr,
        model_id=model_id or ckpt.digest()[:16],
        wall_clock_s=time.perf_counter() - started,
    )
