"""Checkpoint (ATPN) and measurement dump (ATPM) file formats.

ATPN layout, little-endian::

    magic        4s  b"ATPN"
    version      u32
    header_len   u64
    header       UTF-8 JSON (sorted keys): config, mode, epoch, rng_state,
                 history, steps, and a table of sections
                 {name, dtype, shape, offset, nbytes}
    payload      raw little-endian arrays, offsets relative to payload start

Section names are the dotted parameter names, plus ``<name>#exp_avg`` and
``<name>#exp_avg_sq`` for the Adam moments and ``sampler.mask`` when the
sampler is ternary.

ATPM layout, little-endian::

    magic 4s b"ATPM", version u32, batch u32, channels u32, height u32,
    width u32, block_size u32, mr f64, then batch*channels*height*width f32
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError
from .model import ATPNet, TrainConfig

CKPT_MAGIC = b"ATPN"
CKPT_VERSION = 1
_CKPT_PREFIX = struct.Struct("<4sIQ")

MEAS_MAGIC = b"ATPM"
MEAS_VERSION = 1
_MEAS_HEADER = struct.Struct("<4sIIIIIId")


@dataclass
class Checkpoint:
    config: TrainConfig
    arrays: dict
    steps: dict
    mode: str = "float"
    epoch: int = 0
    rng_state: Optional[dict] = None
    history: list = field(default_factory=list)

    @classmethod
    def from_model(cls, model: ATPNet, epoch: int = 0, rng: Optional[np.random.Generator] = None, history=None):
        arrays, steps = {}, {}
        for name, p in model.named_parameters():
            arrays[name] = p.data.copy()
            arrays[f"{name}#exp_avg"] = p.exp_avg.copy()
            arrays[f"{name}#exp_avg_sq"] = p.exp_avg_sq.copy()
            steps[name] = p.step
        if model.sampler.mask is not None:
            arrays["sampler.mask"] = model.sampler.mask.astype(np.uint8)
        return cls(
            config=model.cfg,
            arrays=arrays,
            steps=steps,
            mode=model.sampler.mode,
            epoch=epoch,
            rng_state=rng.bit_generator.state if rng is not None else None,
            history=[dict(h) for h in (history or [])],
        )

    def to_model(self) -> ATPNet:
        dtype = self.arrays["sampler.latent"].dtype
        model = ATPNet(self.config, dtype=dtype)
        for name, p in model.named_parameters():
            if name not in self.arrays:
                raise FormatError(f"checkpoint lacks parameter {name!r}")
            if self.arrays[name].shape != p.shape:
                raise FormatError(f"parameter {name!r} has shape {self.arrays[name].shape}, model expects {p.shape}")
            p.data = self.arrays[name].astype(dtype, copy=True)
            p.exp_avg = self.arrays[f"{name}#exp_avg"].astype(dtype, copy=True)
            p.exp_avg_sq = self.arrays[f"{name}#exp_avg_sq"].astype(dtype, copy=True)
            p.step = int(self.steps[name])
        if "sampler.mask" in self.arrays:
            model.sampler.mask = self.arrays["sampler.mask"].astype(dtype)
        model.sampler.set_mode(self.mode)
        return model

    def rng(self) -> np.random.Generator:
        gen = np.random.default_rng()
        gen.bit_generator.state = self.rng_state
        return gen

    def to_bytes(self) -> bytes:
        table, chunks, offset = [], [], 0
        for name in sorted(self.arrays):
            a = np.array(self.arrays[name], order="C")  # keeps 0-d arrays 0-d
            a = a.astype(a.dtype.newbyteorder("<"), copy=False)
            raw = a.tobytes()
            table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
        header = {
            "config": self.config.to_dict(),
            "mode": self.mode,
            "epoch": self.epoch,
            "rng_state": self.rng_state,
            "history": self.history,
            "steps": self.steps,
            "sections": table,
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        return _CKPT_PREFIX.pack(CKPT_MAGIC, CKPT_VERSION, len(blob)) + blob + b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < _CKPT_PREFIX.size:
            raise FormatError("file too short for an ATPN header")
        magic, version, hlen = _CKPT_PREFIX.unpack_from(data)
        if magic != CKPT_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}")
        if version != CKPT_VERSION:
            raise FormatError(f"unsupported ATPN version {version}")
        start = _CKPT_PREFIX.size
        try:
            header = json.loads(data[start : start + hlen])
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"corrupt checkpoint header: {exc}") from exc
        payload = memoryview(data)[start + hlen :]
        arrays = {}
        for sec in header["sections"]:
            end = sec["offset"] + sec["nbytes"]
            if end > len(payload):
                raise FormatError(f"section {sec['name']!r} runs past the end of the file")
            arr = np.frombuffer(payload[sec["offset"] : end], dtype=np.dtype(sec["dtype"]))
            arrays[sec["name"]] = arr.reshape(tuple(sec["shape"])).astype(np.dtype(sec["dtype"]).newbyteorder("="))
        return cls(
            config=TrainConfig.from_dict(header["config"]),
            arrays=arrays,
            steps={k: int(v) for k, v in header["steps"].items()},
            mode=header["mode"],
            epoch=int(header["epoch"]),
            rng_state=header["rng_state"],
            history=header["history"],
        )

    def save(self, path) -> str:
        """Write to ``path``; returns the SHA-256 digest of the file."""
        blob = self.to_bytes()
        Path(path).write_bytes(blob)
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            return cls.from_bytes(Path(path).read_bytes())
        except FormatError as exc:
            raise FormatError(f"{path}: {exc}") from exc

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def measurements_to_bytes(measurements: np.ndarray, mr: float, block_size: int) -> bytes:
    m = np.ascontiguousarray(measurements, dtype="<f4")
    if m.ndim != 4:
        raise FormatError(f"measurements must be rank 4, got shape {m.shape}")
    return _MEAS_HEADER.pack(MEAS_MAGIC, MEAS_VERSION, *m.shape, block_size, mr) + m.tobytes()


def measurements_from_bytes(data: bytes) -> tuple:
    """Returns ``(measurements, mr, block_size)``."""
    if len(data) < _MEAS_HEADER.size:
        raise FormatError("file too short for an ATPM header")
    magic, version, b, c, h, w, bs, mr = _MEAS_HEADER.unpack_from(data)
    if magic != MEAS_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MEAS_MAGIC!r}")
    if version != MEAS_VERSION:
        raise FormatError(f"unsupported ATPM version {version}")
    n = b * c * h * w
    if len(data) != _MEAS_HEADER.size + 4 * n:
        raise FormatError(f"expected {n} float32 values after the header")
    values = np.frombuffer(data, "<f4", n, _MEAS_HEADER.size).reshape(b, c, h, w).astype(np.float32)
    return values, mr, bs


def save_measurements(path, measurements: np.ndarray, mr: float, block_size: int) -> None:
    Path(path).write_bytes(measurements_to_bytes(measurements, mr, block_size))


def load_measurements(path) -> tuple:
    try:
        return measurements_from_bytes(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def sniff(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read(4)
