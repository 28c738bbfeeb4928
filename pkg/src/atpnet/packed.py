"""Two-bitplane storage for ternary weights and multiplication-free sampling.

Each weight row is stored as a *nonzero* plane (bit set where the weight is
not zero) and a *sign* plane (bit set where the weight is positive). Bits are
little-endian: element ``j`` of a row lives in word ``j // 64`` at bit
``j % 64``. Rows are padded with zero bits to a whole number of 64-bit words.

ATPK file layout (all little-endian)::

    magic    4s   b"ATPK"
    version  u32
    rows     u32
    cols     u32
    words    u32  64-bit words per row
    alpha    f64
    sparsity f64
    nonzero  rows * words * u64
    sign     rows * words * u64
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, QuantizationError, ShapeError
from .sampling import check_image_extents

MAGIC = b"ATPK"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIdd")
HEADER_BYTES = _HEADER.size
WORD_BITS = 64


@dataclass(frozen=True, eq=False)
class PackedTernaryMatrix:
    rows: int
    cols: int
    nonzero: np.ndarray  # (rows, words) uint64
    sign: np.ndarray  # (rows, words) uint64
    alpha: float
    sparsity_rate: float = 0.0

    @property
    def shape(self) -> tuple:
        return (self.rows, self.cols)

    @property
    def words_per_row(self) -> int:
        return self.nonzero.shape[1]

    def nonzero_count(self) -> int:
        return int(_popcount(self.nonzero).sum())

    def row_indices(self) -> tuple:
        """Per-row index arrays of the positive and negative weights."""
        nz = _unpack_plane(self.nonzero, self.cols)
        sg = _unpack_plane(self.sign, self.cols)
        pos = [np.flatnonzero(nz[r] & sg[r]) for r in range(self.rows)]
        neg = [np.flatnonzero(nz[r] & ~sg[r]) for r in range(self.rows)]
        return pos, neg


def _words(cols: int) -> int:
    return max(1, -(-cols // WORD_BITS))


def _pack_plane(bits: np.ndarray) -> np.ndarray:
    rows, cols = bits.shape
    padded = np.zeros((rows, _words(cols) * WORD_BITS), dtype=bool)
    padded[:, :cols] = bits
    return np.packbits(padded, axis=1, bitorder="little").view("<u8").copy()


def _unpack_plane(words: np.ndarray, cols: int) -> np.ndarray:
    as_bytes = np.ascontiguousarray(words.astype("<u8", copy=False)).view(np.uint8)
    return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :cols].astype(bool)


def _popcount(words: np.ndarray) -> np.ndarray:
    as_bytes = np.ascontiguousarray(words.astype("<u8", copy=False)).view(np.uint8)
    return np.unpackbits(as_bytes, axis=-1).sum(axis=-1)


def pack(effective_weights: np.ndarray, alpha: float, sparsity_rate: float = 0.0) -> PackedTernaryMatrix:
    """Encode weights drawn exactly from ``{-alpha, 0, +alpha}``.

    A rank-4 sampling weight ``(out, in, bs, bs)`` is flattened per output row.
    """
    w = np.asarray(effective_weights)
    if w.ndim == 1:
        w = w[None, :]
    w = w.reshape(w.shape[0], -1)
    alpha = float(alpha)
    a = np.asarray(alpha, dtype=w.dtype)
    positive = w == a
    negative = w == -a
    zero = w == 0
    bad = ~(positive | negative | zero)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise QuantizationError(f"weight at index ({r}, {c}) = {w[r, c]!r} is not in {{-{alpha}, 0, +{alpha}}}")
    if alpha == 0:
        positive = negative = np.zeros_like(zero)
    return PackedTernaryMatrix(
        rows=w.shape[0],
        cols=w.shape[1],
        nonzero=_pack_plane(positive | negative),
        sign=_pack_plane(positive),
        alpha=alpha,
        sparsity_rate=float(sparsity_rate),
    )


def _check_canonical(p: PackedTernaryMatrix) -> None:
    if np.any(p.sign & ~p.nonzero):
        raise FormatError("sign bit set where the nonzero plane is clear (non-canonical encoding)")
    tail = p.words_per_row * WORD_BITS - p.cols
    if tail:
        keep = np.uint64((1 << (WORD_BITS - tail)) - 1)
        if np.any(p.nonzero[:, -1] & ~keep) or np.any(p.sign[:, -1] & ~keep):
            raise FormatError("padding bits beyond the last column must be zero")


def unpack(p: PackedTernaryMatrix, dtype=np.float32) -> np.ndarray:
    """Dense ``(rows, cols)`` array of ``{-alpha, 0, +alpha}``."""
    _check_canonical(p)
    nz = _unpack_plane(p.nonzero, p.cols)
    sg = _unpack_plane(p.sign, p.cols)
    out = np.zeros((p.rows, p.cols), dtype=dtype)
    out[nz & sg] = p.alpha
    out[nz & ~sg] = -p.alpha
    return out


def ternary_matvec(p: PackedTernaryMatrix, x: np.ndarray) -> np.ndarray:
    """``alpha * (sum of x over positive taps - sum over negative taps)`` per row.

    ``x`` may be a vector of length ``cols`` or a ``(n, cols)`` stack, in which
    case the result is ``(n, rows)``. The only multiplication is the final
    scale by alpha; sums accumulate in float64.
    """
    x = np.asarray(x)
    single = x.ndim == 1
    xs = np.atleast_2d(x).astype(np.float64, copy=False)
    if xs.shape[1] != p.cols:
        raise ShapeError(f"input length {xs.shape[1]} != packed row length {p.cols}")
    pos, neg = p.row_indices()
    raw = np.empty((xs.shape[0], p.rows), dtype=np.float64)
    for r in range(p.rows):
        raw[:, r] = xs[:, pos[r]].sum(axis=1) - xs[:, neg[r]].sum(axis=1)
    out = raw * p.alpha
    return out[0] if single else out


def ternary_sample(p: PackedTernaryMatrix, image: np.ndarray, bs: int) -> np.ndarray:
    """Packed counterpart of block sampling: ``(b, c, H, W) -> (b, rows, H/bs, W/bs)``."""
    image = np.asarray(image)
    if image.ndim != 4:
        raise ShapeError(f"image must be rank 4, got shape {image.shape}")
    b, c, h, w = image.shape
    if c * bs * bs != p.cols:
        raise ShapeError(f"{c} channels x {bs}x{bs} blocks = {c * bs * bs} != packed row length {p.cols}")
    check_image_extents(h, w, bs)
    gh, gw = h // bs, w // bs
    blocks = image.reshape(b, c, gh, bs, gw, bs).transpose(0, 2, 4, 1, 3, 5).reshape(b * gh * gw, p.cols)
    out = ternary_matvec(p, blocks).reshape(b, gh, gw, p.rows).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out).astype(image.dtype if image.dtype.kind == "f" else np.float64)


def storage_report(p: PackedTernaryMatrix) -> dict:
    n = p.rows * p.cols
    packed = HEADER_BYTES + 2 * p.rows * p.words_per_row * (WORD_BITS // 8)
    floats = 4 * n
    return {"packed_bytes": packed, "float_bytes": floats, "ratio": floats / packed}


def to_bytes(p: PackedTernaryMatrix) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, p.rows, p.cols, p.words_per_row, p.alpha, p.sparsity_rate)
    return header + p.nonzero.astype("<u8").tobytes() + p.sign.astype("<u8").tobytes()


def from_bytes(blob: bytes) -> PackedTernaryMatrix:
    if len(blob) < HEADER_BYTES:
        raise FormatError("file too short for an ATPK header")
    magic, version, rows, cols, words, alpha, sparsity = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported ATPK version {version}")
    if words != _words(cols):
        raise FormatError(f"{words} words per row does not match {cols} columns")
    plane = rows * words * 8
    if len(blob) != HEADER_BYTES + 2 * plane:
        raise FormatError(f"expected {HEADER_BYTES + 2 * plane} bytes, found {len(blob)}")
    nonzero = np.frombuffer(blob, "<u8", rows * words, HEADER_BYTES).reshape(rows, words).copy()
    sign = np.frombuffer(blob, "<u8", rows * words, HEADER_BYTES + plane).reshape(rows, words).copy()
    p = PackedTernaryMatrix(rows, cols, nonzero, sign, alpha, sparsity)
    _check_canonical(p)
    return p


def save(p: PackedTernaryMatrix, path) -> None:
    Path(path).write_bytes(to_bytes(p))


def load(path) -> PackedTernaryMatrix:
    try:
        return from_bytes(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc
