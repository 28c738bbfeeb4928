"""Layer primitives: convolution, pixel shuffle, activation, concatenation, loss."""
from __future__ import annotations

from typing import Optional, Union

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, _result

IntPair = Union[int, tuple]


def _pair(value: IntPair, name: str, minimum: int) -> tuple:
    pair = (value, value) if np.isscalar(value) else tuple(value)
    if len(pair) != 2 or any(int(v) != v or v < minimum for v in pair):
        raise ShapeError(f"{name} must be an int or pair of ints >= {minimum}, got {value!r}")
    return int(pair[0]), int(pair[1])


def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: IntPair = 1,
    padding: IntPair = 0,
    dilation: IntPair = 1,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation over NCHW input.

    Output ``(b, o, i, j)`` sums ``x[b, c, i*s + u*r, j*s + v*r] * w[o, c, u, v]``
    over the taps ``u, v = 0..K-1`` of the padded input, so a tap at offset
    ``u`` sits ``u*r`` pixels from the anchor.
    """
    sh, sw = _pair(stride, "stride", 1)
    ph, pw = _pair(padding, "padding", 0)
    dh, dw = _pair(dilation, "dilation", 1)
    if x.ndim != 4:
        raise ShapeError(f"input must be rank 4 (batch, channel, height, width), got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"weight must be rank 4, got shape {weight.shape}")
    batch, channels, height, width = x.shape
    out_ch, group_ch, kh, kw = weight.shape
    if groups < 1 or channels % groups:
        raise ShapeError(f"input channels ({channels}) not divisible by groups ({groups})")
    if out_ch % groups:
        raise ShapeError(f"output channels ({out_ch}) not divisible by groups ({groups})")
    if group_ch != channels // groups:
        raise ShapeError(
            f"weight in-channel dimension is {group_ch}, expected channels/groups = {channels // groups}"
        )
    if bias is not None and bias.shape != (out_ch,):
        raise ShapeError(f"bias must have shape ({out_ch},), got {bias.shape}")
    ho = conv_output_size(height, kh, sh, ph, dh)
    wo = conv_output_size(width, kw, sw, pw, dw)
    if ho < 1:
        raise ShapeError(f"height {height} too small for kernel {kh} (dilation {dh}, padding {ph})")
    if wo < 1:
        raise ShapeError(f"width {width} too small for kernel {kw} (dilation {dw}, padding {pw})")

    if (sh, sw) == (kh, kw) and (ph, pw) == (0, 0) and (dh, dw) == (1, 1) and groups == 1:
        out, backward = _conv_blocks(x.data, weight.data, ho, wo)
    elif group_ch == 1 and out_ch == groups:
        out, backward = _conv_depthwise(x.data, weight.data, (sh, sw), (ph, pw), (dh, dw), ho, wo)
    else:
        out, backward = _conv_general(x.data, weight.data, (sh, sw), (ph, pw), (dh, dw), groups, ho, wo)

    parents = (x, weight)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
        parents = parents + (bias,)

    def full_backward(g):
        gx, gw = backward(g)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _result(out, parents, full_backward)


def _conv_blocks(x, w, ho, wo):
    """Non-overlapping patches: stride equals kernel, no padding or dilation."""
    b, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    view = x[:, :, : ho * kh, : wo * kw]
    cols = view.reshape(b, c, ho, kh, wo, kw).transpose(0, 2, 4, 1, 3, 5).reshape(b * ho * wo, c * kh * kw)
    wmat = w.reshape(o, -1)
    out = (cols @ wmat.T).reshape(b, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(w.shape)
        gcols = (g2 @ wmat).reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 1, 4, 2, 5)
        gx = np.zeros_like(x)
        gx[:, :, : ho * kh, : wo * kw] = gcols.reshape(b, c, ho * kh, wo * kw)
        return gx, gw

    return np.ascontiguousarray(out), backward


def _tap_slices(i, j, stride, dilation, ho, wo):
    sh, sw = stride
    dh, dw = dilation
    return (
        slice(i * dh, i * dh + sh * (ho - 1) + 1, sh),
        slice(j * dw, j * dw + sw * (wo - 1) + 1, sw),
    )


def _pad(x, padding):
    ph, pw = padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _unpad(gx, padding):
    ph, pw = padding
    return gx[:, :, ph : gx.shape[2] - ph, pw : gx.shape[3] - pw]


def _conv_depthwise(x, w, stride, padding, dilation, ho, wo):
    xp = _pad(x, padding)
    c = x.shape[1]
    kh, kw = w.shape[2:]
    taps = w.reshape(c, kh, kw)
    out = np.zeros((x.shape[0], c, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            rs, cs = _tap_slices(i, j, stride, dilation, ho, wo)
            out += xp[:, :, rs, cs] * taps[:, i, j].reshape(1, c, 1, 1)

    def backward(g):
        gxp = np.zeros_like(xp)
        gtaps = np.zeros_like(taps)
        for i in range(kh):
            for j in range(kw):
                rs, cs = _tap_slices(i, j, stride, dilation, ho, wo)
                gtaps[:, i, j] = np.einsum("bchw,bchw->c", g, xp[:, :, rs, cs])
                gxp[:, :, rs, cs] += g * taps[:, i, j].reshape(1, c, 1, 1)
        return _unpad(gxp, padding), gtaps.reshape(w.shape)

    return out, backward


def _conv_general(x, w, stride, padding, dilation, groups, ho, wo):
    xp = _pad(x, padding)
    b, c = x.shape[:2]
    o, cg, kh, kw = w.shape
    og = o // groups
    xg = xp.reshape(b, groups, cg, xp.shape[2], xp.shape[3])
    cols = np.empty((b, groups, cg, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            rs, cs = _tap_slices(i, j, stride, dilation, ho, wo)
            cols[:, :, :, i, j] = xg[:, :, :, rs, cs]
    k = cg * kh * kw
    cols = cols.reshape(b, groups, k, ho * wo)
    wg = w.reshape(groups, og, k)
    if groups == 1:
        out = (wg[0] @ cols[:, 0]).reshape(b, o, ho, wo)
    else:
        out = (wg @ cols).reshape(b, o, ho, wo)

    def backward(g):
        gg = g.reshape(b, groups, og, ho * wo)
        if groups == 1:
            gw = np.tensordot(gg[:, 0], cols[:, 0], axes=([0, 2], [0, 2])).reshape(w.shape)
            gcols = (wg[0].T @ gg[:, 0])[:, None]
        else:
            gw = (gg @ np.swapaxes(cols, -1, -2)).sum(axis=0).reshape(w.shape)
            gcols = np.swapaxes(wg, -1, -2) @ gg
        gcols = gcols.reshape(b, groups, cg, kh, kw, ho, wo)
        gxp = np.zeros_like(xg)
        for i in range(kh):
            for j in range(kw):
                rs, cs = _tap_slices(i, j, stride, dilation, ho, wo)
                gxp[:, :, :, rs, cs] += gcols[:, :, :, i, j]
        return _unpad(gxp.reshape(xp.shape), padding), gw

    return out, backward


def depthwise_separable_conv(
    x: Tensor,
    depth_weight: Tensor,
    point_weight: Tensor,
    bias: Optional[Tensor] = None,
    padding: IntPair = None,
    dilation: IntPair = 1,
) -> Tensor:
    """Per-channel spatial convolution followed by a 1x1 channel mix.

    ``depth_weight`` is ``(C, 1, K, K)``; ``point_weight`` is ``(O, C, 1, 1)``.
    Padding defaults to "same" for odd kernels.
    """
    channels = x.shape[1]
    if depth_weight.shape[:2] != (channels, 1):
        raise ShapeError(f"depth weight must be ({channels}, 1, K, K), got {depth_weight.shape}")
    if point_weight.shape[1:] != (channels, 1, 1):
        raise ShapeError(f"point weight must be (O, {channels}, 1, 1), got {point_weight.shape}")
    if padding is None:
        dh, dw = _pair(dilation, "dilation", 1)
        padding = (dh * (depth_weight.shape[2] // 2), dw * (depth_weight.shape[3] // 2))
    depth = conv2d(x, depth_weight, None, 1, padding, dilation, groups=channels)
    return conv2d(depth, point_weight, bias)


def pixel_shuffle(x: Tensor, upscale: int) -> Tensor:
    """``(b, c*s*s, h, w) -> (b, c, h*s, w*s)``; channel ``k*s*s + u*s + v`` lands at offset (u, v)."""
    s = int(upscale)
    b, c, h, w = x.shape
    if s < 1:
        raise ShapeError(f"upscale must be positive, got {upscale}")
    if c % (s * s):
        raise ShapeError(f"channels ({c}) not divisible by upscale^2 ({s * s})")
    out = x.data.reshape(b, c // (s * s), s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, c // (s * s), h * s, w * s)
    return _result(np.ascontiguousarray(out), (x,), lambda g: (pixel_unshuffle_array(g, s),))


def pixel_unshuffle_array(a: np.ndarray, downscale: int) -> np.ndarray:
    s = downscale
    b, c, hs, ws = a.shape
    if hs % s or ws % s:
        raise ShapeError(f"spatial extents {hs}x{ws} not divisible by {s}")
    h, w = hs // s, ws // s
    return np.ascontiguousarray(
        a.reshape(b, c, h, s, w, s).transpose(0, 1, 3, 5, 2, 4).reshape(b, c * s * s, h, w)
    )


def pixel_unshuffle(x: Tensor, downscale: int) -> Tensor:
    s = int(downscale)
    out = pixel_unshuffle_array(x.data, s)

    def backward(g):
        b, c, h, w = g.shape
        return (g.reshape(b, c // (s * s), s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape),)

    return _result(out, (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    slope = x.dtype.type(slope)
    positive = x.data > 0
    return _result(np.where(positive, x.data, slope * x.data), (x,), lambda g: (np.where(positive, g, slope * g),))


def concat_channels(*tensors: Tensor) -> Tensor:
    """Concatenate along the channel axis; the first argument occupies the leading channels."""
    first = tensors[0]
    for t in tensors[1:]:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (first.shape[0], first.shape[2], first.shape[3]):
            raise ShapeError(f"cannot concatenate {first.shape} with {t.shape}: batch/height/width differ")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return _result(np.concatenate([t.data for t in tensors], axis=1), tensors, backward)


def mse_loss(prediction: Tensor, target: Tensor) -> Tensor:
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction {prediction.shape} and target {target.shape} differ")
    diff = prediction.data - target.data
    n = diff.size
    value = np.asarray(np.mean(diff * diff), dtype=prediction.dtype)
    factor = prediction.dtype.type(2.0 / n)
    return _result(value, (prediction, target), lambda g: (g * factor * diff, -g * factor * diff))
