"""Independent reference implementations used as test oracles.

Everything here is written with explicit loops or textbook formulas and
shares no code with the package, so agreement is meaningful.
"""
import math

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, padding=0, dilation=1, groups=1):
    """Direct 7-loop cross-correlation in float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, o, ho, wo))
    per_group_out = o // groups
    for bi in range(n):
        for oc in range(o):
            g = oc // per_group_out
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cg):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[bi, g * cg + ci, i * stride + u * dilation, j * stride + v * dilation] * w[oc, ci, u, v]
                    out[bi, oc, i, j] = acc
            if b is not None:
                out[bi, oc] += b[oc]
    return out


def pixel_shuffle_loops(x, s):
    n, c, h, w = x.shape
    out = np.zeros((n, c // (s * s), h * s, w * s), dtype=x.dtype)
    for k in range(c // (s * s)):
        for u in range(s):
            for v in range(s):
                out[:, k, u::s, v::s] = x[:, k * s * s + u * s + v]
    return out


def block_measure(image, phi, bs):
    """Measurement of every block as a flat row-major vector times ``phi.T``."""
    n, c, h, w = image.shape
    m = phi.shape[0]
    out = np.zeros((n, m, h // bs, w // bs))
    for bi in range(n):
        for i in range(h // bs):
            for j in range(w // bs):
                vec = image[bi, :, i * bs : (i + 1) * bs, j * bs : (j + 1) * bs].reshape(-1).astype(np.float64)
                out[bi, :, i, j] = phi.reshape(m, -1).astype(np.float64) @ vec
    return out


def ternary_dot(weights_row, x):
    """Dense reference for one packed row: plain float64 dot product."""
    return float(np.dot(np.asarray(weights_row, np.float64), np.asarray(x, np.float64)))


def psnr_formula(a, b, peak=255.0):
    mse = sum((float(p) - float(q)) ** 2 for p, q in zip(np.ravel(a), np.ravel(b))) / np.size(a)
    return math.inf if mse == 0 else 10 * math.log10(peak**2 / mse)


def luma_formula(r, g, b):
    """Round-half-up of 0.299 R + 0.587 G + 0.114 B, from exact rationals."""
    from fractions import Fraction

    y = Fraction(299, 1000) * r + Fraction(587, 1000) * g + Fraction(114, 1000) * b
    return math.floor(y + Fraction(1, 2))


def softmax_rows(a):
    a = np.asarray(a, dtype=np.float64)
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def adam_reference(w, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook bias-corrected Adam in float64 over a list of gradients."""
    w = np.array(w, dtype=np.float64)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        w = w - lr * mhat / (np.sqrt(vhat) + eps)
    return w
