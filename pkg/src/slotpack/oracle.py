"""Plaintext reference implementations.

Nothing here imports the slot engine, the packing code or the ciphertext
layers: equivalence tests compare two code paths that share no logic.
Tensors are plain ``(c, h, w)`` float arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ShapeMismatch
from .model import ResNetConfig, bn_of, conv_slots


def conv2d_ref(t: np.ndarray, w: np.ndarray, stride: int = 1, pad: int | None = None) -> np.ndarray:
    """Cross-correlation with zero padding, vectorised by kernel tap."""
    t = np.asarray(t, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    c_o, c_i, fh, fw = w.shape
    if t.ndim != 3 or t.shape[0] != c_i:
        raise ShapeMismatch(f"input {t.shape} vs kernel {w.shape}")
    if pad is None:
        pad = (fh - 1) // 2
    h, wd = t.shape[1:]
    tp = np.pad(t, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - fh) // stride + 1
    wo = (wd + 2 * pad - fw) // stride + 1
    out = np.zeros((c_o, ho, wo))
    for u in range(fh):
        for v in range(fw):
            patch = tp[:, u: u + stride * ho: stride, v: v + stride * wo: stride]
            out += np.einsum("oi,ihw->ohw", w[:, :, u, v], patch)
    return out


def conv2d_naive(t: np.ndarray, w: np.ndarray, stride: int = 1, pad: int | None = None) -> np.ndarray:
    """Scalar-loop convolution; slow, used only to cross-check :func:`conv2d_ref`."""
    c_o, c_i, fh, fw = np.shape(w)
    if pad is None:
        pad = (fh - 1) // 2
    _, h, wd = np.shape(t)
    ho = (h + 2 * pad - fh) // stride + 1
    wo = (wd + 2 * pad - fw) // stride + 1
    out = np.zeros((c_o, ho, wo))
    for o in range(c_o):
        for y in range(ho):
            for x in range(wo):
                acc = 0.0
                for i in range(c_i):
                    for u in range(fh):
                        for v in range(fw):
                            yy, xx = y * stride + u - pad, x * stride + v - pad
                            if 0 <= yy < h and 0 <= xx < wd:
                                acc += w[o][i][u][v] * t[i][yy][xx]
                out[o, y, x] = acc
    return out


def depthwise_ref(t: np.ndarray, d: np.ndarray, stride: int = 1) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    c = d.shape[0]
    return np.stack([conv2d_ref(t[i: i + 1], d[i][None, None], stride)[0] for i in range(c)])


def pointwise_ref(t: np.ndarray, p: np.ndarray) -> np.ndarray:
    return np.einsum("oi,ihw->ohw", np.asarray(p, dtype=np.float64), t)


def dsc_ref(t: np.ndarray, d: np.ndarray, p: np.ndarray, stride: int = 1) -> np.ndarray:
    return pointwise_ref(depthwise_ref(t, d, stride), p)


def bn_ref(t: np.ndarray, gamma, beta, mean, var, eps: float = 1e-5) -> np.ndarray:
    """Inference-mode batch norm, written as scale * (x - mean) + shift."""
    alpha = np.asarray(gamma) / np.sqrt(np.asarray(var) + eps)
    return alpha[:, None, None] * (t - np.asarray(mean)[:, None, None]) + np.asarray(beta)[:, None, None]


def silu(x):
    return np.asarray(x) / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def poly_activation(monomial_coeffs) -> Callable[[np.ndarray], np.ndarray]:
    coeffs = np.asarray(monomial_coeffs, dtype=np.float64)

    def act(x):
        # Horner evaluation, highest power first
        acc = np.zeros_like(np.asarray(x, dtype=np.float64))
        for c in coeffs[::-1]:
            acc = acc * x + c
        return acc

    return act


def avgpool_ref(t: np.ndarray) -> np.ndarray:
    return np.asarray(t).mean(axis=(1, 2))


def fc_ref(v: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.asarray(w) @ np.asarray(v) + np.asarray(b)


@dataclass
class RefLayer:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]


@dataclass
class RefNet:
    """Straight-line plaintext network.

    ``body`` is a list of residual blocks, each a ``(main, shortcut)``
    pair of layer lists; ``shortcut`` empty means identity.
    """

    stem: list
    body: list
    head: list
    act: Callable[[np.ndarray], np.ndarray]


def build_refnet(cfg: ResNetConfig, weights: dict,
                 act: Callable[[np.ndarray], np.ndarray]) -> RefNet:
    def conv_layer(cs):
        bn = bn_of(weights, cs.name)
        if cs.kind == "dsc":
            d, p = weights[f"{cs.name}.dw"], weights[f"{cs.name}.pw"]
            return RefLayer(cs.name, lambda x: bn_ref(dsc_ref(x, d, p, cs.stride), eps=cfg.bn_eps, **bn))
        w = weights[f"{cs.name}.w"]
        return RefLayer(cs.name, lambda x: bn_ref(conv2d_ref(x, w, cs.stride), eps=cfg.bn_eps, **bn))

    slots = {cs.name: cs for cs in conv_slots(cfg)}
    stem = [conv_layer(slots["init"])]
    body = []
    for s in (1, 2, 3):
        for b in range(cfg.blocks):
            prefix = f"s{s}.b{b}"
            main = [conv_layer(slots[f"{prefix}.conv1"]), conv_layer(slots[f"{prefix}.conv2"])]
            short = [conv_layer(slots[f"{prefix}.down"])] if f"{prefix}.down" in slots else []
            body.append((main, short))
    fw, fb = weights["fc.w"], weights["fc.b"]
    head = [RefLayer("avgpool", avgpool_ref), RefLayer("fc", lambda v: fc_ref(v, fw, fb))]
    return RefNet(stem, body, head, act)


def forward_ref(net: RefNet, x: np.ndarray) -> np.ndarray:
    h = net.act(net.stem[0].fn(np.asarray(x, dtype=np.float64)))
    for main, short in net.body:
        y = net.act(main[0].fn(h))
        y = main[1].fn(y)
        skip = short[0].fn(h) if short else h
        h = net.act(y + skip)
    for layer in net.head:
        h = layer.fn(h)
    return h


def expected_counts(kind: str, f: int, c_i: int, c_o: int) -> tuple[int, int, int]:
    """``(rotations, mults, depth)`` of one layer, re-derived per output channel.

    traditional: each output channel rotates the input once per non-centre
    tap, multiplies every tap, then gathers the input channels with one
    rotation each and applies one mask.  dsc (unfused): one shared depthwise
    pass, then per output channel a weight product, one gather rotation per
    input channel and a mask.
    """
    taps = f * f
    if kind == "traditional":
        rot = sum((taps - 1) + c_i for _ in range(c_o))
        mul = sum(taps + 1 for _ in range(c_o))
        return rot, mul, 2
    if kind == "dsc":
        rot = (taps - 1) + sum(c_i for _ in range(c_o))
        mul = taps + sum(2 for _ in range(c_o))
        return rot, mul, 3
    raise ValueError(kind)
