"""Ciphertext convolutions over the block layout.

Both algorithms follow the same skeleton: rotate the packed input by each
kernel tap, multiply by tap plaintexts (which also zero every tap that
would read across the feature-map border, so no explicit padding is
needed), then *gather* per-input-channel partial sums into the cell of
each output channel and mask.

Gathering uses the identity, valid when ``layout_out.n_block ==
stride * layout_in.n_block``::

    slot_in(i, s*r, s*c) - slot_out(o, r, c) == cell_offset_in(i) - cell_offset_out(o)

so one rotation both sums input channel ``i`` and places the result in
output channel ``o``'s cell, for stride 1 and 2 alike.  Output placement
therefore costs no extra rotations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .engine import CtVec, HeContext, PtVec
from .errors import IndivisibleGeometry, ShapeMismatch
from .packing import PackLayout, make_mask, pack


@dataclass(frozen=True)
class CountPrediction:
    rotations: int
    mults: int
    depth: int


def tap_offsets(f: int) -> list[tuple[int, int]]:
    """Kernel taps as (row, col) displacements, row-major."""
    if f < 1 or f % 2 == 0:
        raise ShapeMismatch(f"kernel size must be odd, got {f}")
    p = (f - 1) // 2
    return [(dr, dc) for dr in range(-p, p + 1) for dc in range(-p, p + 1)]


def _inside(layout: PackLayout, dr: int, dc: int) -> np.ndarray:
    h = layout.fmap_side
    r = np.arange(h)
    ok_r = (r + dr >= 0) & (r + dr < h)
    ok_c = (r + dc >= 0) & (r + dc < h)
    return ok_r[:, None] & ok_c[None, :]


def check_layouts(layout_in: PackLayout, layout_out: PackLayout, stride: int) -> None:
    if layout_in.grid_side != layout_out.grid_side:
        raise IndivisibleGeometry("input and output layouts use different slot grids")
    if layout_out.n_block != stride * layout_in.n_block or \
            layout_out.fmap_side * stride != layout_in.fmap_side:
        raise IndivisibleGeometry(
            f"stride-{stride} output layout N={layout_out.n_block} is incompatible "
            f"with input N={layout_in.n_block}")


def gather_offset(layout_in: PackLayout, layout_out: PackLayout, i: int, o: int) -> int:
    return layout_in.cell_offset(i) - layout_out.cell_offset(o)


@lru_cache(maxsize=256)
def _channel_mask(layout: PackLayout, o: int) -> np.ndarray:
    m = make_mask(layout, lambda ch, r, c: ch == o)
    m.flags.writeable = False
    return m


def channel_mask(layout: PackLayout, o: int) -> PtVec:
    """Ones on every position of channel ``o``'s cell."""
    return PtVec(_channel_mask(layout, o))


def bias_plaintext(bias: np.ndarray, layout: PackLayout) -> PtVec:
    b = np.asarray(bias, dtype=np.float64)
    return PtVec(pack(np.broadcast_to(b[:, None, None], layout.shape), layout))


# -- traditional ------------------------------------------------------------

def encode_kernels_traditional(w: np.ndarray, layout_in: PackLayout) -> list[list[PtVec]]:
    """``kernels[o][t]``: tap ``t`` of every input channel for output ``o``."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 4 or w.shape[1] != layout_in.channels or w.shape[2] != w.shape[3]:
        raise ShapeMismatch(f"kernel {w.shape} for {layout_in.channels} input channels")
    f = w.shape[2]
    p = (f - 1) // 2
    taps = tap_offsets(f)
    inside = [_inside(layout_in, dr, dc) for dr, dc in taps]
    kernels = []
    for o in range(w.shape[0]):
        row = []
        for (dr, dc), ok in zip(taps, inside):
            vals = w[o, :, dr + p, dc + p][:, None, None] * ok[None]
            row.append(PtVec(pack(vals, layout_in)))
        kernels.append(row)
    return kernels


def _tap_products(ctx: HeContext, ct: CtVec, tap_pts, layout: PackLayout) -> CtVec:
    f = math.isqrt(len(tap_pts))
    terms = []
    for (dr, dc), pt in zip(tap_offsets(f), tap_pts):
        src = ct if (dr, dc) == (0, 0) else ctx.rotate(ct, layout.tap_offset(dr, dc))
        terms.append(ctx.mul_pt(src, pt))
    return ctx.sum_ct(terms)


def _gather(ctx: HeContext, partial: CtVec, layout_in: PackLayout,
            layout_out: PackLayout, o: int) -> CtVec:
    # one rotation per input channel, zero offsets included, so the count
    # does not depend on where the channels happen to sit
    rotated = [ctx.rotate(partial, gather_offset(layout_in, layout_out, i, o))
               for i in range(layout_in.channels)]
    return ctx.mul_pt(ctx.sum_ct(rotated), channel_mask(layout_out, o))


def conv_traditional(ctx: HeContext, ct: CtVec, kernels, layout_in: PackLayout,
                     layout_out: PackLayout, stride: int = 1, bias=None) -> CtVec:
    """Multi-channel convolution; consumes two levels."""
    check_layouts(layout_in, layout_out, stride)
    if len(kernels) != layout_out.channels:
        raise ShapeMismatch(f"{len(kernels)} kernel sets for {layout_out.channels} outputs")
    outs = []
    for o, tap_pts in enumerate(kernels):
        partial = _tap_products(ctx, ct, tap_pts, layout_in)
        outs.append(_gather(ctx, partial, layout_in, layout_out, o))
    out = ctx.sum_ct(outs)
    if bias is not None:
        out = ctx.add_pt(out, bias_plaintext(bias, layout_out))
    return out


# -- depthwise separable ----------------------------------------------------

def encode_depthwise(d: np.ndarray, layout: PackLayout) -> list[PtVec]:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 3 or d.shape[0] != layout.channels or d.shape[1] != d.shape[2]:
        raise ShapeMismatch(f"depthwise kernel {d.shape} for {layout.channels} channels")
    f = d.shape[1]
    p = (f - 1) // 2
    return [PtVec(pack(d[:, dr + p, dc + p][:, None, None] * _inside(layout, dr, dc)[None], layout))
            for dr, dc in tap_offsets(f)]


def conv_depthwise(ctx: HeContext, ct: CtVec, dw_plaintexts, layout: PackLayout) -> CtVec:
    """Per-channel spatial filtering at stride 1; consumes one level.

    Strided layers subsample later, in the gather of the pointwise stage.
    """
    return _tap_products(ctx, ct, dw_plaintexts, layout)


def encode_pointwise(p: np.ndarray, layout_in: PackLayout) -> list[PtVec]:
    """One plaintext per output channel with ``p[o, i]`` across input cell ``i``."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != layout_in.channels:
        raise ShapeMismatch(f"pointwise weights {p.shape} for {layout_in.channels} channels")
    return [PtVec(pack(np.broadcast_to(p[o][:, None, None], layout_in.shape), layout_in))
            for o in range(p.shape[0])]


def conv_pointwise_unfused(ctx: HeContext, ct: CtVec, pw_plaintexts, layout_in: PackLayout,
                           layout_out: PackLayout, stride: int = 1) -> CtVec:
    """1x1 channel mixing as weight product, gather, mask; consumes two levels."""
    check_layouts(layout_in, layout_out, stride)
    outs = [_gather(ctx, ctx.mul_pt(ct, pt), layout_in, layout_out, o)
            for o, pt in enumerate(pw_plaintexts)]
    return ctx.sum_ct(outs)


# -- closed-form costs ------------------------------------------------------

def predict_counts(kind: str, f: int, c_i: int, c_o: int) -> CountPrediction:
    """Rotations, plaintext multiplications and depth of one conv layer.

    ``dsc`` is the unfused depthwise + pointwise pipeline.
    """
    if min(f, c_i, c_o) < 1:
        raise ValueError("dimensions must be positive")
    if kind == "traditional":
        return CountPrediction((f * f - 1 + c_i) * c_o, (f * f + 1) * c_o, 2)
    if kind == "dsc":
        return CountPrediction(f * f - 1 + c_i * c_o, f * f + 2 * c_o, 3)
    raise ValueError(f"unknown conv kind {kind!r}")


def kernel_plaintext_count(kind: str, f: int, c_o: int) -> int:
    """Weight-bearing plaintexts a layer needs (masks excluded)."""
    return f * f * c_o if kind == "traditional" else f * f + c_o


def parameter_ratio(f: int, c_o: int) -> float:
    """Separable / traditional parameter (and computation) ratio."""
    return 1.0 / c_o + 1.0 / (f * f)


def rotation_ratio(f: int, c_i: int, c_o: int) -> float:
    dsc, trad = predict_counts("dsc", f, c_i, c_o), predict_counts("traditional", f, c_i, c_o)
    return dsc.rotations / trad.rotations


def mult_ratio(f: int, c_o: int, c_i: int = 1) -> float:
    dsc, trad = predict_counts("dsc", f, c_i, c_o), predict_counts("traditional", f, c_i, c_o)
    return dsc.mults / trad.mults
