"""Pointwise convolution fused with inference-mode batch norm.

BN is rewritten as ``alpha * (x - mu) + beta`` with ``alpha = gamma /
sqrt(var + eps)``.  Folding ``alpha`` into the pointwise weights gives the
fusion matrix ``zeta[o, i] = p[o, i] * alpha[o]``.

The fused operator multiplies *rotated* copies of the depthwise output by
plaintexts that already carry ``zeta`` and the output mask, so channel
mixing, BN scaling and filtering cost a single level.  One rotation is
issued per distinct gather offset ``cell_offset_in(i) - cell_offset_out(o)``;
the plaintext for an offset holds ``zeta[o, i]`` on output cell ``o`` for
every ``(i, o)`` pair sharing it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import channel_mask, check_layouts, gather_offset
from .engine import CtVec, HeContext, PtVec
from .errors import ShapeMismatch
from .packing import PackLayout, pack


@dataclass(frozen=True)
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "mean", "var"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)))
        if np.any(self.var < 0) or self.eps <= 0:
            raise ValueError("BN variance must be non-negative and eps positive")
        n = {len(self.gamma), len(self.beta), len(self.mean), len(self.var)}
        if len(n) != 1:
            raise ShapeMismatch("BN parameter lengths differ")

    @property
    def alpha(self) -> np.ndarray:
        return self.gamma / np.sqrt(self.var + self.eps)

    @classmethod
    def identity(cls, c: int, eps: float = 1e-5) -> "BnParams":
        return cls(np.ones(c), np.zeros(c), np.zeros(c), np.full(c, 1.0 - eps), eps)


def bn_fold(pw: np.ndarray, bn: BnParams) -> np.ndarray:
    pw = np.asarray(pw, dtype=np.float64)
    if pw.ndim != 2 or pw.shape[0] != len(bn.gamma):
        raise ShapeMismatch(f"pointwise {pw.shape} vs {len(bn.gamma)} BN channels")
    return pw * bn.alpha[:, None]


@dataclass
class FusionMatrix:
    zeta: np.ndarray
    offsets: list[int]
    rotated_filtered: list[PtVec]
    mu_alpha: PtVec
    beta_pt: PtVec
    layout_in: PackLayout
    layout_out: PackLayout


def fusion_offsets(layout_in: PackLayout, layout_out: PackLayout) -> list[int]:
    """Distinct gather rotations needed to mix every input into every output."""
    return sorted({gather_offset(layout_in, layout_out, i, o)
                   for i in range(layout_in.channels) for o in range(layout_out.channels)})


def build_fusion_plaintexts(zeta: np.ndarray, layout_in: PackLayout, layout_out: PackLayout,
                            stride: int = 1) -> tuple[list[int], list[PtVec]]:
    """Rotated, filtered encodings of ``zeta``, one per gather offset.

    Built entirely from plaintext data: nothing here touches a context.
    """
    check_layouts(layout_in, layout_out, stride)
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.shape != (layout_out.channels, layout_in.channels):
        raise ShapeMismatch(f"zeta {zeta.shape} for {layout_in.channels}->{layout_out.channels}")
    offsets = fusion_offsets(layout_in, layout_out)
    slot_of = {k: n for n, k in enumerate(offsets)}
    vecs = np.zeros((len(offsets), layout_out.f_max))
    for o in range(layout_out.channels):
        cell = channel_mask(layout_out, o).slots
        for i in range(layout_in.channels):
            vecs[slot_of[gather_offset(layout_in, layout_out, i, o)]] += zeta[o, i] * cell
    return offsets, [PtVec(v) for v in vecs]


def build_fusion_matrix(pw: np.ndarray, bn: BnParams, layout_in: PackLayout,
                        layout_out: PackLayout, stride: int = 1) -> FusionMatrix:
    zeta = bn_fold(pw, bn)
    offsets, pts = build_fusion_plaintexts(zeta, layout_in, layout_out, stride)
    per_cell = lambda v: pack(np.broadcast_to(v[:, None, None], layout_out.shape), layout_out)
    return FusionMatrix(zeta, offsets, pts, PtVec(per_cell(-bn.mean * bn.alpha)),
                        PtVec(per_cell(bn.beta)), layout_in, layout_out)


def convbn_fused(ctx: HeContext, dw_ct: CtVec, fm: FusionMatrix) -> CtVec:
    """Pointwise mix + BN on a depthwise output; consumes one level."""
    terms = [ctx.mul_pt(ctx.rotate(dw_ct, k), pt) for k, pt in zip(fm.offsets, fm.rotated_filtered)]
    out = ctx.sum_ct(terms)
    out = ctx.add_pt(out, fm.mu_alpha)
    return ctx.add_pt(out, fm.beta_pt)


def convbn_unfused(ctx: HeContext, dw_ct: CtVec, pw_plaintexts, bn: BnParams,
                   layout_in: PackLayout, layout_out: PackLayout, stride: int = 1) -> CtVec:
    """Reference ConvBN path: weight product, gather, subtract mean, scale-and-mask.

    Consumes two levels.
    """
    check_layouts(layout_in, layout_out, stride)
    alpha = bn.alpha
    outs = []
    for o, pt in enumerate(pw_plaintexts):
        y = ctx.mul_pt(dw_ct, pt)
        g = ctx.sum_ct(ctx.rotate(y, gather_offset(layout_in, layout_out, i, o))
                       for i in range(layout_in.channels))
        cell = channel_mask(layout_out, o).slots
        g = ctx.add_pt(g, PtVec(-bn.mean[o] * cell))
        outs.append(ctx.mul_pt(g, PtVec(alpha[o] * cell)))
    out = ctx.sum_ct(outs)
    beta = pack(np.broadcast_to(bn.beta[:, None, None], layout_out.shape), layout_out)
    return ctx.add_pt(out, PtVec(beta))
