"""Scalable N x N block packing of multi-channel feature maps.

The ``n_slots`` slots are viewed as a ``G x G`` grid (``G = sqrt(n_slots)``).
A square ``h x h`` feature map tiles that grid with ``h x h`` blocks of
``N x N`` cells each (``N = G / h``); every cell of a block holds one
channel's value for the block's spatial position.  Channels fill a block
row-major, so channel ``ch`` sits at in-block offset ``(ch // N, ch % N)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np

from .errors import IndivisibleGeometry, NonSquareCapacity, OutOfRange, ShapeMismatch


def _isqrt_exact(f_max: int) -> int:
    g = math.isqrt(f_max)
    if g * g != f_max:
        raise NonSquareCapacity(f"slot capacity {f_max} is not a perfect square")
    return g


def block_param(f_max: int, h_i: int, h_o: int | None = None, stride: int = 1) -> int:
    """Block side N for a layer.

    Stride-1 layers size the block from the input height, stride-2 layers
    from the output height.
    """
    g = _isqrt_exact(f_max)
    if stride == 1:
        side = h_i
    elif stride == 2:
        side = h_o if h_o is not None else h_i // 2
    else:
        raise IndivisibleGeometry(f"unsupported stride {stride}")
    if side < 1 or g % side:
        raise IndivisibleGeometry(f"map side {side} does not divide grid side {g}")
    return g // side


@dataclass(frozen=True)
class PackLayout:
    n_block: int
    grid_side: int
    channels: int
    fmap_side: int

    def __post_init__(self):
        if self.n_block * self.fmap_side != self.grid_side:
            raise IndivisibleGeometry(
                f"{self.n_block} x {self.fmap_side} does not tile a {self.grid_side}-wide grid")
        if not 1 <= self.channels <= self.n_block ** 2:
            raise IndivisibleGeometry(
                f"{self.channels} channels do not fit a {self.n_block}x{self.n_block} block")

    @classmethod
    def for_map(cls, f_max: int, channels: int, fmap_side: int) -> "PackLayout":
        g = _isqrt_exact(f_max)
        return cls(block_param(f_max, fmap_side), g, channels, fmap_side)

    @property
    def f_max(self) -> int:
        return self.grid_side ** 2

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.fmap_side, self.fmap_side)

    def with_channels(self, channels: int) -> "PackLayout":
        return PackLayout(self.n_block, self.grid_side, channels, self.fmap_side)

    def cell_offset(self, ch: int) -> int:
        """Slot distance of channel ``ch`` from its block's origin."""
        return (ch // self.n_block) * self.grid_side + ch % self.n_block

    def tap_offset(self, dr: int, dc: int) -> int:
        """Rotation that brings the neighbour at ``(r+dr, c+dc)`` onto ``(r, c)``."""
        return dr * self.n_block * self.grid_side + dc * self.n_block

    def slot_index(self, ch: int, r: int, col: int) -> int:
        if not (0 <= ch < self.channels and 0 <= r < self.fmap_side and 0 <= col < self.fmap_side):
            raise OutOfRange(f"({ch}, {r}, {col}) outside {self.shape}")
        n, g = self.n_block, self.grid_side
        return (r * n + ch // n) * g + col * n + ch % n

    @cached_property
    def indices(self) -> np.ndarray:
        """Slot index of every (ch, r, col), shape ``(c, h, h)``."""
        ch, r, col = np.ogrid[: self.channels, : self.fmap_side, : self.fmap_side]
        n, g = self.n_block, self.grid_side
        return (r * n + ch // n) * g + col * n + ch % n


def pack(t: np.ndarray, layout: PackLayout) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.shape != layout.shape:
        raise ShapeMismatch(f"tensor shape {t.shape} does not match layout {layout.shape}")
    v = np.zeros(layout.f_max)
    v[layout.indices] = t
    return v


def unpack(v: np.ndarray, layout: PackLayout) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (layout.f_max,):
        raise ShapeMismatch(f"vector of shape {v.shape} for {layout.f_max} slots")
    return v[layout.indices].copy()


Keep = Union[np.ndarray, Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]]


def make_mask(layout: PackLayout, keep: Keep) -> np.ndarray:
    """0/1 slot vector selecting the owned cells where ``keep`` holds.

    ``keep`` is either a boolean array of the layout's shape or a callable
    evaluated on broadcast ``(ch, r, col)`` index grids.
    """
    if callable(keep):
        ch, r, col = np.ogrid[: layout.channels, : layout.fmap_side, : layout.fmap_side]
        sel = np.broadcast_to(np.asarray(keep(ch, r, col), dtype=bool), layout.shape)
    else:
        sel = np.asarray(keep, dtype=bool)
        if sel.shape != layout.shape:
            raise ShapeMismatch(f"mask shape {sel.shape} does not match layout {layout.shape}")
    m = np.zeros(layout.f_max)
    m[layout.indices[sel]] = 1.0
    return m
