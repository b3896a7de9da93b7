"""ResNet-style architecture description and its weight schema.

Kept free of any engine dependency so that the plaintext oracle and the
ciphertext planner both read the architecture from the same place without
sharing execution code.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidGeometry

BN_FIELDS = ("gamma", "beta", "mean", "var")


@dataclass(frozen=True)
class ResNetConfig:
    """CIFAR-style ResNet: an initial conv, three stages, average pool, FC.

    ``conv`` selects the convolution used in stages 2 and 3; stage 1 and the
    initial layer always use the traditional algorithm.
    """

    widths: tuple[int, int, int] = (16, 32, 64)
    blocks: int = 3
    input_side: int = 32
    in_channels: int = 3
    num_classes: int = 10
    kernel: int = 3
    conv: str = "dsc"
    f_max: int | None = None
    act_bound: float = 8.0
    act_degree: int = 5
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise InvalidGeometry(f"need three positive stage widths, got {self.widths}")
        if self.conv not in ("dsc", "traditional"):
            raise InvalidGeometry(f"conv must be 'dsc' or 'traditional', got {self.conv!r}")
        if self.blocks < 1 or self.kernel % 2 == 0:
            raise InvalidGeometry("blocks must be positive and kernel odd")
        if self.input_side % 4:
            raise InvalidGeometry("input side must survive two stride-2 stages")
        if self.f_max is None:
            object.__setattr__(self, "f_max", self.widths[0] * self.input_side ** 2)
        g = math.isqrt(self.f_max)
        if g * g != self.f_max:
            raise InvalidGeometry(f"f_max {self.f_max} is not a perfect square")
        for (c, side) in self.stage_geometry():
            if g % side or (g // side) ** 2 < c:
                raise InvalidGeometry(f"{c}x{side}x{side} does not pack into a {g}x{g} grid")

    @classmethod
    def resnet20(cls, width: float = 1.0, **kw) -> "ResNetConfig":
        """ResNet20 at a width multiplier; width < 1 also shrinks the input."""
        widths = tuple(max(1, int(round(w * width))) for w in (16, 32, 64))
        if width < 1 and "input_side" not in kw:
            kw["input_side"] = 16
        return cls(widths=widths, **kw)

    @property
    def grid_side(self) -> int:
        return math.isqrt(self.f_max)

    def stage_geometry(self) -> list[tuple[int, int]]:
        """``(channels, side)`` for each of the three stages."""
        s = self.input_side
        return [(self.widths[0], s), (self.widths[1], s // 2), (self.widths[2], s // 4)]

    def stage_conv(self, stage: int) -> str:
        return "traditional" if stage == 1 or self.conv == "traditional" else "dsc"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ResNetConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class ConvSlot:
    """One convolution of the architecture, in execution order."""

    name: str
    stage: str
    kind: str  # traditional | dsc | downsample
    c_i: int
    c_o: int
    f: int
    stride: int
    side_in: int


def conv_slots(cfg: ResNetConfig) -> list[ConvSlot]:
    slots = [ConvSlot("init", "init", "traditional", cfg.in_channels, cfg.widths[0],
                      cfg.kernel, 1, cfg.input_side)]
    c_prev = cfg.widths[0]
    for s, (c, side) in enumerate(cfg.stage_geometry(), start=1):
        kind = cfg.stage_conv(s)
        for b in range(cfg.blocks):
            stride = 2 if (s > 1 and b == 0) else 1
            side_in = side * stride
            prefix = f"s{s}.b{b}"
            if stride == 2 or c_prev != c:
                slots.append(ConvSlot(f"{prefix}.down", f"layer{s}", "downsample",
                                      c_prev, c, 1, stride, side_in))
            slots.append(ConvSlot(f"{prefix}.conv1", f"layer{s}", kind, c_prev, c,
                                  cfg.kernel, stride, side_in))
            slots.append(ConvSlot(f"{prefix}.conv2", f"layer{s}", kind, c, c,
                                  cfg.kernel, 1, side))
            c_prev = c
    return slots


def weight_shapes(cfg: ResNetConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for cs in conv_slots(cfg):
        if cs.kind == "dsc":
            shapes[f"{cs.name}.dw"] = (cs.c_i, cs.f, cs.f)
            shapes[f"{cs.name}.pw"] = (cs.c_o, cs.c_i)
        else:
            shapes[f"{cs.name}.w"] = (cs.c_o, cs.c_i, cs.f, cs.f)
        for fld in BN_FIELDS:
            shapes[f"{cs.name}.bn.{fld}"] = (cs.c_o,)
    shapes["fc.w"] = (cfg.num_classes, cfg.widths[2])
    shapes["fc.b"] = (cfg.num_classes,)
    return shapes


def random_weights(cfg: ResNetConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """He-scaled random weights with mild BN statistics.

    Scales are chosen so that pre-activations of a random network stay
    well inside the default activation interval.
    """
    rng = np.random.default_rng(seed)
    out: dict[str, np.ndarray] = {}
    for name, shape in weight_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("w", "dw", "pw"):
            fan_in = int(np.prod(shape[1:]))
            out[name] = rng.normal(0.0, math.sqrt(1.0 / fan_in), size=shape)
        elif leaf == "gamma":
            out[name] = rng.uniform(0.5, 1.0, size=shape)
        elif leaf == "beta":
            out[name] = rng.normal(0.0, 0.1, size=shape)
        elif leaf == "mean":
            out[name] = rng.normal(0.0, 0.1, size=shape)
        elif leaf == "var":
            out[name] = rng.uniform(0.5, 1.5, size=shape)
        elif name == "fc.w":
            out[name] = rng.normal(0.0, math.sqrt(1.0 / shape[1]), size=shape)
        elif name == "fc.b":
            out[name] = rng.normal(0.0, 0.1, size=shape)
    return out


def zero_weights(cfg: ResNetConfig) -> dict[str, np.ndarray]:
    out = {name: np.zeros(shape) for name, shape in weight_shapes(cfg).items()}
    for name in out:
        if name.endswith(".bn.var"):
            out[name] = np.ones_like(out[name])
    return out


def check_weights(cfg: ResNetConfig, weights: dict) -> None:
    for name, shape in weight_shapes(cfg).items():
        if name not in weights:
            raise InvalidGeometry(f"missing weight {name}")
        if np.shape(weights[name]) != shape:
            raise InvalidGeometry(f"{name}: expected {shape}, got {np.shape(weights[name])}")


def bn_of(weights: dict, prefix: str) -> dict[str, np.ndarray]:
    return {fld: np.asarray(weights[f"{prefix}.bn.{fld}"], dtype=np.float64) for fld in BN_FIELDS}
