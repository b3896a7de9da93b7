"""Network plans: layer lists, bootstrap placement, execution and costing.

A plan is a straight-line list of :class:`LayerSpec` steps over named
values.  ``"input"`` is the encrypted image; every layer reads one value
(two for ``add_skip``) and writes a value named after itself.  Skip
connections are simply layers reading a value produced further back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import act as act_mod
from .conv import (
    bias_plaintext,
    conv_depthwise,
    conv_traditional,
    encode_depthwise,
    encode_kernels_traditional,
    kernel_plaintext_count,
    mult_ratio,
    predict_counts,
    rotation_ratio,
)
from .convbn import BnParams, build_fusion_matrix, convbn_fused, fusion_offsets
from .engine import OP_KINDS, CtVec, HeContext, HeParams, OpLedger, PtVec, estimate_cost
from .errors import (
    DepthExhausted,
    InfeasiblePlan,
    InvalidGeometry,
    MissingWeight,
    PlanningError,
    ShapeMismatch,
)
from .model import ResNetConfig, conv_slots
from .packing import PackLayout, make_mask, pack, unpack

LAYER_KINDS = ("conv_traditional", "conv_dsc_bn", "bn_standalone", "act_poly", "downsample",
               "add_skip", "avgpool", "fc", "bootstrap")

DEPTH_COST = {"conv_traditional": 2, "conv_dsc_bn": 2, "bn_standalone": 1, "act_poly": 3,
              "downsample": 2, "add_skip": 0, "avgpool": 1, "fc": 1, "bootstrap": 0}

# published layer-2 traditional figure; 6 convs x 9 taps x 32 outputs gives 1728
_PUBLISHED_LAYER2_TRADITIONAL = 1782


@dataclass
class LayerSpec:
    name: str
    kind: str
    inputs: tuple[str, ...]
    c_i: int = 0
    c_o: int = 0
    f: int = 1
    stride: int = 1
    layout_in: PackLayout | None = None
    layout_out: PackLayout | None = None
    depth_cost: int = 0
    stage: str = ""
    weights: str | None = None
    level_in: tuple[int, ...] = ()
    level_out: int | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidGeometry(f"unknown layer kind {self.kind!r}")

    @property
    def output(self) -> str:
        return self.name

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "inputs": list(self.inputs),
             "stage": self.stage, "depth_cost": self.depth_cost}
        if self.c_o:
            d.update(c_i=self.c_i, c_o=self.c_o, f=self.f, stride=self.stride)
        if self.layout_out is not None:
            d["block_n"] = self.layout_out.n_block
            d["side"] = self.layout_out.fmap_side
        if self.level_out is not None:
            d["level_in"] = list(self.level_in)
            d["level_out"] = self.level_out
        return d


@dataclass
class NetworkPlan:
    layers: list[LayerSpec]
    input_layout: PackLayout
    output: str = "input"
    act_coeffs: np.ndarray | None = None
    num_classes: int = 0
    config: ResNetConfig | None = None
    params: HeParams | None = None
    bootstrap_before: list[int] = field(default_factory=list)

    @property
    def placed(self) -> bool:
        return self.params is not None

    @property
    def bootstrap_count(self) -> int:
        return sum(layer.kind == "bootstrap" for layer in self.layers)

    def compute_layers(self) -> list[LayerSpec]:
        return [layer for layer in self.layers if layer.kind != "bootstrap"]

    def to_dict(self) -> dict:
        return {
            "layers": [layer.to_dict() for layer in self.layers],
            "output": self.output,
            "placed": self.placed,
            "bootstraps": self.bootstrap_count,
            "bootstrap_before": list(self.bootstrap_before),
            "start_level": self.params.usable_level if self.params else None,
        }


class PlanBuilder:
    """Incremental construction of an unplaced plan."""

    def __init__(self, input_layout: PackLayout, act_coeffs=None, stage: str = ""):
        self.input_layout = input_layout
        self.act_coeffs = None if act_coeffs is None else np.asarray(act_coeffs, dtype=np.float64)
        self.stage = stage
        self.layers: list[LayerSpec] = []
        self._layout = {"input": input_layout}

    def layout_of(self, value: str) -> PackLayout:
        return self._layout[value]

    def _add(self, layer: LayerSpec, layout_out: PackLayout | None) -> str:
        if layer.name in self._layout:
            raise PlanningError(f"duplicate value name {layer.name!r}")
        if not layer.stage:
            layer.stage = self.stage
        self.layers.append(layer)
        self._layout[layer.name] = layout_out
        return layer.name

    def conv(self, name: str, x: str, kind: str, c_o: int, f: int = 3, stride: int = 1,
             weights: str | None = None) -> str:
        if kind not in ("conv_traditional", "conv_dsc_bn", "downsample"):
            raise InvalidGeometry(f"{kind!r} is not a convolution")
        lin = self._layout[x]
        side = lin.fmap_side // stride
        lout = PackLayout(lin.n_block * stride, lin.grid_side, c_o, side)
        layer = LayerSpec(name, kind, (x,), lin.channels, c_o, f, stride, lin, lout,
                          DEPTH_COST[kind], weights=weights or name)
        return self._add(layer, lout)

    def bn(self, name: str, x: str, weights: str | None = None) -> str:
        lay = self._layout[x]
        layer = LayerSpec(name, "bn_standalone", (x,), lay.channels, lay.channels, 1, 1, lay, lay,
                          DEPTH_COST["bn_standalone"], weights=weights or name)
        return self._add(layer, lay)

    def act(self, name: str, x: str) -> str:
        if self.act_coeffs is None:
            raise PlanningError("builder has no activation polynomial")
        lay = self._layout[x]
        depth = act_mod.poly_depth(len(self.act_coeffs) - 1)
        return self._add(LayerSpec(name, "act_poly", (x,), lay.channels, lay.channels,
                                   layout_in=lay, layout_out=lay, depth_cost=depth), lay)

    def add(self, name: str, a: str, b: str) -> str:
        la, lb = self._layout[a], self._layout[b]
        if la != lb:
            raise ShapeMismatch(f"skip add of differently packed values {a!r}, {b!r}")
        return self._add(LayerSpec(name, "add_skip", (a, b), la.channels, la.channels,
                                   layout_in=la, layout_out=la), la)

    def avgpool(self, name: str, x: str) -> str:
        lay = self._layout[x]
        h = lay.fmap_side
        if h & (h - 1):
            raise InvalidGeometry(f"average pooling needs a power-of-two side, got {h}")
        return self._add(LayerSpec(name, "avgpool", (x,), lay.channels, lay.channels,
                                   layout_in=lay, layout_out=lay, depth_cost=1), lay)

    def fc(self, name: str, x: str, classes: int, weights: str | None = None) -> str:
        lay = self._layout[x]
        return self._add(LayerSpec(name, "fc", (x,), lay.channels, classes, layout_in=lay,
                                   depth_cost=1, weights=weights or name), None)

    def build(self, output: str, num_classes: int = 0, config: ResNetConfig | None = None) -> NetworkPlan:
        return NetworkPlan(list(self.layers), self.input_layout, output, self.act_coeffs,
                           num_classes, config)


# -- builders -----------------------------------------------------------------

def activation_for(cfg: ResNetConfig) -> act_mod.PolyApprox:
    return act_mod.approximate("silu", cfg.act_degree, (-cfg.act_bound, cfg.act_bound))


def build_resnet20(cfg: ResNetConfig | None = None, act_coeffs=None) -> NetworkPlan:
    """ResNet with traditional convs up front and, for ``conv="dsc"``,
    depthwise + fused ConvBN in stages 2 and 3."""
    cfg = cfg or ResNetConfig()
    if act_coeffs is None:
        act_coeffs = activation_for(cfg).monomial_coeffs
    lay_in = PackLayout.for_map(cfg.f_max, cfg.in_channels, cfg.input_side)
    b = PlanBuilder(lay_in, act_coeffs)
    slots = {cs.name: cs for cs in conv_slots(cfg)}

    def conv(cs, x):
        kind = {"traditional": "conv_traditional", "dsc": "conv_dsc_bn"}.get(cs.kind, cs.kind)
        b.stage = cs.stage
        return b.conv(cs.name, x, kind, cs.c_o, cs.f, cs.stride)

    h = b.act("init.act", conv(slots["init"], "input"))
    for s in (1, 2, 3):
        for blk in range(cfg.blocks):
            p = f"s{s}.b{blk}"
            skip = conv(slots[f"{p}.down"], h) if f"{p}.down" in slots else h
            y = b.act(f"{p}.conv1.act", conv(slots[f"{p}.conv1"], h))
            y = conv(slots[f"{p}.conv2"], y)
            h = b.act(f"{p}.act", b.add(f"{p}.add", y, skip))
    b.stage = "head"
    logits = b.fc("fc", b.avgpool("avgpool", h), cfg.num_classes)
    return b.build(logits, cfg.num_classes, cfg)


def chain_plan(n_layers: int, layout: PackLayout, act_coeffs=None) -> NetworkPlan:
    """``n_layers`` activations in a row; the smallest plan that needs bootstraps."""
    if act_coeffs is None:
        act_coeffs = [0.0, 0.5, 0.1, 0.0, 0.0, 0.0]
    b = PlanBuilder(layout, act_coeffs)
    x = "input"
    for k in range(n_layers):
        x = b.act(f"act{k}", x)
    return b.build(x)


# -- bootstrap placement ------------------------------------------------------

def _refresh_schedule(layers: list[LayerSpec], output: str, usable: int) -> set[tuple[int, int]]:
    """Fewest bootstraps that keep every layer fed, as ``(layer, input position)`` pairs.

    Exact dynamic program over the levels of the values still to be read.
    A bootstrap only matters at a read, so the choices are which inputs of
    each layer to refresh.  Ties go to the schedule whose bootstraps come
    latest, which on a straight chain is the greedy schedule.
    """
    last_use = {output: len(layers)}
    for idx, layer in enumerate(layers):
        for v in layer.inputs:
            last_use[v] = max(last_use.get(v, -1), idx)

    def key(entry):
        count, positions = entry
        return count, tuple((-a, -b) for a, b in positions)

    states = {(("input", usable),): (0, ())} if "input" in last_use else {(): (0, ())}
    for idx, layer in enumerate(layers):
        nxt: dict = {}
        for state, (count, positions) in states.items():
            live = dict(state)
            k = len(layer.inputs)
            for mask in range(1 << k):
                chosen = [p for p in range(k) if mask >> p & 1]
                refreshed = {layer.inputs[p] for p in chosen}
                lv = dict(live)
                for v in refreshed:
                    lv[v] = usable
                levels = [lv[v] for v in layer.inputs]
                if layer.kind == "add_skip":
                    out = min(levels)
                elif levels[0] < layer.depth_cost:
                    continue
                else:
                    out = levels[0] - layer.depth_cost
                if layer.name in last_use:
                    lv[layer.name] = out
                lv = {v: l for v, l in lv.items() if last_use.get(v, -1) > idx}
                cand = (count + len(chosen), positions + tuple((idx, p) for p in chosen))
                skey = tuple(sorted(lv.items()))
                if skey not in nxt or key(cand) < key(nxt[skey]):
                    nxt[skey] = cand
        if not nxt:
            raise InfeasiblePlan(f"no schedule can feed {layer.name}")
        states = nxt
    return set(min(states.values(), key=key)[1])


def place_bootstraps(plan: NetworkPlan, he: HeParams, strategy: str = "optimal") -> NetworkPlan:
    """Insert bootstraps so that no layer runs short of depth.

    ``strategy="greedy"`` refreshes a layer's input exactly when its level
    is below the layer's depth cost.  ``"optimal"`` (default) uses the
    fewest bootstraps; with skip connections greedy can be beaten, and
    its count is not monotone in ``max_level``.  Either way the refreshed
    value replaces the stale one for every later reader, and skip
    additions run at the lower of their two input levels (the higher
    branch is level-dropped when executed).
    """
    if strategy not in ("optimal", "greedy"):
        raise ValueError(f"unknown placement strategy {strategy!r}")
    usable = he.usable_level
    layers = plan.compute_layers()
    for layer in layers:
        if layer.depth_cost > usable:
            raise InfeasiblePlan(f"{layer.name} needs {layer.depth_cost} levels, "
                                 f"a bootstrapped ciphertext has {usable}")
    schedule = _refresh_schedule(layers, plan.output, usable) if strategy == "optimal" else None
    level = {"input": usable}
    alias: dict[str, str] = {}
    out: list[LayerSpec] = []
    before: list[int] = []
    for idx, layer in enumerate(layers):
        ins = [alias.get(v, v) for v in layer.inputs]
        missing = [v for v in ins if v not in level]
        if missing:
            raise PlanningError(f"{layer.name} reads undefined value {missing[0]!r}")
        fresh: set[str] = set()
        for pos in range(len(ins)):
            v = ins[pos]
            if schedule is None:
                refresh = pos == 0 and layer.kind != "add_skip" and level[v] < layer.depth_cost
            else:
                refresh = (idx, pos) in schedule
            if not refresh or v in fresh:
                continue
            bname = f"boot{len(out) - idx}"
            out.append(LayerSpec(bname, "bootstrap", (v,), layout_in=layer.layout_in,
                                 layout_out=layer.layout_in, stage=layer.stage,
                                 level_in=(level[v],), level_out=usable))
            level[bname] = usable
            fresh.add(bname)
            alias[layer.inputs[pos]] = bname
            ins = [bname if w == v else w for w in ins]
            if not before or before[-1] != idx:
                before.append(idx)
        if layer.kind == "add_skip":
            lv_in = tuple(level[v] for v in ins)
            lv_out = min(lv_in)
        else:
            lv_in = (level[ins[0]],)
            lv_out = lv_in[0] - layer.depth_cost
        out.append(replace(layer, inputs=tuple(ins), level_in=lv_in, level_out=lv_out))
        level[layer.name] = lv_out
    placed = replace(plan, layers=out, output=alias.get(plan.output, plan.output),
                     params=he, bootstrap_before=before)
    verify_plan(placed)
    return placed


def verify_plan(plan: NetworkPlan) -> None:
    """Re-derive every level and check the placed plan's invariants."""
    if not plan.placed:
        raise PlanningError("plan has not been placed")
    usable = plan.params.usable_level
    level = {"input": usable}
    for layer in plan.layers:
        if any(v not in level for v in layer.inputs):
            raise PlanningError(f"{layer.name} reads an undefined value")
        lv = tuple(level[v] for v in layer.inputs)
        if layer.kind == "bootstrap":
            out = usable
        elif layer.kind == "add_skip":
            out = min(lv)
        else:
            if lv[0] < layer.depth_cost:
                raise PlanningError(f"{layer.name}: level {lv[0]} below cost {layer.depth_cost}")
            out = lv[0] - layer.depth_cost
        if lv != layer.level_in or out != layer.level_out or out < 0:
            raise PlanningError(f"{layer.name}: inconsistent level annotation")
        level[layer.name] = out


# -- head operators -----------------------------------------------------------

def global_avgpool(ctx: HeContext, ct: CtVec, layout: PackLayout) -> CtVec:
    """Per-channel mean, left in each channel's cell of block (0, 0)."""
    h = layout.fmap_side
    if h & (h - 1):
        raise InvalidGeometry(f"average pooling needs a power-of-two side, got {h}")
    steps = int(math.log2(h))
    acc = ct
    for j in range(steps):
        acc = ctx.add_ct(acc, ctx.rotate(acc, layout.n_block << j))
    for j in range(steps):
        acc = ctx.add_ct(acc, ctx.rotate(acc, (layout.n_block * layout.grid_side) << j))
    scale = make_mask(layout, lambda ch, r, c: (r == 0) & (c == 0)) / (h * h)
    return ctx.mul_pt(acc, PtVec(scale))


def _fc_offsets(layout: PackLayout, classes: int) -> dict[int, list[tuple[int, int]]]:
    groups: dict[int, list[tuple[int, int]]] = {}
    for i in range(layout.channels):
        for k in range(classes):
            groups.setdefault(layout.cell_offset(i) - k, []).append((k, i))
    return dict(sorted(groups.items()))


def encode_fc(w: np.ndarray, layout: PackLayout) -> tuple[list[int], list[PtVec]]:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != layout.channels:
        raise ShapeMismatch(f"fc weights {w.shape} for {layout.channels} channels")
    if w.shape[0] > layout.f_max:
        raise InvalidGeometry("more classes than slots")
    offsets, pts = [], []
    for delta, pairs in _fc_offsets(layout, w.shape[0]).items():
        v = np.zeros(layout.f_max)
        for k, i in pairs:
            v[k] = w[k, i]
        offsets.append(delta)
        pts.append(PtVec(v))
    return offsets, pts


def fc_layer(ctx: HeContext, ct: CtVec, w: np.ndarray, b: np.ndarray, layout: PackLayout,
             encoded=None) -> CtVec:
    """Logit ``k`` lands in slot ``k``; one rotation per distinct cell-to-slot offset."""
    offsets, pts = encoded if encoded is not None else encode_fc(w, layout)
    out = ctx.sum_ct(ctx.mul_pt(ctx.rotate(ct, d), pt) for d, pt in zip(offsets, pts))
    bias = np.zeros(layout.f_max)
    bias[: len(b)] = b
    return ctx.add_pt(out, PtVec(bias))


def _bn_from(weights: Mapping, prefix: str, eps: float) -> BnParams:
    try:
        return BnParams(*(weights[f"{prefix}.bn.{k}"] for k in ("gamma", "beta", "mean", "var")), eps=eps)
    except KeyError as e:
        raise MissingWeight(str(e)) from None


def _weight(weights: Mapping, name: str, shape: tuple[int, ...]) -> np.ndarray:
    if name not in weights:
        raise MissingWeight(name)
    w = np.asarray(weights[name], dtype=np.float64)
    if w.shape != shape:
        raise ShapeMismatch(f"{name}: expected {shape}, got {w.shape}")
    return w


def downsample_shortcut(ctx: HeContext, ct: CtVec, layout_in: PackLayout, layout_out: PackLayout,
                        w: np.ndarray, bn: BnParams | None = None) -> CtVec:
    """Strided 1x1 projection shortcut, BN folded in; two levels."""
    w = np.asarray(w, dtype=np.float64).reshape(layout_out.channels, layout_in.channels, 1, 1)
    bias = None
    if bn is not None:
        w = w * bn.alpha[:, None, None, None]
        bias = bn.beta - bn.alpha * bn.mean
    stride = layout_out.n_block // layout_in.n_block
    return conv_traditional(ctx, ct, encode_kernels_traditional(w, layout_in), layout_in,
                            layout_out, stride, bias)


# -- execution ----------------------------------------------------------------

def compile_weights(plan: NetworkPlan, weights: Mapping, eps: float | None = None) -> dict:
    """Encode every weight-bearing layer's plaintexts ahead of execution."""
    if eps is None:
        eps = plan.config.bn_eps if plan.config else 1e-5
    out = {}
    for layer in plan.compute_layers():
        p = layer.weights
        if layer.kind in ("conv_traditional", "downsample"):
            w = _weight(weights, f"{p}.w", (layer.c_o, layer.c_i, layer.f, layer.f))
            bn = _bn_from(weights, p, eps)
            wf = w * bn.alpha[:, None, None, None]
            out[layer.name] = (encode_kernels_traditional(wf, layer.layout_in),
                               bias_plaintext(bn.beta - bn.alpha * bn.mean, layer.layout_out))
        elif layer.kind == "conv_dsc_bn":
            d = _weight(weights, f"{p}.dw", (layer.c_i, layer.f, layer.f))
            pw = _weight(weights, f"{p}.pw", (layer.c_o, layer.c_i))
            bn = _bn_from(weights, p, eps)
            out[layer.name] = (encode_depthwise(d, layer.layout_in),
                               build_fusion_matrix(pw, bn, layer.layout_in, layer.layout_out, layer.stride))
        elif layer.kind == "bn_standalone":
            bn = _bn_from(weights, p, eps)
            lay = layer.layout_in
            per_cell = lambda v: PtVec(pack(np.broadcast_to(v[:, None, None], lay.shape), lay))
            out[layer.name] = (per_cell(bn.alpha), per_cell(bn.beta - bn.alpha * bn.mean))
        elif layer.kind == "fc":
            w = _weight(weights, f"{p}.w", (layer.c_o, layer.c_i))
            b = _weight(weights, f"{p}.b", (layer.c_o,))
            out[layer.name] = (w, b, encode_fc(w, layer.layout_in))
    return out


def _execute(ctx: HeContext, layer: LayerSpec, args: list[CtVec], payload, act_coeffs) -> CtVec:
    kind = layer.kind
    if kind == "bootstrap":
        return ctx.bootstrap(args[0])
    if kind == "act_poly":
        return act_mod.eval_poly_ct(ctx, args[0], act_coeffs)
    if kind in ("conv_traditional", "downsample"):
        kernels, bias = payload
        out = conv_traditional(ctx, args[0], kernels, layer.layout_in, layer.layout_out, layer.stride)
        return ctx.add_pt(out, bias)
    if kind == "conv_dsc_bn":
        dw_pts, fm = payload
        return convbn_fused(ctx, conv_depthwise(ctx, args[0], dw_pts, layer.layout_in), fm)
    if kind == "bn_standalone":
        alpha, shift = payload
        return ctx.add_pt(ctx.mul_pt(args[0], alpha), shift)
    if kind == "add_skip":
        a, b = ctx.align(*args)
        return ctx.add_ct(a, b)
    if kind == "avgpool":
        return global_avgpool(ctx, args[0], layer.layout_in)
    if kind == "fc":
        w, b, enc = payload
        return fc_layer(ctx, args[0], w, b, layer.layout_in, enc)
    raise PlanningError(f"cannot execute {kind!r}")


def run_plan(plan: NetworkPlan, x: np.ndarray, weights: Mapping, ctx: HeContext | None = None,
             compiled: dict | None = None):
    """Encrypted forward pass; returns ``(outputs, CostReport)``.

    Outputs are the logits when the plan ends in an FC layer, otherwise
    the unpacked final tensor.
    """
    if not plan.placed:
        raise PlanningError("place bootstraps before running a plan")
    ctx = ctx or HeContext(plan.params)
    if ctx.n_slots != plan.input_layout.f_max:
        raise ShapeMismatch(f"context has {ctx.n_slots} slots, plan packs {plan.input_layout.f_max}")
    if compiled is None:
        compiled = compile_weights(plan, weights)
    values = {"input": ctx.encrypt(pack(x, plan.input_layout), plan.params.usable_level)}
    entries = []
    for layer in plan.layers:
        before = ctx.ledger.copy()
        try:
            ct = _execute(ctx, layer, [values[v] for v in layer.inputs],
                          compiled.get(layer.name), plan.act_coeffs)
        except DepthExhausted as e:
            raise PlanningError(f"planner bug: {layer.name} ran out of depth ({e})") from e
        values[layer.name] = ct
        entries.append(LayerCost(layer.name, layer.kind, layer.stage, predict_layer_counts(layer, plan),
                                 ctx.ledger.since(before).as_dict()))
    final = values[plan.output]
    last = next((l for l in plan.layers if l.name == plan.output), None)
    if last is not None and last.kind == "fc":
        result = final.slots[: last.c_o].copy()
    else:
        lay = last.layout_out if last is not None else plan.input_layout
        result = unpack(final.slots, lay)
    return result, CostReport.from_entries(entries, plan)


# -- costing ------------------------------------------------------------------

def predict_layer_counts(layer: LayerSpec, plan: NetworkPlan | None = None) -> dict[str, int]:
    """Closed-form operation counts for one step (``level_drop`` excluded)."""
    c = {k: 0 for k in OP_KINDS if k != "level_drop"}
    kind = layer.kind
    if kind in ("conv_traditional", "downsample"):
        pred = predict_counts("traditional", layer.f, layer.c_i, layer.c_o)
        c["rotate"], c["mul_pt"] = pred.rotations, pred.mults
        c["add_ct"] = layer.c_o * (layer.f ** 2 - 1 + layer.c_i - 1) + layer.c_o - 1
        c["add_pt"] = 1
    elif kind == "conv_dsc_bn":
        n_off = len(fusion_offsets(layer.layout_in, layer.layout_out))
        taps = layer.f ** 2
        c["rotate"], c["mul_pt"] = taps - 1 + n_off, taps + n_off
        c["add_ct"] = taps - 1 + n_off - 1
        c["add_pt"] = 2
    elif kind == "bn_standalone":
        c["mul_pt"], c["add_pt"] = 1, 1
    elif kind == "act_poly":
        degree = len(plan.act_coeffs) - 1 if plan is not None and plan.act_coeffs is not None else 5
        for k, v in act_mod.predict_poly_counts(degree).items():
            c[k] = v
    elif kind == "add_skip":
        c["add_ct"] = 1
    elif kind == "avgpool":
        steps = 2 * int(math.log2(layer.layout_in.fmap_side))
        c["rotate"], c["add_ct"], c["mul_pt"] = steps, steps, 1
    elif kind == "fc":
        n_off = len(_fc_offsets(layer.layout_in, layer.c_o))
        c["rotate"], c["mul_pt"], c["add_ct"], c["add_pt"] = n_off, n_off, n_off - 1, 1
    elif kind == "bootstrap":
        c["bootstrap"] = 1
    return c


@dataclass
class LayerCost:
    name: str
    kind: str
    stage: str
    predicted: dict[str, int]
    measured: dict[str, int] | None = None

    def agrees(self) -> bool:
        if self.measured is None:
            return True
        return all(self.measured.get(k, 0) == v for k, v in self.predicted.items())


@dataclass
class CostReport:
    layers: list[LayerCost]
    weights: Mapping[str, float]
    kernel_counts: dict[str, int] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_entries(cls, entries: list[LayerCost], plan: NetworkPlan | None,
                     weights: Mapping[str, float] | None = None) -> "CostReport":
        if weights is None:
            weights = plan.params.cost_weights if plan is not None and plan.params else HeParams().cost_weights
        kc, notes = kernel_counts(plan) if plan is not None else ({}, [])
        return cls(entries, dict(weights), kc, notes)

    def total(self, which: str = "predicted") -> OpLedger:
        acc = OpLedger()
        for entry in self.layers:
            counts = getattr(entry, which)
            if counts is None:
                raise ValueError(f"no {which} counts for {entry.name}")
            acc = acc + OpLedger(counts)
        return acc

    @property
    def measured(self) -> bool:
        return bool(self.layers) and all(e.measured is not None for e in self.layers)

    @property
    def bootstraps(self) -> int:
        return self.total()["bootstrap"]

    def seconds(self, which: str = "predicted") -> float:
        return estimate_cost(self.total(which), self.weights)

    def stage_seconds(self, which: str = "predicted") -> dict[str, float]:
        out: dict[str, float] = {}
        for e in self.layers:
            counts = getattr(e, which)
            out[e.stage] = out.get(e.stage, 0.0) + estimate_cost(counts, self.weights)
        return out

    def mismatches(self) -> list[str]:
        return [e.name for e in self.layers if not e.agrees()]

    def to_dict(self) -> dict:
        d = {
            "layers": [{"name": e.name, "kind": e.kind, "stage": e.stage,
                        "predicted": e.predicted, "measured": e.measured,
                        "seconds": estimate_cost(e.predicted, self.weights)} for e in self.layers],
            "total_predicted": self.total().as_dict(),
            "seconds": self.seconds(),
            "bootstraps": self.bootstraps,
            "stage_seconds": self.stage_seconds(),
            "kernel_counts": dict(self.kernel_counts),
            "notes": list(self.notes),
        }
        if self.measured:
            d["total_measured"] = self.total("measured").as_dict()
            d["measured_seconds"] = self.seconds("measured")
            d["mismatches"] = self.mismatches()
        d.update(self.extra)
        return d


def kernel_counts(plan: NetworkPlan) -> tuple[dict[str, int], list[str]]:
    """Weight-bearing plaintexts per stage, downsample shortcuts listed apart."""
    counts: dict[str, int] = {}
    for layer in plan.compute_layers():
        if layer.kind == "downsample":
            key = f"{layer.stage}_downsample"
            n = kernel_plaintext_count("traditional", layer.f, layer.c_o)
        elif layer.kind in ("conv_traditional", "conv_dsc_bn"):
            kind = "traditional" if layer.kind == "conv_traditional" else "dsc"
            key = layer.stage if layer.stage in ("init", "layer1") else f"{layer.stage}_{kind}"
            n = kernel_plaintext_count(kind, layer.f, layer.c_o)
        else:
            continue
        counts[key] = counts.get(key, 0) + n
    notes = []
    cfg = plan.config
    if counts.get("layer2_traditional") and cfg is not None and cfg.widths == (16, 32, 64) \
            and cfg.blocks == 3 and cfg.kernel == 3:
        notes.append(f"layer2_traditional = {counts['layer2_traditional']} "
                     f"(6 convs x 9 taps x 32 outputs); the published table lists "
                     f"{_PUBLISHED_LAYER2_TRADITIONAL}, which no 3x3 layout of this stage yields")
    return counts, notes


def cost_report(plan: NetworkPlan, he: HeParams | None = None) -> CostReport:
    """Static prediction for a placed (or, with ``he``, auto-placed) plan."""
    if not plan.placed:
        if he is None:
            raise PlanningError("cost_report needs a placed plan or parameters")
        plan = place_bootstraps(plan, he)
    entries = [LayerCost(l.name, l.kind, l.stage, predict_layer_counts(l, plan)) for l in plan.layers]
    report = CostReport.from_entries(entries, plan)
    if plan.config is not None:
        f, c3 = plan.config.kernel, plan.config.widths[2]
        report.extra["dsc_traditional_mult_ratio"] = mult_ratio(f, c3, c3)
        report.extra["dsc_traditional_rotation_ratio"] = rotation_ratio(f, c3, c3)
    return report


def empty_plan(layout: PackLayout, he: HeParams | None = None) -> NetworkPlan:
    plan = NetworkPlan([], layout)
    return place_bootstraps(plan, he) if he is not None else plan
