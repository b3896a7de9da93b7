"""Acceptance criteria 1-10, one test each.

Every test records a PASS/FAIL line (shown in the terminal summary and
printed directly) before asserting.
"""

import itertools
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import eval_legendre, roots_legendre

from slotpack.act import approx_error, eval_monomial, eval_poly_ct, legendre_coeffs, silu, approximate
from slotpack.conv import (
    conv_depthwise,
    conv_pointwise_unfused,
    conv_traditional,
    encode_depthwise,
    encode_kernels_traditional,
    encode_pointwise,
    mult_ratio,
    predict_counts,
)
from slotpack.convbn import BnParams, build_fusion_matrix, convbn_fused, convbn_unfused
from slotpack.engine import TABLE_I_WEIGHTS, HeContext, HeParams, OpLedger, estimate_cost
from slotpack.errors import DepthExhausted, LevelMismatch
from slotpack.model import ResNetConfig, random_weights
from slotpack.netplan import build_resnet20, compile_weights, cost_report, place_bootstraps, run_plan
from slotpack.oracle import build_refnet, conv2d_ref, dsc_ref, bn_ref, forward_ref, poly_activation
from slotpack.packing import PackLayout, pack, unpack

from conftest import ACCEPTANCE


def record(n, name, ok, detail):
    ACCEPTANCE[n] = (name, bool(ok), detail)
    print(f"[{'PASS' if ok else 'FAIL'}] {n}. {name}: {detail}")
    assert ok, detail


def test_01_packing_roundtrip():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    exact = 0
    for k in range(200):
        n = (1, 4, 8, 16)[k % 4]
        lay = PackLayout(n, 128, int(rng.integers(1, n * n + 1)), 128 // n)
        t = rng.normal(size=lay.shape)
        exact += np.array_equal(unpack(pack(t, lay), lay), t)
    dt = time.perf_counter() - t0
    record(1, "packing round-trip", exact == 200 and dt < 10, f"{exact}/200 exact in {dt:.2f}s")


def test_02_convolution_equivalence():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        side = int(rng.choice([4, 8, 16]))
        stride = int(rng.choice([1, 2]))
        c_i, c_o = (int(v) for v in rng.integers(1, 17, size=2))
        lin = PackLayout(64 // side, 64, c_i, side)
        lout = PackLayout(lin.n_block * stride, 64, c_o, side // stride)
        t = rng.uniform(-1, 1, size=lin.shape)
        w, d, p = rng.normal(size=(c_o, c_i, 3, 3)), rng.normal(size=(c_i, 3, 3)), rng.normal(size=(c_o, c_i))
        ctx = HeContext(HeParams(n_slots=4096))
        ct = ctx.encrypt(pack(t, lin), 6)
        trad = conv_traditional(ctx, ct, encode_kernels_traditional(w, lin), lin, lout, stride)
        dw = conv_depthwise(ctx, ct, encode_depthwise(d, lin), lin)
        dsc = conv_pointwise_unfused(ctx, dw, encode_pointwise(p, lin), lin, lout, stride)
        worst = max(worst, np.max(np.abs(unpack(trad.slots, lout) - conv2d_ref(t, w, stride))),
                    np.max(np.abs(unpack(dsc.slots, lout) - dsc_ref(t, d, p, stride))))
    dt = time.perf_counter() - t0
    record(2, "convolution equivalence", worst <= 1e-9 and dt < 60, f"max |diff| {worst:.2e} in {dt:.1f}s")


def test_03_count_reproduction():
    rng = np.random.default_rng(3)
    bad = []
    for f, c_i, c_o in itertools.product([1, 3], [1, 4, 16], [1, 4, 16, 64]):
        lin, lout = PackLayout(8, 32, c_i, 4), PackLayout(8, 32, c_o, 4)
        t = rng.normal(size=lin.shape)
        ctx = HeContext(HeParams(n_slots=1024))
        conv_traditional(ctx, ctx.encrypt(pack(t, lin), 5),
                         encode_kernels_traditional(rng.normal(size=(c_o, c_i, f, f)), lin), lin, lout)
        if (ctx.ledger["rotate"], ctx.ledger["mul_pt"]) != ((f * f - 1 + c_i) * c_o, (f * f + 1) * c_o):
            bad.append(("traditional", f, c_i, c_o))
        ctx = HeContext(HeParams(n_slots=1024))
        dw = conv_depthwise(ctx, ctx.encrypt(pack(t, lin), 5), encode_depthwise(rng.normal(size=(c_i, f, f)), lin), lin)
        conv_pointwise_unfused(ctx, dw, encode_pointwise(rng.normal(size=(c_o, c_i)), lin), lin, lout)
        if (ctx.ledger["rotate"], ctx.ledger["mul_pt"]) != (f * f - 1 + c_i * c_o, f * f + 2 * c_o):
            bad.append(("dsc", f, c_i, c_o))
    ratio = mult_ratio(3, 64)
    ok = not bad and 0.18 <= ratio <= 0.25
    record(3, "count reproduction", ok, f"24 geometries x 2 kinds, mismatches {bad}; mult ratio {ratio:.4f}")


def test_04_plaintext_kernel_counts():
    dsc = cost_report(build_resnet20(), HeParams()).kernel_counts
    trad_report = cost_report(build_resnet20(ResNetConfig(conv="traditional")), HeParams())
    trad = trad_report.kernel_counts
    got = {"init": dsc["init"], "layer1": dsc["layer1"], "layer2_dsc": dsc["layer2_dsc"],
           "layer2_down": dsc["layer2_downsample"], "layer3_dsc": dsc["layer3_dsc"],
           "layer3_down": dsc["layer3_downsample"], "layer3_traditional": trad["layer3_traditional"],
           "layer2_traditional": trad["layer2_traditional"]}
    want = {"init": 144, "layer1": 864, "layer2_dsc": 246, "layer2_down": 32, "layer3_dsc": 438,
            "layer3_down": 64, "layer3_traditional": 3456, "layer2_traditional": 1728}
    documented = any("1782" in note for note in trad_report.notes)
    record(4, "plaintext kernel counts", got == want and documented, f"{got}; 1782 note present: {documented}")


def test_05_convbn_fusion():
    rng = np.random.default_rng(5)
    worst, level_deltas = 0.0, set()
    for _ in range(100):
        c = int(rng.choice([2, 4, 8]))
        stride = int(rng.choice([1, 2]))
        c_o = c * stride
        lin = PackLayout(4, 32, c, 8)
        lout = PackLayout(4 * stride, 32, c_o, 8 // stride)
        t = rng.uniform(-1, 1, size=lin.shape)
        d, pw = rng.normal(size=(c, 3, 3)), rng.normal(size=(c_o, c))
        bn = BnParams(rng.uniform(0.5, 1.5, c_o), rng.normal(size=c_o), rng.normal(size=c_o), rng.uniform(0.2, 2, c_o))
        ctx = HeContext(HeParams(n_slots=1024))
        dw = conv_depthwise(ctx, ctx.encrypt(pack(t, lin), 6), encode_depthwise(d, lin), lin)
        fused = convbn_fused(ctx, dw, build_fusion_matrix(pw, bn, lin, lout, stride))
        unf = convbn_unfused(ctx, dw, encode_pointwise(pw, lin), bn, lin, lout, stride)
        ref = bn_ref(dsc_ref(t, d, pw, stride), bn.gamma, bn.beta, bn.mean, bn.var)
        worst = max(worst, np.max(np.abs(unpack(fused.slots, lout) - unpack(unf.slots, lout))),
                    np.max(np.abs(unpack(fused.slots, lout) - ref)))
        level_deltas.add((dw.level - fused.level, dw.level - unf.level))
    ok = worst <= 1e-9 and level_deltas == {(1, 2)}
    record(5, "ConvBN fusion", ok, f"max |diff| {worst:.2e}; (fused, unfused) levels used {sorted(level_deltas)}")


def test_06_legendre_projection():
    a = legendre_coeffs(silu, 5, (-1.0, 1.0))
    nodes, weights = roots_legendre(64)
    fv = nodes / (1 + np.exp(-nodes))
    oracle = [(2 * n + 1) / 2 * np.sum(weights * fv * eval_legendre(n, nodes)) for n in range(6)]
    even_err = max(abs(a[n] - oracle[n]) for n in (0, 2, 4))
    pa = approximate("silu", 5, (-1.0, 1.0))
    rng = np.random.default_rng(6)
    beaten = 0
    for k in range(1000):
        if k % 2:
            q = pa.monomial_coeffs + rng.normal(scale=10.0 ** rng.uniform(-6, 0), size=6)
        else:
            q = rng.normal(size=6)
        l2, _ = approx_error(silu, lambda x: eval_monomial(q, x), (-1.0, 1.0))
        beaten += l2 < pa.l2_error
    ok = abs(a[1] - 0.5) <= 1e-12 and abs(a[3]) <= 1e-12 and abs(a[5]) <= 1e-12 and even_err <= 1e-9 and not beaten
    record(6, "Legendre projection", ok,
           f"a1-0.5={a[1] - 0.5:.1e}, a3={a[3]:.1e}, a5={a[5]:.1e}, even vs oracle {even_err:.1e}, "
           f"competitors better: {beaten}/1000")


def test_07_depth_contract():
    rng = np.random.default_rng(7)
    pa = approximate("silu", 5, (-8.0, 8.0))
    ctx = HeContext()
    x = rng.uniform(-8, 8, size=ctx.n_slots)
    out = eval_poly_ct(ctx, ctx.encrypt(x), pa.monomial_coeffs)
    used = ctx.params.usable_level - out.level
    err = np.max(np.abs(out.slots - pa(x)))
    record(7, "depth contract", used == 3 and err <= 1e-9, f"levels used {used}, max |diff| {err:.2e}")


def _run_clean(plan, cfg, seed):
    x = np.random.default_rng(seed).normal(size=(cfg.in_channels, cfg.input_side, cfg.input_side))
    try:
        _, report = run_plan(plan, x, random_weights(cfg, seed))
    except (DepthExhausted, LevelMismatch) as e:
        return False, str(e), None
    return True, "", report


def test_08_planner_soundness():
    details, ok = [], True
    for width in (1.0, 0.25):
        cfg = ResNetConfig.resnet20(width)
        he = replace(HeParams(), n_slots=cfg.f_max)
        plan = place_bootstraps(build_resnet20(cfg), he)
        again = place_bootstraps(build_resnet20(cfg), he)
        clean, err, report = _run_clean(plan, cfg, 8)
        adds = [l for l in plan.layers if l.kind == "add_skip"]
        balanced = all(l.level_out == min(l.level_in) for l in adds)
        deterministic = plan.bootstrap_before == again.bootstrap_before
        measured = report is not None and report.bootstraps == plan.bootstrap_count and not report.mismatches()
        ok &= clean and balanced and deterministic and measured
        details.append(f"width {width}: {plan.bootstrap_count} bootstraps, clean={clean}{err}, "
                       f"{len(adds)} skip-adds aligned={balanced}, deterministic={deterministic}")
    record(8, "planner soundness", ok, "; ".join(details))


def test_09_end_to_end():
    cfg = ResNetConfig.resnet20(0.25)
    plan = place_bootstraps(build_resnet20(cfg), replace(HeParams(), n_slots=cfg.f_max))
    weights = random_weights(cfg, 9)
    compiled = compile_weights(plan, weights)
    ref = build_refnet(cfg, weights, poly_activation(plan.act_coeffs))
    rng = np.random.default_rng(9)
    t0 = time.perf_counter()
    worst, agree = 0.0, 0
    for _ in range(20):
        x = rng.normal(size=(3, 16, 16))
        logits, _ = run_plan(plan, x, weights, HeContext(plan.params), compiled)
        expect = forward_ref(ref, x)
        worst = max(worst, np.max(np.abs(logits - expect)))
        agree += int(np.argmax(logits) == np.argmax(expect))
    dt = time.perf_counter() - t0
    record(9, "end-to-end equivalence", worst <= 1e-6 and agree == 20 and dt < 600,
           f"max |diff| {worst:.2e}, argmax {agree}/20, {dt:.1f}s")


def test_10_cost_model():
    cost = estimate_cost(OpLedger({"rotate": 2, "bootstrap": 1}), TABLE_I_WEIGHTS)
    cfg = ResNetConfig()
    plan = place_bootstraps(build_resnet20(cfg), HeParams())
    static = cost_report(plan)
    _, _, measured = _run_clean(plan, cfg, 10)
    checks = []
    for rep, which in ((static, "predicted"), (measured, "predicted"), (measured, "measured")):
        d = rep.to_dict()
        per_layer = OpLedger()
        for e in rep.layers:
            per_layer = per_layer + OpLedger(getattr(e, which))
        secs = sum(estimate_cost(getattr(e, which), TABLE_I_WEIGHTS) for e in rep.layers)
        checks.append(per_layer == rep.total(which) and secs == pytest.approx(rep.seconds(which), rel=1e-12))
    checks.append(static.to_dict()["seconds"] == pytest.approx(sum(static.to_dict()["stage_seconds"].values())))
    ok = cost == pytest.approx(16.296, abs=1e-12) and all(checks)
    record(10, "cost model", ok, f"{{rotate:2, bootstrap:1}} -> {cost:.3f}s; additivity {checks}; "
                                f"ResNet20 estimate {static.seconds():.1f}s")
