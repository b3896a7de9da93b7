import numpy as np
import pytest

from slotpack.conv import channel_mask, conv_depthwise, encode_depthwise, encode_pointwise
from slotpack.convbn import (
    BnParams,
    bn_fold,
    build_fusion_matrix,
    build_fusion_plaintexts,
    convbn_fused,
    convbn_unfused,
)
from slotpack.errors import DepthExhausted, ShapeMismatch
from slotpack.oracle import bn_ref, dsc_ref, pointwise_ref
from slotpack.packing import PackLayout, pack, unpack

from conftest import layout, small_ctx


def random_bn(rng, c):
    return BnParams(rng.uniform(0.5, 1.5, c), rng.normal(size=c), rng.normal(size=c), rng.uniform(0.2, 2, c))


def both_paths(rng, t, d, pw, bn, stride=1):
    c, side = t.shape[0], t.shape[1]
    lin = layout(c, side)
    lout = PackLayout(lin.n_block * stride, 32, pw.shape[0], side // stride)
    ctx = small_ctx()
    dw = conv_depthwise(ctx, ctx.encrypt(pack(t, lin), 6), encode_depthwise(d, lin), lin)
    mark = ctx.ledger.copy()
    fused = convbn_fused(ctx, dw, build_fusion_matrix(pw, bn, lin, lout, stride))
    led_f = ctx.ledger.since(mark)
    mark = ctx.ledger.copy()
    unf = convbn_unfused(ctx, dw, encode_pointwise(pw, lin), bn, lin, lout, stride)
    led_u = ctx.ledger.since(mark)
    return (unpack(fused.slots, lout), dw.level - fused.level, led_f,
            unpack(unf.slots, lout), dw.level - unf.level, led_u)


def test_bn_fold_examples():
    bn = BnParams([2.0], [0.0], [0.0], [3.0], eps=1.0)
    assert bn_fold(np.array([[0.5]]), bn)[0, 0] == 0.5
    assert not bn_fold(np.ones((1, 3)), BnParams([0.0], [1.0], [0.0], [1.0])).any()
    z = bn_fold(np.array([[1.0]]), BnParams([1.0], [0.0], [0.0], [0.0], eps=1e-5))
    assert z[0, 0] == pytest.approx(1 / np.sqrt(1e-5), rel=1e-15)


def test_zeta_linear_in_gamma(rng):
    pw, bn = rng.normal(size=(4, 4)), random_bn(rng, 4)
    scaled = BnParams(bn.gamma * 3.0, bn.beta, bn.mean, bn.var)
    assert np.allclose(bn_fold(pw, scaled), 3.0 * bn_fold(pw, bn), rtol=1e-15, atol=0)


def test_bn_validation():
    with pytest.raises(ValueError):
        BnParams([1.0], [0.0], [0.0], [-1.0])
    with pytest.raises(ShapeMismatch):
        BnParams([1.0, 1.0], [0.0], [0.0], [1.0])


def test_fusion_plaintexts_examples(rng):
    lay = layout(1, 8)
    offsets, pts = build_fusion_plaintexts(np.eye(1), lay, lay)
    assert offsets == [0] and np.array_equal(pts[0].slots, channel_mask(lay, 0).slots)
    lay4 = layout(4, 8)
    _, pts = build_fusion_plaintexts(np.zeros((4, 4)), lay4, lay4)
    assert all(not p.slots.any() for p in pts)


@pytest.mark.parametrize("c", [2, 4, 8])
def test_fused_equals_unfused_and_oracle(rng, c):
    t = rng.uniform(-1, 1, size=(c, 8, 8))
    d, pw, bn = rng.normal(size=(c, 3, 3)), rng.normal(size=(c, c)), random_bn(rng, c)
    f, df, led_f, u, du, led_u = both_paths(rng, t, d, pw, bn)
    ref = bn_ref(dsc_ref(t, d, pw), bn.gamma, bn.beta, bn.mean, bn.var, bn.eps)
    assert np.max(np.abs(f - u)) <= 1e-9 and np.max(np.abs(f - ref)) <= 1e-9
    assert (df, du) == (1, 2)


def test_strided_fusion(rng):
    t = rng.uniform(-1, 1, size=(4, 8, 8))
    d, pw, bn = rng.normal(size=(4, 3, 3)), rng.normal(size=(8, 4)), random_bn(rng, 8)
    f, _, _, u, _, _ = both_paths(rng, t, d, pw, bn, stride=2)
    ref = bn_ref(dsc_ref(t, d, pw, 2), bn.gamma, bn.beta, bn.mean, bn.var, bn.eps)
    assert np.max(np.abs(f - ref)) <= 1e-9 and np.max(np.abs(u - ref)) <= 1e-9


def test_unit_bn_is_plain_pointwise(rng):
    t = rng.normal(size=(4, 8, 8))
    d, pw = rng.normal(size=(4, 3, 3)), rng.normal(size=(4, 4))
    f, df, _, u, du, _ = both_paths(rng, t, d, pw, BnParams.identity(4))
    assert np.max(np.abs(f - dsc_ref(t, d, pw))) <= 1e-12
    assert du - df == 1
    var = rng.uniform(0.5, 2, 4)
    bn = BnParams(np.sqrt(var + 1e-5), np.zeros(4), np.zeros(4), var)
    f, *_ = both_paths(rng, t, d, pw, bn)
    assert np.max(np.abs(f - dsc_ref(t, d, pw))) <= 1e-12


def test_identity_unfused_passthrough(rng):
    t = rng.normal(size=(4, 8, 8))
    lay = layout(4, 8)
    ctx = small_ctx()
    ct = ctx.encrypt(pack(t, lay), 4)
    out = convbn_unfused(ctx, ct, encode_pointwise(np.eye(4), lay), BnParams.identity(4), lay, lay)
    assert out.level == 2 and np.max(np.abs(unpack(out.slots, lay) - t)) <= 1e-12


def _distinct_cell_shifts(c, n):
    # input and output cells share one block layout; the gather shift between
    # cell (a, b) and cell (a', b') is (a - a', b - b')
    cells = [(ch // n, ch % n) for ch in range(c)]
    return len({(a - x, b - y) for a, b in cells for x, y in cells})


@pytest.mark.parametrize("c", [2, 4, 8])
def test_mult_delta_is_stable(rng, c):
    deltas = []
    for _ in range(2):
        t = rng.normal(size=(c, 8, 8))
        _, _, led_f, _, _, led_u = both_paths(rng, t, rng.normal(size=(c, 3, 3)), rng.normal(size=(c, c)),
                                              random_bn(rng, c))
        deltas.append(led_u["mul_pt"] - led_f["mul_pt"])
    assert deltas[0] == deltas[1] == 2 * c - _distinct_cell_shifts(c, 4)


def test_fused_depth_exhausted(rng):
    lay = layout(2, 8)
    ctx = small_ctx()
    fm = build_fusion_matrix(np.eye(2), BnParams.identity(2), lay, lay)
    with pytest.raises(DepthExhausted):
        convbn_fused(ctx, ctx.encrypt(np.zeros(1024), 0), fm)


def test_fold_then_apply_equals_apply_then_apply(rng):
    t, pw, bn = rng.normal(size=(3, 5, 5)), rng.normal(size=(4, 3)), random_bn(rng, 4)
    direct = bn_ref(pointwise_ref(t, pw), bn.gamma, bn.beta, bn.mean, bn.var)
    folded = pointwise_ref(t, bn_fold(pw, bn)) + (bn.beta - bn.mean * bn.alpha)[:, None, None]
    assert np.max(np.abs(direct - folded)) <= 1e-12
