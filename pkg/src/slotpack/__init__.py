"""Simulated packed-slot homomorphic inference for ResNet-style networks."""

from .act import PolyApprox, approximate, eval_poly_ct, legendre_coeffs, legendre_eval, silu, to_monomial
from .conv import conv_depthwise, conv_pointwise_unfused, conv_traditional, predict_counts
from .convbn import BnParams, build_fusion_matrix, convbn_fused, convbn_unfused
from .engine import TABLE_I_WEIGHTS, CtVec, HeContext, HeParams, OpLedger, PtVec, estimate_cost
from .errors import *  # noqa: F401,F403
from .model import ResNetConfig, random_weights
from .netplan import (
    CostReport,
    LayerSpec,
    NetworkPlan,
    build_resnet20,
    cost_report,
    place_bootstraps,
    run_plan,
)
from .packing import PackLayout, block_param, pack, unpack

__version__ = "0.1.0"
