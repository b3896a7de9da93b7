"""``slotpack`` command line.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 infeasible plan.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import act as act_mod
from .engine import HeContext, HeParams, OpLedger, estimate_cost
from .errors import InfeasiblePlan, SlotpackError
from .fileio import load_model, load_tensor, save_model
from .model import ResNetConfig, random_weights, zero_weights
from .netplan import (
    build_resnet20,
    compile_weights,
    cost_report,
    empty_plan,
    place_bootstraps,
    run_plan,
)
from .oracle import build_refnet, forward_ref, poly_activation
from .packing import PackLayout

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INFEASIBLE = 0, 1, 2, 3
PARAMS_ENV = "SLOTPACK_PARAMS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _he_params(args) -> HeParams:
    text = os.environ.get(PARAMS_ENV) or args.params
    try:
        return HeParams.parse(text)
    except (ValueError, TypeError) as e:
        raise UsageError(f"bad --params {text!r}: {e}") from None


def _emit(obj, out=None) -> None:
    json.dump(obj, out or sys.stdout, indent=2, default=float)
    (out or sys.stdout).write("\n")


def _model(args, need_weights: bool):
    """``(architecture, config, weights)`` from --model or the built-in ResNet20."""
    if args.model:
        manifest, cfg, weights = load_model(args.model, load_weights=need_weights and args.random_weights is None)
        arch = manifest.get("architecture", "resnet20")
    else:
        cfg, weights, arch = ResNetConfig.resnet20(args.width), {}, "resnet20"
    if getattr(args, "conv", None):
        cfg = replace(cfg, conv=args.conv)
    if args.random_weights is not None:
        weights = random_weights(cfg, args.random_weights)
    return arch, cfg, weights


def _plan(arch: str, cfg: ResNetConfig, he: HeParams):
    if arch == "empty":
        return empty_plan(PackLayout.for_map(cfg.f_max, cfg.in_channels, cfg.input_side), he)
    if arch != "resnet20":
        raise UsageError(f"unknown architecture {arch!r}")
    return place_bootstraps(build_resnet20(cfg), he)


def _sim_params(he: HeParams, cfg: ResNetConfig) -> HeParams:
    # a map packed into F_max < n_slots runs on the F_max-slot sub-ring
    if cfg.f_max > he.n_slots:
        raise UsageError(f"model needs {cfg.f_max} slots, parameters provide {he.n_slots}")
    return replace(he, n_slots=cfg.f_max)


def cmd_approx(args) -> int:
    b = args.interval_b
    if b <= 0:
        raise UsageError("--interval-b must be positive")
    if args.degree > 7 or args.degree < 0:
        raise UsageError("--degree must be between 0 and 7")
    pa = act_mod.approximate(args.function, args.degree, (-b, b), args.quad_order)
    _emit(pa.to_dict())
    return EXIT_OK


def cmd_init_model(args) -> int:
    cfg = ResNetConfig.resnet20(args.width, conv=args.conv, act_bound=args.interval_b,
                                act_degree=args.degree)
    weights = zero_weights(cfg) if args.random_weights is None else random_weights(cfg, args.random_weights)
    path = save_model(args.out, cfg, weights, args.architecture)
    _emit({"manifest": str(path), "weights": len(weights), "config": cfg.to_dict()})
    return EXIT_OK


def cmd_plan(args) -> int:
    he = _he_params(args)
    arch, cfg, _ = _model(args, need_weights=False)
    plan = _plan(arch, cfg, _sim_params(he, cfg))
    _emit(plan.to_dict())
    return EXIT_OK


def cmd_cost(args) -> int:
    he = _he_params(args)
    arch, cfg, _ = _model(args, need_weights=False)
    report = cost_report(_plan(arch, cfg, _sim_params(he, cfg)))
    _emit(report.to_dict())
    return EXIT_OK


def cmd_infer(args) -> int:
    he = _he_params(args)
    arch, cfg, weights = _model(args, need_weights=True)
    if arch != "resnet20":
        raise UsageError("inference needs a resnet20 model")
    plan = _plan(arch, cfg, _sim_params(he, cfg))
    inputs = [load_tensor(p) for p in args.input]
    for p, x in zip(args.input, inputs):
        if x.shape != (cfg.in_channels, cfg.input_side, cfg.input_side):
            raise SlotpackError(f"{p}: shape {x.shape} does not match the model input")
    compiled = compile_weights(plan, weights)

    def one(x):
        return run_plan(plan, x, weights, HeContext(plan.params), compiled)

    jobs = max(1, args.jobs)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(one, inputs))

    ref = build_refnet(cfg, weights, poly_activation(plan.act_coeffs)) if args.compare_oracle else None
    total = OpLedger()
    runs = []
    for path, x, (logits, report) in zip(args.input, inputs, results):
        measured = report.total("measured")
        total = total + measured
        run = {"input": str(path), "logits": logits.tolist(), "argmax": int(np.argmax(logits)),
               "ops": measured.as_dict(), "seconds": report.seconds("measured"),
               "bootstraps": measured["bootstrap"], "count_mismatches": report.mismatches()}
        if ref is not None:
            expect = forward_ref(ref, x)
            run["oracle_logits"] = expect.tolist()
            run["max_abs_diff"] = float(np.max(np.abs(expect - logits)))
            run["argmax_agrees"] = bool(np.argmax(expect) == np.argmax(logits))
        runs.append(run)
    seconds = estimate_cost(total, plan.params.cost_weights)
    _emit({"runs": runs, "jobs": jobs, "total_ops": total.as_dict(), "total_seconds": seconds,
           "amortized_seconds": seconds / len(runs)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slotpack", description="Packed-slot encrypted inference simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("approx", help="Legendre approximation of an activation")
    a.add_argument("--degree", type=int, default=5)
    a.add_argument("--interval-b", type=float, default=8.0)
    a.add_argument("--quad-order", type=int, default=64)
    a.add_argument("--function", choices=sorted(act_mod.ACTIVATIONS), default="silu")
    a.set_defaults(func=cmd_approx)

    def model_args(sp, with_conv=True):
        sp.add_argument("--model", help="manifest.json; defaults to the built-in ResNet20")
        sp.add_argument("--width", type=float, default=1.0, help="width multiplier without --model")
        sp.add_argument("--params", default="L=26,boot=14,slots=16384")
        sp.add_argument("--random-weights", type=int, metavar="SEED")
        if with_conv:
            sp.add_argument("--conv", choices=("traditional", "dsc"))

    for name, func, text in (("plan", cmd_plan, "place bootstraps and print the plan"),
                             ("cost", cmd_cost, "static operation counts and estimated time")):
        sp = sub.add_parser(name, help=text)
        model_args(sp)
        sp.set_defaults(func=func)

    i = sub.add_parser("infer", help="encrypted-simulation inference")
    model_args(i)
    i.add_argument("--input", nargs="+", required=True)
    i.add_argument("--compare-oracle", action="store_true")
    i.add_argument("--jobs", type=int, default=1)
    i.set_defaults(func=cmd_infer)

    m = sub.add_parser("init-model", help="write a manifest with zero or random weights")
    m.add_argument("--out", required=True)
    m.add_argument("--width", type=float, default=1.0)
    m.add_argument("--conv", choices=("traditional", "dsc"), default="dsc")
    m.add_argument("--random-weights", type=int, metavar="SEED")
    m.add_argument("--interval-b", type=float, default=8.0)
    m.add_argument("--degree", type=int, default=5)
    m.add_argument("--architecture", choices=("resnet20", "empty"), default="resnet20")
    m.set_defaults(func=cmd_init_model)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"slotpack: {e}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasiblePlan as e:
        print(f"slotpack: infeasible plan: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SlotpackError, OSError, KeyError, ValueError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"slotpack: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
