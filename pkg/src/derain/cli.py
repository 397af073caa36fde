"""Command-line entry point.

Subcommands: synth, train, derain, eval, rf-check, grad-check,
param-audit. Values resolve built-in defaults < config file (--config,
key = value lines) < command-line flags, and every run prints its
effective configuration so it can be reproduced exactly.

Exit codes: 0 success, 2 usage error, 3 a declared check failed,
4 I/O error, 5 invalid configuration.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import rainsim
from .blocks import Conv2d, make_cell, weight_param_count
from .checkpoint import load_checkpoint, load_config_kv, save_config_kv
from .gradcheck import model_grad_check
from .metrics import write_report_csv
from .model import (Rescan, RescanConfig, ScanConfig, config_from_dict,
                    config_to_dict, empirical_receptive_field,
                    receptive_field)
from .rainsim import DatasetSpec, load_pairs, make_dataset
from .tensor import ShapeError
from .train import TrainConfig, derain_image, evaluate, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 3
EXIT_IO = 4
EXIT_CONFIG = 5


def _print_effective(args, keys):
    print("effective-config:")
    for k in sorted(keys):
        print(f"  {k} = {getattr(args, k)}")


def _merge_config_file(args, parser):
    """Apply config-file values for flags the user did not set."""
    if not getattr(args, "config", None):
        return
    file_vals = load_config_kv(args.config)
    defaults = {}
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            sub = action.choices.get(args.command)
            if sub is not None:
                defaults.update({a.dest: a.default for a in sub._actions})
        else:
            defaults[action.dest] = action.default
    for key, val in file_vals.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            continue
        if getattr(args, dest) != defaults.get(dest):
            continue  # explicit flag wins
        cur = defaults.get(dest)
        if isinstance(cur, bool):
            val = str(val).lower() in ("true", "1", "yes")
        elif isinstance(cur, int):
            val = int(val)
        elif isinstance(cur, float):
            val = float(val)
        setattr(args, dest, val)


def _model_config_from_args(args):
    width = args.width
    use_se = not args.no_se
    sc = ScanConfig(depth=args.depth, width=width, use_se=use_se,
                    all_dilation_one=args.plain, se_ratio=args.se_ratio)
    if args.arch == "scan":
        return RescanConfig(scan=sc, stages=1, unit=None, framework="iter")
    unit = None if args.unit in (None, "none") else args.unit
    return RescanConfig(scan=sc, stages=args.stages, unit=unit,
                        framework=args.framework)


def _add_model_flags(p):
    p.add_argument("--arch", choices=["scan", "rescan"], default="scan")
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--stages", type=int, default=2)
    p.add_argument("--unit", choices=["none", "rnn", "gru", "lstm"],
                   default="gru")
    p.add_argument("--framework", choices=["iter", "additive", "full"],
                   default="full")
    p.add_argument("--no-se", action="store_true",
                   help="disable SE channel reweighting (ablation)")
    p.add_argument("--plain", action="store_true",
                   help="force all dilations to 1 (ablation)")
    p.add_argument("--se-ratio", type=int, default=4)


# -- subcommands ------------------------------------------------------------

def cmd_synth(args):
    spec = DatasetSpec(count=args.pairs, size=args.size, model=args.model,
                       seed=args.seed, layers_per_scene=args.layers)
    manifest = make_dataset(spec, args.out)
    print(f"wrote {spec.count} pairs to {args.out} (manifest: {manifest})")
    return EXIT_OK


def cmd_train(args):
    cfg = _model_config_from_args(args)
    model = Rescan(cfg, seed=args.seed)
    pairs = load_pairs(args.data)
    test_pairs = load_pairs(args.eval_data) if args.eval_data else None
    tc = TrainConfig(patch_size=args.patch_size,
                     patches_per_image=args.patches_per_image,
                     batch_size=args.batch, iterations=args.iterations,
                     lr=args.lr,
                     lr_drops=tuple(int(x) for x in args.drops.split(",")
                                    if x.strip()),
                     seed=args.seed, checkpoint_every=args.checkpoint_every,
                     eval_every=args.eval_every)
    _, log = train(model, pairs, tc, test_pairs=test_pairs, out_dir=args.out)
    print(f"trained {tc.iterations} iterations; parameters: "
          f"{model.param_count()}")
    if log.losses:
        print(f"final loss {log.losses[-1]:.6f}")
    for it, p, s in log.evals:
        print(f"eval @ {it}: psnr {p:.3f} dB, ssim {s:.4f}")
    print(f"checkpoint: {Path(args.out) / 'checkpoint_final.bin'}")
    return EXIT_OK


def _load_model(checkpoint_path):
    ckpt = Path(checkpoint_path)
    cfg_path = ckpt.with_suffix(".cfg")
    if not cfg_path.exists():
        raise FileNotFoundError(f"model config {cfg_path} not found next to "
                                f"checkpoint {ckpt}")
    cfg = config_from_dict(load_config_kv(cfg_path))
    model = Rescan(cfg)
    model.load_state_dict(load_checkpoint(ckpt))
    return model


def cmd_derain(args):
    model = _load_model(args.checkpoint)
    inputs = []
    for item in args.inputs:
        p = Path(item)
        if p.is_dir():
            inputs += sorted(p.glob("*_rain.png")) or sorted(p.glob("*.png"))
        else:
            inputs.append(p)
    if not inputs:
        print("no input images found", file=sys.stderr)
        return EXIT_IO
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in inputs:
        rainy = rainsim.decode_image_png(path)
        background, result = derain_image(model, rainy)
        rainsim.encode_image_png(background, out / f"{path.stem}_derained.png")
        if args.raw:
            np.save(out / f"{path.stem}_derained.npy", background)
        if args.dump_stages:
            for s, pred in enumerate(result.stage_streaks):
                from .train import batch_to_image
                rainsim.encode_residual_png(
                    batch_to_image(pred.data),
                    out / f"{path.stem}_stage{s + 1}.png")
    print(f"derained {len(inputs)} images into {out}")
    return EXIT_OK


def cmd_eval(args):
    model = _load_model(args.checkpoint)
    pairs = load_pairs(args.data)
    report, baseline = evaluate(model, pairs)
    print(f"{'image':<12} {'psnr':>8} {'ssim':>8}")
    for name, p, s in report.rows:
        print(f"{name:<12} {p:8.3f} {s:8.4f}")
    print(f"{'mean':<12} {report.mean_psnr:8.3f} {report.mean_ssim:8.4f}")
    print(f"{'baseline':<12} {baseline.mean_psnr:8.3f} "
          f"{baseline.mean_ssim:8.4f}")
    if args.out:
        write_report_csv(report, args.out)
        print(f"csv written to {args.out}")
    return EXIT_OK


def cmd_rf_check(args):
    analytic = receptive_field(args.depth)
    empirical = empirical_receptive_field(args.depth,
                                          all_dilation_one=args.plain)
    if args.plain:
        print(f"depth {args.depth} (all dilations 1): analytic dilated "
              f"{analytic}, empirical {empirical}")
        ok = empirical < analytic or args.depth == 4
    else:
        print(f"depth {args.depth}: analytic {analytic}, "
              f"empirical {empirical}")
        ok = empirical == analytic
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_grad_check(args):
    cfg = _model_config_from_args(args)
    report = model_grad_check(cfg, n_params=args.n_params, seed=args.seed)
    print(report)
    ok = report.passed(args.tol)
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_param_audit(args):
    # each gate pairs an input-to-state kernel with a state-to-state
    # kernel, so the exact multipliers vs one plain conv are 2/6/8
    ch = args.channels
    plain = Conv2d(ch, ch, 3)
    cell = make_cell(args.unit, ch, ch)
    ratio = weight_param_count(cell) / weight_param_count(plain)
    gates = {"rnn": 1, "gru": 3, "lstm": 4}[args.unit]
    expected = 2 * gates
    print(f"unit {args.unit}: {weight_param_count(cell)} weights vs plain "
          f"{weight_param_count(plain)} ({gates} gate(s) x 2 kernels), "
          f"ratio {ratio:.3f} (expected {expected})")
    ok = ratio == expected
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# -- parser -----------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="derain", description="single-image deraining toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic rain dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=25)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--model", choices=["eq1", "eq2", "eq3"], default="eq3")
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a deraining model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eval-data", default=None)
    _add_model_flags(p)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--drops", default="1200,1700")
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--patches-per-image", type=int, default=100)
    p.add_argument("--checkpoint-every", type=int, default=500)
    p.add_argument("--eval-every", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("derain", help="remove rain from images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-stages", action="store_true")
    p.add_argument("--raw", action="store_true",
                   help="also write float32 .npy outputs")
    p.add_argument("--config", default=None)
    p.add_argument("inputs", nargs="+", help="input images or directories")
    p.set_defaults(func=cmd_derain)

    p = sub.add_parser("eval", help="PSNR/SSIM on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="CSV output path")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rf-check", help="receptive field: analytic vs probe")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--plain", action="store_true")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_rf_check)

    p = sub.add_parser("grad-check", help="finite-difference gradient audit")
    _add_model_flags(p)
    p.add_argument("--n-params", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("param-audit", help="recurrent-unit parameter ratios")
    p.add_argument("--unit", choices=["rnn", "gru", "lstm"], required=True)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_param_audit)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _merge_config_file(args, parser)
    skip = {"func", "command", "config"}
    _print_effective(args, [k for k in vars(args) if k not in skip])
    try:
        return args.func(args)
    except (FileNotFoundError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ShapeError, KeyError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
