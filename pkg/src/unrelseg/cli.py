"""Command-line surface.

Subcommands: gen-data, train, eval, inspect-reliability, ablate-negatives.
Exit codes: 0 success, 1 validation error, 2 runtime failure.  The
environment variable U2PL_THREADS caps numerical worker threads (applied
before numpy loads, so it must be set when the process starts).
"""

import argparse
import json
import os
import sys


def _apply_thread_cap():
    cap = os.environ.get("U2PL_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


_apply_thread_cap()


class _Parser(argparse.ArgumentParser):
    # usage mistakes are validation errors -> exit code 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser():
    parser = _Parser(prog="unrelseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--regime", choices=["ss", "da", "ws"], default="ss")
    gen.add_argument("--scenes", type=int, default=24, help="train scenes")
    gen.add_argument("--val", type=int, default=8, help="validation scenes")
    gen.add_argument("--height", type=int, default=64)
    gen.add_argument("--width", type=int, default=64)
    gen.add_argument("--classes", type=int, default=6)
    gen.add_argument("--max-shapes", type=int, default=6)
    gen.add_argument("--noise-std", type=float, default=0.10)
    gen.add_argument("--jitter", type=float, default=0.12)
    gen.add_argument("--labeled-fraction", type=float, default=0.25)
    gen.add_argument("--shift-gains", default=None,
                     help="da channel gains as r,g,b (default 0.72,1.0,1.38)")
    gen.add_argument("--shift-brightness", type=float, default=None)
    gen.add_argument("--shift-noise", type=float, default=None)

    tr = sub.add_parser("train", help="run a training job")
    tr.add_argument("--config", default=None)
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", default=None)
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--regime", choices=["ss", "da", "ws"], default=None)
    tr.add_argument("--resume", default=None, help="checkpoint to resume from")
    tr.add_argument("--print-config", action="store_true")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on the val split")
    ev.add_argument("--data", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--model", choices=["teacher", "student"], default=None)

    ins = sub.add_parser("inspect-reliability",
                         help="entropy-partition diagnostics for a checkpoint")
    ins.add_argument("--data", required=True)
    ins.add_argument("--checkpoint", required=True)
    ins.add_argument("--alpha", type=float, default=0.2)
    ins.add_argument("--split", choices=["val", "unlabeled"], default="val")
    ins.add_argument("--model", choices=["teacher", "student"], default=None)

    ab = sub.add_parser("ablate-negatives",
                        help="compare unreliable/reliable/labeled-only training")
    ab.add_argument("--data", required=True)
    ab.add_argument("--config", default=None)
    ab.add_argument("--out", required=True)
    ab.add_argument("--seed", type=int, default=None)
    ab.add_argument("--seeds", default="0,1,2")
    return parser


def _load_config(args):
    from .config import RunConfig, parse_config, validate

    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    else:
        cfg = RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "regime", None) is not None:
        cfg.regime = args.regime
    return validate(cfg)


def cmd_gen_data(args):
    from .data import DEFAULT_SHIFT, SceneSpec, generate_dataset

    spec = SceneSpec(height=args.height, width=args.width, classes=args.classes,
                     max_shapes=args.max_shapes, noise_std=args.noise_std,
                     jitter=args.jitter)
    shift = None
    if args.regime == "da":
        shift = dict(DEFAULT_SHIFT)
        if args.shift_gains is not None:
            shift["channel_gain"] = [float(x) for x in args.shift_gains.split(",")]
        if args.shift_brightness is not None:
            shift["brightness"] = args.shift_brightness
        if args.shift_noise is not None:
            shift["extra_noise"] = args.shift_noise
    manifest = generate_dataset(
        args.out, args.seed, args.regime, spec=spec, n_train=args.scenes,
        n_val=args.val, labeled_fraction=args.labeled_fraction, shift=shift)
    print(json.dumps({
        "out": args.out,
        "labeled": len(manifest["labeled_ids"]),
        "unlabeled": len(manifest["unlabeled_ids"]),
        "val": len(manifest["val_ids"]),
    }))
    return 0


def cmd_train(args):
    from .config import render_config
    from .trainer import run

    cfg = _load_config(args)
    if args.print_config:
        print(render_config(cfg), end="")
        return 0
    if args.out is None:
        raise SystemExit("--out is required to train")
    summary = run(cfg, args.data, args.out, resume_from=args.resume)
    print(json.dumps(summary))
    return 0


def _load_eval_model(checkpoint, prefer):
    from . import tensorio
    from .model import params_from_tensors

    tensors = tensorio.load_checkpoint(checkpoint)
    has_teacher = "teacher.conv1.w" in tensors
    which = prefer or ("teacher" if has_teacher else "student")
    if which == "teacher" and not has_teacher:
        raise ValueError("checkpoint has no teacher parameters")
    return params_from_tensors(tensors, which)


def cmd_eval(args):
    from .data import load_manifest
    from .trainer import LoadedData, evaluate

    params = _load_eval_model(args.checkpoint, args.model)
    manifest = load_manifest(args.data)
    dataset = LoadedData(args.data, manifest, manifest["regime"])
    mean, per_class = evaluate(params, dataset)
    print(json.dumps({"val_miou": mean, "per_class_iou": [float(x) for x in per_class]}))
    return 0


def cmd_inspect_reliability(args):
    import numpy as np

    from .data import load_manifest, load_scene
    from .metrics import reliability_stats
    from .model import forward
    from .numerics import entropy, quantile_threshold

    params = _load_eval_model(args.checkpoint, args.model)
    manifest = load_manifest(args.data)
    ids = manifest["val_ids"] if args.split == "val" else manifest["unlabeled_ids"]
    if not ids:
        raise ValueError(f"dataset has no {args.split} scenes")

    probs = [forward(params, load_scene(args.data, i, with_label=False).image).prob
             for i in ids]
    pooled = np.concatenate([entropy(p, axis=-1).ravel() for p in probs])
    gamma = quantile_threshold(pooled, args.alpha)
    classes = int(manifest["spec"]["classes"])
    reliable = np.zeros(classes, dtype=int)
    unreliable = np.zeros(classes, dtype=int)
    for p in probs:
        stats = reliability_stats(p, gamma)
        reliable += stats["reliable"]
        unreliable += stats["unreliable"]
    total = int(reliable.sum() + unreliable.sum())
    print(json.dumps({
        "alpha": args.alpha,
        "gamma": gamma if np.isfinite(gamma) else None,
        "reliable_per_class": reliable.tolist(),
        "unreliable_per_class": unreliable.tolist(),
        "unreliable_fraction": float(unreliable.sum() / total),
    }))
    return 0


def cmd_ablate_negatives(args):
    from .bench import run_negative_ablation

    cfg = _load_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    results = run_negative_ablation(cfg, args.data, args.out, seeds=seeds)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=2)
    for name in ("unreliable", "reliable", "supervised"):
        row = results[name]
        scores = ", ".join(f"{x * 100:.2f}" for x in row["per_seed"])
        print(f"{name:<12} mean mIoU {row['mean'] * 100:6.2f}  (seeds: {scores})")
    print(f"unreliable - reliable   : {results['gap_unreliable_vs_reliable'] * 100:+.2f} points")
    print(f"unreliable - supervised : {results['gap_unreliable_vs_supervised'] * 100:+.2f} points")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "eval": cmd_eval,
        "inspect-reliability": cmd_inspect_reliability,
        "ablate-negatives": cmd_ablate_negatives,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(f"error: {exc.code}", file=sys.stderr)
            return 1
        raise
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
