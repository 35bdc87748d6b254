"""
Command-line interface: ``eulerflow {generate,train,eval,sample,bench,export-viz}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from . import datasets
from .exceptions import EulerFlowError
from .flow import HAAR, MODES, TORUS
from .rotations import euler_to_rotmat, rotmat_to_euler
from .training import (PRESETS, TrainConfig, bench, evaluate_ll, evaluate_pose, load_checkpoint,
                       model_card, preset, save_checkpoint, train)

logger = logging.getLogger("eulerflow")

DATA_KINDS = ("gimbal",) + datasets.SYNTHETIC_KINDS + ("conditional-toy",)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--json", action="store_true", help="print one JSON document to stdout")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $EULER_FLOW_THREADS or 1)")


def _add_train_flags(p):
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--layers", type=int)
    p.add_argument("--kernels", type=int)
    p.add_argument("--hidden", type=int, nargs="+")
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--eval-every", type=int)


def build_parser():
    parser = _Parser(prog="eulerflow", description="Euler-angle normalizing flows on SO(3).")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("generate", help="generate a dataset file")
    p.add_argument("--kind", choices=DATA_KINDS, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma-sq", type=float, default=0.1, help="gimbal: overall variance")
    p.add_argument("--sigma-phi-sq", type=float, default=0.1, help="gimbal: relative phi variance")
    p.add_argument("--train-n", type=int, default=60000)
    p.add_argument("--test-n", type=int, default=12000)
    p.add_argument("--classes", type=int, nargs="+", default=[1, 4],
                   help="conditional-toy: symmetry order of each class")
    p.add_argument("--csv", help="also export the dataset as CSV")
    _add_common(p)

    p = sub.add_parser("train", help="fit a flow to a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSON-lines training log")
    _add_train_flags(p)
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=MODES + ("both",), default="both")
    p.add_argument("--pose", action="store_true", help="also compute Acc@15/Acc@30/median error")
    p.add_argument("--n-candidates", type=int, default=512)
    p.add_argument("--max-items", type=int, default=None, help="limit test items")
    p.add_argument("--out", help="write the metrics report JSON here")
    _add_common(p)

    p = sub.add_parser("sample", help="draw rotations from a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--context", type=float, nargs="+", help="context vector for conditional models")
    p.add_argument("--out", required=True, help="CSV output")
    _add_common(p)

    p = sub.add_parser("bench", help="milliseconds per training iteration")
    p.add_argument("--data", help="dataset file (default: a small generated gimbal set)")
    p.add_argument("--iters", type=int, default=20)
    _add_train_flags(p)
    _add_common(p)

    p = sub.add_parser("export-viz", help="export rotations (and log-density) for SO(3) plotting")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("-n", type=int, default=2000, help="samples drawn from --model")
    p.add_argument("--context", type=float, nargs="+")
    p.add_argument("--split", choices=("train", "test", "all"), default="all")
    p.add_argument("--format", choices=("csv", "json"), default=None)
    _add_common(p)
    return parser


def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(os.environ.get("EULER_FLOW_THREADS", "1")))


def _train_config(args):
    cfg = asdict(preset(args.preset))
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(file_cfg) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in ("layers", "kernels", "hidden", "batch", "lr", "iterations", "eval_every", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    cfg["threads"] = _threads(args)
    try:
        return TrainConfig(**cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _emit(args, payload, text):
    if args.json:
        print(json.dumps(payload))
    else:
        print(text)


def cmd_generate(args):
    seed = 0 if args.seed is None else args.seed
    if args.kind == "gimbal":
        spec = datasets.GimbalSpec(args.sigma_sq, args.sigma_phi_sq, args.train_n, args.test_n, seed)
        ds = datasets.generate_gimbal(spec)
    elif args.kind == "conditional-toy":
        spec = datasets.SyntheticSpec(args.train_n, args.test_n, seed)
        ds = datasets.generate_conditional_toy(spec=spec, classes=args.classes)
    else:
        ds = datasets.generate_synthetic(args.kind, datasets.SyntheticSpec(args.train_n, args.test_n, seed))
    datasets.save(ds, args.out)
    if args.csv:
        ctx = None if ds.train_context is None else np.concatenate([ds.train_context, ds.test_context])
        datasets.export_csv(args.csv, np.concatenate([ds.train, ds.test]), ctx)
    _emit(args, {"path": args.out, "name": ds.name, "n_train": len(ds.train),
                 "n_test": len(ds.test), "context_width": ds.context_width},
          f"wrote {len(ds)} rotations ({len(ds.train)} train / {len(ds.test)} test) to {args.out}")
    return 0


def cmd_train(args):
    cfg = _train_config(args)
    ds = datasets.load(args.data)
    cfg.log_path = args.log
    logger.info("training %s on %s", asdict(cfg), args.data)
    model, history = train(cfg, ds)
    save_checkpoint(args.out, model, model.optimizer_, seed=cfg.seed, iteration=cfg.iterations,
                    extra={"data": args.data, "final_loss": history[-1]})
    with open(args.out + ".card.json", "w") as fh:
        json.dump(model_card(model), fh, indent=2)
    payload = {"checkpoint": args.out, "iterations": cfg.iterations, "final_loss": history[-1]}
    _emit(args, payload, f"trained {cfg.iterations} iterations, final loss {history[-1]:.4f}; "
                         f"saved {args.out}")
    return 0


def cmd_eval(args):
    model, _, _ = load_checkpoint(args.model)
    ds = datasets.load(args.data)
    R = ds.test[:args.max_items]
    ctx = None if ds.test_context is None else ds.test_context[:args.max_items]
    modes = MODES if args.mode == "both" else (args.mode,)
    report = {"test_ll": {m: evaluate_ll(model, R, ctx, mode=m) for m in modes},
              "n_test": int(len(R))}
    if args.pose:
        pose = evaluate_pose(model, R, ctx, n_candidates=args.n_candidates, rng=args.seed)
        report.update(acc15=pose.acc15, acc30=pose.acc30, median_error_deg=pose.median_error_deg)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)
    text = ", ".join(f"test LL ({m}) {v:.4f}" for m, v in report["test_ll"].items())
    if args.pose:
        text += (f"; Acc@15 {report['acc15']:.3f} Acc@30 {report['acc30']:.3f} "
                 f"median {report['median_error_deg']:.2f} deg")
    _emit(args, report, text)
    return 0


def _context_arg(model, values, n):
    if model.context_width == 0:
        if values:
            raise UsageError("model is unconditional; --context is not accepted")
        return None
    if not values or len(values) != model.context_width:
        raise UsageError(f"model needs --context with {model.context_width} values")
    return np.broadcast_to(np.asarray(values, dtype=float), (n, model.context_width))


def cmd_sample(args):
    if args.n < 1:
        raise UsageError("-n must be positive")
    model, _, _ = load_checkpoint(args.model)
    ctx = _context_arg(model, args.context, args.n)
    rng = np.random.default_rng(args.seed)
    x = model.sample_euler(args.n, ctx, rng)
    lp = model.log_prob(x, ctx)
    rows = datasets.export_csv(args.out, euler_to_rotmat(x), ctx, lp)
    _emit(args, {"path": args.out, "rows": rows}, f"wrote {rows} samples to {args.out}")
    return 0


def cmd_bench(args):
    cfg = _train_config(args)
    if args.iters < 10:
        raise UsageError("--iters must be at least 10")
    if args.data:
        ds = datasets.load(args.data)
    else:
        ds = datasets.generate_gimbal(datasets.GimbalSpec(train_n=4096, test_n=16, seed=cfg.seed))
    ms = bench(cfg, ds, n_iters=args.iters)
    payload = {"ms_per_iter": ms, "layers": cfg.layers, "kernels": cfg.kernels,
               "batch": cfg.batch, "hidden": list(cfg.hidden), "threads": cfg.threads,
               "iters": args.iters}
    _emit(args, payload, f"{ms:.2f} ms/iteration ({cfg.layers} layers, K={cfg.kernels}, "
                         f"batch {cfg.batch})")
    return 0


def cmd_export_viz(args):
    fmt = args.format or ("json" if args.out.endswith(".json") else "csv")
    if args.model:
        model, _, _ = load_checkpoint(args.model)
        ctx = _context_arg(model, args.context, args.n)
        x = model.sample_euler(args.n, ctx, np.random.default_rng(args.seed))
        R = euler_to_rotmat(x)
        lp = {m: model.log_prob(x, ctx, mode=m) for m in (TORUS, HAAR)}
    else:
        ds = datasets.load(args.data)
        parts = {"train": [(ds.train, ds.train_context)], "test": [(ds.test, ds.test_context)],
                 "all": [(ds.train, ds.train_context), (ds.test, ds.test_context)]}[args.split]
        R = np.concatenate([p[0] for p in parts])
        ctx = None if ds.context_width == 0 else np.concatenate([p[1] for p in parts])
        lp = None
    if fmt == "csv":
        rows = datasets.export_csv(args.out, R, ctx, None if lp is None else lp[TORUS])
    else:
        doc = {"schema": "rotations are row-major 3x3; euler is (omega, phi, kappa) in radians",
               "rotations": R.reshape(-1, 9).tolist(),
               "euler": rotmat_to_euler(R).tolist()}
        if ctx is not None:
            doc["context"] = np.asarray(ctx).tolist()
        if lp is not None:
            doc["log_density"] = {m: v.tolist() for m, v in lp.items()}
        with open(args.out, "w") as fh:
            json.dump(doc, fh)
        rows = len(R)
    _emit(args, {"path": args.out, "rows": int(rows), "format": fmt},
          f"exported {rows} rotations to {args.out}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "sample": cmd_sample,
    "bench": cmd_bench,
    "export-viz": cmd_export_viz,
}


def run(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        logging.basicConfig(level=logging.WARNING if args.json else logging.INFO,
                            stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:
        # --help
        return 0 if exc.code is None else int(exc.code)
    except (EulerFlowError, OSError, ValueError, KeyError) as exc:
        print(f"eulerflow: error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
