"""Command-line front end.

Subcommands: ``summarize`` (cost table), ``infer`` (run the network on a
tensor file), ``memory-plan`` (per-resolution materialization table) and
``theory`` (collapse / spiral / activations experiments).  Every command
is deterministic given its full flag set; all randomness comes from
explicit seeds.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 internal
invariant violation.  ``BTN_THREADS`` caps BLAS worker threads; it must
be read before numpy loads, which is why the heavy imports live inside
the command handlers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

FORMATS = ("csv", "json", "table")


def _apply_thread_env() -> None:
    value = os.environ.get("BTN_THREADS")
    if value is None:
        return
    if not value.isdigit() or int(value) < 1:
        raise _usage(f"BTN_THREADS must be a positive integer, got {value!r}")
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, value)


def _usage(msg: str):
    from .errors import UsageError

    return UsageError(msg)


def _check_model_flags(alpha: float, res: int, classes: int) -> None:
    from .model import (
        MAX_RESOLUTION,
        MAX_WIDTH_MULTIPLIER,
        MIN_RESOLUTION,
        MIN_WIDTH_MULTIPLIER,
    )

    if not MIN_WIDTH_MULTIPLIER <= alpha <= MAX_WIDTH_MULTIPLIER:
        raise _usage(
            f"--alpha must be in [{MIN_WIDTH_MULTIPLIER}, {MAX_WIDTH_MULTIPLIER}], "
            f"got {alpha}"
        )
    if not (MIN_RESOLUTION <= res <= MAX_RESOLUTION and res % 32 == 0):
        raise _usage(
            f"--res must be a multiple of 32 in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], "
            f"got {res}"
        )
    if classes < 1:
        raise _usage(f"--classes must be >= 1, got {classes}")


def _emit(text: str) -> None:
    sys.stdout.write(text)
    if not text.endswith("\n"):
        sys.stdout.write("\n")


def _csv_lines(header: list[str], rows: list[list[str]], comments: list[str] = ()) -> str:
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(header))
    lines.extend(",".join(row) for row in rows)
    return "\n".join(lines) + "\n"


def _table_lines(header: list[str], rows: list[list[str]]) -> str:
    widths = [
        max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
        for i in range(len(header))
    ]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    lines = [fmt.format(*header)]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend(fmt.format(*r) for r in rows)
    return "\n".join(lines) + "\n"


def _json_dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def cmd_summarize(args) -> int:
    from .costs import model_cost
    from .model import ModelSpec

    _check_model_flags(args.alpha, args.res, args.classes)
    report = model_cost(ModelSpec(resolution=args.res, width_multiplier=args.alpha,
                                  classes=args.classes))
    if args.format == "json":
        payload = {
            "command": "summarize",
            "alpha": args.alpha,
            "resolution": args.res,
            "classes": args.classes,
            "layers": [
                {
                    "name": r.name,
                    "out_h": r.out_shape[0],
                    "out_w": r.out_shape[1],
                    "out_c": r.out_shape[2],
                    "madds": r.madds,
                    "params": r.params,
                    "bias_params": r.bias_params,
                }
                for r in report.rows
            ],
            "totals": {
                "madds": report.total_madds,
                "params": report.total_params,
                "bias_params": report.total_bias_params,
            },
        }
        _emit(_json_dump(payload))
        return 0
    header = ["name", "out_h", "out_w", "out_c", "madds", "params", "bias_params"]
    rows = [
        [r.name, str(r.out_shape[0]), str(r.out_shape[1]), str(r.out_shape[2]),
         str(r.madds), str(r.params), str(r.bias_params)]
        for r in report.rows
    ]
    rows.append(["total", "", "", "", str(report.total_madds),
                 str(report.total_params), str(report.total_bias_params)])
    if args.format == "csv":
        _emit(_csv_lines(header, rows))
    else:
        _emit(_table_lines(header, rows))
    return 0


def cmd_memory_plan(args) -> int:
    from .memplan import CascadePlan, block_graph, cascade_peak_bytes, memory_table
    from .model import ModelSpec, build_model

    _check_model_flags(args.alpha, args.res, args.classes)
    if args.act_bits not in (16, 32):
        raise _usage(f"--act-bits must be 16 or 32, got {args.act_bits}")
    if args.split is not None and args.split < 1:
        raise _usage(f"--split must be >= 1, got {args.split}")
    bpa = args.act_bits // 8
    spec = ModelSpec(resolution=args.res, width_multiplier=args.alpha,
                     classes=args.classes)
    report = memory_table(spec, bytes_per_activation=bpa)
    if args.dump_graph is not None:
        with open(args.dump_graph, "w") as fp:
            block_graph(spec, bytes_per_activation=bpa).dump_jsonl(fp)
    first_block = None
    if args.split is not None:
        block = build_model(spec).bottleneck_layers()[0]
        p = block.params
        h = -(-spec.resolution // 2)  # stem output resolution
        split = min(args.split, p.expanded_channels)
        plan = CascadePlan.from_split(p.expanded_channels, split)
        first_block = {
            "split": split,
            "peak_bytes": cascade_peak_bytes(p, h, h, plan, bytes_per_activation=bpa),
        }
    if args.format == "json":
        payload = {
            "command": "memory-plan",
            "alpha": args.alpha,
            "resolution": args.res,
            "act_bits": args.act_bits,
            "rows": [
                {
                    "resolution": r.resolution,
                    "channels": r.channels,
                    "bytes": r.nbytes,
                    "kilobytes": round(r.kilobytes, 3),
                    "streamed": r.streamed,
                }
                for r in report.rows
            ],
            "peak_bytes": report.peak_bytes,
            "peak_kilobytes": round(report.peak_kilobytes, 3),
            "first_block_cascade": first_block,
        }
        _emit(_json_dump(payload))
        return 0
    header = ["resolution", "channels", "kilobytes", "streamed"]
    rows = [
        [str(r.resolution), str(r.channels), f"{r.kilobytes:.3f}",
         "yes" if r.streamed else "no"]
        for r in report.rows
    ]
    rows.append(["max", "", f"{report.peak_kilobytes:.3f}", ""])
    if first_block is not None:
        rows.append([f"first-block split={first_block['split']}", "",
                     f"{first_block['peak_bytes'] / 1000.0:.3f}", ""])
    if args.format == "csv":
        _emit(_csv_lines(header, rows))
    else:
        _emit(_table_lines(header, rows))
    return 0


def _load_or_random_model(args):
    from .model import ModelSpec, build_model
    from .tensor import Rng
    from .weights import load_weights

    spec = ModelSpec(resolution=args.res, width_multiplier=args.alpha,
                     classes=args.classes)
    model = build_model(spec)
    if args.weights is not None:
        load_weights(model, args.weights)
    else:
        model.randomize(Rng(args.seed))
    return model


def cmd_infer(args) -> int:
    import numpy as np

    from .memplan import CascadePlan, cascade_execute
    from .tensor import Rng, load_tensor, random_gaussian, save_tensor

    _check_model_flags(args.alpha, args.res, args.classes)
    if args.weights is None and not args.random_weights:
        raise _usage("provide --weights PATH or --random-weights")
    if args.input is None and not args.random_input:
        raise _usage("provide --input PATH or --random-input")
    if args.split is not None and args.split < 1:
        raise _usage(f"--split must be >= 1, got {args.split}")
    model = _load_or_random_model(args)
    if args.input is not None:
        x = load_tensor(args.input)
        if x.shape[1:] != model.input_shape:
            raise _usage(
                f"input tensor shape {x.shape[1:]} does not match --res {args.res}"
            )
    else:
        x = random_gaussian((1, args.res, args.res, 3), Rng(args.input_seed))
    runner = None
    if args.split is not None:
        def runner(t, p, _s=args.split):
            plan = CascadePlan.from_split(p.expanded_channels,
                                          min(_s, p.expanded_channels))
            return cascade_execute(t, p, plan)[0]
    logits = model.forward(x, block_runner=runner)
    save_tensor(args.out, logits)
    flat = logits[0].reshape(-1)
    top5 = [int(i) for i in np.argsort(-flat, kind="stable")[:5]]
    if args.format == "json":
        payload = {
            "command": "infer",
            "logits": str(args.out),
            "top5": top5,
            "top5_values": [float(f"{flat[i]:.6g}") for i in top5],
        }
        _emit(_json_dump(payload))
    elif args.format == "csv":
        _emit(_csv_lines(["rank", "class", "logit"],
                         [[str(k), str(i), f"{flat[i]:.6g}"]
                          for k, i in enumerate(top5)]))
    else:
        _emit("top5: " + " ".join(str(i) for i in top5))
    return 0


def cmd_theory_collapse(args) -> int:
    from .theory import relu_preserved_fraction, relu_preserved_fraction_mc

    if args.n < 1 or args.m < args.n:
        raise _usage(f"need 1 <= n <= m, got n={args.n}, m={args.m}")
    if args.trials < 1:
        raise _usage(f"--trials must be >= 1, got {args.trials}")
    exact = relu_preserved_fraction(args.n, args.m)
    mc = relu_preserved_fraction_mc(args.n, args.m, args.trials, args.seed)
    if args.format == "json":
        _emit(_json_dump({
            "command": "theory-collapse",
            "n": args.n,
            "m": args.m,
            "trials": args.trials,
            "seed": args.seed,
            "preserved_mc": mc,
            "preserved_exact": exact,
            "collapsed_mc": 1.0 - mc,
            "collapsed_exact": 1.0 - exact,
        }))
        return 0
    header = ["n", "m", "trials", "preserved_mc", "preserved_exact"]
    rows = [[str(args.n), str(args.m), str(args.trials),
             f"{mc:.6f}", f"{exact:.6f}"]]
    if args.format == "csv":
        _emit(_csv_lines(header, rows, comments=[f"seed={args.seed}"]))
    else:
        _emit(_table_lines(header, rows))
    return 0


def cmd_theory_spiral(args) -> int:
    from .theory import spiral_experiment

    try:
        dims = [int(d) for d in args.dims.split(",") if d]
    except ValueError:
        raise _usage(f"--dims must be a comma-separated integer list, got {args.dims!r}")
    if not dims or any(d < 2 for d in dims):
        raise _usage(f"--dims entries must be >= 2, got {args.dims!r}")
    errors = spiral_experiment(dims, args.seed, points=args.points)
    if args.format == "json":
        _emit(_json_dump({
            "command": "theory-spiral",
            "seed": args.seed,
            "points": args.points,
            "dims": dims,
            "errors": {str(n): errors[n] for n in dims},
        }))
        return 0
    header = ["n", "mse"]
    rows = [[str(n), f"{errors[n]:.6e}"] for n in dims]
    if args.format == "csv":
        _emit(_csv_lines(header, rows,
                         comments=[f"seed={args.seed}", f"points={args.points}"]))
    else:
        _emit(_table_lines(header, rows))
    return 0


def cmd_theory_activations(args) -> int:
    from .tensor import Rng, random_gaussian
    from .theory import activation_pattern_stats

    _check_model_flags(args.alpha, args.res, args.classes)
    if args.batch < 1:
        raise _usage(f"--batch must be >= 1, got {args.batch}")
    model = _load_or_random_model(args)
    batch = random_gaussian((args.batch, args.res, args.res, 3),
                            Rng(args.input_seed))
    stats = activation_pattern_stats(model, batch, per_location=not args.per_map)
    if args.format == "json":
        _emit(_json_dump({
            "command": "theory-activations",
            "alpha": args.alpha,
            "resolution": args.res,
            "seed": args.seed,
            "input_seed": args.input_seed,
            "batch": args.batch,
            "weights": args.weights,
            "per_location": stats.per_location,
            "layers": [
                {
                    "index": l.index,
                    "name": l.name,
                    "channels": l.channels,
                    "threshold": l.threshold,
                    "min_count": l.min_count,
                    "mean_count": l.mean_count,
                    "max_count": l.max_count,
                    "mean_fraction": l.mean_fraction,
                }
                for l in stats.layers
            ],
        }))
        return 0
    header = ["index", "name", "channels", "threshold", "min", "mean", "max",
              "mean_fraction"]
    rows = [
        [str(l.index), l.name, str(l.channels), f"{l.threshold:.1f}",
         f"{l.min_count:.1f}", f"{l.mean_count:.3f}", f"{l.max_count:.1f}",
         f"{l.mean_fraction:.4f}"]
        for l in stats.layers
    ]
    if args.format == "csv":
        _emit(_csv_lines(header, rows,
                         comments=[f"seed={args.seed}", f"input_seed={args.input_seed}"]))
    else:
        _emit(_table_lines(header, rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bottlenet",
        description="Inverted-residual network inference, cost and theory tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_flags(p):
        p.add_argument("--alpha", type=float, default=1.0, help="width multiplier")
        p.add_argument("--res", type=int, default=224, help="input resolution")
        p.add_argument("--classes", type=int, default=1000)

    p = sub.add_parser("summarize", help="per-layer multiply-adds and parameters")
    add_model_flags(p)
    p.add_argument("--format", choices=FORMATS, default="table")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("memory-plan", help="per-resolution materialized memory")
    add_model_flags(p)
    p.add_argument("--split", type=int, default=None,
                   help="channel-split factor for the first block")
    p.add_argument("--act-bits", type=int, default=16, choices=(16, 32))
    p.add_argument("--dump-graph", default=None, metavar="PATH",
                   help="write the block-granular compute graph as JSON lines")
    p.add_argument("--format", choices=FORMATS, default="table")
    p.set_defaults(func=cmd_memory_plan)

    p = sub.add_parser("infer", help="run the network on a tensor file")
    add_model_flags(p)
    p.add_argument("--weights", default=None, help="weight container path")
    p.add_argument("--random-weights", action="store_true")
    p.add_argument("--seed", type=int, default=0, help="weight seed")
    p.add_argument("--input", default=None, help="input tensor path")
    p.add_argument("--random-input", action="store_true")
    p.add_argument("--input-seed", type=int, default=1)
    p.add_argument("--split", type=int, default=None,
                   help="run blocks via t-way channel split")
    p.add_argument("--out", default="logits.bten")
    p.add_argument("--format", choices=FORMATS, default="table")
    p.set_defaults(func=cmd_infer)

    theory = sub.add_parser("theory", help="numerical experiments")
    tsub = theory.add_subparsers(dest="experiment", required=True)

    p = tsub.add_parser("collapse", help="Monte Carlo sign-pattern preservation")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--trials", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=FORMATS, default="table")
    p.set_defaults(func=cmd_theory_collapse)

    p = tsub.add_parser("spiral", help="spiral embed/rectify/invert errors")
    p.add_argument("--dims", default="2,3,15,30")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--format", choices=FORMATS, default="table")
    p.set_defaults(func=cmd_theory_spiral)

    p = tsub.add_parser("activations", help="positive-channel statistics")
    add_model_flags(p)
    p.add_argument("--weights", default=None)
    p.add_argument("--seed", type=int, default=5, help="weight seed")
    p.add_argument("--input-seed", type=int, default=6)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--per-map", action="store_true",
                   help="count a channel once per image instead of per location")
    p.add_argument("--format", choices=FORMATS, default="table")
    p.set_defaults(func=cmd_theory_activations)

    return parser


def main(argv=None) -> int:
    from .errors import (
        BottlenetError,
        InternalError,
        TensorFormatError,
        UsageError,
        WeightFormatError,
    )

    try:
        _apply_thread_env()
        parser = build_parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TensorFormatError, WeightFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except InternalError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4
    except BottlenetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
