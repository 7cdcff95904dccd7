"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 input/parse error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from . import bench, recsys
from .seeding import derive_seed
from .tc import InfeasibleRankError, TcConfig, numerical_rank, tc_fit, tc_predict
from .tmf import TmfConfig, read_kv_file, tmf_fit
from .tropical import MatrixParseError, NonFiniteInputError, read_matrix, write_matrix

logger = logging.getLogger("tropfact")

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return value


def nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {value}")
    return value


def positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def float_list(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def int_list(text: str) -> List[int]:
    text = text.split("=", 1)[1] if "=" in text else text
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def shape_arg(text: str):
    parts = text.lower().replace("x", ",").split(",")
    try:
        shape = tuple(int(x) for x in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected n,r,p, got {text!r}") from None
    if len(shape) != 3 or min(shape) < 1:
        raise argparse.ArgumentTypeError("shape needs three positive integers n,r,p")
    return shape


VARIANT_CHOICES = ["gd", "gdmn", "gdan-zm", "gdan-nzm"]


def _common(parser: argparse.ArgumentParser, out_default: str) -> None:
    g = parser.add_argument_group("global")
    g.add_argument("--seed", type=nonneg_int, default=0, help="master seed")
    g.add_argument("--out", default=out_default, help="output path")
    g.add_argument("--format", choices=["json", "csv"], default="json", help="summary format")
    g.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging level")
    g.add_argument("--config", default=None,
                   help="flat key=value file supplying any flag; command-line flags win")


def _descent(parser: argparse.ArgumentParser, alpha: float) -> None:
    parser.add_argument("--variant", type=str.lower, choices=VARIANT_CHOICES, default="gdmn")
    parser.add_argument("--alpha", type=positive_float, default=alpha, help="step size")
    parser.add_argument("--eps", default="sched",
                        help="off-maximizer weight: a constant or 'sched' for 9/(500+k)")
    parser.add_argument("--noise-scale", type=float, default=0.1,
                        help="GDAN noise amplitude multiplier")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="tropfact", formatter_class=fmt,
                                     description="Tropical matrix factorization and compression")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("factorize", formatter_class=fmt, help="fit Y ~ A (max-plus) B")
    p.add_argument("input", help="matrix CSV (-inf allowed)")
    p.add_argument("--r", type=positive_int, required=True, help="inner dimension")
    _descent(p, 0.01)
    p.add_argument("--iters", type=nonneg_int, default=3000)
    p.add_argument("--patience", type=nonneg_int, default=0, help="0 disables early stopping")
    p.add_argument("--mask", default=None, help="0/1 CSV of observed cells")
    p.add_argument("--init", default=None, help="directory holding A.csv and B.csv")
    _common(p, "tmf_out")

    p = sub.add_parser("compress", formatter_class=fmt, help="fit Y ~ A (max-plus) (B X)")
    p.add_argument("input", help="matrix CSV")
    p.add_argument("--m", type=positive_int, required=True, help="number of tropical terms")
    p.add_argument("--p", type=positive_int, required=True, help="compressed dimension")
    _descent(p, 0.01)
    p.add_argument("--iters", type=nonneg_int, default=3000)
    p.add_argument("--patience", type=nonneg_int, default=0)
    p.add_argument("--mask", default=None, help="0/1 CSV of observed cells")
    _common(p, "tc_out")

    p = sub.add_parser("generate", formatter_class=fmt, help="write a synthetic instance")
    p.add_argument("--kind", choices=["tmf", "tc"], default="tmf")
    p.add_argument("--shape", type=shape_arg, default=(10, 5, 11),
                   help="n,r,p for tmf; tc uses --n --m --p --N instead")
    p.add_argument("--a", type=float, default=0.0, help="noise amplitude (tmf)")
    p.add_argument("--n", type=positive_int, default=8)
    p.add_argument("--m", type=positive_int, default=4)
    p.add_argument("--p", type=positive_int, default=2)
    p.add_argument("--N", type=positive_int, default=20)
    _common(p, "Y.csv")

    b = sub.add_parser("bench", formatter_class=fmt, help="synthetic benchmarks")
    bsub = b.add_subparsers(dest="bench_command", required=True)
    p = bsub.add_parser("table1", formatter_class=fmt, help="algorithm comparison over noise levels")
    p.add_argument("--a", type=float_list, default=[0.01, 0.1, 0.5], help="noise amplitudes")
    p.add_argument("--shape", type=shape_arg, default=(10, 5, 11), help="n,r,p")
    p.add_argument("--algorithms", default="gd,gdmn,gdan-zm,gdan-nzm")
    p.add_argument("--trials", type=positive_int, default=10)
    p.add_argument("--iters", type=nonneg_int, default=3000)
    p.add_argument("--alpha", type=positive_float, default=bench.BENCH_ALPHA)
    p.add_argument("--noise-scale", type=float, default=bench.BENCH_NOISE_SCALE)
    p.add_argument("--jobs", type=positive_int, default=1, help="parallel trials")
    _common(p, "report.json")
    p = bsub.add_parser("curves", formatter_class=fmt, help="GDMN error curves for several eps")
    p.add_argument("--eps", default="0,0.01,0.1,sched", help="comma list; 'sched' = 9/(500+k)")
    p.add_argument("--a", type=float, default=0.1)
    p.add_argument("--shape", type=shape_arg, default=(10, 5, 11), help="n,r,p")
    p.add_argument("--iters", type=nonneg_int, default=3000)
    p.add_argument("--alpha", type=positive_float, default=0.01)
    _common(p, "curves.csv")

    rs = sub.add_parser("recsys", formatter_class=fmt, help="MovieLens implicit-feedback runs")
    rsub = rs.add_subparsers(dest="recsys_command", required=True)
    p = rsub.add_parser("eval", formatter_class=fmt, help="fit and evaluate RMS / HR@10")
    p.add_argument("--dataset", choices=sorted(recsys.FORMATS), default="ml100k")
    p.add_argument("--path", default=None,
                   help="ratings file or directory (default: $MOVIELENS_<DATASET> or data/<dataset>)")
    p.add_argument("--model", choices=["tmf", "tc"], default="tmf")
    p.add_argument("--r", type=positive_int, default=35, help="tmf inner dimension")
    p.add_argument("--sweep", type=int_list, default=None,
                   help="r=a,b,c (tmf) or m=a,b,c (tc); selects by validation RMS")
    p.add_argument("--m", type=positive_int, default=40, help="tc tropical terms")
    p.add_argument("--p", type=positive_int, default=25, help="tc compressed dimension")
    _descent(p, recsys.SgdConfig.alpha)
    p.add_argument("--batch-size", type=positive_int, default=8192)
    p.add_argument("--epochs", type=positive_int, default=200)
    p.add_argument("--patience", type=nonneg_int, default=10)
    p.add_argument("--cells", choices=sorted(recsys.PROTOCOLS), default="all",
                   help="which cells enter the splits")
    _common(p, "recsys_out")
    p = rsub.add_parser("fetch", formatter_class=fmt, help="download a MovieLens archive")
    p.add_argument("--dataset", choices=sorted(recsys.FORMATS), default="ml100k")
    _common(p, "data")
    _fill_help(parser)
    return parser


def _fill_help(parser: argparse.ArgumentParser) -> None:
    # argparse omits options without help text, defaults included
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                _fill_help(sub)
        elif action.help is None and action.option_strings:
            action.help = "(default: %(default)s)"


def _explicit_dests(parser: argparse.ArgumentParser, argv: List[str]) -> set:
    dests = set()
    stack = [parser]
    while stack:
        ps = stack.pop()
        for action in ps._actions:
            if isinstance(action, argparse._SubParsersAction):
                stack.extend(action.choices.values())
                continue
            for opt in action.option_strings:
                if any(tok == opt or tok.startswith(opt + "=") for tok in argv):
                    dests.add(action.dest)
    return dests


def _find_action(parser, dest, args):
    stack = [parser]
    while stack:
        ps = stack.pop()
        for action in ps._actions:
            if isinstance(action, argparse._SubParsersAction):
                stack.extend(action.choices.values())
            elif action.dest == dest and action.option_strings:
                return action
    return None


def resolve_args(parser: argparse.ArgumentParser, argv: List[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = read_kv_file(args.config)
        except OSError as exc:
            raise UsageError(f"--config: {exc}") from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        explicit = _explicit_dests(parser, argv)
        for key, raw in values.items():
            if not hasattr(args, key):
                raise UsageError(f"--config: unknown key {key!r}")
            if key in explicit:
                continue
            action = _find_action(parser, key, args)
            value = raw
            if action is not None and action.type is not None:
                try:
                    value = action.type(raw)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"--config: {key}: {exc}") from None
            if action is not None and action.choices is not None and value not in action.choices:
                raise UsageError(f"--config: {key}: invalid choice {value!r}")
            setattr(args, key, value)
    return args


def _resolved(args: argparse.Namespace) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def _dump_json(obj, path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_summary(summary: dict, directory: str, fmt: str) -> None:
    if fmt == "json":
        _dump_json(summary, os.path.join(directory, "summary.json"))
    else:
        with open(os.path.join(directory, "summary.csv"), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["key", "value"])
            for k, v in sorted(summary.items()):
                if not isinstance(v, dict):
                    w.writerow([k, v])


def _load_mask(path, shape):
    if path is None:
        return None
    M = read_matrix(path)
    if M.shape != shape:
        raise UsageError(f"--mask: shape {M.shape} does not match input {shape}")
    if not np.isin(M, (0.0, 1.0)).all():
        raise MatrixParseError(f"{path}: mask entries must be 0 or 1")
    return M.astype(bool)


def cmd_factorize(args) -> int:
    Y = read_matrix(args.input)
    mask = _load_mask(args.mask, Y.shape)
    init = None
    if args.init:
        init = (read_matrix(os.path.join(args.init, "A.csv")),
                read_matrix(os.path.join(args.init, "B.csv")))
    cfg = TmfConfig(r=args.r, alpha=args.alpha, variant=args.variant, eps_schedule=args.eps,
                    noise_scale=args.noise_scale, max_iters=args.iters,
                    seed=int(derive_seed(args.seed, "factorize").generate_state(1)[0]),
                    patience=args.patience)
    sol = tmf_fit(Y, cfg, mask=mask, init=init)
    sol.save(args.out)
    summary = {
        "objective": sol.objective,
        "final_objective": float(sol.trace[-1, 1]),
        "relative_error": float(np.sqrt(sol.objective) / np.linalg.norm(
            Y if mask is None else Y[mask])),
        "iterations": sol.iterations_run,
        "config": cfg.as_dict(),
        "cli": _resolved(args),
    }
    _dump_json(_resolved(args), os.path.join(args.out, "config.json"))
    _write_summary(summary, args.out, args.format)
    print(f"objective={sol.objective:.10g} iterations={sol.iterations_run}")
    return 0


def cmd_compress(args) -> int:
    Y = read_matrix(args.input)
    mask = _load_mask(args.mask, Y.shape)
    if args.p >= Y.shape[0]:
        raise UsageError(f"--p: must be below the number of rows ({Y.shape[0]})")
    cfg = TcConfig(m=args.m, p=args.p, alpha=args.alpha, variant=args.variant,
                   eps_schedule=args.eps, noise_scale=args.noise_scale, max_iters=args.iters,
                   seed=int(derive_seed(args.seed, "compress").generate_state(1)[0]),
                   patience=args.patience)
    sol = tc_fit(Y, cfg, mask=mask)
    sol.save(args.out)
    rank = numerical_rank(sol.C)
    summary = {
        "objective": sol.objective,
        "final_objective": float(sol.trace[-1, 1]),
        "iterations": sol.iterations_run,
        "rank_C": rank,
        "config": cfg.as_dict(),
        "cli": _resolved(args),
    }
    _dump_json(_resolved(args), os.path.join(args.out, "config.json"))
    _write_summary(summary, args.out, args.format)
    print(f"objective={sol.objective:.10g} iterations={sol.iterations_run} rank_C={rank}")
    return 0


def cmd_generate(args) -> int:
    if args.kind == "tmf":
        n, r, p = args.shape
        inst = bench.gen_synthetic(n, r, p, args.a, args.seed)
        Y = inst.Y
    else:
        rng = np.random.default_rng(derive_seed(args.seed, "generate-tc"))
        A = rng.uniform(size=(args.n, args.m))
        B = rng.uniform(size=(args.m, args.p))
        X = rng.uniform(size=(args.p, args.N))
        Y = tc_predict(A, B, X)
    write_matrix(Y, args.out)
    return 0


def cmd_bench(args) -> int:
    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()] \
        if args.bench_command == "table1" else None
    if args.bench_command == "table1":
        report = bench.table1(a_values=args.a, shape=args.shape, algorithms=algorithms,
                              trials=args.trials, iters=args.iters, seed=args.seed,
                              alpha=args.alpha, noise_scale=args.noise_scale, jobs=args.jobs)
        report["cli"] = _resolved(args)
        if args.format == "json":
            _dump_json(report, args.out)
        else:
            with open(args.out, "w", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(["name", "a", "mean", "std", "trials"])
                for e in report["algorithms"]:
                    w.writerow([e["name"], e["a"], f"{e['mean']:.17g}", f"{e['std']:.17g}", e["trials"]])
        print(bench.format_table(report))
        return 0

    n, r, p = args.shape
    inst = bench.gen_synthetic(n, r, p, args.a, args.seed)
    eps = [e.strip() for e in args.eps.split(",") if e.strip()]
    try:
        configs = bench.curve_configs(eps, r, args.iters, args.seed, alpha=args.alpha)
    except ValueError as exc:
        raise UsageError(f"--eps: {exc}") from None
    curves = bench.convergence_curves(inst, configs)
    with open(args.out, "w", newline="") as f:
        f.write(bench.curves_to_csv(curves))
    for label, series in curves.items():
        print(f"eps={label} final={series[-1, 1]:.6g} best={series[:, 1].min():.6g}")
    return 0


def _dataset_path(args) -> str:
    if args.path:
        return args.path
    env = os.environ.get(f"MOVIELENS_{args.dataset.upper()}")
    if env:
        return env
    return os.path.join("data", args.dataset)


def cmd_recsys(args) -> int:
    if args.recsys_command == "fetch":
        path = recsys.fetch_movielens(args.dataset, args.out)
        print(path)
        return 0

    path = _dataset_path(args)
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset not found: {path}")
    ds = recsys.load_movielens(path, args.dataset)
    data = recsys.build_implicit(ds, recsys.SplitSpec(seed=args.seed, cells=args.cells))
    cfg = recsys.SgdConfig(variant=args.variant, alpha=args.alpha, eps_schedule=args.eps,
                           noise_scale=args.noise_scale, batch_size=args.batch_size,
                           max_epochs=args.epochs, patience=args.patience,
                           seed=int(derive_seed(args.seed, "recsys").generate_state(1)[0]))
    if args.model == "tmf":
        specs = [("tmf", r) for r in (args.sweep or [args.r])]
    else:
        if args.p >= ds.num_users:
            raise UsageError("--p: must be below the number of users")
        specs = [("tc", m, args.p) for m in (args.sweep or [args.m])]
    (spec, fit, _), results = recsys.sweep(data, specs, cfg)
    metrics = recsys.evaluate(data, fit, seed=args.seed)
    out = {
        "dataset": args.dataset,
        "model": args.model,
        "seed": args.seed,
        "protocol": recsys.PROTOCOLS[args.cells],
        "sweep": [{"spec": list(s), "rms_validation": v} for s, _, v in results],
        "dataset_warnings": ds.warnings,
        "cli": _resolved(args),
        **metrics,
    }
    if args.model == "tmf":
        out["r"] = spec[1]
    else:
        out["m"], out["p"] = spec[1], spec[2]
    os.makedirs(args.out, exist_ok=True)
    _dump_json(out, os.path.join(args.out, "metrics.json"))
    model_dir = os.path.join(args.out, "model")
    os.makedirs(model_dir, exist_ok=True)
    for name, M in fit.model.factors().items():
        write_matrix(M, os.path.join(model_dir, f"{name}.csv"))
    print(f"rms_test={metrics['rms_test']:.4f} hr_at_10={metrics['hr_at_10']:.4f} "
          f"epochs={metrics['epochs_run']}")
    return 0


COMMANDS = {
    "factorize": cmd_factorize,
    "compress": cmd_compress,
    "generate": cmd_generate,
    "bench": cmd_bench,
    "recsys": cmd_recsys,
}


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = resolve_args(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"tropfact: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tropfact: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteInputError, InfeasibleRankError) as exc:
        print(f"tropfact: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MatrixParseError, recsys.RatingsParseError, OSError) as exc:
        print(f"tropfact: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"tropfact: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
