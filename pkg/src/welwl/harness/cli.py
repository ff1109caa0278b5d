"""Command-line entry point ``welwl``.

Exit codes: 0 when every threshold holds, 1 when one is violated (failing
rows are printed), 2 for bad input or configuration.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .. import wl
from . import experiments as ex
from .generators import simulate_nbody
from .io import CorpusError, load_graph

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def _ints(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in s.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")


def _names(s: str) -> tuple[str, ...]:
    return tuple(x for x in s.split(",") if x)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="welwl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--seed", type=int, default=0, help="root seed (64-bit)")
        sp.add_argument("--workers", type=int, default=None,
                        help="parallel trials (default: $WELWL_WORKERS or 1)")
        if out:
            sp.add_argument("--out", default=None, help="write the run record here")
            sp.add_argument("--format", choices=("csv", "json"), default=None,
                            help="output format (default: from the --out suffix)")

    sp = sub.add_parser("wl-test", help="run 1-WL and 2-WL on two graph files")
    sp.add_argument("--pair", nargs=2, metavar=("A.json", "B.json"), required=True)
    sp.add_argument("--rounds", type=int, default=2)

    sp = sub.add_parser("separate", help="PPGN separation gaps on a graph-pair corpus")
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--corpus", help="corpus file or directory of *.json corpus files")
    src.add_argument("--cycles", type=int, default=10, metavar="KMAX",
                     help="use cycle pairs k=3..KMAX (default 10)")
    sp.add_argument("--width", type=int, default=1)
    sp.add_argument("--rounds", "-T", dest="T", type=int, default=3)
    sp.add_argument("--activation", type=_names, default=("softplus", "leaky_elu", "relu"),
                    help="comma-separated list, e.g. softplus,leaky_elu:0.1,relu")
    sp.add_argument("--combination", choices=("product", "concat"), default="product")
    sp.add_argument("--seeds", type=int, default=32)
    sp.add_argument("--threshold", type=float, default=1e-13)
    sp.add_argument("--min-rate", type=float, default=0.95)
    common(sp)

    sp = sub.add_parser("complete", help="2-WL on quantized position-velocity encodings")
    sp.add_argument("--n", type=int, default=8)
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--grid", type=float, default=1e-9)
    sp.add_argument("--rounds", type=int, default=3)
    sp.add_argument("--eps", type=float, default=1e-3)
    common(sp)

    sp = sub.add_parser("equivariance", help="WeLNet two-path equivariance check")
    sp.add_argument("--n", type=int, default=6)
    sp.add_argument("--trials", type=int, default=50)
    sp.add_argument("--tol", type=float, default=1e-8)
    common(sp)

    sp = sub.add_parser("uniform", help="one fixed PPGN on many position-velocity pairs")
    sp.add_argument("--n", type=int, default=4)
    sp.add_argument("--pairs", type=int, default=200)
    sp.add_argument("--equivalent", type=int, default=50)
    sp.add_argument("--width", type=int, default=None, help="default 12 n + 1")
    sp.add_argument("--rounds", "-T", dest="T", type=int, default=5)
    sp.add_argument("--activation", default="tanh")
    sp.add_argument("--eps", type=float, default=1e-3)
    common(sp)

    sp = sub.add_parser("nbody-gen", help="simulate a charged N-body trajectory")
    sp.add_argument("--n", type=int, default=5)
    sp.add_argument("--steps", type=int, default=1000)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--box", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None, help="trajectory summary JSON")

    sp = sub.add_parser("bench", help="PPGN layer timing for doubling n")
    sp.add_argument("--sizes", type=_ints, default=(32, 64, 128))
    sp.add_argument("--width", type=int, default=8)
    sp.add_argument("--repeats", type=int, default=7)
    common(sp)
    return p


def _workers(args) -> int:
    return args.workers if args.workers is not None else ex.worker_count()


def _emit(rec, args) -> int:
    if args.out:
        rec.write(args.out, args.format)
    print(json.dumps({"experiment": rec.experiment, "passed": rec.passed, "summary": rec.summary,
                      "wall_s": round(rec.timings.get("wall_s", 0.0), 3)}, default=float))
    for f in rec.failures:
        print(f"FAIL {f}")
    return EXIT_OK if rec.passed else EXIT_FAIL


def _wl_test(args) -> int:
    ga, gb = load_graph(args.pair[0]), load_graph(args.pair[1])
    v2 = wl.run_2wl_pair(ga, gb, args.rounds)
    v1 = wl.run_1wl_pair(ga, gb, args.rounds)
    print(json.dumps({
        "rounds": args.rounds,
        "2wl": {"separated": v2.separated, "first_round": v2.first_separating_round},
        "1wl": {"separated": v1.separated, "first_round": v1.first_separating_round},
    }))
    return EXIT_OK


def _nbody(args) -> int:
    traj = simulate_nbody(args.seed, n=args.n, steps=args.steps, dt=args.dt, box=args.box)
    summary = traj.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(summary))
    print(json.dumps({k: summary[k] for k in ("n", "steps", "dt", "energy_drift", "momentum_drift")}))
    if summary["momentum_drift"] > 1e-8:
        print(f"FAIL momentum drift {summary['momentum_drift']:.3e} > 1e-08")
        return EXIT_FAIL
    return EXIT_OK


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "wl-test":
            return _wl_test(args)
        if args.command == "nbody-gen":
            return _nbody(args)
        fmt = args.format or ("json" if (args.out or "").endswith(".json") else "csv")
        base = dict(seed=args.seed, workers=_workers(args), out=args.out, fmt=fmt)
        if args.command == "separate":
            cfg = ex.ExperimentConfig(width=args.width, T=args.T, activations=args.activation,
                                      combination=args.combination, trials=args.seeds,
                                      threshold=args.threshold, min_rate=args.min_rate,
                                      k_max=args.cycles, corpus=args.corpus, **base)
            return _emit(ex.run_separation_experiment(cfg), args)
        if args.command == "complete":
            cfg = ex.ExperimentConfig(n=args.n, trials=args.trials, grid=args.grid, T=args.rounds,
                                      eps=args.eps, **base)
            return _emit(ex.run_geometric_completeness(cfg), args)
        if args.command == "equivariance":
            cfg = ex.ExperimentConfig(n=args.n, trials=args.trials, tol=args.tol, **base)
            return _emit(ex.run_equivariance_suite(cfg), args)
        if args.command == "uniform":
            width = args.width if args.width is not None else 12 * args.n + 1
            cfg = ex.ExperimentConfig(n=args.n, trials=args.pairs, width=width, T=args.T,
                                      activations=(args.activation,), eps=args.eps, **base)
            return _emit(ex.run_uniform_separation(cfg, args.equivalent), args)
        if args.command == "bench":
            cfg = ex.ExperimentConfig(sizes=args.sizes, width=args.width, repeats=args.repeats, **base)
            return _emit(ex.run_scaling_benchmark(cfg), args)
    except (CorpusError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    raise AssertionError(args.command)


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
