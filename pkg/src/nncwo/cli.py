"""Command-line interface: simulate, truth, estimate and bench subcommands.

Exit codes: 0 success, 1 usage or input-schema error, 2 runtime failure.
JSON goes to stdout; seeds, progress and errors go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .bench import BenchConfig, emit_csv, emit_svg, run_benchmark
from .dataset import DatasetFormatError, MissingColumnError, read_csv, write_csv
from .estimators import Backend, estimate, required_columns
from .neural import Hyperparams
from .scm import EnumerationBoundError, Scenario, ScenarioSpec, build_scenario, sample, truth_grid
from .weights import DEFAULT_CLIP_EPS

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("nncwo")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64)")
    return v


def _clip_eps(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0 < v < 0.5:
        raise argparse.ArgumentTypeError(f"must lie in (0, 0.5), got {v}")
    return v


def _int_list(text: str) -> list[int]:
    return [_positive_int(t) for t in text.split(",") if t.strip()]


def _hp(text: str) -> Hyperparams:
    try:
        return Hyperparams.from_json(text)
    except (OSError, ValueError, TypeError) as exc:
        raise argparse.ArgumentTypeError(f"bad hyperparameters: {exc}") from None


def _scenario_arg(p):
    p.add_argument("--scenario", required=True, choices=[s.value for s in Scenario],
                   help="causal scenario")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nncwo", description="NN-CWO causal effect estimation and benchmarks.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="sample an observational dataset to CSV")
    _scenario_arg(p)
    p.add_argument("--dim", type=_positive_int, default=1, help="covariate block width (default 1)")
    p.add_argument("--n", type=_positive_int, required=True, help="number of rows")
    p.add_argument("--seed", type=_seed, default=0,
                   help="seeds both the model coefficients and the sample (default 0)")
    p.add_argument("--out", required=True, help="output CSV path, or - for stdout")

    p = sub.add_parser("truth", help="print the interventional means of a scenario as JSON")
    _scenario_arg(p)
    p.add_argument("--dim", type=_positive_int, default=1, help="covariate block width (default 1)")
    p.add_argument("--seed", type=_seed, default=0,
                   help="coefficient seed; also seeds Monte Carlo draws (default 0)")
    p.add_argument("--mode", choices=("exact", "mc"), default="exact", help="default exact")
    p.add_argument("--mc-samples", type=_positive_int, default=10**6,
                   help="Monte Carlo sample size (default 1000000)")

    p = sub.add_parser("estimate", help="estimate interventional means from a dataset CSV")
    _scenario_arg(p)
    p.add_argument("--data", required=True, help="dataset CSV path, or - for stdin")
    p.add_argument("--method", choices=[b.value for b in Backend], default=Backend.NNCWO.value,
                   help="regression backend (default nncwo)")
    p.add_argument("--hp", type=_hp, default=None, help="hyperparameters: JSON file or inline JSON")
    p.add_argument("--clip-eps", type=_clip_eps, default=DEFAULT_CLIP_EPS,
                   help=f"propensity clip (default {DEFAULT_CLIP_EPS})")
    p.add_argument("--seed", type=_seed, default=0, help="network seed (default 0)")

    p = sub.add_parser("bench", help="run the Monte Carlo benchmark")
    p.add_argument("--config", help="BenchConfig JSON file; inline flags override its fields")
    p.add_argument("--scenario", choices=[s.value for s in Scenario])
    p.add_argument("--dims", type=_int_list, help="comma-separated dimensions")
    p.add_argument("--sizes", type=_int_list, help="comma-separated, strictly increasing sample sizes")
    p.add_argument("--reps", type=_positive_int, help="replications per cell (default 20)")
    p.add_argument("--methods", help="comma-separated backends (default nncwo,cwo)")
    p.add_argument("--truth-mode", choices=("exact", "mc"))
    p.add_argument("--truth-samples", type=_positive_int)
    p.add_argument("--seed", type=_seed, help="base seed (default 0)")
    p.add_argument("--hp", type=_hp)
    p.add_argument("--clip-eps", type=_clip_eps)
    p.add_argument("--timing", action="store_true", help="record wall times (breaks byte reproducibility)")
    p.add_argument("--paper-scale", action="store_true",
                   help="100 replications, sizes 500..10000 step 500, 10^7 truth samples")
    p.add_argument("--out", default="bench", help="output prefix (default bench)")
    p.add_argument("--plot", action="store_true", help="also write <out>_dim<D>.svg per dimension")
    p.add_argument("--workers", type=_positive_int, default=1, help="worker processes (default 1)")
    return parser


def _cmd_simulate(args) -> int:
    print(f"seed={args.seed}", file=sys.stderr)
    scm = build_scenario(ScenarioSpec(args.scenario, args.dim, args.seed))
    data = sample(scm, args.n, args.seed)
    if args.out == "-":
        write_csv(data, sys.stdout)
        return EXIT_OK
    tmp = f"{args.out}.tmp"
    try:
        write_csv(data, tmp)
        os.replace(tmp, args.out)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    return EXIT_OK


def _cmd_truth(args) -> int:
    print(f"seed={args.seed}", file=sys.stderr)
    scm = build_scenario(ScenarioSpec(args.scenario, args.dim, args.seed))
    vals = truth_grid(scm, args.mode, args.mc_samples, args.seed)
    mu = {"".join(map(str, k)): v for k, v in vals.items()}
    print(json.dumps({"scenario": args.scenario, "mode": args.mode, "mu": mu}, indent=2))
    return EXIT_OK


def _cmd_estimate(args) -> int:
    print(f"seed={args.seed}", file=sys.stderr)
    try:
        data = read_csv(sys.stdin if args.data == "-" else args.data)
        required_columns(args.scenario, data)
    except (DatasetFormatError, MissingColumnError) as exc:
        raise UsageError(str(exc)) from None
    est = estimate(args.scenario, data, args.hp, args.method, args.clip_eps, args.seed)
    print(est.to_json(indent=2))
    return EXIT_OK


def _bench_config(args) -> BenchConfig:
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    else:
        base = {}
    over = {
        "scenario": args.scenario,
        "dims": args.dims,
        "sizes": args.sizes,
        "reps": args.reps,
        "methods": args.methods.split(",") if args.methods else None,
        "truth_mode": args.truth_mode,
        "truth_samples": args.truth_samples,
        "base_seed": args.seed,
        "clip_eps": args.clip_eps,
        "record_timing": True if args.timing else None,
    }
    base.update({k: v for k, v in over.items() if v is not None})
    if "scenario" not in base:
        raise UsageError("bench needs --scenario or a --config naming one")
    if isinstance(base.get("hp"), dict):
        base["hp"] = Hyperparams.from_dict(base["hp"])
    if args.hp is not None:
        base["hp"] = args.hp
    factory = BenchConfig.full if args.paper_scale else BenchConfig.desk
    try:
        return factory(**base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid bench config: {exc}") from None


def _cmd_bench(args) -> int:
    cfg = _bench_config(args)
    print(f"base_seed={cfg.base_seed}", file=sys.stderr)

    def progress(dim, size, rows):
        cells = "  ".join(f"{r.method}={r.maae:.5f} (n={r.reps})" for r in rows)
        print(f"{cfg.scenario.value} dim={dim} size={size}  {cells}", file=sys.stderr, flush=True)

    records, maae = run_benchmark(cfg, workers=args.workers, progress=progress)
    if not maae:
        raise RuntimeError("every replication failed")
    written = []
    try:
        written.extend(emit_csv(records, maae, args.out))
        if args.plot:
            for d in cfg.dims:
                written.append(emit_svg(maae, d, f"{args.out}_dim{d}.svg"))
    except BaseException:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise
    for path in written:
        print(path, file=sys.stderr)
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "truth": _cmd_truth,
    "estimate": _cmd_estimate,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"nncwo {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EnumerationBoundError as exc:
        print(f"nncwo {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"nncwo {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
