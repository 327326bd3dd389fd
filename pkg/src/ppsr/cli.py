"""Command line: ``ppsr run ...`` for experiments, ``ppsr verify`` for self-checks."""

from __future__ import annotations

import argparse
import sys

from .bench import BENCHMARKS, run_experiment
from .gp import GpConfig
from .protocol.session import SessionConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppsr", description="Secure symbolic regression experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run seeded experiments and write CSV/JSON results")
    run.add_argument("--benchmark", choices=sorted(BENCHMARKS), required=True)
    run.add_argument("--mode", choices=("plaintext", "secure"), default="plaintext")
    run.add_argument("--runs", type=int, default=1)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--pop", type=int, default=GpConfig.population_size)
    run.add_argument("--gens", type=int, default=GpConfig.max_generations)
    run.add_argument("--ring-bits", type=int, default=SessionConfig.ring_bits)
    run.add_argument("--frac-bits", type=int, default=SessionConfig.frac_bits)
    run.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    run.add_argument("--workers", type=int, default=1, help="parallel runs (processes)")
    run.add_argument("--out", default=None, help="output path stem; writes <out>.csv and <out>.json")

    sub.add_parser("verify", help="run the built-in oracle checks")
    return parser


def _cmd_run(args) -> int:
    config = GpConfig(population_size=args.pop, max_generations=args.gens)
    session = SessionConfig(ring_bits=args.ring_bits, frac_bits=args.frac_bits)

    def report(rec):
        mark = "recovered" if rec.recovered else "-"
        print(
            f"seed {rec.seed:>4}  train_mse {rec.train_mse:.3e}  test_r2 {rec.test_r2:+.4f}  "
            f"gens {rec.generations:>3}  {rec.wall_ms / 1000:7.1f}s  {mark}  {rec.best_expr}",
            flush=True,
        )

    result = run_experiment(
        args.benchmark,
        args.mode,
        args.runs,
        config,
        seed=args.seed,
        session_config=session,
        transport=args.transport,
        out=args.out,
        progress=report,
        workers=args.workers,
    )
    print(f"{result.benchmark} {result.mode}: recovered {result.recovered}/{result.runs}")
    if args.out:
        print(f"wrote {args.out}.csv and {args.out}.json")
    return 0


def _cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(lambda r: print(r.line(), flush=True))
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return {"run": _cmd_run, "verify": _cmd_verify}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
