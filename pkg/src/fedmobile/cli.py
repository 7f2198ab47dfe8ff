"""Command-line entry point: ``fedmobile {run,sweep,verify,default-config}``.

Exit codes: 0 success, 1 usage or config error, 2 verification failure,
3 numerical divergence.
"""
from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from .config import SWEEP_AXES, ConfigError, ExperimentConfig
from .errors import NumericalDivergence, ProtocolViolation
from .experiment import atomic_write, output_root, run_all, run_sweep, write_run_outputs
from .verify import SUITES, VerifyContext, run_suites

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_DIVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for verification failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedmobile", description="Mobility-assisted asynchronous FL simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run every (variant, seed) of a config")
    r.add_argument("config")
    r.add_argument("--jobs", type=int, default=1, help="worker processes")

    s = sub.add_parser("sweep", help="sweep one parameter axis")
    s.add_argument("config")
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--jobs", type=int, default=1)

    v = sub.add_parser("verify", help="run the invariant suites")
    v.add_argument("--suite", action="append", choices=list(SUITES), help="repeatable; default all")
    v.add_argument("--inject-fault", choices=["skip_reset"], default=None)
    v.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("default-config", help="print the default config as JSON")
    d.add_argument("-o", "--output", default=None, help="write to a file instead of stdout")
    return p


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    root = output_root(cfg)
    results = run_all(cfg, jobs=args.jobs)
    paths = write_run_outputs(cfg, results, root)
    for (label, seed), m in sorted(results.items()):
        print(f"{label:<14} seed={seed}  final_loss={m.final_loss:.6g}")
    print(f"wrote {len(paths)} files under {root}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    root = output_root(cfg)
    res = run_sweep(cfg, args.axis, jobs=args.jobs)
    path = root / f"sweep_{args.axis}.csv"
    atomic_write(path, res.csv_text(f"config_hash={cfg.config_hash()}"))
    for label, loss in res.mean_final().items():
        print(f"{args.axis}={label:<8} mean_final_loss={loss:.6g}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    ctx = VerifyContext(seed=args.seed, inject_fault=args.inject_fault)
    results = run_suites(args.suite, ctx)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_default_config(args) -> int:
    text = ExperimentConfig().to_json()
    if args.output:
        atomic_write(args.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify, "default-config": cmd_default_config}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalDivergence as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ProtocolViolation as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
