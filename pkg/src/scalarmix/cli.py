"""Command line entry point ``smix``.

Exit codes: 0 success, 1 invariant failure (or a run that could not be
completed), 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import harness
from .config import load_config, parse_config
from .errors import ConfigurationError, SmixError
from .spectral import set_threads

log = logging.getLogger("scalarmix")

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment configuration (INI)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--threads", type=int, metavar="N",
                        help="FFT threads (default: $SMIX_THREADS or 1)")
    common.add_argument("--seed", type=int, metavar="U64", help="override flow.seed")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="section.key=value, may be repeated")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="smix", description="Passive scalar mixing experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="single run")
    sub.add_parser("sweep", parents=[common], help="kappa sweep with scaling report")
    kr = sub.add_parser("krdist", parents=[common], help="KR distance of a stored field")
    kr.add_argument("source", help="snapshot file or run directory")
    kr.add_argument("--delta", type=float, action="append", dest="deltas",
                    help="delta value (repeatable; default: diagnostics.deltas)")
    kr.add_argument("--method", choices=("exact", "entropic"))
    rep = sub.add_parser("report", parents=[common], help="plot data from run directories")
    rep.add_argument("runs", nargs="*", help="run or sweep directories")
    sub.add_parser("check", parents=[common], help="run the invariant suite")
    return p


def _config(args):
    overrides = list(args.override)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigurationError("--seed must be an unsigned 64-bit integer")
        overrides.append(f"flow.seed={args.seed}")
    if args.config:
        return load_config(args.config, overrides)
    return parse_config("", "<defaults>", overrides)


def _out(args, cfg, default_sub):
    if args.out:
        return args.out
    return os.path.join(cfg["output"]["directory"], default_sub)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.threads is not None:
            set_threads(args.threads)
        cfg = _config(args)
        if args.command == "simulate":
            res = harness.cmd_simulate(cfg, _out(args, cfg, "simulate"))
            print(res.directory)
            return EXIT_INVARIANT if res.under_resolved else EXIT_OK
        if args.command == "sweep":
            rep = harness.cmd_sweep(cfg, _out(args, cfg, "sweep"))
            for row in rep.ledger:
                print(f"{'PASS' if row['passed'] else 'FAIL'}  {row['invariant']}")
            return EXIT_OK if rep.passed else EXIT_INVARIANT
        if args.command == "krdist":
            deltas = args.deltas or cfg["diagnostics"]["deltas"]
            method = args.method or cfg["diagnostics"]["method"]
            results = harness.cmd_krdist(args.source, deltas, args.out, method, cfg["diagnostics"]["coarse"])
            for r in results:
                print(r.to_json())
            return EXIT_OK
        if args.command == "report":
            if not args.runs:
                raise ConfigurationError("report needs at least one run directory")
            summary = harness.cmd_report(args.runs, _out(args, cfg, "report"), cfg["diagnostics"]["s"])
            print(json.dumps(summary, sort_keys=True))
            return EXIT_OK
        rows = harness.check()
        for row in rows:
            print(f"{'PASS' if row['passed'] else 'FAIL'}  {row['invariant']}  (margin {row['margin']:.3g})")
        return EXIT_OK if all(r["passed"] for r in rows) else EXIT_INVARIANT
    except ConfigurationError as exc:
        print(f"smix: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SmixError as exc:
        print(f"smix: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
