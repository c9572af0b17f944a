"""Command line entry point: ``certainty-ssl {train,noisy,sweep,verify}``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, parse_config
from .experiment import headline, run_experiment, run_noisy_protocol, run_sweep
from .verify import all_passed, verify

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are config errors
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="certainty-ssl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("train", "train one method over several seeds"),
                       ("noisy", "corruption fractions x methods"),
                       ("sweep", "label budgets x methods")):
        p = sub.add_parser(name, help=text,
                           epilog="Any config key can also be given as --key=value.")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--method")
        p.add_argument("--seeds", help="number of seeds")
        p.add_argument("--epochs")
        p.add_argument("--out", help="output directory")
    sub.add_parser("verify", help="run numerical self-checks")
    return parser


def parse_overrides(extra: list[str]) -> dict[str, str]:
    """``--key=value`` or ``--key value`` pairs left over by argparse."""
    out: dict[str, str] = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or tok == "--":
            raise ConfigError(tok, "expected --key=value")
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
        elif i + 1 < len(extra) and not extra[i + 1].startswith("--"):
            key, value = tok[2:], extra[i + 1]
            i += 1
        else:
            raise ConfigError(tok[2:], "missing value")
        out[key] = value
        i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if args.command == "verify":
        if extra:
            parser.error(f"unrecognized arguments: {' '.join(extra)}")
        return EXIT_OK if all_passed(verify()) else EXIT_VERIFY
    try:
        overrides = parse_overrides(extra)
        for key in ("method", "seeds", "epochs", "out"):
            if getattr(args, key) is not None:
                overrides[key] = str(getattr(args, key))
        cfg, _ = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "train":
            mean, std = headline(run_experiment(cfg))
            print(f"{cfg.method}: teacher test acc {mean:.4f} +- {std:.4f} over {cfg.n_seeds} seeds -> {cfg.out}")
        else:
            rows = (run_noisy_protocol if args.command == "noisy" else run_sweep)(cfg)
            for r in rows:
                print(f"{r['setting']}={r['value']:<6} {r['method']:<16} {r['mean']:.4f} +- {r['std']:.4f}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any failure during a run maps to one exit code
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
