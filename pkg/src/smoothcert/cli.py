"""Command line entry point: ``smoothcert {certify,compare,coverage,sweep}``.

Exit codes: 0 on success, 2 for configuration errors, 3 for data errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from .experiment import CONFIG_KEYS, ConfigError, compare_curves, load_config, run_certify, run_coverage, run_sweep
from .io import DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

_TYPES = {
    "n": int,
    "sigma": float,
    "temperature": float,
    "alpha": float,
    "taylor_order": int,
    "eps": float,
    "seed": int,
    "num_inputs": int,
    "num_classes": int,
    "input_dim": int,
    "lipschitz": float,
    "cta_alpha": float,
    "workers": int,
}
_LISTS = {"methods": str, "p": float, "radii": float}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON file of experiment settings")
    for key in CONFIG_KEYS:
        flag = "--" + key.replace("_", "-")
        if key == "fast":
            p.add_argument("--fast", dest="fast", action="store_const", const=True)
            p.add_argument("--no-fast", dest="fast", action="store_const", const=False)
        elif key == "support":
            p.add_argument(flag, type=json.loads, help="JSON list of simplex rows")
        elif key in _LISTS:
            p.add_argument(flag, type=_LISTS[key], nargs="+")
        else:
            p.add_argument(flag, type=_TYPES.get(key, str))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smoothcert", description="Certified radii for randomized smoothing.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("certify", help="certify every input with every method")
    _add_config_flags(p)

    p = sub.add_parser("compare", help="percent gain of one CTA curve over another")
    p.add_argument("baseline")
    p.add_argument("ours")
    p.add_argument("--output")

    p = sub.add_parser("coverage", help="empirical miscoverage on synthetic data")
    _add_config_flags(p)
    p.add_argument("--replications", type=int, default=1000)

    p = sub.add_parser("sweep", help="certify over a range of n, sigma or temperature")
    _add_config_flags(p)
    p.add_argument("--axis", required=True, choices=["N", "SIGMA", "TEMPERATURE"], type=str.upper)
    p.add_argument("--values", required=True, type=float, nargs="+")
    return parser


def _config(args):
    overrides = {k: getattr(args, k) for k in CONFIG_KEYS}
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "certify":
            cfg = _config(args)
            results = run_certify(cfg)
            for name, (records, curve) in results.items():
                print(f"{name}: {len(records)} inputs, certified accuracy at r=0 {curve.approx_acc[0]:.3f}")
        elif args.command == "compare":
            sys.stdout.write(compare_curves(args.baseline, args.ours, args.output))
        elif args.command == "coverage":
            cfg = _config(args)
            rows = run_coverage(cfg, args.replications)
            print("method,replications,misses,miscoverage,se,alpha,ok")
            for r in rows:
                print(
                    f"{r['method']},{r['replications']},{r['misses']},{r['miscoverage']:.5f},"
                    f"{r['se']:.5f},{r['alpha']},{'PASS' if r['ok'] else 'FAIL'}"
                )
        else:
            cfg = _config(args)
            for s in run_sweep(cfg, args.axis, args.values):
                print(f"{s['axis']}={s['value']} {s['method']}: mean margin {s['mean_margin']:.4f}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
