"""``qpat`` command line: run one experiment from a config file.

Exit codes: 0 success, 1 runtime failure, 2 lemma violation.
"""

import argparse
import os
import sys

from .errors import LemmaViolationError
from .experiments import ExperimentConfig, load_config, run_experiment

SUBCOMMANDS = {
    "validate": "validate", "recon-a": "recon_a", "recon-s": "recon_s",
    "recon-u": "recon_u", "joint-au": "joint_au", "joint-as": "joint_as",
    "verify-matrices": "verify_matrices",
}

EXIT_OK, EXIT_FAILURE, EXIT_LEMMA = 0, 1, 2


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qpat", description="SP_N forward and inverse experiments for photoacoustic imaging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "verify-matrices",
                       help="experiment INI file")
        p.add_argument("--out", default=None, help="output directory (default ./out/<command>)")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for table cells")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    kind = SUBCOMMANDS[args.command]
    out = args.out or os.path.join("out", args.command)
    try:
        if args.config:
            cfg = load_config(args.config, args.seed)
        else:
            cfg = ExperimentConfig(experiment=kind)
            if args.seed is not None:
                cfg.seed = args.seed
        if cfg.experiment != kind:
            print(f"qpat: config describes {cfg.experiment!r}, not {kind!r}", file=sys.stderr)
            return EXIT_FAILURE
        table = run_experiment(cfg, out, max(1, args.threads))
    except LemmaViolationError as exc:
        print(f"qpat: lemma violation: {exc}", file=sys.stderr)
        return EXIT_LEMMA
    except Exception as exc:  # noqa: BLE001 - every other failure maps to exit 1
        print(f"qpat: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(os.path.join(out, "table.csv"))
    for row in table.rows:
        print(",".join(str(v) for v in row))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
