"""Command-line entry point: ``hardedge <command> [--config F] [--seed N] [--threads N] [--out D]``."""
import argparse
import sys

from .errors import HardEdgeError
from .harness import COMMANDS, load_config, run_command

_HELP = {
    "vague": "quadratic-form statistic between coupled Bessel and sine fields",
    "spectra": "eigenvalue spacing and Hausdorff distances in a window",
    "weyl": "Weyl function differences on a grid of complex points",
    "asymptotics": "slope, envelope and phase of the reversed-time SDEs",
    "coupling": "decay of the noise coupling statistics in E",
    "gamma-masses": "spectral masses against the Gamma law",
    "selftest": "closed-form oracle checks",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="hardedge", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="experiment seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--out", default="hardedge-out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=_HELP[name])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.command, args.config, args.seed)
        report = run_command(args.command, config, threads=max(1, args.threads))
    except HardEdgeError as exc:
        print(f"hardedge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    report.write(args.out)
    for name, passed, detail in report.flags:
        print(f"{'PASS' if passed else 'FAIL'} {name} {detail}".rstrip())
    print(f"wrote {args.out}/report.csv and report.json")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
