#!/usr/bin/env python


__version__ = "0.2.0"

__revision__ = "20261017"


import argparse
import logging
import sys

from FEATnorm.experiment import COMMANDS, ExperimentConfig
from FEATnorm.utils import FEATnormError


EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2
EXIT_IO = 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog="featnorm",
        description="Adversarial speaker normalization: data generation, training and evaluation runs.",
        epilog="Any config key can be overridden with --section.key=value, e.g. --train.lambda=0.003",
    )
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON config file (default: packaged defaults)")
    common.add_argument("--jobs", type=int, default=None, help="worker processes, -1 for all cores")
    common.add_argument("--out", default=None, help="output directory of the run")

    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    helps = {
        "gen-data": "generate the synthetic biased benchmark",
        "train": "train one model and save its snapshots",
        "eval": "cross-validate the configured strategy",
        "probe": "speaker probe of frozen snapshots",
        "lowres": "low-resource learning curves and their AUC",
        "gradcheck": "check backpropagation against finite differences",
        "sweep": "cross-validate over the lambda grid",
        "compare": "cross-validate BASELINE, SNP and TAP side by side",
    }
    for name in COMMANDS:
        command = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "probe":
            command.add_argument("snapshots", nargs="+", help="model snapshot files")
    return parser


def main(argv=None):

    """
    Entry point of the ``featnorm`` command.

    Returns:
        :obj:`int` exit code: 0 success, 1 failed check, 2 invalid input or
        configuration, 3 I/O error
    """

    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logger = logging.getLogger("FEATnorm")

    for text in extra:
        if not text.startswith("--"):
            parser.error("unrecognized argument: " + text)

    try:
        config = ExperimentConfig(configfile=args.config, overrides=extra, out=args.out, n_jobs=args.jobs)
        if args.command == "probe":
            manifest = COMMANDS[args.command](config, args.snapshots)
        else:
            manifest = COMMANDS[args.command](config)
    except FEATnormError as err:
        logger.error(str(err))
        return EXIT_INVALID
    except OSError as err:
        logger.error(str(err))
        return EXIT_IO

    if manifest.status != "complete":
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
