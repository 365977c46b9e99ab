import sys
import logging
from argparse import ArgumentParser
from typing import List, Optional

import yaml

from turba.calibration import NoAcceptancesError, PopulationExtinctionError
from turba.runner import Runner

logger = logging.getLogger("turba.cli")

COMMANDS = ("simulate", "calibrate", "validate", "report")


def get_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="turba",
        description="Simulate, calibrate and validate the collective behaviour model",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--threads", type=int, default=None, help="worker threads")
    parser.add_argument("--out", default=None, help="output folder")
    parser.add_argument(
        "--smooth-search",
        action="store_true",
        help="7-day centered smoothing of the search series",
    )
    parser.add_argument(
        "--fill",
        choices=("zero", "previous"),
        default=None,
        help="fill policy of missing days in the cases and search series",
    )
    parser.add_argument("--params", default=None, help="parameter file of simulate")
    parser.add_argument("--bands", default=None, help="folder of the bands to validate")
    parser.add_argument(
        "--validation", default=None, help="validation report of report, in --out by default"
    )
    parser.add_argument("--loglevel", default="INFO", help="log level")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point, returns 0 if and only if every output was written."""
    args = get_parser().parse_args(argv)
    logger.setLevel(getattr(logging, args.loglevel.upper()))

    overrides = {"loglevel": args.loglevel}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads

    try:
        runner = Runner.from_config(
            args.config,
            outputfolder=args.out,
            fill=args.fill,
            smooth_search=args.smooth_search,
            **overrides,
        )
        if args.command == "simulate":
            if args.params is None:
                raise ValueError("simulate needs an explicit --params file.")
            runner.run("simulate", params_file=args.params)
        elif args.command == "calibrate":
            runner.run("calibrate")
        elif args.command == "validate":
            runner.run("validate", bands_dir=args.bands)
        else:
            runner.run("report", validation_file=args.validation)
    except NoAcceptancesError as e:
        logger.error(f"{e} Widen epsilon or the priors, or raise the number of draws.")
        return 1
    except PopulationExtinctionError as e:
        logger.error(f"{e} Lower the quantile or raise max_simulations.")
        return 1
    except (FileNotFoundError, ValueError, RuntimeError, OSError, yaml.YAMLError) as e:
        logger.error(str(e))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
