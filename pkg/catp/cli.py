import argparse
import json
import logging
import sys
import time
from typing import List, Optional

from pydantic import ValidationError

from catp import harness
from catp.errors import (CatpError, ConfigParseError, ImageFormatError, InvalidArgumentError,
                         InvariantError, ValidationFailure, WeightLoadError)
from config.run_config import apply_env_overrides, load_run_config

logger = logging.getLogger("catp_cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VALIDATION = 4

TABLE_GRID = "0.2/0.8,0.25/0.75,0.3/0.7,0.35/0.65,0.4/0.6"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catp", description="Confidence-aware token pruning on a desk-scale encoder")
    parser.add_argument("--log-file", default="./catp.log", help="Log file (appended)")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", default=None, help="key = value run configuration")
        return p

    run = with_config(sub.add_parser("run", help="Prune, refill and decode one image"))
    run.add_argument("--image", default=None, help="P5/P6 input; a seeded disk when omitted")
    run.add_argument("--out", default=None, help="Artifact directory")

    sweep = with_config(sub.add_parser(
        "sweep", help="FLOPs across threshold pairs, each applied at every boundary "
                      "(configs with stage_thresholds are rejected)"))
    sweep.add_argument("--grid", default=TABLE_GRID, help="theta_d/theta_u pairs, comma separated")
    sweep.add_argument("--image", default=None)
    sweep.add_argument("--out", default=None)

    stages = with_config(sub.add_parser("stages", help="FLOPs across pruning-boundary layouts"))
    stages.add_argument("--layouts", required=True, help="Layouts separated by ';', e.g. '2;2,4'")
    stages.add_argument("--image", default=None)
    stages.add_argument("--out", default=None)

    compare = with_config(sub.add_parser("compare", help="FLOPs under each compensation mode"))
    compare.add_argument("--image", default=None)
    compare.add_argument("--out", default=None)

    grad = with_config(sub.add_parser("gradcheck", help="Score Jacobian against finite differences"))
    grad.add_argument("--draws", type=int, default=100)

    mae = sub.add_parser("mae", help="Mean absolute error between two maps")
    mae.add_argument("--pred", required=True)
    mae.add_argument("--ref", required=True)

    batch = with_config(sub.add_parser("batch", help="Run many images on a worker pool"))
    batch.add_argument("images", nargs="+")
    batch.add_argument("--out", default=None)
    batch.add_argument("--workers", type=int, default=2)
    return parser


def dispatch(args: argparse.Namespace) -> int:
    if args.command == "mae":
        print(f"{harness.cmd_mae(args.pred, args.ref):.6f}")
        return EXIT_OK

    config = apply_env_overrides(load_run_config(args.config))
    if args.command == "run":
        report = harness.cmd_run(config, args.image, args.out)
        print(json.dumps(report["cost"], sort_keys=True))
    elif args.command == "sweep":
        payload = harness.cmd_sweep(config, args.grid, args.image, args.out)
        print(f"{len(payload['entries'])} sweep entries written")
    elif args.command == "stages":
        payload = harness.cmd_stages(config, args.layouts, args.image, args.out)
        print(f"{len(payload['entries'])} layout entries written")
    elif args.command == "compare":
        payload = harness.cmd_compare(config, args.image, args.out)
        for entry in payload["entries"]:
            print(f"{entry['compensation_mode']}: reduction {entry['report']['reduction_ratio']:.4f}")
    elif args.command == "gradcheck":
        report = harness.cmd_gradcheck(config, args.draws)
        print(json.dumps(report, indent=2, sort_keys=True))
        if not report["passed"]:
            raise ValidationFailure(
                f"max relative error {report['max_relative_error']:.3e} above {report['tolerance']}")
    elif args.command == "batch":
        reports = harness.cmd_batch(config, args.images, args.out, args.workers)
        print(f"{len(reports)} images processed")
    return EXIT_OK


def exit_code_for(error: Exception) -> int:
    if isinstance(error, (ConfigParseError, ValidationError, InvalidArgumentError)):
        return EXIT_CONFIG
    if isinstance(error, (WeightLoadError, ImageFormatError, OSError)):
        return EXIT_IO
    if isinstance(error, (ValidationFailure, InvariantError)):
        return EXIT_VALIDATION
    return 1


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG,
        format="%(asctime)s - %(levelname)s - %(message)s",
        filename=args.log_file,
        filemode="a"
    )
    started = time.perf_counter()
    try:
        code = dispatch(args)
        print(f"catp {args.command}: {time.perf_counter() - started:.3f}s elapsed", file=sys.stderr)
        return code
    except (CatpError, ValidationError, OSError) as e:
        logger.error(f"catp {args.command} failed: {str(e)}")
        print(f"catp {args.command}: {e}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
