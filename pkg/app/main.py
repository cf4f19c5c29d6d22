"""
Command-line application: subcommand parser and exception to exit-code mapping.
"""
import argparse
import logging
import sys
from typing import Optional, Sequence

from app.cli.commands import cmd_analyze, cmd_gen_data, cmd_mask, cmd_pretrain, cmd_probe
from app.core.config import SECTIONS, config_keys, flag_name, load_run_config
from app.core.exceptions import ConfigException, SelfGuidedMAEException
from app.core.logging import setup_logging


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class CommandLineParser(argparse.ArgumentParser):
    """ArgumentParser that raises ConfigException instead of exiting on bad usage."""

    def error(self, message: str) -> None:
        raise ConfigException(f"{self.prog}: {message}")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Flat 'section.key = value' config file")
    parser.add_argument("--log-level", default="INFO", help="Logging level (default: INFO)")
    for section, key in config_keys():
        field = SECTIONS[section].model_fields[key]
        parser.add_argument(
            flag_name(section, key),
            dest=f"{section}__{key}",
            default=None,
            metavar="VALUE",
            help=f"{section}.{key} (default: {field.get_default(call_default_factory=True)})",
        )


def build_parser() -> CommandLineParser:
    parser = CommandLineParser(
        prog="sgmae",
        description="Self-guided masked autoencoder pre-training and relation analysis",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen = subparsers.add_parser("gen-data", help="Generate the synthetic texture dataset")
    _add_config_flags(gen)

    pretrain = subparsers.add_parser("pretrain", help="Pre-train with random or self-guided masks")
    _add_config_flags(pretrain)
    pretrain.add_argument("--resume", help="Checkpoint to continue from")

    analyze = subparsers.add_parser("analyze", help="Relation diagnostics of a checkpoint")
    _add_config_flags(analyze)
    analyze.add_argument("--checkpoint", required=True, help="Checkpoint to analyze")

    mask = subparsers.add_parser("mask", help="Informed-mask visualizations of a checkpoint")
    _add_config_flags(mask)
    mask.add_argument("--checkpoint", required=True, help="Checkpoint whose embeddings guide the masks")
    mask.add_argument("--images", help="Folder of PNG/PPM images (default: validation split)")
    mask.add_argument("--limit", type=int, default=8, help="Number of images (default: 8)")

    probe = subparsers.add_parser("probe", help="Linear-probe accuracy of a checkpoint")
    _add_config_flags(probe)
    probe.add_argument("--checkpoint", required=True, help="Checkpoint to evaluate")
    probe.add_argument("--compare", action="append", default=[], help="Further checkpoint to compare (repeatable)")
    return parser


def flag_overrides(args: argparse.Namespace) -> dict[str, dict[str, str]]:
    """Collect the config flags that were given, keyed by section."""
    overrides: dict[str, dict[str, str]] = {}
    for section, key in config_keys():
        value = getattr(args, f"{section}__{key}", None)
        if value is not None:
            overrides.setdefault(section, {})[key] = value
    return overrides


def run_command(args: argparse.Namespace) -> dict:
    config = load_run_config(args.config, flag_overrides(args))
    if args.command == "gen-data":
        return cmd_gen_data(config)
    if args.command == "pretrain":
        return cmd_pretrain(config, args.resume)
    if args.command == "analyze":
        return cmd_analyze(config, args.checkpoint)
    if args.command == "mask":
        return cmd_mask(config, args.checkpoint, args.images, args.limit)
    if args.command == "probe":
        return cmd_probe(config, args.checkpoint, args.compare)
    raise ConfigException(f"Unknown command: {args.command}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run one subcommand and map failures to exit codes.

    Returns:
        0 on success, 1 on usage or config errors, 2 on runtime failures
    """
    try:
        args = build_parser().parse_args(argv)
        setup_logging(args.log_level)
        run_command(args)
    except ConfigException as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SelfGuidedMAEException as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"Unexpected error: {str(e)}")
        print(f"error: unexpected failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
