"""
Command-line entry point.

Builds the argparse application, dispatches to the command modules and maps
exceptions to the exit-code contract: 0 success, 1 usage, 2 validation,
3 numeric failure.
"""

import argparse
import logging
from typing import List, Optional

from fisheye_bev import __version__
from fisheye_bev.commands import COMMANDS
from fisheye_bev.utils.errors import EXIT_USAGE, NumericError, UsageError, ValidationError, exit_code_for
from fisheye_bev.utils.logger import set_level, setup_logger

logger = setup_logger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting."""

    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(
        prog='fisheye_bev',
        description='Fisheye camera to bird\'s-eye-view projection engine',
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='Warnings and errors only')

    subparsers = parser.add_subparsers(dest='command', metavar='command', parser_class=ArgumentParser)
    subparsers.required = True
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one command.

    Returns:
        Process exit code
    """
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            set_level(logging.DEBUG)
        elif args.quiet:
            set_level(logging.WARNING)
        return args.handler(args)
    except UsageError as e:
        logger.error(f"Usage error: {e}")
        return EXIT_USAGE
    except (ValidationError, NumericError) as e:
        logger.error(str(e))
        return exit_code_for(e)
    except Exception as e:
        logger.error(f"Unexpected error: {str(e)}", exc_info=True)
        return EXIT_USAGE
