import argparse
import importlib
import logging
import sys
import time

import humanize
from dotenv import load_dotenv

from utils.command import Command, RunContext
from utils.config import effective_defaults, load_config, resolve_log_level, resolve_output_dir, resolve_seed
from utils.errors import EXIT_OK, EXIT_VALIDATION, VBScopeError

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

initial_extensions = [
    "commands.simulation.simulate",
    "commands.fitting.fit",
    "commands.analysis.sensitivity",
    "commands.analysis.polarization",
    "commands.analysis.raman",
    "commands.utility.validate",
]


class VBScope:
    """Command-line application; verbs are registered by extension modules"""

    def __init__(self):
        self.commands: dict[str, Command] = {}
        self.extensions: list[str] = []

    def add_command(self, command: Command):
        if command.name in self.commands:
            raise VBScopeError(f"Command '{command.name}' registered twice")
        self.commands[command.name] = command

    def load_extension(self, name: str):
        module = importlib.import_module(name)
        setup = getattr(module, "setup", None)
        if setup is None:
            raise VBScopeError(f"Extension {name} has no setup function")
        setup(self)
        self.extensions.append(name)

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog="vbscope", description="ODMR simulation and fitting for boron-vacancy spins in hBN"
        )
        parser.add_argument("--config", help="Run configuration (JSON)")
        parser.add_argument("--out", help="Output directory (overrides the config and VBSCOPE_OUTPUT_DIR)")
        parser.add_argument("--seed", type=int, help="Seed for synthetic noise and random draws")
        parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
        subparsers = parser.add_subparsers(dest="verb", required=True, metavar="verb")
        for command in self.commands.values():
            sub = subparsers.add_parser(command.name, help=command.help, description=command.help)
            command.add_arguments(sub)
        return parser

    def run(self, argv=None) -> int:
        parser = self.build_parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return EXIT_OK if e.code == 0 else EXIT_VALIDATION

        logging.basicConfig(
            level=resolve_log_level(args.quiet),
            format="%(asctime)s - %(levelname)s - %(message)s",
            force=True,
        )
        for name in self.extensions:
            logger.debug(f"Loaded extension: {name}")

        start = time.monotonic()
        try:
            config = load_config(args.config)
            context = RunContext(
                config=config,
                defaults=effective_defaults(config),
                output_dir=resolve_output_dir(config, args.out),
                seed=resolve_seed(config, args.seed),
                args=args,
            )
            code = self.commands[args.verb].run(context)
        except VBScopeError as e:
            logger.error(str(e))
            return e.exit_code
        finally:
            elapsed = time.monotonic() - start
            logger.info(f"{args.verb} finished in {humanize.precisedelta(elapsed, minimum_unit='milliseconds')}")
        return code


def main(argv=None) -> int:
    app = VBScope()
    for extension in initial_extensions:
        app.load_extension(extension)
    return app.run(argv)


if __name__ == "__main__":
    sys.exit(main())
