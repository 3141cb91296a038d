"""Base class for command-line verbs.

Each module under ``commands/`` defines one ``Command`` subclass and a
``setup(app)`` function that registers it, so ``main.VBScope`` can load the
verbs as extensions.
"""
import argparse
import logging
from dataclasses import dataclass
from pathlib import Path

from utils.config import PhysicalDefaults, RunConfig
from utils.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunContext:
    config: RunConfig
    defaults: PhysicalDefaults
    output_dir: Path
    seed: int | None
    args: argparse.Namespace

    def output_path(self, name: str) -> Path:
        return self.output_dir / name


class Command:
    name = ""
    help = ""

    def __init__(self, app):
        self.app = app

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        """Verb-specific flags; most verbs are driven by the config file alone"""

    def require_block(self, context: RunContext, attribute: str, key: str | None = None):
        block = getattr(context.config, attribute)
        if block is None:
            raise ConfigError(f"Config has no '{key or attribute}' block, required by '{self.name}'")
        return block

    def run(self, context: RunContext) -> int:
        raise NotImplementedError
