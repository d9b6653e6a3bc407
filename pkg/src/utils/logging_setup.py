"""Logging configuration shared by the CLI and the services."""

import logging
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

console = Console(stderr=True)


def configure_logging(level: Optional[str] = None) -> None:
    """Route the package loggers through a rich handler on stderr."""
    from ..config import Config

    level = (level or Config.LOG_LEVEL).upper()
    root = logging.getLogger("src")
    root.handlers.clear()
    root.addHandler(RichHandler(console=console, show_path=False, markup=False))
    root.setLevel(getattr(logging, level, logging.WARNING))
    root.propagate = False
