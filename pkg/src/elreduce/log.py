"""Logging setup."""

from __future__ import annotations

import logging

from rich.console import Console
from rich.logging import RichHandler

_CONFIGURED = False


def setup_logging(verbose: bool = False) -> None:
    """Install a single rich handler on the package logger."""
    global _CONFIGURED
    logger = logging.getLogger("elreduce")
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    if _CONFIGURED:
        return
    handler = RichHandler(
        console=Console(stderr=True),
        show_path=False,
        rich_tracebacks=True,
        markup=False,
    )
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    logger.addHandler(handler)
    logger.propagate = False
    _CONFIGURED = True
