"""Helpers shared by the command modules."""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Iterator

import typer
from rich.console import Console

from elreduce.core.exceptions import ConfigError, ElReduceError

err_console = Console(stderr=True)

ConfigOption = Annotated[
    Path | None,
    typer.Option("--config", "-c", help="Run configuration JSON (defaults to ~/.elreduce/config.json)"),
]
OutOption = Annotated[Path, typer.Option("--out", "-o", help="Output directory")]


@contextmanager
def handle_errors() -> Iterator[None]:
    """Print engine errors in red on stderr and exit with the code of their class."""
    try:
        yield
    except ElReduceError as e:
        err_console.print(f"[red]{type(e).__name__}:[/red] {e}")
        raise typer.Exit(e.exit_code)


def parse_floats(text: str | None, name: str) -> list[float] | None:
    """Comma-separated floats, e.g. "0.01,0.005"."""
    if text is None or not text.strip():
        return None
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise ConfigError(f"{name} must be a comma-separated list of numbers, got {text!r}") from e


def parse_offset(text: str | None, n: int) -> list[float]:
    """
    The bubble offset p: a full vector of n components, or a single value
    taken along the first axis.
    """
    values = parse_floats(text, "--p")
    if values is None:
        return [0.0] * n
    if len(values) == 1:
        return [values[0]] + [0.0] * (n - 1)
    if len(values) != n:
        raise ConfigError(f"--p needs 1 or {n} components, got {len(values)}")
    return values
