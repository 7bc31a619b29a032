"""Main CLI application entry point."""

from __future__ import annotations

from typing import Annotated

import typer
from rich.console import Console

from elreduce import __version__
from elreduce.commands import constants, pipeline, sweep
from elreduce.log import setup_logging

app = typer.Typer(
    name="el-reduce",
    help="El-Reduce - finite-dimensional reduction engine for the Einstein-Lichnerowicz system",
    no_args_is_help=True,
)

console = Console()


def version_callback(value: bool) -> None:
    if value:
        console.print(f"el-reduce version {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    version: Annotated[
        bool | None,
        typer.Option(
            "--version", "-v", callback=version_callback, is_eager=True, help="Show version and exit"
        ),
    ] = None,
    verbose: Annotated[
        bool, typer.Option("--verbose", help="Log per-iteration diagnostics")
    ] = False,
) -> None:
    """El-Reduce - blow-up constructions for the Einstein-Lichnerowicz system."""
    setup_logging(verbose)


# Constants and background checks
app.command("constants")(constants.constants)
app.command("ground-state")(constants.ground_state)
app.command("green-check")(constants.green_check)

# Reduction pipeline
app.command("reduce")(pipeline.reduce)
app.command("zero-find")(pipeline.zero_find)
app.command("sweep")(sweep.sweep)


if __name__ == "__main__":
    app()
