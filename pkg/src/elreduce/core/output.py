"""CSV tables, field dumps and run manifests."""

from __future__ import annotations

import csv
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from elreduce import __version__
from elreduce.config import save_json
from elreduce.core.exceptions import NumericalError
from elreduce.core.harmonic_elliptic import HarmonicField
from elreduce.core.vector_green import TensorField

logger = logging.getLogger(__name__)

EXPANSION_COLUMNS = ("name", "n", "mu", "closed_form", "quadrature", "pipeline", "rel_err", "order")


def format_cell(value: Any) -> str:
    """Floats at 17 significant digits, None as an empty cell."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a table with a fixed header, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"Row of length {len(row)} does not match {len(columns)} columns")
            writer.writerow([format_cell(v) for v in row])
    logger.info("Wrote %s", path)
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as handle:
        return list(csv.DictReader(handle))


def write_field(path: Path, field_: HarmonicField) -> Path:
    """Dump the l = 0 and l = 1 radial coefficients of a field, one row per node."""
    n = field_.grid.n
    columns = ["r", "mode0", *(f"mode1_{i + 1}" for i in range(n))]
    rows = (
        [r, m0, *m1]
        for r, m0, m1 in zip(field_.grid.nodes, field_.mode0, field_.mode1.T)
    )
    return write_csv(path, columns, rows)


def write_tensor(path: Path, tensor: TensorField) -> Path:
    """Dump the radial profiles a, b, c of an axisymmetric trace-free tensor."""
    columns = ["r", "a", "b", "c", "trace", "norm"]
    rows = zip(
        tensor.grid.nodes,
        tensor.a,
        tensor.b,
        tensor.c,
        tensor.trace_profile,
        tensor.pointwise_norm,
    )
    return write_csv(path, columns, rows)


@dataclass
class RunManifest:
    """Provenance of one command run: config, version, timings, constants and outputs."""

    command: str
    config: dict[str, Any]
    version: str = __version__
    timings: dict[str, float] = field(default_factory=dict)
    constants: dict[str, Any] = field(default_factory=dict)
    outputs: list[Path] = field(default_factory=list)

    @contextmanager
    def timed(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = time.perf_counter() - start

    def add_output(self, path: Path) -> Path:
        self.outputs.append(Path(path))
        return path

    def as_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "version": self.version,
            "config": self.config,
            "timings": self.timings,
            "constants": self.constants,
            "outputs": [str(p) for p in self.outputs],
        }

    def write(self, path: Path) -> Path:
        """
        Write the manifest after checking every listed output.

        Raises:
            NumericalError: If an output is missing or cannot be parsed back.
        """
        for output in self.outputs:
            if not output.exists():
                raise NumericalError(f"Manifest output missing: {output}")
            try:
                if output.suffix == ".json":
                    json.loads(output.read_text())
                elif output.suffix == ".csv":
                    read_csv(output)
            except (ValueError, csv.Error) as e:
                raise NumericalError(f"Manifest output {output} is not re-parseable: {e}") from e
        save_json(path, self.as_dict())
        logger.info("Wrote manifest %s", path)
        return Path(path)
