"""Expansion sweep over concentration scales."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Annotated, Any, Callable

import typer
from rich.console import Console
from rich.table import Table

from elreduce.commands.common import ConfigOption, OutOption, handle_errors, parse_floats, parse_offset
from elreduce.config import DEFAULT_OUT_DIR, load_config, save_json
from elreduce.core.exceptions import ConfigError, MonotonicityError
from elreduce.core.expansion import (
    ExpansionReport,
    convergence_study,
    fit_order,
    monotone_failures,
    scale_report,
    zero_scale,
)
from elreduce.core.model import bump_amplitude, make_model
from elreduce.core.output import EXPANSION_COLUMNS, RunManifest, write_csv
from elreduce.core.vector_green import flag_constant_growth

console = Console()
logger = logging.getLogger(__name__)

DEFAULT_MU_LIST = "0.01,0.005,0.0025,0.00125"
ZERO_COLUMNS = ("mu", "t0", "t_star", "t_gap", "p_norm", "residual", "seed_residual", "method", "certificate")


def scale_config(config: dict, mu: float) -> dict:
    """The configuration whose bump amplitude produces the concentration scale mu."""
    n = int(config["n"])
    lcf = bool(config.get("lcf_flag", True))
    return {**config, "tau": bump_amplitude(n, mu, lcf), "mu": None, "beta": None, "r_cut": None}


def fan_out(fn: Callable[..., Any], jobs: list[tuple], workers: int) -> list[Any]:
    """Run fn over jobs in worker processes; results come back in job order."""
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [future.result() for future in futures]


def expansion_rows(reports: list[ExpansionReport]) -> list[list[Any]]:
    return [record.row() for report in reports for record in report.records]


def sweep(
    config: ConfigOption = None,
    out: OutOption = DEFAULT_OUT_DIR,
    mu_list: Annotated[str, typer.Option("--mu-list", help="Comma-separated concentration scales")] = DEFAULT_MU_LIST,
    t: Annotated[float, typer.Option("--t", help="Bubble parameter t held fixed across scales")] = 1.0,
    p: Annotated[
        str | None, typer.Option("--p", help="Bubble offset p held fixed across scales")
    ] = None,
    workers: Annotated[int, typer.Option("--workers", "-w", help="Worker processes, one scale each")] = 1,
    zero: Annotated[bool, typer.Option("--zero", help="Also locate the zero of lambda at each scale")] = False,
) -> None:
    """Compare closed-form, quadrature and pipeline values of every expansion integral across scales."""
    with handle_errors():
        cfg = load_config(config)
        model = make_model(cfg)
        offset = parse_offset(p, model.n)
        mus = sorted(set(parse_floats(mu_list, "--mu-list") or []), reverse=True)
        if not mus or any(mu <= 0 for mu in mus):
            raise ConfigError("--mu-list needs at least one positive scale")
        if workers < 1:
            raise ConfigError("--workers must be at least 1")

        manifest = RunManifest("sweep", {**cfg, "mu_list": mus, "t": t, "p": offset})
        with console.status(f"Sweeping {len(mus)} scales on {workers} worker(s)..."), manifest.timed("reductions"):
            reports = fan_out(scale_report, [(scale_config(cfg, mu), t, offset) for mu in mus], workers)

        orders: dict[str, float | None] = {}
        failures: list[str] = []
        if len(reports) >= 3:
            orders = convergence_study(reports)
            failures = monotone_failures(reports)
        else:
            logger.warning("Only %d scale(s): the report carries no fitted orders", len(reports))
        lt_constants = [r.monitors.get("lt_constant", 0.0) for r in reports]
        if len(reports) > 1:
            flag_constant_growth(lt_constants)

        manifest.add_output(write_csv(out / "expansion.csv", EXPANSION_COLUMNS, expansion_rows(reports)))
        manifest.add_output(save_json(out / "expansion.json", {"reports": [r.as_dict() for r in reports], "orders": orders}))

        zero_rows = []
        if zero:
            with console.status("Locating zeros..."), manifest.timed("zeros"):
                zeros = fan_out(zero_scale, [(scale_config(cfg, mu), offset) for mu in mus], workers)
            for mu, (result, t0) in zip(mus, zeros):
                zero_rows.append(
                    [
                        mu, t0, result.t, abs(result.t - t0), float(sum(x * x for x in result.p) ** 0.5),
                        result.residual, result.seed_residual, result.method, result.certificate,
                    ]
                )
            manifest.add_output(write_csv(out / "zeros.csv", ZERO_COLUMNS, zero_rows))
            if len(zero_rows) >= 2:
                orders["t_gap"] = fit_order(mus, [row[3] for row in zero_rows])

        manifest.constants = {"orders": orders, "monotone_failures": failures, "lt_constants": lt_constants}
        manifest.write(out / "sweep_manifest.json")
        _print_summary(reports, orders, zero_rows)
        if failures:
            raise MonotonicityError(
                f"Discrepancy not decreasing under mu halving for: {', '.join(failures)}"
            )


def _print_summary(reports: list[ExpansionReport], orders: dict[str, float | None], zero_rows: list[list[Any]]) -> None:
    table = Table(title=f"Expansion sweep (n = {reports[0].n}, {len(reports)} scales)")
    table.add_column("Integral", style="cyan")
    for report in reports:
        table.add_column(f"mu = {report.mu:.3g}", justify="right")
    table.add_column("Order", justify="right", style="green")
    for record in reports[0].records:
        cells = []
        for report in reports:
            rel = report.record(record.name).rel_err
            cells.append("" if rel is None else f"{rel:.2e}")
        order = orders.get(record.name)
        table.add_row(record.name, *cells, "" if order is None else f"{order:.3f}")
    console.print(table)
    for row in zero_rows:
        console.print(f"mu = {row[0]:.4g}: t* = {row[2]:.8g}, t0 = {row[1]:.8g}, certificate {'yes' if row[8] else 'no'}")
