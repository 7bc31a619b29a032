"""Reduction and zero-finding commands."""

from __future__ import annotations

from typing import Annotated

import numpy as np
import typer
from rich.console import Console
from rich.table import Table

from elreduce.commands.common import ConfigOption, OutOption, handle_errors, parse_offset
from elreduce.config import DEFAULT_OUT_DIR, load_config, numerics, save_json
from elreduce.core.expansion import blowup_certificate, normalized_lambdas, zero_scale
from elreduce.core.model import make_model, solve_ground_state
from elreduce.core.output import RunManifest, write_csv, write_field, write_tensor
from elreduce.core.reduction import ReductionEngine

console = Console()

POffset = Annotated[
    str | None,
    typer.Option("--p", help="Bubble offset p: n comma-separated components or one value along the first axis"),
]


def reduce(
    config: ConfigOption = None,
    out: OutOption = DEFAULT_OUT_DIR,
    t: Annotated[float, typer.Option("--t", help="Bubble parameter t in [1/D, D]")] = 1.0,
    p: POffset = None,
) -> None:
    """Run the inner Picard and outer ping-pong fixed points and write lambda(t, p)."""
    with handle_errors():
        cfg = load_config(config)
        model = make_model(cfg)
        offset = parse_offset(p, model.n)
        manifest = RunManifest("reduce", cfg)
        with console.status(f"Reducing at t = {t:g}..."):
            with manifest.timed("ground_state"):
                ground = solve_ground_state(model)
            engine = ReductionEngine(model, ground, numerics(cfg))
            with manifest.timed("pingpong_outer"):
                state = engine.pingpong_outer(t, np.asarray(offset))
            with manifest.timed("monitors"):
                monitors = engine.pointwise_monitors(state)

        normalized = normalized_lambdas(state)
        gram = np.diag(state.context.basis.gram)
        rows = [(i, state.lambdas[i], normalized[i], gram[i]) for i in range(model.n + 1)]
        manifest.add_output(write_csv(out / "lambdas.csv", ("i", "lambda", "normalized", "gram"), rows))
        manifest.add_output(write_field(out / "phi.csv", state.phi))
        manifest.add_output(write_tensor(out / "lt.csv", state.lt))
        manifest.add_output(save_json(out / "monitors.json", monitors.as_dict()))
        summary = state.summary()
        summary["blowup_certificate"] = blowup_certificate(state)
        manifest.constants = summary
        manifest.write(out / "reduce_manifest.json")

    table = Table(title=f"lambda(t = {t:g}, |p| = {np.linalg.norm(offset):.3g}), mu = {model.mu:.4g}")
    table.add_column("i", style="cyan", justify="right")
    table.add_column("lambda_i", justify="right", style="green")
    table.add_column("normalized", justify="right")
    for i, lam, norm, _ in rows:
        table.add_row(str(i), f"{lam:.10e}", f"{norm:.10e}")
    console.print(table)
    console.print(
        f"C0 = {state.c0:.4g}, eps_k = {state.eps_k:.4g}, "
        f"inner contraction {max(state.diagnostics.inner_contraction):.3g}, "
        f"outer contraction {state.diagnostics.outer_contraction:.3g}"
    )
    for flag in monitors.flags:
        console.print(f"[yellow]![/yellow] Monitor threshold breached: {flag}")


def zero_find(
    config: ConfigOption = None,
    out: OutOption = DEFAULT_OUT_DIR,
    p: POffset = None,
    max_iter: Annotated[int, typer.Option("--max-iter", help="Maximum Newton iterations")] = 20,
) -> None:
    """Locate a zero of lambda(t, p) seeded at (t0, p)."""
    with handle_errors():
        cfg = load_config(config)
        model = make_model(cfg)
        seed = parse_offset(p, model.n)
        manifest = RunManifest("zero-find", cfg)
        with console.status("Searching for a zero of the reduced map..."), manifest.timed("find_zero"):
            result, t0 = zero_scale(cfg, seed, max_iter=max_iter)
        record = {**result.as_dict(), "t0": t0, "mu": model.mu}
        manifest.add_output(save_json(out / "zero.json", record))
        manifest.constants = record
        manifest.write(out / "zero_manifest.json")

    table = Table(title=f"Zero of the reduced map (n = {model.n}, mu = {model.mu:.4g})")
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", justify="right", style="green")
    table.add_row("t*", f"{result.t:.12g}")
    table.add_row("t0", f"{t0:.12g}")
    table.add_row("|p*|", f"{np.linalg.norm(result.p):.4g}")
    table.add_row("|lambda|", f"{result.residual:.4e}")
    table.add_row("|lambda(seed)|", f"{result.seed_residual:.4e}")
    table.add_row("method", result.method)
    table.add_row("certificate", "yes" if result.certificate else "no")
    console.print(table)
