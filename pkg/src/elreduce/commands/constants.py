"""Constants, background solution and Green-function checks."""

from __future__ import annotations

import logging
import math
from typing import Annotated

import numpy as np
import typer
from rich.console import Console
from rich.table import Table

from elreduce.commands.common import ConfigOption, OutOption, handle_errors
from elreduce.config import DEFAULT_OUT_DIR, load_config, numerics
from elreduce.core.expansion import interaction_coefficient, model_kappa
from elreduce.core.harmonic_elliptic import (
    HarmonicField,
    RadialGrid,
    assemble_operator,
    background_margins,
    coercivity_margins,
    green_bounds,
    green_function,
)
from elreduce.core.model import make_model, solve_ground_state
from elreduce.core.output import RunManifest, write_csv, write_tensor
from elreduce.core.profiles import BubbleParams, bubble_radial
from elreduce.core.quadrature import (
    KappaParams,
    QuadratureSpec,
    bubble_energy,
    critical_alpha,
    gram_V,
    i3_constant,
    sobolev_constant,
)
from elreduce.core.vector_green import convolve_LgT, decay_exponent, kelvin_far_constant, theta_asymptotic

console = Console()
logger = logging.getLogger(__name__)

CONSTANT_COLUMNS = ("name", "n", "closed_form", "quadrature", "rel_err", "flag", "provenance")


def _rel(closed: float | None, quad: float | None) -> float | None:
    if closed is None or quad is None or closed == 0:
        return None
    return abs(quad - closed) / abs(closed)


def constant_rows(config: dict) -> list[tuple]:
    """Every measured constant of one configuration with its provenance."""
    model = make_model(config)
    n, f0 = model.n, model.f0
    spec = QuadratureSpec(rel_tol=float(numerics(config)["quad_rel_tol"]))
    energy, _ = bubble_energy(n, 1.0, spec)
    k_closed = sobolev_constant(n)
    gram = gram_V(n, f0, spec)
    rows = [
        ("K_n", n, k_closed, energy ** (-1.0 / n), _rel(k_closed, energy ** (-1.0 / n)), "", "sharp Sobolev constant vs bubble energy"),
        ("K_n^-n", n, k_closed**-n, energy, _rel(k_closed**-n, energy), "", "Dirichlet energy of U_1"),
        ("gram_V00", n, None, gram[0, 0], None, "", "radial quadrature at f0"),
        ("gram_Vii", n, None, gram[1, 1], None, "", "radial quadrature at f0"),
        ("C(n)", n, None, i3_constant(n, spec), None, "", "I_3,i slope constant by quadrature"),
        ("K(n)", n, kelvin_far_constant(n), None, None, "", "Kelvin far-field constant"),
        ("c3_published", n, interaction_coefficient(n, "published"), None, None, "", "I_3,0 coefficient as published"),
        ("c3_flux", n, interaction_coefficient(n, "flux"), None, None, "", "I_3,0 coefficient of the defining integral"),
    ]
    if n == 6:
        ground = solve_ground_state(model)
        kappa_value = model_kappa(model, ground, spec)
        alpha_star = critical_alpha(KappaParams(f0, ground.u0, model.rho0, model.alpha), spec)
        flag = "alpha_above_critical" if model.alpha > alpha_star else ""
        if flag:
            logger.warning("kappa sign: alpha = %.4g exceeds alpha* = %.4g, kappa = %.4g", model.alpha, alpha_star, kappa_value)
        rows.append(("kappa", n, None, kappa_value, None, flag, f"alpha = {model.alpha:g}"))
        rows.append(("alpha_star", n, None, alpha_star, None, "", "root of kappa in alpha"))
    return rows


def constants(config: ConfigOption = None, out: OutOption = DEFAULT_OUT_DIR) -> None:
    """Compute K_n, Gram diagonals, C(n), K(n), kappa and alpha* with provenance."""
    with handle_errors():
        cfg = load_config(config)
        manifest = RunManifest("constants", cfg)
        with console.status("Computing constants..."), manifest.timed("constants"):
            rows = constant_rows(cfg)
        manifest.add_output(write_csv(out / "constants.csv", CONSTANT_COLUMNS, rows))
        manifest.constants = {row[0]: row[2] if row[3] is None else row[3] for row in rows}
        manifest.write(out / "constants_manifest.json")

    table = Table(title=f"Constants (n = {rows[0][1]})")
    table.add_column("Name", style="cyan")
    table.add_column("Closed form", justify="right")
    table.add_column("Quadrature", justify="right")
    table.add_column("Rel. err", justify="right", style="dim")
    table.add_column("Flag", style="yellow")
    for name, _, closed, quad, rel, flag, _ in rows:
        table.add_row(
            name,
            "" if closed is None else f"{closed:.12g}",
            "" if quad is None else f"{quad:.12g}",
            "" if rel is None else f"{rel:.2e}",
            flag,
        )
    console.print(table)


def ground_state(
    config: ConfigOption = None,
    out: OutOption = DEFAULT_OUT_DIR,
    t: Annotated[float, typer.Option("--t", help="Bubble parameter t fixing the grid scale delta = mu t")] = 1.0,
) -> None:
    """Solve for the strictly stable background and report coercivity margins per mode."""
    with handle_errors():
        cfg = load_config(config)
        model = make_model(cfg)
        knobs = numerics(cfg)
        with console.status("Solving the background equation..."):
            ground = solve_ground_state(model)
            delta = model.mu * t
            r_max = max(knobs["rmax_factor"] * math.sqrt(delta), 2.5 * model.r_cut)
            grid = RadialGrid.graded(model.n, delta, r_max, ratio=knobs["grid_ratio"])
            laplace_margins = coercivity_margins(grid, model.h0)
            linear_margins = background_margins(model, grid, ground.u0)
        rows = [
            ("u0", ground.u0),
            ("stability_margin", ground.stability_margin),
            ("eps0", ground.eps0),
            ("truncation_level", ground.truncation_level),
            ("residual", ground.residual),
            ("coercivity_h0_l0", laplace_margins[0]),
            ("coercivity_h0_l1", laplace_margins[1]),
            ("coercivity_linearized_l0", linear_margins[0]),
            ("coercivity_linearized_l1", linear_margins[1]),
        ]
        manifest = RunManifest("ground-state", cfg, constants=dict(rows))
        manifest.add_output(write_csv(out / "ground_state.csv", ("name", "value"), rows))
        manifest.write(out / "ground_state_manifest.json")

    table = Table(title=f"Background solution (n = {model.n})")
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", justify="right", style="green")
    for name, value in rows:
        table.add_row(name, f"{value:.12g}")
    console.print(table)
    if len(ground.roots) > 1:
        console.print(f"[dim]Other positive roots of g: {', '.join(f'{r:.6g}' for r in ground.roots[1:])}[/dim]")


def green_check(
    config: ConfigOption = None,
    out: OutOption = DEFAULT_OUT_DIR,
    t: Annotated[float, typer.Option("--t", help="Bubble parameter t")] = 1.0,
) -> None:
    """Scalar Green-function bounds and the Kelvin far field of a bubble source."""
    with handle_errors():
        cfg = load_config(config)
        model = make_model(cfg)
        knobs = numerics(cfg)
        n = model.n
        with console.status("Solving Green functions..."):
            params = BubbleParams.from_model(model, t)
            delta = params.delta
            width = delta / math.sqrt(params.a)
            r_max = max(knobs["rmax_factor"] * math.sqrt(delta), 2.5 * model.r_cut, 100.0 * width)
            grid = RadialGrid.graded(n, delta, r_max, ratio=knobs["grid_ratio"])
            green = green_function(assemble_operator(grid, model.h0, 0))
            c_low, c_high = green_bounds(grid, green, delta, model.r_cut)

            w = bubble_radial(params, grid.nodes)
            source = HarmonicField.radial(grid, w ** model.two_star)
            x_center = model.alpha * model.mu ** ((n - 1) / 2.0)
            zeta = np.asarray(model.zdir)
            lt = convolve_LgT(source, np.full(grid.size, x_center), zeta)

            window = (grid.nodes >= 20 * width) & (grid.nodes <= 50 * width)
            ratios = []
            for k in np.nonzero(window)[0]:
                expected = theta_asymptotic(n, params.f_center, x_center, zeta, zeta, grid.nodes[k])
                ratios.append(float(np.sum(lt.at(k, zeta) * expected) / np.sum(expected**2)))
            slope = decay_exponent(lt, 20 * width, 50 * width)
        far_error = float(np.max(np.abs(np.asarray(ratios) - 1.0)))
        rows = [
            ("green_lower", c_low),
            ("green_upper", c_high),
            ("kelvin_far_field_max_rel_err", far_error),
            ("kelvin_decay_exponent", slope),
            ("kelvin_decay_expected", 1.0 - n),
            ("lt_trace_ratio", lt.max_trace_ratio()),
        ]
        manifest = RunManifest("green-check", cfg, constants=dict(rows))
        manifest.add_output(write_csv(out / "green_check.csv", ("name", "value"), rows))
        manifest.add_output(write_tensor(out / "kelvin_response.csv", lt))
        manifest.write(out / "green_check_manifest.json")

    table = Table(title=f"Green-function checks (n = {n}, delta = {delta:.4g})")
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", justify="right", style="green")
    for name, value in rows:
        table.add_row(name, f"{value:.8g}")
    console.print(table)
    if abs(slope - (1 - n)) > 0.05:
        console.print(f"[yellow]![/yellow] Decay exponent {slope:.4f} differs from {1 - n} by more than 0.05")
