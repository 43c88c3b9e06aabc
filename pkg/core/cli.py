#!/usr/bin/env python3
"""
basis-completion CLI - low-rank matrix completion in arbitrary bases.

Runs phase-transition sweeps, the EDG localization demo and certificate
audits, and prints the diagnostics and sample bounds of a basis.
"""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, NoReturn

import numpy as np
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from core.basis_families import FAMILIES, make_basis, validate_basis, write_basis
from core.config import ExperimentConfig, load_experiment_config
from core.diagnostics import coherence_profile, sample_bound
from core.errors import CompletionError, InvalidInputError
from core.experiments import (
    BasisContext,
    ExperimentResult,
    build_context,
    planted_matrix,
    run_certificate_audit,
    run_edg_demo,
    resolve_m,
    run_phase_transition,
)
from core.rng import make_rng
from core.verdicts import format_checks

# CLI App
app = typer.Typer(
    name="basis-completion",
    help="Low-rank matrix completion in arbitrary bases - experiments and diagnostics",
    no_args_is_help=True,
)

console = Console()
err_console = Console(stderr=True)


@app.callback()
def main(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
):
    """Low-rank matrix completion in arbitrary bases."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )


def _fail(e: Exception) -> NoReturn:
    err_console.print(f"[red]Error:[/red] {e}")
    raise typer.Exit(1) from e


def _load(config: Path | None, overrides: dict[str, Any]) -> ExperimentConfig:
    try:
        return load_experiment_config(config, overrides)
    except CompletionError as e:
        _fail(e)


def _print_summaries(result: ExperimentResult, title: str, columns: list[str]) -> None:
    table = Table(title=title)
    for name in columns:
        table.add_column(name, style="cyan" if name in ("n", "r", "m") else None)
    for row in result.summaries:
        table.add_row(*(_short(row.get(name)) for name in columns))
    console.print(table)
    if result.path:
        console.print(f"[green]Written:[/green] {result.path}")


def _short(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


# =============================================================================
# EXPERIMENTS
# =============================================================================


@app.command()
def phase(
    config: Path | None = typer.Option(None, "--config", "-c", help="key=value config file"),
    family: str | None = typer.Option(None, "--family", "-f", help="Basis family"),
    seed: int | None = typer.Option(None, "--seed", help="Master seed"),
    out: Path | None = typer.Option(None, "--out", "-o", help="CSV output path"),
    trials: int | None = typer.Option(None, "--trials", "-t", help="Trials per cell"),
    beta: float | None = typer.Option(None, "--beta", help="Confidence exponent"),
    workers: int | None = typer.Option(None, "--workers", "-w", help="Parallel trials"),
):
    """Recovery success rate over an (n, r, m) grid."""
    cfg = _load(
        config,
        {"family": family, "seed": seed, "out": out, "trials": trials, "beta": beta, "workers": workers},
    )
    try:
        result = run_phase_transition(cfg)
    except CompletionError as e:
        _fail(e)
    _print_summaries(result, f"Phase transition - {cfg.family}", ["n", "r", "m", "trials", "success_rate"])


@app.command()
def edg(
    n: int | None = typer.Argument(None, help="Number of points (default: first n of --config)"),
    r: int | None = typer.Argument(None, help="Embedding dimension (default: first r of --config)"),
    config: Path | None = typer.Option(None, "--config", "-c", help="key=value config file"),
    m: int | None = typer.Option(None, "--m", "-m", help="Sampled pairs (default: all, or the config's m grid)"),
    seed: int | None = typer.Option(None, "--seed", help="Master seed"),
    out: Path | None = typer.Option(None, "--out", "-o", help="CSV output path (default: edg_demo.csv)"),
    trials: int | None = typer.Option(None, "--trials", "-t", help="Independent point sets (default: 1)"),
    beta: float | None = typer.Option(None, "--beta", help="Confidence exponent for the sample bound"),
    workers: int | None = typer.Option(None, "--workers", "-w", help="Parallel trials"),
    max_iter: int | None = typer.Option(None, "--max-iter", help="Solver iterations"),
    json_output: bool = typer.Option(False, "--json", "-j", help="JSON Output"),
):
    """Localizes random points from sampled squared distances."""
    defaults: dict[str, Any] = {} if config else {"trials": 1, "workers": 1, "out": Path("edg_demo.csv")}
    flags = {"seed": seed, "out": out, "trials": trials, "beta": beta, "workers": workers}
    cfg = _load(config, {**defaults, **{k: v for k, v in flags.items() if v is not None}})
    n = n or cfg.n[0]
    r = r or cfg.r[0]
    if m is None and config is not None:
        m = resolve_m(cfg.m_mode, cfg.m[0], (n, n), r)
    solver = cfg.solver if max_iter is None else replace(cfg.solver, max_iter=max_iter)

    try:
        result = run_edg_demo(
            n,
            r,
            m,
            cfg.seed,
            cfg.out,
            solver,
            cfg.success_tol,
            cfg.max_draws,
            trials=cfg.trials,
            workers=cfg.workers,
            beta=cfg.beta,
        )
    except CompletionError as e:
        _fail(e)

    summary = result.summaries[0]
    if cfg.trials > 1:
        if json_output:
            console.print_json(json.dumps(summary, default=str))
            return
        _print_summaries(result, "EDG localization", ["n", "r", "m", "trials", "success_rate"])
        return

    row = result.rows[0]
    if json_output:
        console.print_json(json.dumps(row, default=str))
        return

    status = "[green]recovered[/green]" if row["success"] else "[yellow]not recovered[/yellow]"
    console.print(f"EDG n={n} r={r} m={summary['m']}: {status}")
    if "error" in row:
        console.print(f"  Error:           {row['error']}")
    else:
        console.print(f"  Gram rel. error: {row['rel_err']:.3e}")
        console.print(f"  Point RMSD:      {row['point_rmsd']:.3e}")
        console.print(f"  Iterations:      {row['iterations']} (converged: {row['converged']})")
        console.print(f"  nu / m_bound:    {row['nu']:.3g} / {row['m_bound']}")
    console.print(f"[green]Written:[/green] {result.path}")


@app.command()
def audit(
    config: Path | None = typer.Option(None, "--config", "-c", help="key=value config file"),
    family: str | None = typer.Option(None, "--family", "-f", help="Basis family"),
    seed: int | None = typer.Option(None, "--seed", help="Master seed"),
    out: Path | None = typer.Option(None, "--out", "-o", help="CSV output path"),
    trials: int | None = typer.Option(None, "--trials", "-t", help="Trials per cell"),
    beta: float | None = typer.Option(None, "--beta", help="Confidence exponent"),
    workers: int | None = typer.Option(None, "--workers", "-w", help="Parallel trials"),
):
    """Golfing certificates against the analytic failure probabilities."""
    cfg = _load(
        config,
        {"family": family, "seed": seed, "out": out, "trials": trials, "beta": beta, "workers": workers},
    )
    try:
        result = run_certificate_audit(cfg)
    except CompletionError as e:
        _fail(e)
    _print_summaries(
        result,
        f"Certificate audit - {cfg.family}",
        ["n", "r", "trials", "failure_rate", "p_total", "within_bound"],
    )


# =============================================================================
# DIAGNOSTICS
# =============================================================================


def _context(family: str, n: int, n2: int | None, basis_file: Path | None, seed: int) -> BasisContext:
    cfg = ExperimentConfig(
        family=family,
        n=(n,),
        n2=n2,
        seed=seed,
        basis_path=str(basis_file) if basis_file else None,
    )
    cfg.validate()
    return build_context(cfg, n)


def _truth(ctx: BasisContext, matrix: Path | None, r: int, seed: int) -> np.ndarray:
    if matrix is not None:
        try:
            return np.loadtxt(matrix, ndmin=2)
        except ValueError as e:
            raise InvalidInputError(f"{matrix}: not a whitespace-separated numeric matrix") from e
    return planted_matrix(ctx, r, make_rng(seed, 1))


@app.command()
def diagnose(
    family: str = typer.Option("entry", "--family", "-f", help=f"One of {', '.join(FAMILIES)}"),
    n: int = typer.Option(10, "--n", "-n", help="Matrix size"),
    r: int = typer.Option(2, "--r", "-r", help="Rank of the planted matrix"),
    n2: int | None = typer.Option(None, "--n2", help="Columns (rectangular entry/hankel)"),
    matrix: Path | None = typer.Option(None, "--matrix", help="Ground truth (whitespace text)"),
    basis_file: Path | None = typer.Option(None, "--basis", help="Custom basis file"),
    seed: int = typer.Option(0, "--seed", help="Seed for the planted matrix"),
    json_output: bool = typer.Option(False, "--json", "-j", help="JSON Output"),
):
    """Prints mu, the Gram spectrum and the coherence profile."""
    try:
        ctx = _context(family, n, n2, basis_file, seed)
        M = _truth(ctx, matrix, r, seed)
        profile = coherence_profile(M, ctx.basis, ctx.dual)
    except (CompletionError, OSError) as e:
        _fail(e)

    validation = validate_basis(ctx.basis)
    data = {**ctx.metadata(), "basis_valid": validation.ok, "r": profile.r, **profile.as_metadata()}
    if json_output:
        console.print_json(json.dumps(data))
        return

    console.print(format_checks(validation.checks), markup=False)

    table = Table(title=f"Diagnostics - {ctx.basis.family} {ctx.basis.shape}")
    table.add_column("Quantity", style="cyan")
    table.add_column("Value")
    for key, value in data.items():
        table.add_row(key, _short(value))
    console.print(table)

    for name in ("simplified_w", "simplified_z", "simplified_joint"):
        bound = getattr(profile, name)
        icon = "[green]OK[/green]" if bound.holds else "[yellow]--[/yellow]"
        console.print(f"{icon} {name}: {bound.lhs:.4g} <= {bound.rhs:.4g}")


@app.command()
def bound(
    family: str = typer.Option("entry", "--family", "-f", help=f"One of {', '.join(FAMILIES)}"),
    n: int = typer.Option(10, "--n", "-n", help="Matrix size"),
    r: int = typer.Option(1, "--r", "-r", help="Rank"),
    nu: float | None = typer.Option(None, "--nu", help="Coherence (default: planted matrix)"),
    beta: float = typer.Option(1.5, "--beta", help="Confidence exponent"),
    c_v: float | None = typer.Option(None, "--c-v", help="Vector coherence constant"),
    c_variant: str = typer.Option("proof", "--c-variant", help="proof or statement"),
    n2: int | None = typer.Option(None, "--n2", help="Columns (rectangular entry/hankel)"),
    basis_file: Path | None = typer.Option(None, "--basis", help="Custom basis file"),
    seed: int = typer.Option(0, "--seed", help="Seed for the planted matrix"),
    json_output: bool = typer.Option(False, "--json", "-j", help="JSON Output"),
):
    """Prints the sample bound, batch layout and failure probabilities."""
    try:
        ctx = _context(family, n, n2, basis_file, seed)
        spectrum = ctx.dual.spectrum if c_v is None else ctx.dual.spectrum.with_c_v(c_v)
        if nu is None:
            nu = coherence_profile(_truth(ctx, None, r, seed), ctx.basis, ctx.dual, c_v=c_v).nu
        constants = sample_bound(
            ctx.basis.n, r, nu, spectrum, ctx.correlation.mu, ctx.basis.L, beta, c_variant
        )
    except CompletionError as e:
        _fail(e)

    data = constants.as_metadata()
    if json_output:
        console.print_json(json.dumps(data))
        return

    console.print(f"[bold]Sample bound[/bold] ({ctx.basis.family}, n={ctx.basis.n}, r={r})")
    console.print(f"  mu = {constants.mu:.4g}, nu = {constants.nu:.4g}, C = {constants.C:.4g}")
    console.print(f"  m >= {constants.m_bound}")
    console.print(f"  l = {constants.l} batches of m_i = {constants.m_i}")

    table = Table(title="Failure probabilities")
    table.add_column("Term", style="cyan")
    table.add_column("Value")
    for key in ("p1", "p2_max", "p3_max", "p4_max", "p_total", "per_step_target"):
        table.add_row(key, f"{data[key]:.3e}")
    console.print(table)


@app.command("export-basis")
def export_basis(
    family: str = typer.Argument(..., help=f"One of {', '.join(FAMILIES)}"),
    n: int = typer.Argument(..., help="Matrix size"),
    out: Path = typer.Option(Path("basis.txt"), "--out", "-o", help="Output path"),
    n2: int | None = typer.Option(None, "--n2", help="Columns (rectangular entry/hankel)"),
    seed: int = typer.Option(0, "--seed", help="Seed for the rank_one vectors"),
    weight_ratio: float = typer.Option(2.0, "--weight-ratio", help="Weighted family spread"),
):
    """Writes a basis in the textual basis format."""
    try:
        basis = make_basis(family, n, n2=n2, seed=seed, weight_ratio=weight_ratio)
        write_basis(out, basis)
    except (CompletionError, OSError) as e:
        _fail(e)
    console.print(f"[green]Written:[/green] {out} ({basis.family}, L={basis.L})")


# =============================================================================
# MAIN
# =============================================================================

if __name__ == "__main__":
    app()
