"""Module containing the command line app."""
import functools
import pathlib
import sys
from typing import Any, Callable, Optional, Tuple

import click
import numpy as np

from qpnls import cauchy, linflow, linop, newton, resonance, serialization
from qpnls.configuration import OUTPUT_FORMATS, load_run_config
from qpnls.data_structures import RunConfig, SpatialField
from qpnls.helpers import (
    ConvergenceError,
    EnvelopeViolationError,
    ExcisionError,
    QpnlsError,
    configure_logging,
    exit_code_for,
    stage,
)


def common_options(command: Callable) -> Callable:
    """Attaches the options shared by every subcommand."""
    decorators = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(exists=True, dir_okay=False),
            required=True,
            help="The TOML file describing the problem, the modes and the truncation.",
        ),
        click.option(
            "--out",
            "output_dir",
            type=click.Path(file_okay=False),
            default=None,
            help=(
                "The directory the outputs are written to. If omitted, the output_dir of the "
                "[run] section is used."
            ),
        ),
        click.option(
            "--seed",
            type=click.IntRange(min=0, max=2 ** 64 - 1),
            default=None,
            help="The master seed of every random draw. If omitted, the [run] seed is used.",
        ),
        click.option(
            "--threads",
            type=click.IntRange(min=1),
            default=None,
            help=(
                "Cap on the worker threads. If omitted, the executors choose the number of "
                "workers themselves."
            ),
        ),
        click.option(
            "--format",
            "formats",
            type=click.Choice(OUTPUT_FORMATS),
            multiple=True,
            help="An output format; repeat the flag for several. Defaults to the [run] formats.",
        ),
    ]
    for decorator in reversed(decorators):
        command = decorator(command)
    return command


def handle_errors(command: Callable) -> Callable:
    """Reports library errors with their stage and exits with the mapped code."""

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            command(*args, **kwargs)
        except QpnlsError as error:
            click.echo(repr(error))
            click.echo(f"Stage: {error.stage or 'unknown'}")
            code = exit_code_for(error)
            click.echo(f"Process finished with exit code {code}")
            sys.exit(code)
        click.echo("Process finished with exit code 0")

    return wrapper


def load(
    config_path: str,
    output_dir: Optional[str],
    seed: Optional[int],
    threads: Optional[int],
    formats: Tuple[str, ...],
) -> RunConfig:
    configure_logging()
    overrides = {
        "output_dir": output_dir,
        "seed": seed,
        "threads": threads,
        "formats": list(formats) or None,
    }
    with stage("config"):
        config = load_run_config(pathlib.Path(config_path), overrides)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    click.echo(f"Loaded {config_path} (config hash {config.config_hash[:12]}...)")
    return config


def require_excision(config: RunConfig) -> None:
    """Stops a run whose amplitudes fall in the excised set, unless the gate is switched off."""
    if not config.check_excision:
        return
    with stage("excise"):
        resonance.require_excision(config.mode_data, config.problem, config.modes, config.trunc)


def solve_base(config: RunConfig, require_convergence: bool = True) -> Any:
    require_excision(config)
    with stage("solve"):
        solution = newton.run_scheme(
            config.problem,
            config.modes,
            config.mode_data,
            config.trunc,
            require_convergence=require_convergence,
        )
    click.echo(
        f"Newton scheme: {solution.iterations} sweep(s), residual {solution.residual_norm:.3e}"
    )
    return solution


def initial_data(config: RunConfig) -> SpatialField:
    radius = cauchy.projection_radius(config.problem, config.modes, config.cauchy.radius_factor)
    return cauchy.build_initial_data(
        config.modes,
        config.mode_data,
        config.problem,
        config.cauchy.tail_amplitude,
        radius,
        config.seed,
    )


##########################################################################################


@click.group()
def qpnls():
    """qpnls constructs and validates quasi-periodic solutions of nonlinear Schrodinger equations.

    Every subcommand reads one TOML configuration file and writes its outputs, stamped with the
    SHA-256 hash of that file, to the output directory. Set QPNLS_LOG to DEBUG, INFO, WARNING or
    ERROR for library logs.

    \b
    Exit codes:
    \b
    0    success
    1    invalid input or any other failure
    2    excision failure (a resonant determinant fell below epsilon)
    3    convergence failure
    4    a measured quantity left its envelope
    """
    pass


@qpnls.command(name="solve")
@common_options
@click.option(
    "--dump-matrix",
    is_flag=True,
    default=False,
    help="Also write the final linearized operator T_N in coordinate text format.",
)
@handle_errors
def solve(config_path, output_dir, seed, threads, formats, dump_matrix):
    """Runs the Newton scheme and writes the coefficients, the iteration log and a summary."""
    config = load(config_path, output_dir, seed, threads, formats)
    solution = solve_base(config)
    directory = config.output_dir
    serialization.write_field(
        solution.u_hat, directory, "solution", config.formats, config.config_hash
    )
    serialization.write_iterations(
        solution.history, directory / "iterations.jsonl", config.config_hash
    )
    summary = {
        "residual_norm": solution.residual_norm,
        "target": abs(config.problem.delta) ** config.problem.r,
        "iterations": solution.iterations,
        "omega": solution.omega,
        "dropped_mass": solution.u_hat.dropped_mass,
    }
    serialization.write_json(summary, directory / "summary.json", config.config_hash)
    if dump_matrix:
        operator = linop.assemble_T_N(
            solution.u_hat,
            solution.v_hat,
            solution.omega,
            config.problem,
            config.trunc,
            config.modes,
        )
        serialization.write_matrix(operator, directory / "operator.txt", config.config_hash)
    click.echo(f"Outputs written to {directory}")


@qpnls.command(name="residual")
@common_options
@handle_errors
def residual(config_path, output_dir, seed, threads, formats):
    """Checks the residual of the solution and the residuals of its a- and omega-derivatives."""
    config = load(config_path, output_dir, seed, threads, formats)
    solution = solve_base(config, require_convergence=False)
    with stage("residual"):
        report = newton.derivative_residuals(solution, config.problem)
    serialization.write_field(
        solution.xi_hat, config.output_dir, "residual", config.formats, config.config_hash
    )
    target = abs(config.problem.delta) ** config.problem.r
    serialization.write_json(
        {"residual_norm": solution.residual_norm, "target": target, "derivatives": report},
        config.output_dir / "residual.json",
        config.config_hash,
    )
    click.echo(
        f"Residual {solution.residual_norm:.3e}, max da {max(report.da_norms):.3e}, "
        f"max domega {max(report.domega_norms):.3e}"
    )
    if solution.residual_norm > target or not report.passed:
        raise ConvergenceError("The residual or its derivatives missed their targets.")


@qpnls.command(name="resonance")
@common_options
@handle_errors
def resonance_command(config_path, output_dir, seed, threads, formats):
    """Enumerates the resonance geometry and estimates the excised measure by Monte Carlo."""
    config = load(config_path, output_dir, seed, threads, formats)
    with stage("resonance"):
        report = resonance.resonance_report(
            config.mode_data,
            config.problem,
            config.modes,
            config.trunc,
            config.resonance.samples,
            config.seed,
            config.resonance.eps_grid,
            config.threads,
        )
    write_resonance(config, report, "resonance")
    fit = report.measure_fit
    click.echo(
        f"{len(report.components)} component(s); excised fractions {fit.fractions}, "
        f"fitted exponent {fit.exponent:.3f}"
    )


@qpnls.command(name="excise")
@common_options
@handle_errors
def excise(config_path, output_dir, seed, threads, formats):
    """Decides whether the configured amplitudes survive the excision at threshold epsilon."""
    config = load(config_path, output_dir, seed, threads, formats)
    with stage("excise"):
        report = resonance.excision_check(
            config.mode_data, config.problem, config.modes, config.trunc
        )
    write_resonance(config, report, "excision")
    click.echo(
        f"min |det Gamma| {report.min_gamma_det:.3e}, min |det M| {report.min_m_det:.3e}"
    )
    if not report.verdict:
        error = ExcisionError(
            f"The amplitudes fall in the excised set at epsilon = {config.problem.epsilon}."
        )
        error.stage = "excise"
        raise error


def write_resonance(config: RunConfig, report: Any, stem: str) -> None:
    payload = {
        "variety_size": len(report.variety),
        "components": report.components,
        "gamma_dets": report.gamma_dets,
        "m_dets": report.m_dets,
        "min_gamma_det": report.min_gamma_det,
        "min_m_det": report.min_m_det,
        "verdict": report.verdict,
        "measure_fit": report.measure_fit,
    }
    serialization.write_json(payload, config.output_dir / f"{stem}.json", config.config_hash)
    if "csv" in config.formats and report.measure_fit is not None:
        fit = report.measure_fit
        serialization.write_csv(
            ("eps", "fraction"),
            zip(fit.eps_grid, fit.fractions),
            config.output_dir / f"{stem}_measure.csv",
            config.config_hash,
        )


@qpnls.command(name="linflow")
@common_options
@handle_errors
def linflow_command(config_path, output_dir, seed, threads, formats):
    """Builds the basis of the linearized flow and checks its spanning, growth and defects."""
    config = load(config_path, output_dir, seed, threads, formats)
    settings = config.linflow
    base = solve_base(config)
    with stage("linflow"):
        family = linflow.build_basis_family(
            base, config.problem, settings.band_radius, settings.h, config.threads
        )
        sigma_min, spanning = linflow.gram_spanning_check(family, settings.gram_floor)
        flow = linflow.flow_norm_bound(
            base,
            config.problem,
            settings.flow_samples,
            settings.horizon,
            settings.dt,
            config.seed,
            settings.band_radius,
            config.threads,
        )
        duhamel = linflow.duhamel_basis_check(
            family, base, config.problem, settings.horizon, settings.dt
        )
    payload = {
        "band_radius": family.band_radius,
        "min_singular": sigma_min,
        "spanning_passed": spanning,
        "ivnu_defect": family.ivnu_defect,
        "flow": flow,
        "duhamel": {
            "max_constant": duhamel.max_constant,
            "identity_residual": duhamel.identity_residual,
            "defect_constants": [
                {"j": j, "constant": constant}
                for j, constant in duhamel.defect_constants.items()
            ],
            "passed": duhamel.passed,
        },
    }
    serialization.write_json(payload, config.output_dir / "linflow.json", config.config_hash)
    click.echo(
        f"sigma_min {sigma_min:.3e}, flow ratio {flow.worst_ratio:.3e}, "
        f"defect constant {duhamel.max_constant:.3e}"
    )
    failures = [
        name
        for name, passed in (
            ("spanning", spanning), ("flow bound", flow.passed), ("Duhamel", duhamel.passed)
        )
        if not passed
    ]
    if failures:
        error = EnvelopeViolationError(f"Failed linearized-flow checks: {', '.join(failures)}.")
        error.stage = "linflow"
        raise error


@qpnls.command(name="match")
@common_options
@handle_errors
def match(config_path, output_dir, seed, threads, formats):
    """Matches seeded initial data with a quasi-periodic solution at t = 0."""
    config = load(config_path, output_dir, seed, threads, formats)
    require_excision(config)
    u0 = initial_data(config)
    with stage("match"):
        problem = cauchy.build_match_problem(
            u0, config.modes, config.problem, config.cauchy.radius_factor
        )
        trunc = cauchy.match_truncation(config.trunc, problem, config.cauchy.aux_order)
        alpha, solution = cauchy.solve_match(
            problem, config.problem, trunc, config.cauchy.match_tolerance, config.threads
        )
    v0 = cauchy.initial_slice(solution, u0.radius)
    init_error = float(np.sqrt((np.abs(v0.coefficients - u0.coefficients) ** 2).sum()))
    scale = abs(config.problem.delta) ** config.problem.r
    payload = {
        "window": problem.window,
        "projection_radius": problem.projection_radius,
        "alpha": alpha,
        "init_error": init_error,
        "margin": init_error / scale - 1.0 if scale > 0 else None,
    }
    serialization.write_json(payload, config.output_dir / "match.json", config.config_hash)
    serialization.write_field(
        solution.u_hat, config.output_dir, "matched", config.formats, config.config_hash
    )
    click.echo(f"Matched {len(problem.window)} window frequencies, init error {init_error:.3e}")


@qpnls.command(name="validate")
@common_options
@click.option(
    "--skip-remainder",
    is_flag=True,
    default=False,
    help="Skip the Duhamel evolution of the remainder.",
)
@handle_errors
def validate(config_path, output_dir, seed, threads, formats, skip_remainder):
    """Runs the Cauchy pipeline end to end and compares the matched solution with the oracle."""
    config = load(config_path, output_dir, seed, threads, formats)
    u0 = initial_data(config)
    with stage("validate"):
        result = cauchy.validate_cauchy(
            u0,
            config.problem,
            config.modes,
            config.trunc,
            config.cauchy,
            threads=config.threads,
            check_remainder=config.check_remainder and not skip_remainder,
            mode_data=config.mode_data if config.check_excision else None,
        )
    scale = abs(config.problem.delta) ** config.problem.r
    payload = {
        "stages": {
            "match": True,
            "envelope": bool(np.all(result.trajectory_errors <= result.envelope + 1e-9)),
            "remainder": result.remainder_bound_ok,
        },
        "init_error": result.init_error,
        "init_error_analytic": result.init_error_analytic,
        "margin": result.init_error / scale - 1.0 if scale > 0 else None,
        "times": result.times,
        "errors": result.trajectory_errors,
        "envelope": result.envelope,
        "remainder": result.remainder,
        "passed": result.passed,
    }
    serialization.write_json(payload, config.output_dir / "cauchy.json", config.config_hash)
    serialization.write_csv(
        ("t", "error_L2", "error_analytic", "mass", "hamiltonian"),
        zip(
            result.times,
            result.trajectory_errors,
            result.trajectory_errors_analytic,
            result.mass,
            result.hamiltonian,
        ),
        config.output_dir / "trajectory.csv",
        config.config_hash,
    )
    click.echo(
        f"init error {result.init_error:.3e}, max error {float(result.trajectory_errors.max()):.3e}"
    )
    if not result.passed:
        error = EnvelopeViolationError("The trajectory error left its envelope.")
        error.stage = "validate"
        raise error


@qpnls.command(name="oracle")
@common_options
@click.option(
    "--horizon",
    type=click.FLOAT,
    default=None,
    help="The final time. If omitted, the [cauchy] horizon or delta^(-1.2) is used.",
)
@handle_errors
def oracle(config_path, output_dir, seed, threads, formats, horizon):
    """Integrates the full equation from the seeded initial data by split-step Fourier."""
    config = load(config_path, output_dir, seed, threads, formats)
    u0 = initial_data(config)
    T = horizon or config.cauchy.horizon or cauchy.default_horizon(config.problem)
    with stage("oracle"):
        trajectory = cauchy.oracle_integrate(
            u0,
            config.problem,
            T,
            samples=config.cauchy.samples,
            halving_tolerance=config.cauchy.halving_tolerance,
        )
    serialization.write_csv(
        ("t", "mass", "hamiltonian"),
        zip(trajectory.times, trajectory.mass, trajectory.hamiltonian),
        config.output_dir / "oracle.csv",
        config.config_hash,
    )
    drift = float(np.ptp(trajectory.mass))
    serialization.write_json(
        {
            "dt": trajectory.dt,
            "horizon": T,
            "mass_drift": drift,
            "hamiltonian": trajectory.hamiltonian,
        },
        config.output_dir / "oracle.json",
        config.config_hash,
    )
    click.echo(f"Integrated to t = {T:.3g} with dt = {trajectory.dt:.1e}, mass drift {drift:.1e}")


if __name__ == "__main__":
    qpnls()
