"""
Batch front door: read an ensemble configuration, run one pipeline, write CSV/JSON
artifacts and, for the checking pipelines, a pass/fail summary.
"""
import functools
import logging
import pathlib
import sys

from typing import Dict, List, Optional, Sequence, Tuple

import click

from click_default_group import DefaultGroup
from pydantic import ValidationError

from mop_kernel.common import write_csv
from mop_kernel.ensemble import EnsembleConfig, Tolerances, format_validation_error
from mop_kernel.ensemble.config_file import parse_config_file
from mop_kernel.errors import (
    ConfigurationError,
    MopKernelError,
    UnsupportedConfigurationError,
)
from mop_kernel.kernel import (
    CD_REQUIRES_TWO,
    Grid,
    build_bundle,
    correlation,
    default_grid,
    kernel_grid,
    write_diagonal,
    write_kernel_grid,
)
from mop_kernel.moments import MomentCache, moment_matrix, write_moment_table, ztilde
from mop_kernel.mops import MopSystem, write_h_table, write_polynomials
from mop_kernel.report import (
    CheckContext,
    CheckResult,
    ReportOptions,
    algebra_checks,
    cd_checks,
    failing_checks,
    full_report,
    mc_results,
    oracle_checks,
    rh_checks,
    write_summary,
)
from mop_kernel.rhp import DUALITY_POINTS, RHProblem, write_jump_ladder, write_rh_samples
from mop_kernel.validation import MCConfig
from mop_kernel.validation.montecarlo import run_monte_carlo, write_histogram, write_mc_report
from mop_kernel.validation.oracle import MAX_ORACLE_N


logger = logging.getLogger(__name__)

SUMMARY_NAME = "summary.json"


def parse_tolerance_overrides(items: Sequence[str]) -> Dict[str, float]:
    """`NAME=VALUE` pairs into a dict; the names are checked by `Tolerances.override`."""
    overrides = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise ConfigurationError(f"tolerance override '{item}' is not NAME=VALUE")
        try:
            overrides[name.strip()] = float(value)
        except ValueError as e:
            raise ConfigurationError(f"tolerance override '{item}': {e}") from e
    return overrides


def make_options(
    tol: Sequence[str],
    grid: Optional[str],
    samples: int,
    seed: int,
    workers: int,
) -> ReportOptions:
    try:
        return ReportOptions(
            tolerances=Tolerances().override(**parse_tolerance_overrides(tol)),
            grid=Grid.parse(grid) if grid else None,
            samples=samples,
            seed=seed,
            workers=workers,
        )
    except ValidationError as e:
        raise ConfigurationError(format_validation_error(e)) from e


def _announce(path: pathlib.Path, rows: Optional[int] = None) -> None:
    if rows is None:
        print(f"Wrote {path}", file=sys.stderr)
    else:
        print(f"Wrote {path} ({rows} rows)", file=sys.stderr)


def _finish(
    out: pathlib.Path, checks: List[CheckResult], config: EnsembleConfig
) -> List[CheckResult]:
    path = out / SUMMARY_NAME
    write_summary(path, checks, config)
    _announce(path)
    return checks


def run_moments(config: EnsembleConfig, options: ReportOptions, out: pathlib.Path) -> None:
    cache = MomentCache(config.potential, options.tolerances)
    table = moment_matrix(config, config.n, config.n, cache)
    det = ztilde(table, config.n)
    logger.info(
        "moment determinant %s (with factorials %s), condition %.3g",
        det.ztilde,
        det.zhat,
        det.condition,
    )
    path = out / "moments.csv"
    _announce(path, write_moment_table(table, path))


def run_polys(config: EnsembleConfig, options: ReportOptions, out: pathlib.Path) -> None:
    system = MopSystem(config, options.tolerances)
    path = out / "polynomials.csv"
    _announce(path, write_polynomials(system, path))
    path = out / "h_table.csv"
    _announce(path, write_h_table(system, path))


def run_kernel(config: EnsembleConfig, options: ReportOptions, out: pathlib.Path) -> None:
    bundle = build_bundle(MopSystem(config, options.tolerances))
    grid = options.grid or default_grid(config.spectrum)
    values = kernel_grid(bundle, grid, options.workers)
    path = out / "kernel.csv"
    _announce(path, write_kernel_grid(grid, values, path))
    path = out / "diagonal.csv"
    _announce(path, write_diagonal(bundle, grid, path))


def run_correlations(
    config: EnsembleConfig, options: ReportOptions, out: pathlib.Path
) -> None:
    """R1 on the grid and R2 on every grid pair."""
    bundle = build_bundle(MopSystem(config, options.tolerances))
    grid = options.grid or default_grid(config.spectrum)
    path = out / "diagonal.csv"
    _announce(path, write_diagonal(bundle, grid, path))
    xs = [float(x) for x in grid.points]
    rows = ((x, y, correlation(bundle, [x, y])) for x in xs for y in xs)
    path = out / "pair_correlation.csv"
    _announce(path, write_csv(["x", "y", "R2"], rows, path))


def run_cd_check(
    config: EnsembleConfig, options: ReportOptions, out: pathlib.Path
) -> List[CheckResult]:
    if config.p > 2:
        raise UnsupportedConfigurationError(CD_REQUIRES_TWO)
    ctx = CheckContext(config, options)
    checks = cd_checks(ctx)
    if config.p == 2:
        checks += algebra_checks(ctx)
    return _finish(out, checks, config)


def run_rh_check(
    config: EnsembleConfig, options: ReportOptions, out: pathlib.Path
) -> List[CheckResult]:
    ctx = CheckContext(config, options)
    problem: RHProblem = ctx.rh
    path = out / "rh_samples.csv"
    _announce(path, write_rh_samples(problem, DUALITY_POINTS, path))
    for kind in ("Y", "X"):
        path = out / f"jump_ladder_{kind}.csv"
        _announce(
            path,
            write_jump_ladder(problem.jump_ladder(ctx.center, kind), ctx.center, path),
        )
    return _finish(out, rh_checks(ctx), config)


def run_mc_validate(
    config: EnsembleConfig, options: ReportOptions, out: pathlib.Path
) -> List[CheckResult]:
    if options.samples == 0:
        raise ConfigurationError("Monte Carlo validation needs --samples of at least 2")
    ctx = CheckContext(config, options)
    cfg = MCConfig(
        spectrum=config.spectrum,
        samples=options.samples,
        seed=options.seed,
        workers=options.workers,
    )
    report = run_monte_carlo(cfg, ctx.bundle)
    path = out / "mc_report.json"
    write_mc_report(report, path)
    _announce(path)
    path = out / "histogram.csv"
    _announce(path, write_histogram(report, path))
    return _finish(out, mc_results(report, options.tolerances), config)


def run_oracle_check(
    config: EnsembleConfig, options: ReportOptions, out: pathlib.Path
) -> List[CheckResult]:
    if config.n > MAX_ORACLE_N:
        raise UnsupportedConfigurationError(
            f"the joint-density oracle handles n <= {MAX_ORACLE_N}, got n = {config.n}"
        )
    return _finish(out, oracle_checks(CheckContext(config, options)), config)


def run_full_report(
    config: EnsembleConfig, options: ReportOptions, out: pathlib.Path
) -> List[CheckResult]:
    return _finish(out, full_report(config, options), config)


def run_pipeline(
    pipeline,
    config_path: str,
    out: str,
    tol: Tuple[str, ...],
    grid: Optional[str],
    samples: int,
    seed: int,
    workers: int,
) -> None:
    """
    Shared driver of every subcommand. Library errors become click errors; failing
    checks end the run with exit status 1 naming each of them.
    """
    try:
        options = make_options(tol, grid, samples, seed, workers)
        config = parse_config_file(pathlib.Path(config_path))
        out_dir = pathlib.Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        logger.info("running %s for n=%s p=%s", pipeline.__name__, config.n, config.p)
        checks = pipeline(config, options, out_dir)
    except (MopKernelError, FileNotFoundError) as e:
        raise click.ClickException(str(e)) from e
    if checks is None:
        return
    failing = failing_checks(checks)
    for check in checks:
        print(
            f"{'PASS' if check.passed else 'FAIL'} {check.check}: "
            f"{check.value:.3g} (tolerance {check.tolerance:.3g})",
            file=sys.stderr,
        )
    if failing:
        raise click.ClickException(f"failing checks: {', '.join(failing)}")


def _install_debugger(pdb: bool) -> None:
    if pdb:

        def handle_exception(exc_type, exc_value, exc_traceback):
            import pdb

            pdb.post_mortem(exc_traceback)

        sys.excepthook = handle_exception


def pipeline_options(f):
    """The flags every subcommand shares."""

    @click.option(
        "-c",
        "--config",
        "config_path",
        required=True,
        type=click.Path(),
        help="path to the ensemble configuration (.json, .yml or .yaml)",
    )
    @click.option(
        "-o", "--out", default=".", type=click.Path(), help="directory for the artifacts"
    )
    @click.option(
        "--tol",
        multiple=True,
        help="Override a tolerance, as NAME=VALUE. May be repeated.",
    )
    @click.option("--grid", default=None, help="kernel grid as XMIN:XMAX:STEPS")
    @click.option(
        "--samples",
        default=100_000,
        type=click.IntRange(min=0),
        help="Monte Carlo sample count (0 skips Monte Carlo in full-report)",
    )
    @click.option(
        "--seed",
        default=0,
        type=click.IntRange(min=0, max=2 ** 64 - 1),
        help="Monte Carlo seed",
    )
    @click.option(
        "--workers",
        default=1,
        type=click.IntRange(min=1),
        help="threads for Monte Carlo and grid evaluation",
    )
    @click.option(
        "--log-level",
        help="Log level.",
        default="INFO",
        type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]),
    )
    @click.option(
        "--pdb", is_flag=True, help="Drop into a postmortem debugger if mop-kernel crashes"
    )
    @functools.wraps(f)
    def wrapper(log_level, pdb, **kwargs):
        logging.basicConfig(level=log_level)
        _install_debugger(pdb)
        return f(**kwargs)

    return wrapper


@click.group(cls=DefaultGroup, default="full-report", default_if_no_args=True)
def main():
    """To get help for subcommands, use the mop-kernel <SUBCOMMAND> --help"""
    pass


@main.command("moments")
@pipeline_options
def moments(**kwargs):
    """Write the moment table moments.csv (row, power, value)."""
    run_pipeline(run_moments, **kwargs)


@main.command("polys")
@pipeline_options
def polys(**kwargs):
    """Write polynomials.csv and h_table.csv for the ordered multi-indices."""
    run_pipeline(run_polys, **kwargs)


@main.command("kernel")
@pipeline_options
def kernel(**kwargs):
    """Write the kernel on the grid (kernel.csv) and its diagonal (diagonal.csv)."""
    run_pipeline(run_kernel, **kwargs)


@main.command("correlations")
@pipeline_options
def correlations(**kwargs):
    """Write the one- and two-point correlation functions on the grid."""
    run_pipeline(run_correlations, **kwargs)


@main.command("cd-check")
@pipeline_options
def cd_check(**kwargs):
    """Check the Christoffel-Darboux forms against the defining sum."""
    run_pipeline(run_cd_check, **kwargs)


@main.command("rh-check")
@pipeline_options
def rh_check(**kwargs):
    """Check duality, jumps and asymptotics of the Riemann-Hilbert matrices."""
    run_pipeline(run_rh_check, **kwargs)


@main.command("mc-validate")
@pipeline_options
def mc_validate(**kwargs):
    """Compare Monte Carlo samples of H + A with the kernel (V(x) = x^2/2 only)."""
    run_pipeline(run_mc_validate, **kwargs)


@main.command("oracle-check")
@pipeline_options
def oracle_check(**kwargs):
    """Compare R1 and R2 with the integrated joint density (n <= 3)."""
    run_pipeline(run_oracle_check, **kwargs)


@main.command("full-report")
@pipeline_options
def full_report_command(**kwargs):
    """Run every identity check that applies and write summary.json.

    The exit status is 0 exactly when every check passes.
    """
    run_pipeline(run_full_report, **kwargs)


if __name__ == "__main__":
    main()
