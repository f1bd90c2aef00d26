"""
Identity checks gathered into `{check, value, tolerance, pass}` records, and the JSON
summary the command line writes.
"""
import datetime
import logging
import math
import pathlib

from typing import Callable, Dict, List, Optional

import numpy as np

from pydantic import Field, validator

from mop_kernel.common import write_json
from mop_kernel.ensemble import (
    EnsembleConfig,
    StrictModel,
    Tolerances,
    has_two_eigenvalue_tail,
)
from mop_kernel.errors import ConsistencyError, MopKernelError
from mop_kernel.kernel import (
    Grid,
    KernelBundle,
    _kernel_four_term,
    build_bundle,
    correlation,
    default_grid,
    kernel_cd,
    kernel_grid,
    kernel_sum,
    max_relative_deviation,
    ordering_invariance,
    r1_minimum,
    reproducing_check,
    trace_check,
)
from mop_kernel.mops import C_FORMULA_NAMES, MopSystem, ordering_differences
from mop_kernel.rhp import DUALITY_POINTS, RHProblem, ladder_trend
from mop_kernel.validation import MCConfig, MCReport
from mop_kernel.validation.montecarlo import run_monte_carlo
from mop_kernel.validation.oracle import MAX_ORACLE_N, JointDensityOracle


logger = logging.getLogger(__name__)

JUMP_TREND_SLACK = 1.2
# jump residuals this far below the jump tolerance are quadrature noise
JUMP_FLOOR_FRACTION = 1e-3
JUMP_OFFSETS = (-1.0, 0.0, 1.0)
RH_PRODUCT_TOLERANCE = 1e-5
# two orderings must move some P_k coefficient by at least this much
ORDERING_DIFFERENCE = 1e-3


class CheckResult(StrictModel):
    check: str
    value: float
    tolerance: float
    passed: bool = Field(..., alias="pass")

    @classmethod
    def at_most(cls, check: str, value: float, tolerance: float) -> "CheckResult":
        value = float(value)
        return cls(
            **{
                "check": check,
                "value": value,
                "tolerance": float(tolerance),
                "pass": bool(value <= tolerance),
            }
        )

    @classmethod
    def at_least(cls, check: str, value: float, tolerance: float) -> "CheckResult":
        value = float(value)
        return cls(
            **{
                "check": check,
                "value": value,
                "tolerance": float(tolerance),
                "pass": bool(value >= tolerance),
            }
        )

    @classmethod
    def failed(cls, check: str, tolerance: float) -> "CheckResult":
        return cls(
            **{"check": check, "value": math.nan, "tolerance": float(tolerance), "pass": False}
        )

    def document(self) -> Dict:
        return self.dict(by_alias=True)


class ReportOptions(StrictModel):
    tolerances: Tolerances = Tolerances()
    grid: Optional[Grid] = None
    samples: int = 100_000
    seed: int = 0
    workers: int = 1

    @validator("samples")
    def validate_samples(cls, v):
        if v == 1 or v < 0:
            raise ValueError("samples must be 0 (no Monte Carlo) or at least 2")
        return v

    @validator("workers")
    def validate_workers(cls, v):
        if v < 1:
            raise ValueError("workers must be positive")
        return v


class CheckContext:
    """Lazily built system, bundle and Riemann-Hilbert problem for one configuration."""

    def __init__(self, config: EnsembleConfig, options: ReportOptions):
        self.config = config
        self.options = options
        self.tolerances = options.tolerances
        self.system = MopSystem(config, options.tolerances)
        self.grid = options.grid or default_grid(config.spectrum)
        self._bundle: Optional[KernelBundle] = None
        self._rh: Optional[RHProblem] = None

    @property
    def bundle(self) -> KernelBundle:
        if self._bundle is None:
            self._bundle = build_bundle(self.system)
        return self._bundle

    @property
    def rh(self) -> RHProblem:
        if self._rh is None:
            self._rh = RHProblem(self.system)
        return self._rh

    @property
    def center(self) -> float:
        eigs = self.config.spectrum.eigenvalues
        return 0.5 * (min(eigs) + max(eigs))

    def grid_values(self, form) -> np.ndarray:
        return kernel_grid(self.bundle, self.grid, self.options.workers, form=form)


def _guarded(
    name: str,
    tolerance: float,
    compute: Callable[[], float],
    bound: Callable[[str, float, float], CheckResult] = CheckResult.at_most,
) -> CheckResult:
    try:
        return bound(name, compute(), tolerance)
    except MopKernelError as e:
        logger.error("check %s could not be evaluated: %s", name, e)
        return CheckResult.failed(name, tolerance)


def core_checks(ctx: CheckContext) -> List[CheckResult]:
    tol = ctx.tolerances
    c = ctx.center
    pairs = [(c, c), (c - 1, c + 1), (c + 1, c - 1), (c + 0.5, c), (c - 2, c + 1.5)]
    dense = Grid(lo=ctx.grid.lo, hi=ctx.grid.hi, steps=201)

    def next_moments() -> float:
        return min(
            ctx.system.next_moment_margin(ctx.system.index_P(k))
            for k in range(ctx.config.n + 1)
        )

    return [
        _guarded("biorthogonality", tol.residual, lambda: ctx.system.biorthogonality()[1]),
        _guarded(
            "next_moment_nonzero", tol.breakdown, next_moments, bound=CheckResult.at_least
        ),
        _guarded("trace", tol.trace, lambda: trace_check(ctx.bundle)[1]),
        _guarded(
            "reproducing",
            tol.reproducing,
            lambda: max(reproducing_check(ctx.bundle, x, z) for x, z in pairs),
        ),
        _guarded(
            "r1_nonnegative",
            tol.r1_slack,
            lambda: max(0.0, -r1_minimum(ctx.bundle, dense)),
        ),
    ]


def alternative_ordering(config: EnsembleConfig) -> Optional[List[float]]:
    """A different ordering of the same spectrum, or None when only one exists."""
    alpha = list(config.ordering.alpha)
    for candidate in (alpha[::-1], alpha[1:] + alpha[:1]):
        if candidate != alpha:
            return candidate
    return None


def ordering_checks(ctx: CheckContext) -> List[CheckResult]:
    """The kernel ignores the ordering while the polynomials along it do not."""
    other = alternative_ordering(ctx.config)
    if other is None:
        return []
    reordered: List[MopSystem] = []

    def other_system() -> MopSystem:
        if not reordered:
            reordered.append(ctx.system.with_ordering(other))
        return reordered[0]

    return [
        _guarded(
            "ordering_invariance",
            ctx.tolerances.ordering,
            lambda: ordering_invariance(ctx.bundle, build_bundle(other_system()), ctx.grid),
        ),
        _guarded(
            "ordering_difference",
            ORDERING_DIFFERENCE,
            lambda: ordering_differences(ctx.system, other_system()),
            bound=CheckResult.at_least,
        ),
    ]


def cd_checks(ctx: CheckContext) -> List[CheckResult]:
    """Christoffel-Darboux agreement with the sum form, plus the four-term form when defined."""
    tol = ctx.tolerances.kernel_identity
    if ctx.config.p == 1:
        name = "cd_classical"
    else:
        name = "cd_identity"
    reference: List[np.ndarray] = []

    def against_sum(form) -> float:
        if not reference:
            reference.append(ctx.grid_values(kernel_sum))
        return max_relative_deviation(ctx.grid_values(form), reference[0])

    checks = [_guarded(name, tol, lambda: against_sum(kernel_cd))]
    if ctx.config.p == 2 and has_two_eigenvalue_tail(ctx.config):
        checks.append(
            _guarded("four_term_identity", tol, lambda: against_sum(_kernel_four_term))
        )
    return checks


def algebra_checks(ctx: CheckContext) -> List[CheckResult]:
    """Ladder relations, c-coefficients, structural zeros and recurrence expansions."""
    tol = ctx.tolerances
    system = ctx.system
    n = ctx.config.n
    n1, n2 = ctx.config.spectrum.multiplicities
    checks = [
        _guarded("ladder_P", tol.residual, lambda: system.ladder_check_P(n1, n2).max),
        _guarded("ladder_Q", tol.residual, lambda: system.ladder_check_Q(n1, n2).max),
        _guarded(
            "structural_zeros_below",
            tol.structural_zero,
            lambda: system.structural_zeros()[0],
        ),
        _guarded(
            "structural_zeros_above",
            tol.structural_zero,
            lambda: system.structural_zeros()[1],
        ),
        _guarded(
            "recurrence_xP",
            tol.residual,
            lambda: max(system.recurrence_expansion_residual_P(k) for k in range(n)),
        ),
        _guarded(
            "recurrence_xQ",
            tol.residual,
            lambda: max(system.recurrence_expansion_residual_Q(j) for j in range(n)),
        ),
    ]

    def leading() -> float:
        worst = 0.0
        for index, slot in (((n1 + 1, n2), 0), ((n1, n2 + 1), 1)):
            try:
                system.leading_type1(index, slot)
            except ConsistencyError:
                return math.inf
            worst = max(worst, system.solve_Q(index).residual)
        return worst

    checks.append(_guarded("leading_type1", tol.residual, leading))
    if has_two_eigenvalue_tail(ctx.config):
        try:
            deviations = system.c_formula_check()
        except MopKernelError as e:
            logger.error("c-coefficient formulas could not be evaluated: %s", e)
            checks += [
                CheckResult.failed(f"c_formula {name}", tol.residual)
                for name in C_FORMULA_NAMES
            ]
        else:
            for name in C_FORMULA_NAMES:
                checks.append(
                    CheckResult.at_most(f"c_formula {name}", deviations[name], tol.residual)
                )
    return checks


def rh_checks(ctx: CheckContext) -> List[CheckResult]:
    tol = ctx.tolerances
    checks = [
        _guarded(
            "rh_duality",
            tol.rh_identity,
            lambda: max(ctx.rh.duality_residual(z) for z in DUALITY_POINTS),
        ),
        _guarded(
            "rh_unimodularity",
            tol.rh_identity,
            lambda: max(ctx.rh.unimodularity_residual(z) for z in DUALITY_POINTS),
        ),
        _guarded(
            "rh_kernel_identity",
            tol.kernel_identity,
            lambda: max_relative_deviation(
                ctx.grid_values(lambda b, x, y: ctx.rh.kernel_from_rh(x, y)),
                ctx.grid_values(kernel_cd),
            ),
        ),
        _guarded(
            "rh_product_numeric",
            RH_PRODUCT_TOLERANCE,
            lambda: ctx.rh.rh_product_numeric(ctx.center + 0.5, ctx.center - 0.5),
        ),
    ]
    for kind in ("Y", "X"):
        try:
            far = ctx.rh.asymptotic_residual(kind, 100j)
            near = ctx.rh.asymptotic_residual(kind, 50j)
            # C/|z| extrapolated from |z| = 100, with a factor two of room
            checks.append(
                CheckResult.at_most(f"rh_asymptotics_{kind}", near, 2 * far * 100 / 50)
            )
        except MopKernelError as e:
            logger.error("asymptotics of %s could not be evaluated: %s", kind, e)
            checks.append(CheckResult.failed(f"rh_asymptotics_{kind}", math.nan))
        try:
            ladders = [
                ctx.rh.jump_ladder(ctx.center + offset, kind) for offset in JUMP_OFFSETS
            ]
            checks.append(
                CheckResult.at_most(
                    f"rh_jump_{kind}", max(ladder[-1][1] for ladder in ladders), tol.jump
                )
            )
            floor = tol.jump * JUMP_FLOOR_FRACTION
            checks.append(
                CheckResult.at_most(
                    f"rh_jump_trend_{kind}",
                    max(ladder_trend(ladder, floor) for ladder in ladders),
                    JUMP_TREND_SLACK,
                )
            )
        except MopKernelError as e:
            logger.error("jump of %s could not be evaluated: %s", kind, e)
            checks.append(CheckResult.failed(f"rh_jump_{kind}", tol.jump))
    return checks


def mc_checks(ctx: CheckContext) -> List[CheckResult]:
    tol = ctx.tolerances.mc_sigma
    try:
        report = run_monte_carlo(
            MCConfig(
                spectrum=ctx.config.spectrum,
                samples=ctx.options.samples,
                seed=ctx.options.seed,
                workers=ctx.options.workers,
            ),
            ctx.bundle,
        )
    except MopKernelError as e:
        logger.error("Monte Carlo validation failed: %s", e)
        return [CheckResult.failed("mc_charpoly", tol), CheckResult.failed("mc_density", tol)]
    return mc_results(report, ctx.tolerances)


def mc_results(report: MCReport, tolerances: Tolerances) -> List[CheckResult]:
    return [
        CheckResult.at_most("mc_charpoly", report.max_z_score, tolerances.mc_sigma),
        CheckResult.at_most("mc_density", report.max_bin_deviation, tolerances.mc_sigma),
    ]


def oracle_checks(ctx: CheckContext) -> List[CheckResult]:
    tol = ctx.tolerances.oracle
    c = ctx.center
    oracle = JointDensityOracle(ctx.config)

    def deviation(points) -> float:
        kernel = correlation(ctx.bundle, points)
        return abs(oracle.correlation(points) - kernel) / (1 + abs(kernel))

    checks = [
        _guarded(
            "oracle_R1",
            tol,
            lambda: max(deviation([x]) for x in np.linspace(c - 2, c + 2, 10)),
        )
    ]
    if ctx.config.n >= 2:
        pairs = [
            (c + 0.3, c - 0.3),
            (c, c + 1),
            (c - 1, c + 0.5),
            (c + 1.5, c - 0.7),
            (c + 0.2, c + 0.9),
        ]
        checks.append(
            _guarded("oracle_R2", tol, lambda: max(deviation(list(p)) for p in pairs))
        )
    return checks


def full_report(
    config: EnsembleConfig, options: Optional[ReportOptions] = None
) -> List[CheckResult]:
    """Every identity check that applies to `config`."""
    options = options or ReportOptions()
    ctx = CheckContext(config, options)
    checks = core_checks(ctx)
    if config.p >= 2:
        checks += ordering_checks(ctx)
    if config.p <= 2:
        checks += cd_checks(ctx)
    if config.p == 2:
        checks += algebra_checks(ctx)
        checks += rh_checks(ctx)
    if config.potential.is_gaussian and options.samples > 0:
        checks += mc_checks(ctx)
    if config.n <= MAX_ORACLE_N:
        checks += oracle_checks(ctx)
    failing = failing_checks(checks)
    logger.info("%s of %s checks passed", len(checks) - len(failing), len(checks))
    return checks


def failing_checks(checks: List[CheckResult]) -> List[str]:
    return [c.check for c in checks if not c.passed]


def write_summary(
    path: pathlib.Path, checks: List[CheckResult], config: EnsembleConfig
) -> None:
    """The `generated_at` field is the only part that differs between identical runs."""
    write_json(
        {
            "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "config": config.to_document(),
            "checks": [c.document() for c in checks],
        },
        str(path),
    )
