import logging
import pathlib

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from numpy.polynomial import polynomial as npoly
from pydantic import validator

from mop_kernel.common import write_csv
from mop_kernel.ensemble import (
    EnsembleConfig,
    SourceSpectrum,
    StrictModel,
    has_two_eigenvalue_tail,
)
from mop_kernel.errors import ConfigurationError, UnsupportedConfigurationError
from mop_kernel.moments import composite_gauss_legendre, integrate_refined, truncation_bound
from mop_kernel.mops import MonicPolynomial, MopSystem, TypeIFunction, from_polynomial


logger = logging.getLogger(__name__)

CD_REQUIRES_TWO = "Christoffel-Darboux requires exactly two distinct eigenvalues"
# kernel integrals are refined until they stop moving at this relative level
KERNEL_QUAD_RTOL = 1e-10


class Term(NamedTuple):
    """coef * poly(x) * dual(y), one summand of a Christoffel-Darboux numerator."""

    coef: Union[float, complex]
    poly: np.ndarray
    dual: TypeIFunction


@dataclass(frozen=True, eq=False)
class KernelBundle:
    system: MopSystem
    P: Tuple[MonicPolynomial, ...]
    Q: Tuple[TypeIFunction, ...]
    # None when no Christoffel-Darboux form exists (three or more eigenvalues)
    cd_terms: Optional[Tuple[Term, ...]] = None
    ratios: Tuple[float, ...] = field(default=())

    @property
    def config(self) -> EnsembleConfig:
        return self.system.config

    @property
    def n(self) -> int:
        return self.system.n


def _three_term(system: MopSystem) -> Tuple[Tuple[Term, ...], Tuple[float, float]]:
    n1, n2 = system.config.spectrum.multiplicities
    h = system.h_number
    ratio1 = h((n1, n2), 0) / h((n1 - 1, n2), 0)
    ratio2 = h((n1, n2), 1) / h((n1, n2 - 1), 1)
    terms = (
        Term(1.0, system.solve_P((n1, n2)).coeffs, system.solve_Q((n1, n2))),
        Term(-ratio1, system.solve_P((n1 - 1, n2)).coeffs, system.solve_Q((n1 + 1, n2))),
        Term(-ratio2, system.solve_P((n1, n2 - 1)).coeffs, system.solve_Q((n1, n2 + 1))),
    )
    return terms, (ratio1, ratio2)


def _classical(system: MopSystem) -> Tuple[Tuple[Term, ...], Tuple[float]]:
    """
    One eigenvalue: (1/h_{n-1}) [P_n(x) P_{n-1}(y) - P_{n-1}(x) P_n(y)] e^{a y}.
    """
    n = system.n
    (a,) = system.eigenvalues
    P_n, P_prev = system.solve_P((n,)), system.solve_P((n - 1,))
    inverse = 1.0 / system.h_number((n - 1,), 0)
    terms = (
        Term(inverse, P_n.coeffs, from_polynomial(P_prev.coeffs, a, (n,))),
        Term(-inverse, P_prev.coeffs, from_polynomial(P_n.coeffs, a, (n + 1,))),
    )
    return terms, (inverse,)


def build_bundle(system: MopSystem) -> KernelBundle:
    P = tuple(system.P_k(k) for k in range(system.n))
    Q = tuple(system.Q_k(k) for k in range(system.n))
    cd_terms: Optional[Tuple[Term, ...]] = None
    ratios: Tuple[float, ...] = ()
    if system.p == 2:
        cd_terms, ratios = _three_term(system)
    elif system.p == 1:
        cd_terms, ratios = _classical(system)
    logger.debug("built kernel bundle n=%s p=%s", system.n, system.p)
    return KernelBundle(system, P, Q, cd_terms, ratios)


def _half_weight(system: MopSystem, x: np.ndarray) -> np.ndarray:
    return np.exp(-system.config.potential(x) / 2)


def kernel_sum(b: KernelBundle, x, y) -> np.ndarray:
    """K_n(x, y) = e^{-(V(x) + V(y))/2} sum_k P_k(x) Q_k(y); broadcasts x against y."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    pot = b.config.potential
    total = np.zeros(x.shape)
    for P, Q in zip(b.P, b.Q):
        total = total + P(x) * Q.weighted(pot, y)
    return total * _half_weight(b.system, x)


def cd_evaluate(
    terms: Sequence[Term], system: MopSystem, x, y, gap: float
) -> np.ndarray:
    """
    e^{-(V(x) + V(y))/2} N(x, y) / (x - y) for N = sum coef poly(x) dual(y). Within
    `gap` of the diagonal the removable singularity is replaced by
    N_x(y, y) + N_xx(y, y) (x - y) / 2.
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    pot = system.config.potential
    diff = x - y
    near = np.abs(diff) < gap
    numerator = np.zeros(x.shape, dtype=complex)
    first = np.zeros(x.shape, dtype=complex)
    second = np.zeros(x.shape, dtype=complex)
    for term in terms:
        dual = term.coef * term.dual.weighted(pot, y)
        numerator += npoly.polyval(x, term.poly) * dual
        first += npoly.polyval(y, npoly.polyder(term.poly, 1)) * dual
        second += npoly.polyval(y, npoly.polyder(term.poly, 2)) * dual
    safe = np.where(near, 1.0, diff)
    value = np.where(near, first + 0.5 * second * diff, numerator / safe)
    value = value * _half_weight(system, x)
    return value.real if np.iscomplexobj(value) else value


def kernel_cd(b: KernelBundle, x, y) -> np.ndarray:
    """
    The Christoffel-Darboux form: three boundary terms for two eigenvalues, the
    classical two-term form for one.
    """
    if b.cd_terms is None:
        raise UnsupportedConfigurationError(CD_REQUIRES_TWO)
    return cd_evaluate(b.cd_terms, b.system, x, y, b.system.tolerances.diagonal_gap)


def _four_terms(system: MopSystem) -> Tuple[Term, ...]:
    if system.p != 2:
        raise UnsupportedConfigurationError(CD_REQUIRES_TWO)
    if not has_two_eigenvalue_tail(system.config):
        raise UnsupportedConfigurationError(
            "the four-term form needs an ordering ending in (a1, a2)"
        )
    n = system.n
    c = system.recurrence_c
    return (
        Term(1.0, system.P_k(n).coeffs, system.Q_k(n - 1)),
        Term(-c(n - 2, n), system.P_k(n - 2).coeffs, system.Q_k(n)),
        Term(-c(n - 1, n), system.P_k(n - 1).coeffs, system.Q_k(n)),
        Term(-c(n - 1, n + 1), system.P_k(n - 1).coeffs, system.Q_k(n + 1)),
    )


def _kernel_four_term(b: KernelBundle, x, y) -> np.ndarray:
    """The intermediate four-term form built from c_{n-2,n}, c_{n-1,n}, c_{n-1,n+1}."""
    return cd_evaluate(
        _four_terms(b.system), b.system, x, y, b.system.tolerances.diagonal_gap
    )


def correlation(b: KernelBundle, points: Sequence[float]) -> float:
    """R_m = det(K_n(l_j, l_k))_{j,k=1..m}."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 1 or points.size < 1:
        raise ValueError("correlation needs at least one point")
    matrix = kernel_sum(b, points[:, None], points[None, :])
    return float(np.linalg.det(matrix))


def _kernel_rule(b: KernelBundle):
    a_max = max(abs(a) for a in b.system.eigenvalues)
    L = truncation_bound(b.config.potential, a_max, 2 * b.n)
    return composite_gauss_legendre(-L, L)


def trace_check(b: KernelBundle) -> Tuple[float, float]:
    """int K_n(x, x) dx and its relative deviation from n."""
    value, _ = integrate_refined(
        lambda x: kernel_sum(b, x, x), _kernel_rule(b), KERNEL_QUAD_RTOL
    )
    value = float(value)
    return value, abs(value - b.n) / b.n


def reproducing_check(b: KernelBundle, x: float, z: float) -> float:
    """|int K(x, y) K(y, z) dy - K(x, z)| / (1 + |K(x, z)|)."""
    value, _ = integrate_refined(
        lambda y: kernel_sum(b, x, y) * kernel_sum(b, y, z),
        _kernel_rule(b),
        KERNEL_QUAD_RTOL,
    )
    target = float(kernel_sum(b, x, z))
    return abs(float(value) - target) / (1 + abs(target))


class Grid(StrictModel):
    lo: float
    hi: float
    steps: int

    @validator("steps")
    def validate_steps(cls, v):
        if v < 2:
            raise ValueError("a grid needs at least two steps")
        return v

    @validator("hi")
    def validate_hi(cls, v, values):
        if "lo" in values and not v > values["lo"]:
            raise ValueError("grid upper end must exceed its lower end")
        return v

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.steps)

    @classmethod
    def parse(cls, text: str) -> "Grid":
        """XMIN:XMAX:STEPS, e.g. ``-5:5:21``."""
        try:
            lo, hi, steps = text.split(":")
            return cls(lo=float(lo), hi=float(hi), steps=int(steps))
        except ValueError as e:
            raise ConfigurationError(f"cannot parse grid '{text}': {e}") from e


def default_grid(spectrum: SourceSpectrum, steps: int = 21) -> Grid:
    eigs = spectrum.eigenvalues
    return Grid(lo=min(eigs) - 4, hi=max(eigs) + 4, steps=steps)


def kernel_grid(b: KernelBundle, grid: Grid, workers: int = 1, form=kernel_sum) -> np.ndarray:
    """K[i, j] = form(b, x_i, x_j); rows are spread over `workers` threads."""
    xs = grid.points
    chunks = np.array_split(np.arange(xs.size), max(1, min(workers, xs.size)))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        blocks = list(
            pool.map(lambda rows: form(b, xs[rows][:, None], xs[None, :]), chunks)
        )
    return np.vstack(blocks)


def max_relative_deviation(first: np.ndarray, second: np.ndarray) -> float:
    return float(np.max(np.abs(first - second) / (1 + np.abs(second))))


def ordering_invariance(b1: KernelBundle, b2: KernelBundle, grid: Grid) -> float:
    return max_relative_deviation(kernel_grid(b1, grid), kernel_grid(b2, grid))


def r1_minimum(b: KernelBundle, grid: Grid) -> float:
    xs = grid.points
    return float(kernel_sum(b, xs, xs).min())


def write_kernel_grid(grid: Grid, values: np.ndarray, path: pathlib.Path) -> int:
    xs = grid.points
    rows = (
        (float(x), float(y), float(values[i, j]))
        for i, x in enumerate(xs)
        for j, y in enumerate(xs)
    )
    return write_csv(["x", "y", "K"], rows, path)


def write_diagonal(b: KernelBundle, grid: Grid, path: pathlib.Path) -> int:
    xs = grid.points
    r1 = kernel_sum(b, xs, xs)
    return write_csv(
        ["x", "R1"], ((float(x), float(v)) for x, v in zip(xs, r1)), path
    )


def bundles_for_orderings(
    system: MopSystem, orderings: Sequence[Sequence[float]]
) -> List[KernelBundle]:
    return [build_bundle(system.with_ordering(alpha)) for alpha in orderings]
