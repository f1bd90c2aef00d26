import functools
import logging
import math
import pathlib
import threading

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from mop_kernel.common import read_csv, write_csv
from mop_kernel.ensemble import EnsembleConfig, Ordering, Potential, Tolerances
from mop_kernel.errors import IllConditionedError, QuadratureError


logger = logging.getLogger(__name__)

# e^{-TAIL_EXPONENT} is where the integrands are cut off.
TAIL_EXPONENT = 60.0
DEFAULT_PANELS = 16
DEFAULT_ORDER = 40
MAX_DOUBLINGS = 6


@functools.lru_cache(maxsize=None)
def _leggauss(order: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    lo: float
    hi: float
    panels: int
    order: int

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Contract the last axis of `values` (sampled at `nodes`) with the weights."""
        return np.asarray(values) @ self.weights

    def refined(self) -> "QuadratureRule":
        return composite_gauss_legendre(self.lo, self.hi, 2 * self.panels, self.order)


def gauss_legendre_on(breaks: Sequence[float], order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on every interval between consecutive breaks."""
    t, w = _leggauss(order)
    breaks = np.asarray(breaks, dtype=float)
    half = 0.5 * np.diff(breaks)
    mid = 0.5 * (breaks[1:] + breaks[:-1])
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def composite_gauss_legendre(
    lo: float, hi: float, panels: int = DEFAULT_PANELS, order: int = DEFAULT_ORDER
) -> QuadratureRule:
    if not hi > lo:
        raise ValueError(f"empty quadrature interval [{lo}, {hi}]")
    if panels < 1 or order < 1:
        raise ValueError("panel count and order must be positive")
    nodes, weights = gauss_legendre_on(np.linspace(lo, hi, panels + 1), order)
    return QuadratureRule(nodes, weights, float(lo), float(hi), panels, order)


def integrate_refined(
    fn: Callable[[np.ndarray], np.ndarray],
    rule: QuadratureRule,
    rtol: float,
    max_doublings: int = MAX_DOUBLINGS,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Integrate `fn` (nodes -> values, last axis over nodes) and keep doubling the panel
    count until no component moves by more than `rtol` times the integral of its
    absolute value. Returns (value, absolute-value integral).
    """
    values = fn(rule.nodes)
    result = rule.integrate(values)
    for doubling in range(max_doublings):
        rule = rule.refined()
        values = fn(rule.nodes)
        refined = rule.integrate(values)
        scale = rule.integrate(np.abs(values))
        change = np.abs(refined - result)
        result = refined
        if np.all(change <= rtol * scale):
            logger.debug(
                "quadrature converged with %s panels on [%s, %s]",
                rule.panels,
                rule.lo,
                rule.hi,
            )
            return result, scale
    raise QuadratureError(
        f"quadrature on [{rule.lo}, {rule.hi}] did not converge to {rtol} "
        f"after {rule.panels} panels"
    )


def truncation_bound(pot: Potential, a_max: float, k_max: int) -> float:
    """
    Smallest L >= 1 with min(V(L), V(-L)) - a_max L - k_max ln L >= 60, by bisection.
    """
    a_max = abs(a_max)

    def margin(L: float) -> float:
        return float(min(pot(L), pot(-L)) - a_max * L - k_max * math.log(L))

    lo = 1.0
    if margin(lo) >= TAIL_EXPONENT:
        return lo
    hi = 2.0
    while margin(hi) < TAIL_EXPONENT:
        lo, hi = hi, 2 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if margin(mid) >= TAIL_EXPONENT:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * hi:
            break
    return hi


def gaussian_raw_moment(a: float, k: int) -> float:
    """
    M_k(a) = int x^k e^{-(x^2/2 - a x)} dx.

    >>> round(gaussian_raw_moment(0.0, 2), 8)
    2.50662827
    """
    return float(gaussian_raw_moments(a, k)[k])


def gaussian_raw_moments(a: float, k_max: int) -> np.ndarray:
    if k_max < 0:
        raise ValueError(f"negative moment order {k_max}")
    moments = np.empty(k_max + 1)
    moments[0] = math.sqrt(2 * math.pi) * math.exp(a * a / 2)
    if k_max >= 1:
        moments[1] = a * moments[0]
    for k in range(2, k_max + 1):
        moments[k] = a * moments[k - 1] + (k - 1) * moments[k - 2]
    return moments


def quad_moments(
    pot: Potential,
    a: float,
    k_max: int,
    rtol: float = 1e-12,
    rule: Optional[QuadratureRule] = None,
) -> np.ndarray:
    """All m_k = int x^k e^{-V(x) + a x} dx for k = 0..k_max in one refinement loop."""
    if rule is None:
        L = truncation_bound(pot, a, k_max)
        rule = composite_gauss_legendre(-L, L)
    powers = np.arange(k_max + 1)

    def integrand(x: np.ndarray) -> np.ndarray:
        return x[None, :] ** powers[:, None] * np.exp(a * x - pot(x))[None, :]

    moments, _ = integrate_refined(integrand, rule, rtol)
    return moments


def quad_moment(
    pot: Potential,
    a: float,
    k: int,
    rule: Optional[QuadratureRule] = None,
    rtol: float = 1e-12,
) -> float:
    return float(quad_moments(pot, a, k, rtol=rtol, rule=rule)[k])


class MomentCache:
    """
    Raw moments per eigenvalue, shared by every solve of one potential. Concurrent
    callers may compute the same vector twice; the longer one wins.
    """

    # moments are computed in blocks of this many powers
    BLOCK = 8

    def __init__(self, pot: Potential, tolerances: Optional[Tolerances] = None):
        self.pot = pot
        self.tolerances = tolerances or Tolerances()
        self._lock = threading.Lock()
        self._raw: Dict[float, np.ndarray] = {}

    def raw_moments(self, a: float, k_max: int) -> np.ndarray:
        a = float(a)
        with self._lock:
            cached = self._raw.get(a)
        if cached is not None and len(cached) > k_max:
            return cached[: k_max + 1]
        size = self.BLOCK * (k_max // self.BLOCK + 1)
        if self.pot.is_gaussian:
            computed = gaussian_raw_moments(a, size - 1)
        else:
            computed = quad_moments(
                self.pot, a, size - 1, rtol=self.tolerances.quadrature_rtol
            )
        computed.setflags(write=False)
        logger.debug("computed %s raw moments for a=%s", size, a)
        with self._lock:
            current = self._raw.get(a)
            if current is None or len(current) < len(computed):
                self._raw[a] = computed
            result = self._raw[a]
        return result[: k_max + 1]

    def contract(self, a: float, coeffs: np.ndarray) -> Tuple[float, float]:
        """
        int c(x) e^{-V(x) + a x} dx for the polynomial with ascending `coeffs`, with
        the sum of absolute contributions as its scale.
        """
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.size == 0:
            return 0.0, 0.0
        terms = coeffs * self.raw_moments(a, coeffs.size - 1)
        return float(terms.sum()), float(np.abs(terms).sum())


def raw_moments(
    pot: Potential, a: float, k_max: int, cache: Optional[MomentCache] = None
) -> np.ndarray:
    cache = cache or MomentCache(pot)
    return cache.raw_moments(a, k_max)


def row_labels(ordering: Ordering) -> List[Tuple[float, int]]:
    """(alpha_j, d_j) per row: d_j counts alpha_j among alpha_1..alpha_j."""
    seen: Counter = Counter()
    labels = []
    for alpha in ordering.alpha:
        seen[alpha] += 1
        labels.append((alpha, seen[alpha]))
    return labels


@dataclass(frozen=True, eq=False)
class MomentTable:
    entries: np.ndarray
    labels: Tuple[Tuple[float, int], ...]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape


def moment_matrix(
    config: EnsembleConfig,
    rows: int,
    cols: int,
    cache: Optional[MomentCache] = None,
) -> MomentTable:
    """m[j][k] = int x^k w_j(x) dx with w_j(x) = x^{d_j - 1} e^{-(V(x) - alpha_j x)}."""
    if not 0 <= rows <= config.n:
        raise ValueError(f"row count {rows} outside 0..{config.n}")
    cache = cache or MomentCache(config.potential)
    labels = tuple(row_labels(config.ordering)[:rows])
    entries = np.zeros((rows, cols))
    for j, (alpha, d) in enumerate(labels):
        if cols:
            entries[j] = cache.raw_moments(alpha, cols + d - 2)[d - 1 :]
    return MomentTable(entries, labels)


class ZTilde(NamedTuple):
    ztilde: float
    zhat: float
    condition: float


def ztilde(table: MomentTable, n: int) -> ZTilde:
    """
    The n x n moment determinant with pivoted LU. Zhat multiplies by the factorials
    of the multiplicities among the first n rows.
    """
    if n == 0:
        return ZTilde(1.0, 1.0, 1.0)
    rows, cols = table.shape
    if rows < n or cols < n:
        raise ValueError(f"moment table {table.shape} too small for n={n}")
    matrix = table.entries[:n, :n]
    lu, piv = scipy.linalg.lu_factor(matrix, check_finite=True)
    sign = (-1) ** int(np.count_nonzero(piv != np.arange(n)))
    det = float(sign * np.prod(np.diag(lu)))
    condition = float(np.linalg.cond(matrix))
    if det == 0.0 or not np.isfinite(condition) or condition * np.finfo(float).eps >= 1:
        raise IllConditionedError(
            f"moment matrix of size {n} is singular to working precision "
            f"(condition {condition:.3g})"
        )
    multiplicities = Counter(alpha for alpha, _ in table.labels[:n])
    factor = math.prod(math.factorial(m) for m in multiplicities.values())
    logger.debug("ztilde(n=%s) = %s, condition %s", n, det, condition)
    return ZTilde(det, det * factor, condition)


def write_moment_table(table: MomentTable, path: pathlib.Path) -> int:
    rows = (
        (j + 1, k, float(table.entries[j, k]))
        for j in range(table.shape[0])
        for k in range(table.shape[1])
    )
    return write_csv(["row", "power", "value"], rows, path)


def read_moment_table(path: pathlib.Path) -> np.ndarray:
    records = read_csv(path)
    if not records:
        return np.zeros((0, 0))
    rows = max(int(r["row"]) for r in records)
    cols = max(int(r["power"]) for r in records) + 1
    entries = np.zeros((rows, cols))
    for r in records:
        entries[int(r["row"]) - 1, int(r["power"])] = float(r["value"])
    return entries
