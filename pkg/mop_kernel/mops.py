"""
Type II multiple orthogonal polynomials, the dual type I functions and the numbers
tying them together, all solved from moment linear systems.
"""
import logging
import pathlib
import threading

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from numpy.polynomial import polynomial as npoly

from mop_kernel.common import write_csv
from mop_kernel.ensemble import (
    EnsembleConfig,
    MultiIndex,
    Tolerances,
    extended_ordering,
    has_two_eigenvalue_tail,
    prefix_counts,
)
from mop_kernel.errors import (
    BreakdownError,
    ConsistencyError,
    IllConditionedError,
    UnsupportedConfigurationError,
)
from mop_kernel.moments import MomentCache


logger = logging.getLogger(__name__)

# the closed-form c-coefficients checked by MopSystem.c_formula_check
C_FORMULA_NAMES = ("c[n,n-1]", "c[n-2,n]", "c[n-1,n]", "c[n-1,n+1]")


@dataclass(frozen=True, eq=False)
class MonicPolynomial:
    index: MultiIndex
    # ascending powers, coeffs[-1] == 1
    coeffs: np.ndarray
    residual: float = 0.0

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, x):
        return npoly.polyval(x, self.coeffs)


@dataclass(frozen=True, eq=False)
class TypeIFunction:
    """Q(x) = sum_i parts[i](x) e^{a_i x}; an empty part means k_i = 0."""

    index: MultiIndex
    eigenvalues: Tuple[float, ...]
    parts: Tuple[np.ndarray, ...]
    residual: float = 0.0

    def part(self, slot: int) -> Optional[np.ndarray]:
        part = self.parts[slot]
        return part if part.size else None

    @property
    def A(self) -> np.ndarray:
        return self.parts[0]

    @property
    def B(self) -> np.ndarray:
        return self.parts[1]

    def __call__(self, x):
        x = np.asarray(x)
        total = np.zeros(np.shape(x), dtype=np.result_type(x, float))
        for a, part in zip(self.eigenvalues, self.parts):
            if part.size:
                total = total + npoly.polyval(x, part) * np.exp(a * x)
        return total

    def weighted(self, pot, x):
        """Q(x) e^{-V(x)/2}, with each exponent combined before exponentiation."""
        x = np.asarray(x)
        half = pot(x) / 2
        total = np.zeros(np.shape(x), dtype=np.result_type(x, float))
        for a, part in zip(self.eigenvalues, self.parts):
            if part.size:
                total = total + npoly.polyval(x, part) * np.exp(a * x - half)
        return total


def from_polynomial(
    coeffs: np.ndarray, eigenvalue: float, index: MultiIndex
) -> TypeIFunction:
    """The single-exponential function coeffs(x) e^{a x}."""
    return TypeIFunction(index, (eigenvalue,), (np.asarray(coeffs, dtype=float),))


def solve_moment_system(
    matrix: np.ndarray, rhs: np.ndarray, condition_limit: float, what: str
) -> Tuple[np.ndarray, float]:
    """
    Row and column equilibration followed by column-pivoted QR. The condition number
    is that of the equilibrated matrix.
    """
    row_scale = 1.0 / np.abs(matrix).max(axis=1)
    scaled = matrix * row_scale[:, None]
    col_scale = 1.0 / np.abs(scaled).max(axis=0)
    scaled = scaled * col_scale[None, :]
    condition = float(np.linalg.cond(scaled))
    if not np.isfinite(condition) or condition > condition_limit:
        raise IllConditionedError(
            f"{what}: moment system condition {condition:.3g} exceeds the limit "
            f"{condition_limit:.3g}"
        )
    q, r, piv = scipy.linalg.qr(scaled, pivoting=True)
    y = scipy.linalg.solve_triangular(r, q.T @ (rhs * row_scale))
    solution = np.empty_like(y)
    solution[piv] = y
    logger.debug("%s: condition %.3g", what, condition)
    return solution * col_scale, condition


def _pad(coeffs: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(size)
    out[: len(coeffs)] = coeffs
    return out


def _shift(coeffs: np.ndarray, by: int) -> np.ndarray:
    return np.concatenate([np.zeros(by), coeffs])


@dataclass(frozen=True)
class LadderReport:
    first: float
    second: float
    ratio: float

    @property
    def max(self) -> float:
        return max(self.first, self.second, self.ratio)


class MopSystem:
    """
    Every P, Q and h-number of one ensemble configuration. Solutions are memoized per
    multi-index, so different orderings of the same spectrum may share a system's
    moment cache.
    """

    def __init__(
        self,
        config: EnsembleConfig,
        tolerances: Optional[Tolerances] = None,
        cache: Optional[MomentCache] = None,
    ):
        self.config = config
        self.tolerances = tolerances or Tolerances()
        self.moments = cache or MomentCache(config.potential, self.tolerances)
        self.eigenvalues = config.spectrum.eigenvalues
        self.extended = extended_ordering(config.ordering, config.spectrum)
        self._lock = threading.Lock()
        self._P: Dict[MultiIndex, MonicPolynomial] = {}
        self._Q: Dict[MultiIndex, TypeIFunction] = {}

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def p(self) -> int:
        return self.config.p

    def _check_index(self, index: Sequence[int]) -> MultiIndex:
        index = tuple(int(k) for k in index)
        if len(index) != self.p or any(k < 0 for k in index):
            raise ValueError(
                f"multi-index {index} must have {self.p} nonnegative entries"
            )
        return index

    def _check_slot(self, slot: int) -> None:
        if not 0 <= slot < self.p:
            raise ValueError(f"eigenvalue slot {slot} outside 0..{self.p - 1}")

    def _memoized(self, store: Dict, index: MultiIndex, compute):
        with self._lock:
            if index in store:
                return store[index]
        value = compute(index)
        with self._lock:
            return store.setdefault(index, value)

    def solve_P(self, index: Sequence[int]) -> MonicPolynomial:
        """
        Monic P of degree |k| with int P(x) x^j e^{-(V - a_i x)} dx = 0 for
        j < k_i, from the system sum_m p_m mu_i(m + j) = -mu_i(|k| + j).
        """
        return self._memoized(self._P, self._check_index(index), self._solve_P)

    def _solve_P(self, index: MultiIndex) -> MonicPolynomial:
        K = sum(index)
        if K == 0:
            return MonicPolynomial(index, np.ones(1))
        rows, rhs = [], []
        for a, k in zip(self.eigenvalues, index):
            if not k:
                continue
            mu = self.moments.raw_moments(a, K + k - 1)
            for j in range(k):
                rows.append(mu[j : j + K])
                rhs.append(-mu[K + j])
        solution, _ = solve_moment_system(
            np.array(rows),
            np.array(rhs),
            self.tolerances.condition_limit,
            f"P{index}",
        )
        coeffs = np.append(solution, 1.0)
        residual = self._type2_residual(index, coeffs)
        if residual > self.tolerances.residual:
            logger.warning("P%s orthogonality residual %.3g", index, residual)
        return MonicPolynomial(index, coeffs, residual)

    def _type2_residual(self, index: MultiIndex, coeffs: np.ndarray) -> float:
        worst = 0.0
        for a, k in zip(self.eigenvalues, index):
            for j in range(k):
                value, scale = self.moments.contract(a, _shift(coeffs, j))
                worst = max(worst, abs(value) / scale if scale else abs(value))
        return worst

    def solve_Q(self, index: Sequence[int]) -> TypeIFunction:
        """
        Q = sum_i A_i(x) e^{a_i x} with deg A_i = k_i - 1 and
        int x^j Q e^{-V} dx = delta_{j, |k|-1} for j < |k|. The basis runs over the
        eigenvalues in spectrum order, powers ascending; the matrix is the transpose
        of the P system.
        """
        return self._memoized(self._Q, self._check_index(index), self._solve_Q)

    def _solve_Q(self, index: MultiIndex) -> TypeIFunction:
        K = sum(index)
        if K == 0:
            return TypeIFunction(
                index, self.eigenvalues, tuple(np.zeros(0) for _ in index)
            )
        columns = []
        for a, k in zip(self.eigenvalues, index):
            if not k:
                continue
            mu = self.moments.raw_moments(a, K + k - 2)
            for r in range(k):
                columns.append(mu[r : r + K])
        rhs = np.zeros(K)
        rhs[K - 1] = 1.0
        solution, _ = solve_moment_system(
            np.array(columns).T, rhs, self.tolerances.condition_limit, f"Q{index}"
        )
        parts, offset = [], 0
        for k in index:
            parts.append(solution[offset : offset + k])
            offset += k
        Q = TypeIFunction(index, self.eigenvalues, tuple(parts))
        residual = self._type1_residual(Q)
        if residual > self.tolerances.residual:
            logger.warning("Q%s orthogonality residual %.3g", index, residual)
        return TypeIFunction(index, self.eigenvalues, tuple(parts), residual)

    def _type1_residual(self, Q: TypeIFunction) -> float:
        K = sum(Q.index)
        worst = 0.0
        for j in range(K):
            value, scale = self.pairing(np.ones(1), Q, shift=j)
            target = 1.0 if j == K - 1 else 0.0
            worst = max(worst, abs(value - target) / max(scale, 1e-300))
        return worst

    def pairing(
        self, P, Q: TypeIFunction, shift: int = 0
    ) -> Tuple[float, float]:
        """
        int x^shift P(x) Q(x) e^{-V(x)} dx together with the sum of absolute
        contributions. `P` is a MonicPolynomial or an ascending coefficient array.
        """
        coeffs = P.coeffs if isinstance(P, MonicPolynomial) else np.asarray(P)
        coeffs = _shift(coeffs, shift)
        value, scale = 0.0, 0.0
        for a, part in zip(Q.eigenvalues, Q.parts):
            if part.size:
                v, s = self.moments.contract(a, np.convolve(coeffs, part))
                value += v
                scale += s
        return value, scale

    def _h_pair(self, index: MultiIndex, slot: int) -> Tuple[float, float]:
        P = self.solve_P(index)
        return self.moments.contract(self.eigenvalues[slot], _shift(P.coeffs, index[slot]))

    def h_number(self, index: Sequence[int], slot: int) -> float:
        """h^{(j)}_k = int P_k(x) x^{k_j} e^{-(V(x) - a_j x)} dx, nonzero by construction."""
        index = self._check_index(index)
        self._check_slot(slot)
        value, scale = self._h_pair(index, slot)
        if abs(value) < self.tolerances.breakdown * scale:
            raise BreakdownError(
                f"h-number of {index} for eigenvalue {self.eigenvalues[slot]} "
                f"vanishes ({value:.3g} against scale {scale:.3g})"
            )
        return value

    def next_moment_check(self, index: Sequence[int]) -> List[float]:
        return [self.h_number(index, slot) for slot in range(self.p)]

    def next_moment_margin(self, index: Sequence[int]) -> float:
        """Smallest |h^{(j)}| / scale over the slots; below `breakdown` means a breakdown."""
        index = self._check_index(index)
        margins = []
        for slot in range(self.p):
            value, scale = self._h_pair(index, slot)
            margins.append(abs(value) / scale if scale else 0.0)
        return float(min(margins))

    def leading_type1(self, index: Sequence[int], slot: int) -> Optional[float]:
        """
        Top coefficient of the type I part for `slot`, checked against
        1/h^{(slot)} of the index with that entry lowered by one. None for an
        empty part.
        """
        index = self._check_index(index)
        self._check_slot(slot)
        part = self.solve_Q(index).part(slot)
        if part is None:
            return None
        lead = float(part[-1])
        predecessor = list(index)
        predecessor[slot] -= 1
        expected = 1.0 / self.h_number(predecessor, slot)
        if abs(lead - expected) > self.tolerances.residual * abs(expected):
            raise ConsistencyError(
                f"leading coefficient {lead} of part {slot} of Q{index} differs "
                f"from 1/h = {expected}"
            )
        return lead

    def index_P(self, k: int) -> MultiIndex:
        return prefix_counts(self.extended, k, self.config.spectrum)

    def index_Q(self, j: int) -> MultiIndex:
        return prefix_counts(self.extended, j + 1, self.config.spectrum)

    def P_k(self, k: int) -> MonicPolynomial:
        return self.solve_P(self.index_P(k))

    def Q_k(self, j: int) -> TypeIFunction:
        return self.solve_Q(self.index_Q(j))

    def recurrence_c(self, j: int, k: int) -> float:
        """c_{jk} = int x P_k(x) Q_j(x) e^{-V(x)} dx on the extended ordering."""
        return self._recurrence(j, k)[0]

    def _recurrence(self, j: int, k: int) -> Tuple[float, float]:
        if not (0 <= j <= self.n + 1 and 0 <= k <= self.n + 1):
            raise ValueError(f"c_({j},{k}) outside 0..{self.n + 1}")
        return self.pairing(self.P_k(k), self.Q_k(j), shift=1)

    def biorthogonality(self) -> Tuple[np.ndarray, float]:
        """int P_j Q_k e^{-V} for j, k < n and the scaled distance to the identity."""
        n = self.n
        gram = np.zeros((n, n))
        worst = 0.0
        for j in range(n):
            for k in range(n):
                value, scale = self.pairing(self.P_k(j), self.Q_k(k))
                gram[j, k] = value
                target = 1.0 if j == k else 0.0
                worst = max(worst, abs(value - target) / max(1.0, scale))
        return gram, worst

    def recurrence_expansion_residual_P(self, k: int) -> float:
        """x P_k = sum_{j <= k+1} c_{jk} P_j, compared coefficient-wise."""
        if not 0 <= k <= self.n - 1:
            raise ValueError(f"expansion of x P_k needs 0 <= k <= {self.n - 1}")
        lhs = _shift(self.P_k(k).coeffs, 1)
        rhs = np.zeros(k + 2)
        for j in range(k + 2):
            rhs += self.recurrence_c(j, k) * _pad(self.P_k(j).coeffs, k + 2)
        return float(np.abs(lhs - rhs).max() / max(1.0, np.abs(lhs).max()))

    def recurrence_expansion_residual_Q(self, j: int) -> float:
        """
        x Q_j = sum_{k <= n+1} c_{jk} Q_k, compared part by part.

        All parts share one scale, the size of every contribution to the expansion, so a
        part that is empty on the left and cancels on the right measures as rounding.
        """
        if self.p > 2:
            raise UnsupportedConfigurationError(
                "the expansion of x Q_j is only available for one or two eigenvalues"
            )
        if not 0 <= j <= self.n - 1:
            raise ValueError(f"expansion of x Q_j needs 0 <= j <= {self.n - 1}")
        Qj = self.Q_k(j)
        terms = [(self.recurrence_c(j, k), self.Q_k(k)) for k in range(self.n + 2)]
        differences = []
        scale = 0.0
        for slot in range(self.p):
            lhs = _shift(Qj.parts[slot], 1) if Qj.parts[slot].size else np.zeros(0)
            size = max([lhs.size] + [Q.parts[slot].size for _, Q in terms])
            rhs = np.zeros(size)
            for c, Q in terms:
                part = Q.parts[slot]
                rhs += c * _pad(part, size)
                scale = max(scale, abs(c) * np.abs(part).max(initial=0.0))
            lhs = _pad(lhs, size)
            scale = max(scale, np.abs(lhs).max(initial=0.0))
            differences.append(np.abs(lhs - rhs).max(initial=0.0))
        if not scale:
            return 0.0
        return float(max(differences) / scale)

    def structural_zeros(self) -> Tuple[float, float]:
        """
        Largest scaled |c_jk| over j >= k + 2, and over k >= j + 3 with both
        eigenvalues among alpha_{j+2}..alpha_k.
        """
        n = self.n
        alpha = self.extended.alpha
        below = 0.0
        for k in range(n):
            for j in range(k + 2, n + 2):
                value, scale = self._recurrence(j, k)
                below = max(below, abs(value) / max(1.0, scale))
        above = 0.0
        if self.p == 2:
            for j in range(n):
                for k in range(j + 3, n + 2):
                    if len(set(alpha[j + 1 : k])) < 2:
                        continue
                    value, scale = self._recurrence(j, k)
                    above = max(above, abs(value) / max(1.0, scale))
        return below, above

    def _require_two(self, n1: int, n2: int, what: str) -> None:
        if self.p != 2:
            raise UnsupportedConfigurationError(
                f"{what} requires exactly two distinct eigenvalues"
            )
        if n1 < 1 or n2 < 1:
            raise ValueError(f"{what} needs n1, n2 >= 1, got ({n1}, {n2})")

    def c_formula_check(self) -> Dict[str, float]:
        """
        Relative deviations of c_{n,n-1} = 1 and of the h-number formulas for
        c_{n-2,n}, c_{n-1,n}, c_{n-1,n+1}.
        """
        n1, n2 = self.config.spectrum.multiplicities if self.p == 2 else (0, 0)
        self._require_two(n1, n2, "the c-coefficient formulas")
        if not has_two_eigenvalue_tail(self.config):
            raise UnsupportedConfigurationError(
                "the c-coefficient formulas need an ordering ending in (a1, a2)"
            )
        n = self.n
        h = self.h_number
        expected = {
            "c[n,n-1]": 1.0,
            "c[n-2,n]": h((n1, n2), 0) / h((n1 - 1, n2 - 1), 0),
            "c[n-1,n]": h((n1, n2), 0) / h((n1 - 1, n2), 0)
            + h((n1, n2), 1) / h((n1, n2 - 1), 1),
            "c[n-1,n+1]": h((n1 + 1, n2), 1) / h((n1, n2 - 1), 1),
        }
        actual = {
            "c[n,n-1]": self.recurrence_c(n, n - 1),
            "c[n-2,n]": self.recurrence_c(n - 2, n),
            "c[n-1,n]": self.recurrence_c(n - 1, n),
            "c[n-1,n+1]": self.recurrence_c(n - 1, n + 1),
        }
        return {
            name: abs(actual[name] - expected[name]) / max(1.0, abs(expected[name]))
            for name in expected
        }

    def ladder_check_P(self, n1: int, n2: int) -> LadderReport:
        """
        P_{n1-1,n2-1} against both h-ratio multiples of P_{n1-1,n2} - P_{n1,n2-1}.
        """
        self._require_two(n1, n2, "the P ladder relation")
        h = self.h_number
        lhs = self.solve_P((n1 - 1, n2 - 1)).coeffs
        size = n1 + n2 + 1
        diff = _pad(self.solve_P((n1 - 1, n2)).coeffs, size) - _pad(
            self.solve_P((n1, n2 - 1)).coeffs, size
        )
        lhs = _pad(lhs, size)
        r1 = h((n1 - 1, n2 - 1), 0) / h((n1 - 1, n2), 0)
        r2 = -h((n1 - 1, n2 - 1), 1) / h((n1, n2 - 1), 1)
        scale = np.abs(lhs).max()
        return LadderReport(
            float(np.abs(lhs - r1 * diff).max() / scale),
            float(np.abs(lhs - r2 * diff).max() / scale),
            abs(r1 - r2) / max(abs(r1), abs(r2)),
        )

    def ladder_check_Q(self, n1: int, n2: int) -> LadderReport:
        """
        Q_{n1+1,n2+1} against both h-ratio multiples of Q_{n1,n2+1} - Q_{n1+1,n2},
        comparing A and B parts. The ratio entry compares the multiplier read off the
        A leading coefficients with the one read off the B leading coefficients.
        """
        self._require_two(n1, n2, "the Q ladder relation")
        h = self.h_number
        lhs = self.solve_Q((n1 + 1, n2 + 1))
        left = self.solve_Q((n1, n2 + 1))
        right = self.solve_Q((n1 + 1, n2))
        r1 = -h((n1, n2), 0) / h((n1, n2 + 1), 0)
        r2 = h((n1, n2), 1) / h((n1 + 1, n2), 1)
        first, second = 0.0, 0.0
        for slot in range(2):
            size = lhs.parts[slot].size
            target = lhs.parts[slot]
            diff = _pad(left.parts[slot], size) - _pad(right.parts[slot], size)
            scale = np.abs(target).max()
            first = max(first, float(np.abs(target - r1 * diff).max() / scale))
            second = max(second, float(np.abs(target - r2 * diff).max() / scale))
        beta_a = -right.A[-1] / lhs.A[-1]
        beta_b = left.B[-1] / lhs.B[-1]
        ratio = abs(beta_a - beta_b) / max(abs(beta_a), abs(beta_b))
        return LadderReport(first, second, float(ratio))

    def determinantal_P(self, index: Sequence[int]) -> MonicPolynomial:
        """
        P from the bordered moment determinant divided by the moment determinant,
        expanded along the monomial row. Independent of the QR path; meant for
        |k| <= 6.
        """
        index = self._check_index(index)
        K = sum(index)
        if K == 0:
            return MonicPolynomial(index, np.ones(1))
        rows = []
        for a, k in zip(self.eigenvalues, index):
            mu = self.moments.raw_moments(a, K + k - 1)
            for j in range(k):
                rows.append(mu[j : j + K + 1])
        bordered = np.array(rows)
        ztilde = np.linalg.det(bordered[:, :K])
        if ztilde == 0.0:
            raise IllConditionedError(f"moment determinant of {index} vanishes")
        coeffs = np.empty(K + 1)
        for m in range(K + 1):
            minor = np.delete(bordered, m, axis=1)
            coeffs[m] = (-1) ** (K + m) * np.linalg.det(minor) / ztilde
        return MonicPolynomial(index, coeffs)

    def ordered_indices(self) -> List[MultiIndex]:
        """The P indices along the extended ordering, plus the two-eigenvalue neighbours."""
        indices = [self.index_P(k) for k in range(self.n + 1)]
        if self.p == 2:
            n1, n2 = self.config.spectrum.multiplicities
            indices += [(n1 - 1, n2), (n1, n2 - 1), (n1 + 1, n2), (n1, n2 + 1)]
        unique: List[MultiIndex] = []
        for index in indices:
            if index not in unique and min(index) >= 0:
                unique.append(index)
        return unique

    def with_ordering(self, alpha: Sequence[float]) -> "MopSystem":
        return MopSystem(
            self.config.with_ordering(alpha), self.tolerances, cache=self.moments
        )


def side_name(slot: int) -> str:
    return chr(ord("A") + slot)


def write_polynomials(
    system: MopSystem, path: pathlib.Path, indices: Optional[Iterable[MultiIndex]] = None
) -> int:
    """Rows `k1,..,kp,side,power,value`; side P for type II, A, B, ... for type I parts."""
    indices = list(indices) if indices is not None else system.ordered_indices()
    header = [f"k{i + 1}" for i in range(system.p)] + ["side", "power", "value"]
    rows = []
    for index in indices:
        for power, value in enumerate(system.solve_P(index).coeffs):
            rows.append(list(index) + ["P", power, float(value)])
        if sum(index):
            Q = system.solve_Q(index)
            for slot, part in enumerate(Q.parts):
                for power, value in enumerate(part):
                    rows.append(list(index) + [side_name(slot), power, float(value)])
    return write_csv(header, rows, path)


def write_h_table(
    system: MopSystem, path: pathlib.Path, indices: Optional[Iterable[MultiIndex]] = None
) -> int:
    """Rows `k1,..,kp,side,value` with side the 1-based eigenvalue slot."""
    indices = list(indices) if indices is not None else system.ordered_indices()
    header = [f"k{i + 1}" for i in range(system.p)] + ["side", "value"]
    rows = []
    for index in indices:
        for slot in range(system.p):
            rows.append(list(index) + [slot + 1, system.h_number(index, slot)])
    return write_csv(header, rows, path)


def ordering_differences(first: MopSystem, second: MopSystem) -> float:
    """Largest coefficient difference between the two P_k sequences, k < n."""
    worst = 0.0
    for k in range(first.n):
        a, b = first.P_k(k).coeffs, second.P_k(k).coeffs
        worst = max(worst, float(np.abs(a - b).max()))
    return worst
