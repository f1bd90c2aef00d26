"""
The 3 x 3 Riemann-Hilbert matrices Y and X of a two-eigenvalue configuration, built
from the type II polynomials, the type I parts and Cauchy transforms.
"""
import logging
import math
import pathlib
import threading

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.special

from numpy.polynomial import polynomial as npoly

from mop_kernel.common import write_csv
from mop_kernel.ensemble import Potential
from mop_kernel.errors import (
    AxisProximityError,
    QuadratureError,
    UnsupportedConfigurationError,
)
from mop_kernel.kernel import Term, cd_evaluate
from mop_kernel.moments import gauss_legendre_on, truncation_bound
from mop_kernel.mops import MopSystem, TypeIFunction


logger = logging.getLogger(__name__)

AXIS_FLOOR = 1e-8
BASE_PANELS = 32
ORDER = 40
MAX_DOUBLINGS = 4
JUMP_LADDER = (1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4)
DUALITY_POINTS = (2j, 1 + 1j, -3 - 0.5j)
TWO_PI_I = 2j * math.pi
# kernel_from_rh samples Y on a circle of this radius, at least this many times
INVERSE_RADIUS = 1.0
INVERSE_SAMPLES = 32


@dataclass(frozen=True, eq=False)
class WeightedPolynomial:
    """f(s) = sum_i poly_i(s) e^{a_i s - V(s)}."""

    pot: Potential
    parts: Tuple[Tuple[float, np.ndarray], ...]

    def __call__(self, s):
        s = np.asarray(s)
        V = self.pot(s)
        total = np.zeros(np.shape(s), dtype=np.result_type(s, float))
        for a, coeffs in self.parts:
            if len(coeffs):
                total = total + npoly.polyval(s, coeffs) * np.exp(a * s - V)
        return total

    @property
    def degree(self) -> int:
        return max([len(c) - 1 for _, c in self.parts] + [0])

    @property
    def a_max(self) -> float:
        return max(abs(a) for a, _ in self.parts)


def _breakpoints(L: float, panels: int, z: complex) -> np.ndarray:
    """Uniform breaks on [-L, L], plus geometric ones toward Re z when Im z is small."""
    breaks = np.linspace(-L, L, panels + 1)
    width = 2 * L / panels
    d, c = abs(z.imag), z.real
    if 2 * d < width and -L - width < c < L + width:
        offsets = d * 2.0 ** np.arange(int(math.ceil(math.log2(width / d))) + 1)
        extra = np.concatenate([[c], c - offsets, c + offsets])
        extra = extra[(extra > -L) & (extra < L)]
        breaks = np.unique(np.concatenate([breaks, extra]))
    return breaks


def cauchy_transforms(
    fs: Sequence[WeightedPolynomial], z: complex, rtol: float = 1e-10
) -> np.ndarray:
    """
    Cf(z) = (1/2 pi i) int f(s) / (s - z) ds for every f, sharing the nodes.
    """
    z = complex(z)
    if abs(z.imag) < AXIS_FLOOR:
        raise AxisProximityError(
            f"Cauchy transform at {z} is closer than {AXIS_FLOOR} to the real axis"
        )
    L = max(truncation_bound(f.pot, f.a_max, f.degree) for f in fs)

    def evaluate(panels: int) -> Tuple[np.ndarray, np.ndarray]:
        nodes, weights = gauss_legendre_on(_breakpoints(L, panels, z), ORDER)
        values = np.stack([f(nodes) for f in fs])
        denominator = nodes - z
        result = values @ (weights / denominator) / TWO_PI_I
        scale = np.abs(values) @ (weights / np.abs(denominator)) / (2 * math.pi)
        return result, scale

    panels = BASE_PANELS
    result, _ = evaluate(panels)
    for _ in range(MAX_DOUBLINGS):
        panels *= 2
        refined, scale = evaluate(panels)
        change = np.abs(refined - result)
        result = refined
        if np.all(change <= rtol * scale):
            return result
    raise QuadratureError(f"Cauchy transform at {z} did not converge to {rtol}")


def cauchy_transform(f: WeightedPolynomial, z: complex, rtol: float = 1e-10) -> complex:
    return complex(cauchy_transforms([f], z, rtol)[0])


def gaussian_cauchy_reference(z: complex) -> complex:
    """
    C[e^{-s^2/2}](z) through the Faddeeva function: w(z/sqrt 2)/2 in the upper half
    plane, and -conj(C(conj z)) below the axis.
    """
    z = complex(z)
    if z.imag > 0:
        return complex(scipy.special.wofz(z / math.sqrt(2)) / 2)
    return -complex(np.conj(scipy.special.wofz(np.conj(z) / math.sqrt(2)) / 2))


def max_norm(matrix: np.ndarray) -> float:
    return float(np.abs(matrix).max())


class RHProblem:
    """
    Y and X for multi-index (n1, n2), by default the multiplicities of the
    configuration.
    """

    def __init__(
        self, system: MopSystem, n1: Optional[int] = None, n2: Optional[int] = None
    ):
        if system.p != 2:
            raise UnsupportedConfigurationError(
                "the Riemann-Hilbert problem requires exactly two distinct eigenvalues"
            )
        m1, m2 = system.config.spectrum.multiplicities
        n1 = m1 if n1 is None else n1
        n2 = m2 if n2 is None else n2
        if n1 < 1 or n2 < 1:
            raise ValueError(f"the Riemann-Hilbert matrices need n1, n2 >= 1, got ({n1}, {n2})")
        self.system = system
        self.n1, self.n2 = n1, n2
        self.pot = system.config.potential
        self.a1, self.a2 = system.eigenvalues
        h = system.h_number
        self.P = (
            system.solve_P((n1, n2)),
            system.solve_P((n1 - 1, n2)),
            system.solve_P((n1, n2 - 1)),
        )
        self.Q = (
            system.solve_Q((n1, n2)),
            system.solve_Q((n1 + 1, n2)),
            system.solve_Q((n1, n2 + 1)),
        )
        c1 = -TWO_PI_I / h((n1 - 1, n2), 0)
        c2 = -TWO_PI_I / h((n1, n2 - 1), 1)
        self.y_scales = (1.0 + 0j, c1, c2)
        # k1, k2 are also 1 / leading coefficients of A_{n1+1,n2} and B_{n1,n2+1}
        self.x_factors = (TWO_PI_I, h((n1, n2), 0) + 0j, h((n1, n2), 1) + 0j)
        self.rtol = system.tolerances.cauchy_rtol
        self._inverse_terms: Optional[Tuple[Term, ...]] = None
        self._lock = threading.Lock()
        logger.debug(
            "Riemann-Hilbert constants for (%s, %s): c=%s k=%s",
            n1,
            n2,
            self.y_scales[1:],
            self.x_factors[1:],
        )

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    def _y_integrands(self) -> List[WeightedPolynomial]:
        return [
            WeightedPolynomial(self.pot, ((a, P.coeffs),))
            for P in self.P
            for a in (self.a1, self.a2)
        ]

    def _x_integrands(self) -> List[WeightedPolynomial]:
        return [
            WeightedPolynomial(self.pot, ((self.a1, Q.A), (self.a2, Q.B)))
            for Q in self.Q
        ]

    def assemble_Y(self, z: complex) -> np.ndarray:
        C = cauchy_transforms(self._y_integrands(), z, self.rtol).reshape(3, 2)
        Y = np.empty((3, 3), dtype=complex)
        for r, (P, scale) in enumerate(zip(self.P, self.y_scales)):
            Y[r, 0] = scale * P(complex(z))
            Y[r, 1:] = scale * C[r]
        return Y

    def assemble_X(self, z: complex) -> np.ndarray:
        C = cauchy_transforms(self._x_integrands(), z, self.rtol)
        X = np.empty((3, 3), dtype=complex)
        for r, (Q, factor) in enumerate(zip(self.Q, self.x_factors)):
            X[r, 0] = -factor * C[r]
            X[r, 1] = factor * npoly.polyval(complex(z), Q.A)
            X[r, 2] = factor * npoly.polyval(complex(z), Q.B)
        return X

    def weights(self, x: float) -> Tuple[float, float]:
        V = float(self.pot(x))
        return math.exp(self.a1 * x - V), math.exp(self.a2 * x - V)

    def jump_matrix(self, kind: str, x: float) -> np.ndarray:
        w1, w2 = self.weights(x)
        if kind == "Y":
            return np.array([[1, w1, w2], [0, 1, 0], [0, 0, 1]], dtype=complex)
        if kind == "X":
            return np.array([[1, 0, 0], [-w1, 1, 0], [-w2, 0, 1]], dtype=complex)
        raise ValueError(f"unknown Riemann-Hilbert matrix {kind!r}")

    def _assemble(self, kind: str, z: complex) -> np.ndarray:
        if kind == "Y":
            return self.assemble_Y(z)
        if kind == "X":
            return self.assemble_X(z)
        raise ValueError(f"unknown Riemann-Hilbert matrix {kind!r}")

    def boundary_value(self, kind: str, x: float, eps: float) -> np.ndarray:
        """
        M_+(x) (eps > 0) or M_-(x) (eps < 0) extrapolated from x + i eps and x + 2i eps,
        which leaves an O(eps^2) error.
        """
        near = self._assemble(kind, complex(x, eps))
        far = self._assemble(kind, complex(x, 2 * eps))
        return 2 * near - far

    def jump_residual(self, x: float, eps: float, kind: str = "Y") -> float:
        """max |M_+(x) - M_-(x) J(x)| for M = Y or X, boundary values taken at distance eps."""
        if not 1e-6 <= eps <= 1e-2:
            raise ValueError(f"eps {eps} outside [1e-6, 1e-2]")
        jump = self.jump_matrix(kind, x)
        upper = self.boundary_value(kind, x, eps)
        lower = self.boundary_value(kind, x, -eps)
        return max_norm(upper - lower @ jump)

    def jump_ladder(
        self, x: float, kind: str = "Y", eps: Sequence[float] = JUMP_LADDER
    ) -> List[Tuple[float, float]]:
        return [(e, self.jump_residual(x, e, kind)) for e in eps]

    def duality_residual(self, z: complex) -> float:
        """max |X(z)^T Y(z) - I|."""
        return max_norm(self.assemble_X(z).T @ self.assemble_Y(z) - np.eye(3))

    def unimodularity_residual(self, z: complex) -> float:
        return abs(np.linalg.det(self.assemble_Y(z)) - 1)

    def asymptotic_residual(self, kind: str, z: complex) -> float:
        """max |Y(z) diag(z^-n, z^n1, z^n2) - I|, or the X analogue with inverted powers."""
        z = complex(z)
        powers = np.array([-self.n, self.n1, self.n2], dtype=float)
        if kind == "X":
            powers = -powers
        matrix = self._assemble(kind, z) * (z ** powers)[None, :]
        return max_norm(matrix - np.eye(3))

    def inverse_terms(self) -> Tuple[Term, ...]:
        """
        The 21 and 31 entries of Y^{-1}(y) Y(x) recovered from numerically inverted Y.

        Column one of Y and rows two and three of Y^{-1} are polynomials, so their
        coefficients follow from a discrete Fourier transform of samples on a circle
        around the origin that stays clear of the real axis.
        """
        with self._lock:
            if self._inverse_terms is None:
                self._inverse_terms = self._recover_inverse_terms()
            return self._inverse_terms

    def _recover_inverse_terms(self) -> Tuple[Term, ...]:
        points = INVERSE_SAMPLES
        while points <= self.n + 2:
            points *= 2
        theta = 2 * math.pi * (np.arange(points) + 0.5) / points
        columns = np.empty((points, 3), dtype=complex)
        rows = np.empty((points, 2, 3), dtype=complex)
        for j, t in enumerate(theta):
            Y = self.assemble_Y(INVERSE_RADIUS * complex(math.cos(t), math.sin(t)))
            columns[j] = Y[:, 0]
            rows[j] = np.linalg.inv(Y)[1:, :]
        k = np.arange(self.n + 2)
        # samples start half a step off the axis
        rotation = np.exp(-1j * math.pi * k / points) / INVERSE_RADIUS ** k
        row_spectrum = np.fft.fft(rows, axis=0)
        column_coeffs = (np.fft.fft(columns, axis=0)[: k.size].T * rotation) / points
        row_coeffs = (row_spectrum[: k.size].T * rotation) / points
        logger.debug(
            "Y^{-1} rows recovered from %s samples, largest discarded coefficient %.3g",
            points,
            np.abs(row_spectrum[k.size : points // 2]).max(initial=0.0) / points,
        )
        eigenvalues = (self.a1, self.a2)
        return tuple(
            Term(
                1 / TWO_PI_I,
                column_coeffs[r],
                TypeIFunction(
                    self.Q[r].index, eigenvalues, (row_coeffs[r, 0], row_coeffs[r, 1])
                ),
            )
            for r in range(3)
        )

    def kernel_from_rh(self, x, y) -> np.ndarray:
        """
        K_n(x, y) = e^{-(V(x)+V(y))/2} / (2 pi i (x - y))
                    * (0, e^{a1 y}, e^{a2 y}) Y^{-1}(y) Y(x) (1, 0, 0)^T.
        """
        return cd_evaluate(
            self.inverse_terms(), self.system, x, y, self.system.tolerances.diagonal_gap
        )

    def rh_product_numeric(self, x: float, y: float, eps: float = 1e-3) -> float:
        """
        Relative gap between [Y^{-1}(y') Y(x')]_{21}, _{31} from numerically inverted Y
        and the polynomial contraction, at x' = x + i eps and y' = y + i eps.
        """
        xc, yc = complex(x, eps), complex(y, eps)
        product = np.linalg.solve(self.assemble_Y(yc), self.assemble_Y(xc))
        column = np.array([s * P(xc) for P, s in zip(self.P, self.y_scales)])
        rows_a = np.array([f * npoly.polyval(yc, Q.A) for Q, f in zip(self.Q, self.x_factors)])
        rows_b = np.array([f * npoly.polyval(yc, Q.B) for Q, f in zip(self.Q, self.x_factors)])
        expected = np.array([rows_a @ column, rows_b @ column])
        actual = np.array([product[1, 0], product[2, 0]])
        return float(np.abs(actual - expected).max() / max(1.0, np.abs(expected).max()))


def write_rh_samples(
    problem: RHProblem, points: Iterable[complex], path: pathlib.Path
) -> int:
    """Rows `z_re,z_im,entry,value_re,value_im` for every entry of Y and X."""
    rows = []
    for z in points:
        for kind in ("Y", "X"):
            matrix = problem._assemble(kind, z)
            for r in range(3):
                for c in range(3):
                    value = matrix[r, c]
                    rows.append(
                        [
                            float(z.real),
                            float(z.imag),
                            f"{kind}{r + 1}{c + 1}",
                            float(value.real),
                            float(value.imag),
                        ]
                    )
    return write_csv(["z_re", "z_im", "entry", "value_re", "value_im"], rows, path)


def write_jump_ladder(
    ladder: Sequence[Tuple[float, float]], x: float, path: pathlib.Path
) -> int:
    return write_csv(
        ["x", "eps", "residual"],
        ((float(x), float(e), float(r)) for e, r in ladder),
        path,
    )


def ladder_trend(ladder: Sequence[Tuple[float, float]], floor: float = 0.0) -> float:
    """
    Largest ratio of consecutive residuals along a decreasing eps ladder. A step that
    lands at or below `floor` (quadrature noise) counts as converged.
    """
    residuals = [r for _, r in ladder]
    ratios = []
    for a, b in zip(residuals, residuals[1:]):
        if b <= floor:
            ratios.append(0.0)
        else:
            ratios.append(b / a if a > 0 else math.inf)
    return max(ratios) if ratios else 0.0
