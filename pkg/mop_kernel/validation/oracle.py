import itertools
import logging
import math

from typing import Optional, Sequence

import numpy as np

from mop_kernel.ensemble import EnsembleConfig, weights_matrix
from mop_kernel.errors import UnsupportedConfigurationError
from mop_kernel.moments import gauss_legendre_on, truncation_bound


logger = logging.getLogger(__name__)

MAX_ORACLE_N = 3
PANELS = 8
ORDER = 20


class JointDensityOracle:
    """
    Brute-force eigenvalue density
        p(l) ~ prod_j e^{-V(l_j)} det(l_j^{d_i - 1} e^{alpha_i l_j}) prod_{i>j} (l_i - l_j)
    on a tensor-product Gauss-Legendre grid, normalized numerically.
    """

    def __init__(self, config: EnsembleConfig, panels: int = PANELS, order: int = ORDER):
        if config.n > MAX_ORACLE_N:
            raise UnsupportedConfigurationError(
                f"the joint-density oracle handles n <= {MAX_ORACLE_N}, got n = {config.n}"
            )
        self.config = config
        a_max = max(abs(a) for a in config.spectrum.eigenvalues)
        L = truncation_bound(config.potential, a_max, 2 * config.n)
        self.nodes, self.weights = gauss_legendre_on(np.linspace(-L, L, panels + 1), order)
        self._normalization: Optional[float] = None

    @property
    def n(self) -> int:
        return self.config.n

    def density(self, lam: np.ndarray) -> np.ndarray:
        """Unnormalized density at points `lam` of shape (..., n)."""
        lam = np.asarray(lam, dtype=float)
        weight = np.exp(-self.config.potential(lam).sum(axis=-1))
        det = np.linalg.det(weights_matrix(self.config.ordering, lam))
        vandermonde = np.ones(lam.shape[:-1])
        for i, j in itertools.combinations(range(self.n), 2):
            vandermonde = vandermonde * (lam[..., j] - lam[..., i])
        return weight * det * vandermonde

    def _marginal(self, fixed: Sequence[float]) -> float:
        """Integral of the unnormalized density over the coordinates after `fixed`."""
        free = self.n - len(fixed)
        if free == 0:
            return float(self.density(np.asarray(fixed, dtype=float)))
        rest = free - 1
        grids = np.meshgrid(*([self.nodes] * rest), indexing="ij")
        weight = np.ones((self.nodes.size,) * rest)
        for g_w in np.meshgrid(*([self.weights] * rest), indexing="ij"):
            weight = weight * g_w
        lam = np.empty(weight.shape + (self.n,))
        lam[..., : len(fixed)] = fixed
        for k, g in enumerate(grids):
            lam[..., len(fixed) + 1 + k] = g
        total = 0.0
        # one slab per node of the first free coordinate
        for x, w in zip(self.nodes, self.weights):
            lam[..., len(fixed)] = x
            total += w * float(np.sum(self.density(lam) * weight))
        return total

    @property
    def normalization(self) -> float:
        if self._normalization is None:
            self._normalization = self._marginal(())
            logger.debug("oracle normalization for n=%s: %s", self.n, self._normalization)
        return self._normalization

    def correlation(self, points: Sequence[float]) -> float:
        """R_m(points) = n!/(n-m)! times the marginal of the normalized density."""
        m = len(points)
        if not 1 <= m <= self.n:
            raise ValueError(f"correlation order {m} outside 1..{self.n}")
        factor = math.factorial(self.n) / math.factorial(self.n - m)
        return factor * self._marginal(tuple(points)) / self.normalization


def jpdf_oracle(config: EnsembleConfig, points: Sequence[float]) -> float:
    return JointDensityOracle(config).correlation(points)
