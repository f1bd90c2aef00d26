from typing import List

from pydantic import validator

from mop_kernel.ensemble import SourceSpectrum, StrictModel


class MCConfig(StrictModel):
    """
    Monte Carlo run over M = H + A with H from the Gaussian unitary ensemble of
    density proportional to exp(-Tr H^2 / 2).
    """

    spectrum: SourceSpectrum
    samples: int = 100_000
    seed: int = 0
    workers: int = 1
    batch_size: int = 2_000
    bins: int = 40

    @validator("samples")
    def validate_samples(cls, v):
        if v < 2:
            raise ValueError("at least two samples are needed for standard errors")
        return v

    @validator("seed")
    def validate_seed(cls, v):
        if not 0 <= v < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return v

    @validator("workers", "batch_size", "bins")
    def validate_positive(cls, v):
        if v < 1:
            raise ValueError("must be positive")
        return v

    @property
    def n(self) -> int:
        return self.spectrum.n


class HistogramBin(StrictModel):
    bin_lo: float
    bin_hi: float
    count: int
    expected: float
    sigma: float

    @property
    def deviation(self) -> float:
        if self.sigma == 0:
            return 0.0 if self.count == self.expected else float("inf")
        return abs(self.count - self.expected) / self.sigma


class MCReport(StrictModel):
    samples: int
    seed: int
    # ascending powers 0..n-1 of the monic average characteristic polynomial
    coefficients: List[float]
    standard_errors: List[float]
    analytic: List[float]
    histogram: List[HistogramBin]
    outside: int

    @property
    def z_scores(self) -> List[float]:
        return [
            abs(est - ref) / se if se > 0 else float("inf")
            for est, ref, se in zip(self.coefficients, self.analytic, self.standard_errors)
        ]

    @property
    def max_z_score(self) -> float:
        return max(self.z_scores, default=0.0)

    @property
    def max_bin_deviation(self) -> float:
        return max((b.deviation for b in self.histogram), default=0.0)
