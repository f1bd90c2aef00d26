from collections import Counter
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from pydantic import BaseModel, ValidationError, validator

from mop_kernel.errors import ConfigurationError


MultiIndex = Tuple[int, ...]
ArrayLike = Union[float, np.ndarray]


class StrictModel(BaseModel):
    class Config:
        extra = "forbid"
        frozen = True


class Potential(StrictModel):
    """V(x) = sum_k coeffs[k] x^k, stored without trailing zero coefficients."""

    coeffs: Tuple[float, ...]

    @validator("coeffs")
    def validate_coeffs(cls, v):
        coeffs = [float(c) for c in v]
        while coeffs and coeffs[-1] == 0.0:
            coeffs.pop()
        degree = len(coeffs) - 1
        if degree < 2:
            raise ValueError(f"potential must have degree >= 2, got degree {degree}")
        if degree % 2:
            raise ValueError(
                f"odd-degree potential (degree {degree}) makes the weight non-integrable"
            )
        if not np.isfinite(coeffs).all():
            raise ValueError("potential coefficients must be finite")
        if coeffs[-1] <= 0:
            raise ValueError(
                "negative leading coefficient makes the weight non-integrable"
            )
        return tuple(coeffs)

    @classmethod
    def gaussian(cls) -> "Potential":
        return cls(coeffs=(0.0, 0.0, 0.5))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_gaussian(self) -> bool:
        return self.coeffs == (0.0, 0.0, 0.5)

    @property
    def is_even(self) -> bool:
        return all(c == 0.0 for c in self.coeffs[1::2])

    def __call__(self, x: ArrayLike) -> ArrayLike:
        return np.polynomial.polynomial.polyval(x, self.coeffs)


class SourceSpectrum(StrictModel):
    """Distinct eigenvalues of the external source with their multiplicities."""

    pairs: Tuple[Tuple[float, int], ...]

    @validator("pairs")
    def validate_pairs(cls, v):
        if not v:
            raise ValueError("spectrum must contain at least one eigenvalue")
        seen = set()
        for a, mult in v:
            if not np.isfinite(a):
                raise ValueError(f"eigenvalue {a} is not finite")
            if a in seen:
                raise ValueError(f"duplicate eigenvalue {a}")
            if mult < 1:
                raise ValueError(f"eigenvalue {a} has zero multiplicity")
            seen.add(a)
        return tuple((float(a), int(mult)) for a, mult in v)

    @property
    def eigenvalues(self) -> Tuple[float, ...]:
        return tuple(a for a, _ in self.pairs)

    @property
    def multiplicities(self) -> MultiIndex:
        return tuple(mult for _, mult in self.pairs)

    @property
    def n(self) -> int:
        return sum(self.multiplicities)

    @property
    def p(self) -> int:
        return len(self.pairs)

    def slot(self, a: float) -> int:
        try:
            return self.eigenvalues.index(a)
        except ValueError:
            raise ConfigurationError(f"{a} is not an eigenvalue of the source")


class Ordering(StrictModel):
    alpha: Tuple[float, ...]


class EnsembleConfig(StrictModel):
    potential: Potential
    spectrum: SourceSpectrum
    ordering: Ordering

    @property
    def n(self) -> int:
        return self.spectrum.n

    @property
    def p(self) -> int:
        return self.spectrum.p

    def with_ordering(self, alpha: Sequence[float]) -> "EnsembleConfig":
        return validate(self.potential, self.spectrum, Ordering(alpha=tuple(alpha)))

    def to_document(self) -> Dict:
        return {
            "potential": list(self.potential.coeffs),
            "spectrum": [[a, mult] for a, mult in self.spectrum.pairs],
            "ordering": list(self.ordering.alpha),
        }


class Tolerances(StrictModel):
    """Every threshold a computation or identity check compares against."""

    quadrature_rtol: float = 1e-12
    condition_limit: float = 1e12
    residual: float = 1e-8
    breakdown: float = 1e-10
    kernel_identity: float = 1e-8
    trace: float = 1e-7
    reproducing: float = 1e-7
    ordering: float = 1e-8
    structural_zero: float = 1e-10
    rh_identity: float = 1e-6
    jump: float = 1e-3
    oracle: float = 1e-6
    mc_sigma: float = 4.0
    cauchy_rtol: float = 1e-10
    diagonal_gap: float = 1e-6
    r1_slack: float = 1e-10

    @validator("*")
    def validate_positive(cls, v):
        if not (v > 0 and np.isfinite(v)):
            raise ValueError("tolerance must be positive and finite")
        return v

    def override(self, **overrides: float) -> "Tolerances":
        unknown = sorted(set(overrides) - set(self.dict()))
        if unknown:
            raise ConfigurationError(f"unknown tolerance(s): {', '.join(unknown)}")
        try:
            return Tolerances(**{**self.dict(), **overrides})
        except ValidationError as e:
            raise ConfigurationError(format_validation_error(e)) from e


def weight_eval(pot: Potential, a: float, x: ArrayLike) -> ArrayLike:
    """
    e^{-(V(x) - a x)}. The exponent is formed first and exponentiated last; far in
    the tail the result underflows to 0.
    """
    return np.exp(a * np.asarray(x, dtype=float) - pot(np.asarray(x, dtype=float)))


def prefix_counts(
    ordering: Ordering, k: int, spectrum: Optional[SourceSpectrum] = None
) -> MultiIndex:
    """
    How often each distinct eigenvalue occurs among alpha_1..alpha_k.

    >>> prefix_counts(Ordering(alpha=(1.0, 2.0, 1.0)), 2)
    (1, 1)

    Slots follow `spectrum` when given, otherwise first appearance in the ordering.
    """
    if not 0 <= k <= len(ordering.alpha):
        raise ValueError(f"prefix length {k} outside 0..{len(ordering.alpha)}")
    if spectrum is not None:
        slots = spectrum.eigenvalues
    else:
        slots = tuple(dict.fromkeys(ordering.alpha))
    counts = Counter(ordering.alpha[:k])
    return tuple(counts.get(a, 0) for a in slots)


def default_ordering(spectrum: SourceSpectrum) -> Ordering:
    """
    Block ordering a_1 (n_1 times), a_2, ..., a_p. With two eigenvalues the last two
    entries are moved to (a_1, a_2).
    """
    alpha: List[float] = []
    if spectrum.p == 2:
        (a1, n1), (a2, n2) = spectrum.pairs
        alpha = [a1] * (n1 - 1) + [a2] * (n2 - 1) + [a1, a2]
    else:
        for a, mult in spectrum.pairs:
            alpha.extend([a] * mult)
    return Ordering(alpha=tuple(alpha))


def extended_ordering(ordering: Ordering, spectrum: SourceSpectrum) -> Ordering:
    """alpha_{n+1} = a_1, alpha_{n+2} = a_2 (a_1 twice when p = 1)."""
    eigs = spectrum.eigenvalues
    tail = (eigs[0], eigs[1] if spectrum.p > 1 else eigs[0])
    return Ordering(alpha=ordering.alpha + tail)


def has_two_eigenvalue_tail(config: EnsembleConfig) -> bool:
    if config.p != 2 or config.n < 2:
        return False
    a1, a2 = config.spectrum.eigenvalues
    return config.ordering.alpha[-2:] == (a1, a2)


def weights_matrix(ordering: Ordering, lam: np.ndarray) -> np.ndarray:
    """
    (lam_j^{d_i-1} e^{alpha_i lam_j})_{i,j}, broadcast over leading axes of `lam`
    (last axis of length n).
    """
    lam = np.asarray(lam, dtype=float)
    seen: Counter = Counter()
    rows = []
    for alpha in ordering.alpha:
        seen[alpha] += 1
        rows.append(lam ** (seen[alpha] - 1) * np.exp(alpha * lam))
    return np.stack(rows, axis=-2)


def format_validation_error(error: ValidationError) -> str:
    messages = []
    for err in error.errors():
        loc = ".".join(str(part) for part in err.get("loc", ()))
        messages.append(f"{loc}: {err.get('msg')}" if loc else str(err.get("msg")))
    return "; ".join(messages)


def validate(
    pot: Union[Potential, Sequence[float]],
    spec: Union[SourceSpectrum, Sequence[Tuple[float, int]]],
    ordering: Union[Ordering, Sequence[float], None] = None,
) -> EnsembleConfig:
    """
    Check every invariant of potential, spectrum and ordering and return the frozen
    configuration. Without an ordering the default block ordering is produced.
    """
    try:
        if not isinstance(pot, Potential):
            pot = Potential(coeffs=tuple(pot))
        if not isinstance(spec, SourceSpectrum):
            spec = SourceSpectrum(pairs=tuple(tuple(pair) for pair in spec))
        if ordering is not None and not isinstance(ordering, Ordering):
            ordering = Ordering(alpha=tuple(ordering))
    except ValidationError as e:
        raise ConfigurationError(format_validation_error(e)) from e

    if ordering is None:
        ordering = default_ordering(spec)
    else:
        expected = Counter({a: mult for a, mult in spec.pairs})
        if Counter(ordering.alpha) != expected:
            raise ConfigurationError(
                f"ordering {list(ordering.alpha)} does not realize the spectrum "
                f"{[list(pair) for pair in spec.pairs]}"
            )
    return EnsembleConfig(potential=pot, spectrum=spec, ordering=ordering)
