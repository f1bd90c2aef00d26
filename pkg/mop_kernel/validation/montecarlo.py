import logging
import math
import pathlib

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple

import numpy as np

from mop_kernel.common import write_csv, write_json
from mop_kernel.ensemble import SourceSpectrum
from mop_kernel.errors import UnsupportedConfigurationError
from mop_kernel.kernel import KernelBundle, kernel_sum
from mop_kernel.moments import gauss_legendre_on
from mop_kernel.mops import MopSystem
from mop_kernel.validation import HistogramBin, MCConfig, MCReport


logger = logging.getLogger(__name__)

BATCH_GROUPS = 50
BIN_ORDER = 20


def sample_stream(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream of one sample: the index sits in the upper 128 counter bits."""
    return np.random.Generator(np.random.Philox(key=seed, counter=index << 128))


def _source_diagonal(spectrum: SourceSpectrum) -> np.ndarray:
    return np.repeat(spectrum.eigenvalues, spectrum.multiplicities)


def _hermitian(normals: np.ndarray, diagonal: np.ndarray) -> np.ndarray:
    """
    H + A from n^2 standard normals per row: n for the diagonal, then the real and
    imaginary parts of the upper triangle, each scaled to variance 1/2.
    """
    batch, n = normals.shape[0], diagonal.size
    upper = np.triu_indices(n, 1)
    m = upper[0].size
    M = np.zeros((batch, n, n), dtype=complex)
    idx = np.arange(n)
    M[:, idx, idx] = normals[:, :n] + diagonal
    off = (normals[:, n : n + m] + 1j * normals[:, n + m : n + 2 * m]) / math.sqrt(2)
    M[:, upper[0], upper[1]] = off
    M[:, upper[1], upper[0]] = np.conj(off)
    return M


def sample_M(cfg: MCConfig, rng: np.random.Generator) -> np.ndarray:
    """Ascending eigenvalues of one draw of H + A."""
    n = cfg.n
    normals = rng.standard_normal(n * n)[None, :]
    return np.linalg.eigvalsh(_hermitian(normals, _source_diagonal(cfg.spectrum)))[0]


def _draw_batch(cfg: MCConfig, start: int, stop: int) -> np.ndarray:
    n = cfg.n
    normals = np.stack(
        [sample_stream(cfg.seed, i).standard_normal(n * n) for i in range(start, stop)]
    )
    return np.linalg.eigvalsh(_hermitian(normals, _source_diagonal(cfg.spectrum)))


def draw_eigenvalues(cfg: MCConfig) -> np.ndarray:
    """
    (samples, n) eigenvalues. Batches are fixed by the batch size and reduced in
    order, so the result does not depend on the worker count.
    """
    starts = range(0, cfg.samples, cfg.batch_size)
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        batches = list(
            pool.map(
                lambda start: _draw_batch(
                    cfg, start, min(start + cfg.batch_size, cfg.samples)
                ),
                starts,
            )
        )
    logger.info("drew %s samples of size %s with %s workers", cfg.samples, cfg.n, cfg.workers)
    return np.concatenate(batches)


def charpoly_coefficients(eigenvalues: np.ndarray) -> np.ndarray:
    """
    Ascending coefficients of prod_j (z - l_j) per row, accumulated one root at a time.
    """
    samples, n = eigenvalues.shape
    coeffs = np.ones((samples, 1))
    for j in range(n):
        grown = np.zeros((samples, coeffs.shape[1] + 1))
        grown[:, :-1] += coeffs
        grown[:, 1:] -= coeffs * eigenvalues[:, j : j + 1]
        coeffs = grown
    return coeffs[:, ::-1]


def _require_gaussian(system: MopSystem) -> None:
    if not system.config.potential.is_gaussian:
        raise UnsupportedConfigurationError(
            "Monte Carlo validation is only available for V(x) = x^2/2"
        )


def mc_avg_charpoly(
    cfg: MCConfig, system: MopSystem, eigenvalues: Optional[np.ndarray] = None
) -> Tuple[List[float], List[float], List[float]]:
    """
    Estimates of the non-leading coefficients of E[det(z - M)] with batch-mean
    standard errors, next to the coefficients of the type II polynomial.
    """
    _require_gaussian(system)
    if eigenvalues is None:
        eigenvalues = draw_eigenvalues(cfg)
    coeffs = charpoly_coefficients(eigenvalues)[:, :-1]
    groups = np.array_split(coeffs, min(BATCH_GROUPS, len(coeffs)))
    means = np.array([g.mean(axis=0) for g in groups])
    estimate = coeffs.mean(axis=0)
    se = means.std(axis=0, ddof=1) / math.sqrt(len(groups))
    analytic = system.solve_P(system.config.spectrum.multiplicities).coeffs[:-1]
    return estimate.tolist(), se.tolist(), [float(c) for c in analytic]


def mc_density_check(
    cfg: MCConfig, bundle: KernelBundle, eigenvalues: Optional[np.ndarray] = None
) -> Tuple[List[HistogramBin], int]:
    """
    Histogram of all eigenvalues on [min a - 4, max a + 4] next to the expected
    counts samples * int_bin R_1. Bin errors are binomial, floored at one count.
    """
    _require_gaussian(bundle.system)
    if eigenvalues is None:
        eigenvalues = draw_eigenvalues(cfg)
    eigs = cfg.spectrum.eigenvalues
    edges = np.linspace(min(eigs) - 4, max(eigs) + 4, cfg.bins + 1)
    flat = eigenvalues.ravel()
    counts, _ = np.histogram(flat, bins=edges)
    outside = int(flat.size - counts.sum())
    total = flat.size
    histogram = []
    for lo, hi, count in zip(edges[:-1], edges[1:], counts):
        nodes, weights = gauss_legendre_on([lo, hi], BIN_ORDER)
        mass = float(kernel_sum(bundle, nodes, nodes) @ weights)
        expected = cfg.samples * mass
        p = min(max(expected / total, 0.0), 1.0)
        sigma = max(math.sqrt(total * p * (1 - p)), 1.0)
        histogram.append(
            HistogramBin(
                bin_lo=float(lo),
                bin_hi=float(hi),
                count=int(count),
                expected=expected,
                sigma=sigma,
            )
        )
    return histogram, outside


def run_monte_carlo(cfg: MCConfig, bundle: KernelBundle) -> MCReport:
    eigenvalues = draw_eigenvalues(cfg)
    coefficients, errors, analytic = mc_avg_charpoly(cfg, bundle.system, eigenvalues)
    histogram, outside = mc_density_check(cfg, bundle, eigenvalues)
    report = MCReport(
        samples=cfg.samples,
        seed=cfg.seed,
        coefficients=coefficients,
        standard_errors=errors,
        analytic=analytic,
        histogram=histogram,
        outside=outside,
    )
    logger.info(
        "Monte Carlo: max coefficient z-score %.3g, max bin deviation %.3g",
        report.max_z_score,
        report.max_bin_deviation,
    )
    return report


def write_mc_report(report: MCReport, path: pathlib.Path) -> None:
    write_json(report.dict(), str(path))


def write_histogram(report: MCReport, path: pathlib.Path) -> int:
    return write_csv(
        ["bin_lo", "bin_hi", "count", "expected"],
        ((b.bin_lo, b.bin_hi, b.count, b.expected) for b in report.histogram),
        path,
    )
