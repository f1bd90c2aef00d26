import math
import pathlib

import numpy as np
import pytest
import scipy.special

from mop_kernel.ensemble import Potential, validate
from mop_kernel.ensemble.config_file import parse_config_file
from mop_kernel.errors import IllConditionedError, QuadratureError
from mop_kernel.moments import (
    MomentCache,
    MomentTable,
    composite_gauss_legendre,
    gaussian_raw_moments,
    integrate_refined,
    moment_matrix,
    quad_moment,
    quad_moments,
    raw_moments,
    read_moment_table,
    row_labels,
    truncation_bound,
    write_moment_table,
    ztilde,
)


TEST_DIR = pathlib.Path(__file__).parent
SQRT_2PI = math.sqrt(2 * math.pi)
# sqrt(2 pi) e^{1/2}
S = SQRT_2PI * math.exp(0.5)

gaussian = Potential.gaussian()
quartic = Potential(coeffs=(0, 0, 0, 0, 1))


def test_gaussian_moments_closed_form():
    np.testing.assert_allclose(
        gaussian_raw_moments(0.0, 4), SQRT_2PI * np.array([1, 0, 1, 0, 3]), rtol=1e-15
    )
    # E[(1 + Z)^k] = 1, 1, 2, 4 for a = 1
    np.testing.assert_allclose(gaussian_raw_moments(1.0, 3), S * np.array([1, 1, 2, 4]))
    with pytest.raises(ValueError):
        gaussian_raw_moments(0.0, -1)


@pytest.mark.parametrize("a", [-1.3, 0.0, 0.7])
def test_quadrature_matches_gaussian_closed_form(a):
    closed = gaussian_raw_moments(a, 10)
    np.testing.assert_allclose(
        quad_moments(gaussian, a, 10), closed, rtol=1e-10, atol=1e-12 * np.abs(closed).max()
    )


def test_quartic_moments():
    m = quad_moments(quartic, 0.0, 5)
    assert m[0] == pytest.approx(2 * scipy.special.gamma(1.25), rel=1e-11)
    assert m[2] == pytest.approx(2 * scipy.special.gamma(0.75) / 4, rel=1e-11)
    assert abs(m[1]) < 1e-13
    assert abs(m[3]) < 1e-13
    assert quad_moment(quartic, 0.0, 4) == pytest.approx(m[4], rel=1e-12)


@pytest.mark.parametrize(
    "pot,a,k,expected",
    [
        (gaussian, 0.0, 0, math.sqrt(120)),
        (quartic, 0.0, 0, 60 ** 0.25),
        (gaussian, 2.0, 0, 2 + math.sqrt(124)),
    ],
)
def test_truncation_bound(pot, a, k, expected):
    assert truncation_bound(pot, a, k) == pytest.approx(expected, rel=1e-9)


def test_truncation_bound_grows_with_degree():
    assert truncation_bound(gaussian, 1.0, 20) > truncation_bound(gaussian, 1.0, 0)


def test_composite_gauss_legendre_is_exact_on_polynomials():
    rule = composite_gauss_legendre(-1.0, 2.0, panels=3, order=4)
    assert rule.integrate(rule.nodes ** 5) == pytest.approx(10.5, rel=1e-14)
    assert rule.refined().panels == 6
    with pytest.raises(ValueError):
        composite_gauss_legendre(1.0, 1.0)


def test_integrate_refined_reports_non_convergence():
    rule = composite_gauss_legendre(-1.0, 1.0, panels=2, order=4)
    with pytest.raises(QuadratureError):
        # integrable but singular inside a panel: refinement gains only sqrt(h)
        integrate_refined(
            lambda x: np.abs(x - 0.1234567) ** -0.5, rule, 1e-12, max_doublings=3
        )


def test_moment_cache_contract():
    cache = MomentCache(gaussian)
    value, scale = cache.contract(0.0, np.array([-1.0, 0.0, 1.0]))
    assert abs(value) < 1e-14
    assert scale == pytest.approx(2 * SQRT_2PI)
    assert cache.contract(0.0, np.zeros(0)) == (0.0, 0.0)
    first = cache.raw_moments(0.5, 3)
    longer = cache.raw_moments(0.5, 20)
    np.testing.assert_array_equal(first, longer[:4])
    np.testing.assert_allclose(raw_moments(gaussian, 0.5, 20), longer)


def test_moment_cache_uses_quadrature_for_other_potentials():
    cache = MomentCache(quartic)
    assert cache.raw_moments(0.0, 0)[0] == pytest.approx(
        2 * scipy.special.gamma(1.25), rel=1e-11
    )


def test_row_labels():
    config = validate((0, 0, 0.5), [(-1.0, 2), (1.0, 1)])
    assert row_labels(config.ordering) == [(-1.0, 1), (-1.0, 2), (1.0, 1)]


def test_moment_matrix_matches_golden(tmp_path, two_eigenvalue_config_file):
    config = parse_config_file(two_eigenvalue_config_file)
    table = moment_matrix(config, 3, 3)
    golden = read_moment_table(TEST_DIR / "two-eigenvalues" / "moments.csv")
    np.testing.assert_allclose(table.entries, golden, rtol=1e-14)
    written = tmp_path / "moments.csv"
    assert write_moment_table(table, written) == 9
    np.testing.assert_allclose(read_moment_table(written), golden, rtol=1e-14)


def test_ztilde_two_eigenvalues(two_eigenvalue_config_file):
    config = parse_config_file(two_eigenvalue_config_file)
    result = ztilde(moment_matrix(config, 3, 3), 3)
    assert result.ztilde == pytest.approx(4 * S ** 3, rel=1e-12)
    assert result.zhat == pytest.approx(8 * S ** 3, rel=1e-12)
    assert result.condition > 1
    assert ztilde(moment_matrix(config, 0, 0), 0) == (1.0, 1.0, 1.0)


def test_ztilde_singular():
    table = MomentTable(np.ones((2, 2)), ((0.0, 1), (0.0, 2)))
    with pytest.raises(IllConditionedError):
        ztilde(table, 2)
