import math

import numpy as np
import pytest

from mop_kernel.common import read_csv
from mop_kernel.ensemble import Potential, validate
from mop_kernel.errors import AxisProximityError, UnsupportedConfigurationError
from mop_kernel.kernel import Grid, build_bundle, kernel_grid, max_relative_deviation
from mop_kernel.mops import MopSystem
from mop_kernel.rhp import (
    DUALITY_POINTS,
    JUMP_LADDER,
    RHProblem,
    WeightedPolynomial,
    cauchy_transform,
    gaussian_cauchy_reference,
    ladder_trend,
    write_jump_ladder,
    write_rh_samples,
)


GAUSSIAN = (0.0, 0.0, 0.5)
SQRT_2PI = math.sqrt(2 * math.pi)

bell = WeightedPolynomial(Potential.gaussian(), ((0.0, np.array([1.0])),))


@pytest.mark.parametrize("z", [1 + 1j, 2j, -0.5 + 0.1j, -1 - 0.7j, 3.0 - 2j])
def test_cauchy_transform_matches_faddeeva(z):
    expected = gaussian_cauchy_reference(z)
    assert cauchy_transform(bell, z) == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("z", [0.3 + 1e-5j, -1.2 - 1e-6j])
def test_cauchy_transform_near_the_axis(z):
    assert cauchy_transform(bell, z) == pytest.approx(gaussian_cauchy_reference(z), rel=1e-8)


def test_cauchy_transform_refuses_the_axis():
    with pytest.raises(AxisProximityError):
        cauchy_transform(bell, 0.5 + 1e-9j)


@pytest.mark.parametrize("z", [50j, -40 + 30j])
def test_cauchy_transform_decay(z):
    # C f(z) = -(1/2 pi i) sum_k m_k / z^{k+1}; m_1 = 0 for the bell
    leading = -SQRT_2PI / (2j * math.pi * z)
    assert abs(cauchy_transform(bell, z) - leading) <= SQRT_2PI / abs(z) ** 3


@pytest.fixture
def pair_problem(pair_system):
    return RHProblem(pair_system)


@pytest.fixture
def two_two_problem(two_two_system):
    return RHProblem(two_two_system)


@pytest.fixture
def quartic_two_two_problem(quartic_two_two_system):
    return RHProblem(quartic_two_two_system)


@pytest.mark.parametrize("problem", ["pair_problem", "two_two_problem"])
def test_duality_and_unimodularity(request, problem):
    problem = request.getfixturevalue(problem)
    for z in DUALITY_POINTS:
        assert problem.duality_residual(z) < 1e-6
        assert problem.unimodularity_residual(z) < 1e-6


@pytest.mark.parametrize("kind", ["Y", "X"])
def test_asymptotics(two_two_problem, kind):
    far = two_two_problem.asymptotic_residual(kind, 100j)
    near = two_two_problem.asymptotic_residual(kind, 50j)
    assert far < near
    assert near <= 2 * (far * 100 / 50)


@pytest.mark.parametrize("kind", ["Y", "X"])
def test_jump(pair_problem, kind):
    ladder = pair_problem.jump_ladder(0.0, kind)
    assert [e for e, _ in ladder] == list(JUMP_LADDER)
    assert ladder[-1][1] < 1e-3
    assert ladder_trend(ladder, floor=1e-6) <= 1.2


@pytest.mark.parametrize("kind", ["Y", "X"])
@pytest.mark.parametrize("x", [-0.5, 0.0, 0.5])
@pytest.mark.parametrize("problem", ["two_two_problem", "quartic_two_two_problem"])
def test_jump_away_from_the_pair(request, problem, x, kind):
    problem = request.getfixturevalue(problem)
    ladder = problem.jump_ladder(x, kind)
    assert ladder[-1][1] < 1e-3
    assert ladder_trend(ladder, floor=1e-6) <= 1.2


def test_boundary_values_remove_the_first_order_bias(two_two_problem):
    x, eps = 0.3, 1e-3
    plain = two_two_problem._assemble("Y", complex(x, eps)) - two_two_problem._assemble(
        "Y", complex(x, -eps)
    ) @ two_two_problem.jump_matrix("Y", x)
    assert two_two_problem.jump_residual(x, eps) < 0.1 * np.abs(plain).max()


def test_ladder_trend():
    assert ladder_trend([(1e-2, 1.0), (5e-3, 0.25), (2e-3, 0.05)]) == pytest.approx(0.25)
    assert ladder_trend([(1e-2, 1.0), (5e-3, 2.0)]) == pytest.approx(2.0)
    # noise-level steps count as converged
    assert ladder_trend([(1e-2, 1e-4), (5e-3, 1e-8), (2e-3, 3e-8)], floor=1e-7) <= 1e-4
    assert ladder_trend([(1e-2, 0.0), (5e-3, 1.0)]) == math.inf
    assert ladder_trend([(1e-2, 1.0)]) == 0.0


def test_jump_eps_range(pair_problem):
    with pytest.raises(ValueError):
        pair_problem.jump_residual(0.0, 0.1)
    with pytest.raises(ValueError):
        pair_problem.jump_residual(0.0, 1e-3, kind="Z")


@pytest.mark.parametrize("problem", ["two_two_problem", "quartic_two_two_problem"])
def test_kernel_from_rh(request, problem):
    problem = request.getfixturevalue(problem)
    bundle = build_bundle(problem.system)
    grid = Grid(lo=-4.0, hi=4.0, steps=17)
    from_rh = kernel_grid(bundle, grid, form=lambda b, x, y: problem.kernel_from_rh(x, y))
    assert max_relative_deviation(from_rh, kernel_grid(bundle, grid)) < 1e-8


def test_inverse_rows_are_the_type1_parts(two_two_problem):
    # rows two and three of Y^{-1} = X^T come out of the inversion as polynomials
    for term, P, Q, scale, factor in zip(
        two_two_problem.inverse_terms(),
        two_two_problem.P,
        two_two_problem.Q,
        two_two_problem.y_scales,
        two_two_problem.x_factors,
    ):
        size = term.poly.size
        np.testing.assert_allclose(
            term.poly, scale * np.pad(P.coeffs, (0, size - P.coeffs.size)), atol=1e-9
        )
        for part, expected in zip(term.dual.parts, (Q.A, Q.B)):
            padded = factor * np.pad(expected, (0, size - expected.size))
            np.testing.assert_allclose(part, padded, atol=1e-8 * max(1.0, np.abs(padded).max()))


def test_rh_product_with_numerically_inverted_Y(pair_problem):
    assert pair_problem.rh_product_numeric(0.5, -0.5) < 1e-5


def test_rh_constants(pair_problem, pair_system):
    # c1 = -2 pi i / h of (n1 - 1, n2) in the first slot
    h = pair_system.h_number((0, 1), 0)
    assert pair_problem.y_scales[1] == pytest.approx(-2j * math.pi / h)
    assert pair_problem.x_factors[1] == pytest.approx(pair_system.h_number((1, 1), 0))


@pytest.mark.parametrize(
    "pairs", [[(0.0, 2)], [(-1.0, 1), (0.0, 1), (1.0, 1)]],
)
def test_rh_needs_two_eigenvalues(pairs):
    with pytest.raises(UnsupportedConfigurationError):
        RHProblem(MopSystem(validate(GAUSSIAN, pairs)))


def test_rh_needs_positive_multi_index(pair_system):
    with pytest.raises(ValueError):
        RHProblem(pair_system, 0, 1)


def test_rh_dumps(tmp_path, pair_problem):
    assert write_rh_samples(pair_problem, [2j, 1 + 1j], tmp_path / "rh.csv") == 36
    records = read_csv(tmp_path / "rh.csv")
    assert list(records[0]) == ["z_re", "z_im", "entry", "value_re", "value_im"]
    assert records[0]["entry"] == "Y11"
    ladder = pair_problem.jump_ladder(0.0)
    assert write_jump_ladder(ladder, 0.0, tmp_path / "ladder.csv") == len(JUMP_LADDER)


def test_rh_problem_sits_on_the_kernel_bundle(pair_system):
    # the bundle and the problem share memoized solutions
    b = build_bundle(pair_system)
    problem = RHProblem(pair_system)
    assert problem.P[0] is pair_system.solve_P((1, 1))
    assert b.P[0] is pair_system.solve_P((0, 0))
