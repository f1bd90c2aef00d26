import math

import numpy as np
import pytest

from mop_kernel.common import read_csv
from mop_kernel.ensemble import Tolerances, validate
from mop_kernel.ensemble.config_file import parse_config_file
from mop_kernel.errors import (
    BreakdownError,
    IllConditionedError,
    UnsupportedConfigurationError,
)
from mop_kernel.mops import (
    MopSystem,
    from_polynomial,
    ordering_differences,
    side_name,
    write_h_table,
    write_polynomials,
)


GAUSSIAN = (0.0, 0.0, 0.5)
QUARTIC = (0.0, 0.0, 0.0, 0.0, 1.0)
SQRT_2PI = math.sqrt(2 * math.pi)
S = SQRT_2PI * math.exp(0.5)


def test_P_for_symmetric_pair(pair_system):
    P = pair_system.solve_P((1, 1))
    np.testing.assert_allclose(P.coeffs, [-2.0, 0.0, 1.0], atol=1e-12)
    assert P.degree == 2
    assert P(2.0) == pytest.approx(2.0)
    assert P.residual < 1e-12


def test_h_numbers_for_symmetric_pair(pair_system):
    assert pair_system.h_number((1, 1), 1) == pytest.approx(2 * S, rel=1e-12)
    assert pair_system.h_number((1, 1), 0) == pytest.approx(-2 * S, rel=1e-12)
    assert all(h != 0 for h in pair_system.next_moment_check((1, 1)))
    with pytest.raises(ValueError):
        pair_system.h_number((1, 1), 2)


def test_Q_for_single_eigenvalue_of_multiplicity_two():
    system = MopSystem(validate(GAUSSIAN, [(0.0, 2)]))
    Q = system.solve_Q((2,))
    np.testing.assert_allclose(Q.parts[0], [0.0, 1 / SQRT_2PI], atol=1e-14)
    assert Q(1.0) == pytest.approx(1 / SQRT_2PI)


@pytest.mark.parametrize(
    "k,coeffs",
    [
        (1, [0, 1]),
        (2, [-1, 0, 1]),
        (3, [0, -3, 0, 1]),
        (4, [3, 0, -6, 0, 1]),
        (5, [0, 15, 0, -10, 0, 1]),
        (6, [-15, 0, 45, 0, -15, 0, 1]),
    ],
)
def test_hermite_polynomials(k, coeffs):
    system = MopSystem(validate(GAUSSIAN, [(0.0, 6)]))
    np.testing.assert_allclose(
        system.solve_P((k,)).coeffs, coeffs, rtol=1e-9, atol=1e-9 * max(map(abs, coeffs))
    )
    assert system.h_number((k,), 0) == pytest.approx(math.factorial(k) * SQRT_2PI, rel=1e-9)


def test_leading_type1(pair_system, two_two_system):
    lead = pair_system.leading_type1((1, 1), 0)
    assert lead == pytest.approx(1 / pair_system.h_number((0, 1), 0), rel=1e-10)
    lead = two_two_system.leading_type1((2, 2), 1)
    assert lead == pytest.approx(1 / two_two_system.h_number((2, 1), 1), rel=1e-10)
    assert pair_system.leading_type1((0, 1), 0) is None


def test_biorthogonality(two_two_system):
    gram, worst = two_two_system.biorthogonality()
    np.testing.assert_allclose(gram, np.eye(4), atol=1e-9)
    assert worst < 1e-9


def test_determinantal_path_agrees(two_two_system):
    for index in [(0, 0), (1, 0), (1, 1), (2, 1), (2, 2)]:
        np.testing.assert_allclose(
            two_two_system.determinantal_P(index).coeffs,
            two_two_system.solve_P(index).coeffs,
            atol=1e-8,
        )


def test_recurrence_expansions(two_two_system):
    for k in range(two_two_system.n):
        assert two_two_system.recurrence_expansion_residual_P(k) < 1e-8
        assert two_two_system.recurrence_expansion_residual_Q(k) < 1e-8
    with pytest.raises(ValueError):
        two_two_system.recurrence_expansion_residual_P(4)


@pytest.mark.parametrize(
    "potential,pairs",
    [
        (GAUSSIAN, [(-1.0, 1), (1.0, 2)]),
        (GAUSSIAN, [(-1.0, 2), (1.0, 2)]),
        (QUARTIC, [(-0.5, 1), (0.5, 2)]),
        (QUARTIC, [(-0.5, 2), (0.5, 2)]),
    ],
)
def test_type1_expansion_with_an_empty_part(potential, pairs):
    # Q_0 has an empty part; its expansion there cancels down to rounding
    system = MopSystem(validate(potential, pairs))
    assert any(part.size == 0 for part in system.Q_k(0).parts)
    for j in range(system.n):
        assert system.recurrence_expansion_residual_Q(j) < 1e-8


def test_biorthogonality_at_eight_points(eight_point_config_file):
    system = MopSystem(parse_config_file(eight_point_config_file))
    gram, worst = system.biorthogonality()
    assert gram.shape == (8, 8)
    assert worst < 1e-8


def test_biorthogonality_quartic(quartic_two_two_system):
    gram, worst = quartic_two_two_system.biorthogonality()
    np.testing.assert_allclose(gram, np.eye(4), atol=1e-8)
    assert worst < 1e-8


def test_next_moment_margin(pair_system):
    # |h| / scale for the pair at (1, 1): the second slot has h = 2S
    margin = pair_system.next_moment_margin((1, 1))
    assert pair_system.tolerances.breakdown < margin <= 1.0
    for k in range(pair_system.n + 1):
        assert pair_system.next_moment_margin(pair_system.index_P(k)) > 1e-10


def test_recurrence_leading_and_structural_zeros(two_two_system):
    n = two_two_system.n
    assert two_two_system.recurrence_c(n, n - 1) == pytest.approx(1.0, abs=1e-9)
    below, above = two_two_system.structural_zeros()
    assert below < 1e-9
    assert above < 1e-9
    with pytest.raises(ValueError):
        two_two_system.recurrence_c(n + 2, 0)


def test_c_formulas(two_two_system):
    deviations = two_two_system.c_formula_check()
    assert set(deviations) == {"c[n,n-1]", "c[n-2,n]", "c[n-1,n]", "c[n-1,n+1]"}
    assert max(deviations.values()) < 1e-8


def test_c_formulas_need_the_two_eigenvalue_tail():
    system = MopSystem(validate(GAUSSIAN, [(-1.0, 2), (1.0, 2)], [-1, -1, 1, 1]))
    with pytest.raises(UnsupportedConfigurationError):
        system.c_formula_check()


@pytest.mark.parametrize("n1,n2", [(1, 1), (2, 1), (2, 2)])
def test_ladder_relations(two_two_system, n1, n2):
    assert two_two_system.ladder_check_P(n1, n2).max < 1e-8
    assert two_two_system.ladder_check_Q(n1, n2).max < 1e-8


def test_ladder_relations_preconditions(two_two_system):
    with pytest.raises(ValueError):
        two_two_system.ladder_check_P(0, 2)
    three = MopSystem(validate(GAUSSIAN, [(-1.0, 1), (0.0, 1), (1.0, 1)]))
    with pytest.raises(UnsupportedConfigurationError):
        three.ladder_check_Q(1, 1)
    with pytest.raises(UnsupportedConfigurationError):
        three.recurrence_expansion_residual_Q(0)


def test_breakdown_is_reported(pair_system):
    system = MopSystem(pair_system.config, Tolerances(breakdown=10.0))
    with pytest.raises(BreakdownError):
        system.h_number((1, 1), 0)


def test_condition_limit_is_enforced(two_two_system):
    system = MopSystem(two_two_system.config, Tolerances(condition_limit=1.0))
    with pytest.raises(IllConditionedError):
        system.solve_P((2, 2))


def test_orderings_change_P_but_share_moments(two_two_system):
    other = two_two_system.with_ordering([-1.0, -1.0, 1.0, 1.0])
    assert other.moments is two_two_system.moments
    assert other.index_P(2) == (2, 0)
    assert two_two_system.index_P(2) == (1, 1)
    assert ordering_differences(two_two_system, other) > 0.1


def test_index_sequences(two_two_system):
    assert [two_two_system.index_P(k) for k in range(6)] == [
        (0, 0),
        (1, 0),
        (1, 1),
        (2, 1),
        (2, 2),
        (3, 2),
    ]
    assert two_two_system.index_Q(0) == (1, 0)
    assert two_two_system.ordered_indices()[:3] == [(0, 0), (1, 0), (1, 1)]


def test_from_polynomial():
    Q = from_polynomial(np.array([1.0, 2.0]), 0.5, (2,))
    assert Q(1.0) == pytest.approx(3 * math.exp(0.5))
    assert side_name(0) == "A"
    assert side_name(1) == "B"


def test_csv_writers(tmp_path, pair_system):
    path = tmp_path / "polynomials.csv"
    count = write_polynomials(pair_system, path, [(1, 1)])
    # P has 3 coefficients, A and B one each
    assert count == 5
    records = read_csv(path)
    assert list(records[0]) == ["k1", "k2", "side", "power", "value"]
    assert {r["side"] for r in records} == {"P", "A", "B"}

    path = tmp_path / "h_table.csv"
    assert write_h_table(pair_system, path, [(1, 1)]) == 2
    records = read_csv(path)
    assert float(records[1]["value"]) == pytest.approx(2 * S, rel=1e-12)
