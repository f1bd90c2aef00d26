import json
import math

import pytest

from pydantic import ValidationError

from mop_kernel.ensemble import Tolerances, validate
from mop_kernel.ensemble.config_file import parse_config_file
from mop_kernel.errors import ConsistencyError
from mop_kernel.mops import C_FORMULA_NAMES, MopSystem
from mop_kernel.report import (
    CheckContext,
    CheckResult,
    ReportOptions,
    algebra_checks,
    alternative_ordering,
    failing_checks,
    full_report,
    mc_results,
    write_summary,
)
from mop_kernel.validation import HistogramBin, MCReport


GAUSSIAN = (0.0, 0.0, 0.5)


def test_check_result_document():
    check = CheckResult.at_most("trace", 1e-9, 1e-7)
    assert check.passed
    assert check.document() == {
        "check": "trace",
        "value": 1e-9,
        "tolerance": 1e-7,
        "pass": True,
    }
    assert not CheckResult.at_most("trace", 1e-6, 1e-7).passed


def test_nan_never_passes():
    assert not CheckResult.at_most("trace", math.nan, 1e-7).passed
    failed = CheckResult.failed("trace", 1e-7)
    assert math.isnan(failed.value)
    assert failing_checks([failed, CheckResult.at_most("x", 0.0, 1.0)]) == ["trace"]


def test_at_least():
    assert CheckResult.at_least("ordering_difference", 2.0, 1e-3).passed
    assert not CheckResult.at_least("ordering_difference", 1e-4, 1e-3).passed
    assert not CheckResult.at_least("ordering_difference", math.nan, 1e-3).passed


def test_report_options():
    assert ReportOptions(samples=0).samples == 0
    for overrides in [{"samples": 1}, {"samples": -5}, {"workers": 0}]:
        with pytest.raises(ValidationError):
            ReportOptions(**overrides)


@pytest.mark.parametrize(
    "pairs,ordering,expected",
    [
        ([(0.0, 2)], None, None),
        ([(-1.0, 2), (1.0, 1)], None, [1.0, -1.0, -1.0]),
        ([(-1.0, 1), (1.0, 1)], [1.0, -1.0], [-1.0, 1.0]),
    ],
)
def test_alternative_ordering(pairs, ordering, expected):
    assert alternative_ordering(validate(GAUSSIAN, pairs, ordering)) == expected


def test_alternative_ordering_falls_back_to_rotation():
    # a palindrome reverses to itself
    config = validate(GAUSSIAN, [(-1.0, 2), (1.0, 1)], [-1.0, 1.0, -1.0])
    assert alternative_ordering(config) == [1.0, -1.0, -1.0]


def test_full_report_scalar(scalar_config_file):
    checks = full_report(parse_config_file(scalar_config_file), ReportOptions(samples=0))
    names = [c.check for c in checks]
    assert names == [
        "biorthogonality",
        "next_moment_nonzero",
        "trace",
        "reproducing",
        "r1_nonnegative",
        "cd_classical",
        "oracle_R1",
    ]
    assert failing_checks(checks) == []


def test_full_report_two_eigenvalues(two_eigenvalue_config_file):
    checks = full_report(
        parse_config_file(two_eigenvalue_config_file), ReportOptions(samples=0)
    )
    names = {c.check for c in checks}
    for expected in [
        "ordering_invariance",
        "ordering_difference",
        "cd_identity",
        "four_term_identity",
        "ladder_P",
        "structural_zeros_above",
        "leading_type1",
        "rh_duality",
        "rh_kernel_identity",
        "rh_jump_X",
        "rh_jump_trend_Y",
        "oracle_R2",
    ]:
        assert expected in names
    assert {f"c_formula {name}" for name in C_FORMULA_NAMES} <= names
    assert not any(name.startswith("mc_") for name in names)
    assert failing_checks(checks) == []

    by_name = {c.check: c for c in checks}
    assert by_name["ordering_difference"].value > 1e-3
    assert by_name["next_moment_nonzero"].tolerance == Tolerances().breakdown
    assert by_name["next_moment_nonzero"].value > Tolerances().breakdown


def test_full_report_three_points(one_two_config_file):
    config = parse_config_file(one_two_config_file)
    assert config.n == 3
    checks = full_report(config, ReportOptions(samples=0))
    names = {c.check for c in checks}
    assert {"recurrence_xQ", "rh_jump_Y", "rh_kernel_identity", "oracle_R2"} <= names
    assert failing_checks(checks) == []


def test_unevaluated_c_formulas_are_reported(monkeypatch, two_eigenvalue_config_file):
    def refuse(self):
        raise ConsistencyError("c-coefficients unavailable")

    monkeypatch.setattr(MopSystem, "c_formula_check", refuse)
    ctx = CheckContext(parse_config_file(two_eigenvalue_config_file), ReportOptions(samples=0))
    formulas = [c for c in algebra_checks(ctx) if c.check.startswith("c_formula ")]
    assert [c.check for c in formulas] == [f"c_formula {name}" for name in C_FORMULA_NAMES]
    assert not any(c.passed for c in formulas)
    assert all(math.isnan(c.value) for c in formulas)


def test_full_report_skips_what_does_not_apply(three_eigenvalue_config_file):
    checks = full_report(
        parse_config_file(three_eigenvalue_config_file), ReportOptions(samples=0)
    )
    names = {c.check for c in checks}
    assert "ordering_invariance" in names
    assert "oracle_R1" in names
    assert not names & {"cd_identity", "cd_classical", "ladder_P", "rh_duality"}


def test_full_report_turns_errors_into_failures(two_two_system):
    options = ReportOptions(
        samples=0, tolerances=Tolerances().override(condition_limit=1.0)
    )
    checks = full_report(two_two_system.config, options)
    failing = failing_checks(checks)
    assert "biorthogonality" in failing
    assert "trace" in failing


def test_mc_results():
    report = MCReport(
        samples=100,
        seed=0,
        coefficients=[0.1, -2.2],
        standard_errors=[0.1, 0.1],
        analytic=[0.0, -2.0],
        histogram=[HistogramBin(bin_lo=0, bin_hi=1, count=50, expected=45, sigma=5)],
        outside=0,
    )
    charpoly, density = mc_results(report, Tolerances())
    assert charpoly.value == pytest.approx(2.0)
    assert charpoly.passed
    assert density.value == pytest.approx(1.0)
    charpoly, _ = mc_results(report, Tolerances(mc_sigma=1.5))
    assert not charpoly.passed


def test_write_summary(tmp_path, pair_config):
    checks = [CheckResult.at_most("trace", 0.0, 1e-7), CheckResult.failed("rh_jump_Y", 1e-3)]
    path = tmp_path / "summary.json"
    write_summary(path, checks, pair_config)
    document = json.loads(path.read_text())
    assert set(document) == {"generated_at", "config", "checks"}
    assert document["checks"][0] == {
        "check": "trace",
        "value": 0.0,
        "tolerance": 1e-7,
        "pass": True,
    }
    assert document["checks"][1]["pass"] is False
    assert document["config"]["spectrum"] == [[-1.0, 1], [1.0, 1]]
